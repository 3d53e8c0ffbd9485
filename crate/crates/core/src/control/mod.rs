//! Control-vector encoding, deformation networks and controlled rendering.
//!
//! A cluster's state is addressed by a control vector `ς(t) − ς(0)`, the
//! displacement of its member centroid from the start of its trajectory.
//! Queries are snapped to the nearest recorded state before the cluster's
//! deformation network turns them into per-Gaussian offsets.

mod checkpoint;
mod encoding;
mod mlp;
mod model;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointBody, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoding::{encode, Bounds, EncodingConfig, FrequencyEncoder, DEFAULT_BANDS};
pub use mlp::{Dense, Mlp, MlpCache};
pub use model::{
    apply_deformation, deform, deformed_attributes, DeformationModel, DeformationOutput,
    DeformationPass, GaussianOffset, NetworkConfig, DEFAULT_HIDDEN_LAYERS, DEFAULT_WIDTH,
    OUTPUT_DIM,
};

use crate::discovery::{nearest_trajectory_state, ClusterTrajectory, DiscoveryError, SnappedState};
use crate::render::{render_with, RenderConfig, RenderError, RgbImage};
use crate::scene::{Camera, GaussianScene};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("member index {index} out of range for {count} Gaussians")]
    MemberOutOfRange { index: usize, count: usize },
    #[error("deformed quaternion of Gaussian {0} has zero norm")]
    ZeroQuaternion(usize),
    #[error("unknown cluster id {0}")]
    UnknownCluster(usize),
    #[error("more than one command for cluster {0}")]
    DuplicateCommand(usize),
    #[error("clusters {0} and {1} share Gaussian {2}")]
    OverlappingClusters(usize, usize, usize),
    #[error("bad command `{0}` (expected k:x,y,z)")]
    BadCommand(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Requested displacement of cluster `cluster`'s centroid, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub cluster: usize,
    pub v: [f64; 3],
}

impl ControlVector {
    pub fn new(cluster: usize, v: [f64; 3]) -> Result<Self, ControlError> {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(ControlError::NonFinite(format!(
                "control vector for cluster {cluster}"
            )));
        }
        Ok(ControlVector { cluster, v })
    }
}

/// Parse `k:x,y,z`.
pub fn parse_command(s: &str) -> Result<ControlVector, ControlError> {
    let bad = || ControlError::BadCommand(s.to_string());
    let (k, rest) = s.split_once(':').ok_or_else(bad)?;
    let cluster = k.trim().parse::<usize>().map_err(|_| bad())?;
    let parts: Vec<f64> = rest
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let v: [f64; 3] = parts.try_into().map_err(|_| bad())?;
    ControlVector::new(cluster, v)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlNetworks {
    /// One network per cluster, in trajectory order.
    PerCluster(Vec<DeformationModel>),
    /// One network for all clusters with a one-hot cluster slot input.
    Shared(DeformationModel),
}

/// Discovered clusters together with their deformation networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRig {
    pub trajectories: Vec<ClusterTrajectory>,
    pub networks: ControlNetworks,
}

/// State a cluster was rendered in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedControl {
    pub cluster: usize,
    /// The requested vector, `None` for clusters left at rest.
    pub query: Option<[f64; 3]>,
    pub state: SnappedState,
}

/// Symmetric control bounds covering every control vector of `trajs`, grown by 10%.
fn control_bounds<'a>(
    trajs: impl Iterator<Item = &'a ClusterTrajectory>,
) -> Result<Bounds, ControlError> {
    let mut r = [1e-3f64; 3];
    for tr in trajs {
        for j in 0..tr.samples.len() {
            let v = tr.control_vector(j);
            for k in 0..3 {
                r[k] = r[k].max(1.1 * v[k].abs());
            }
        }
    }
    Bounds::symmetric(&r)
}

/// Bounds of all Gaussian centers in `scene`, grown by 10% of the extent
/// (at least 5 cm) on each side.
pub fn scene_bounds(scene: &GaussianScene) -> Result<Bounds, ControlError> {
    let centers: Vec<[f64; 3]> = scene.gaussians.iter().map(|g| g.center).collect();
    Bounds::enclosing(&centers, 0.1, 0.05)
}

impl ControlRig {
    pub fn new(
        trajectories: Vec<ClusterTrajectory>,
        networks: ControlNetworks,
    ) -> Result<Self, ControlError> {
        match &networks {
            ControlNetworks::PerCluster(v) if v.len() != trajectories.len() => {
                return Err(ControlError::Config(format!(
                    "{} networks for {} clusters",
                    v.len(),
                    trajectories.len()
                )));
            }
            ControlNetworks::Shared(m) if m.slots != trajectories.len() => {
                return Err(ControlError::Config(format!(
                    "shared network has {} slots for {} clusters",
                    m.slots,
                    trajectories.len()
                )));
            }
            _ => {}
        }
        let mut owner = std::collections::BTreeMap::new();
        for (a, tr) in trajectories.iter().enumerate() {
            if tr.samples.is_empty() {
                return Err(DiscoveryError::EmptyTrajectory.into());
            }
            if trajectories[..a].iter().any(|o| o.cluster == tr.cluster) {
                return Err(ControlError::Config(format!(
                    "cluster id {} listed twice",
                    tr.cluster
                )));
            }
            for &g in &tr.members {
                if let Some(b) = owner.insert(g, tr.cluster) {
                    return Err(ControlError::OverlappingClusters(b, tr.cluster, g));
                }
            }
        }
        Ok(ControlRig {
            trajectories,
            networks,
        })
    }

    /// Fresh networks (zero output layer) for `trajectories` over `scene`.
    pub fn build(
        trajectories: Vec<ClusterTrajectory>,
        scene: &GaussianScene,
        cfg: NetworkConfig,
        shared: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, ControlError> {
        let positions = scene_bounds(scene)?;
        let networks = if shared {
            let bounds = control_bounds(trajectories.iter())?;
            ControlNetworks::Shared(DeformationModel::new(
                cfg,
                bounds,
                positions,
                trajectories.len(),
                rng,
            )?)
        } else {
            let mut nets = Vec::with_capacity(trajectories.len());
            for tr in &trajectories {
                let bounds = control_bounds(std::iter::once(tr))?;
                nets.push(DeformationModel::new(
                    cfg,
                    bounds,
                    positions.clone(),
                    0,
                    rng,
                )?);
            }
            ControlNetworks::PerCluster(nets)
        };
        ControlRig::new(trajectories, networks)
    }

    pub fn cluster_count(&self) -> usize {
        self.trajectories.len()
    }

    /// Position of cluster `id` in [`ControlRig::trajectories`].
    pub fn slot_of(&self, id: usize) -> Result<usize, ControlError> {
        self.trajectories
            .iter()
            .position(|t| t.cluster == id)
            .ok_or(ControlError::UnknownCluster(id))
    }

    /// The network driving `slot`, and the one-hot slot to feed it in shared mode.
    pub fn network(&self, slot: usize) -> (&DeformationModel, Option<usize>) {
        match &self.networks {
            ControlNetworks::PerCluster(v) => (&v[slot], None),
            ControlNetworks::Shared(m) => (m, Some(slot)),
        }
    }

    pub fn networks(&self) -> Vec<&DeformationModel> {
        match &self.networks {
            ControlNetworks::PerCluster(v) => v.iter().collect(),
            ControlNetworks::Shared(m) => vec![m],
        }
    }

    pub fn networks_mut(&mut self) -> Vec<&mut DeformationModel> {
        match &mut self.networks {
            ControlNetworks::PerCluster(v) => v.iter_mut().collect(),
            ControlNetworks::Shared(m) => vec![m],
        }
    }

    /// Snap each command and put every other cluster at its rest state.
    /// Result is in slot order.
    pub fn resolve(&self, commands: &[ControlVector]) -> Result<Vec<AppliedControl>, ControlError> {
        let mut query: Vec<Option<[f64; 3]>> = vec![None; self.cluster_count()];
        for c in commands {
            let slot = self.slot_of(c.cluster)?;
            if query[slot].is_some() {
                return Err(ControlError::DuplicateCommand(c.cluster));
            }
            if !c.v.iter().all(|v| v.is_finite()) {
                return Err(ControlError::NonFinite(format!(
                    "command for cluster {}",
                    c.cluster
                )));
            }
            query[slot] = Some(c.v);
        }
        self.trajectories
            .iter()
            .zip(query)
            .map(|(tr, q)| {
                let state = nearest_trajectory_state(tr, q.unwrap_or([0.0; 3]))?;
                Ok(AppliedControl {
                    cluster: tr.cluster,
                    query: q,
                    state,
                })
            })
            .collect()
    }

    /// Offsets for every cluster member given one state per slot.
    pub fn deformation(
        &self,
        scene: &GaussianScene,
        states: &[[f64; 3]],
    ) -> Result<DeformationOutput, ControlError> {
        assert_eq!(states.len(), self.cluster_count(), "one state per cluster");
        let mut pairs = Vec::new();
        for (slot, tr) in self.trajectories.iter().enumerate() {
            let (net, hot) = self.network(slot);
            let out = net.deform_slot(&states[slot], scene, &tr.members, hot)?;
            pairs.extend(out.indices.into_iter().zip(out.offsets));
        }
        pairs.sort_by_key(|p| p.0);
        let (indices, offsets) = pairs.into_iter().unzip();
        Ok(DeformationOutput { indices, offsets })
    }

    /// The scene with every cluster deformed to its resolved state.
    pub fn controlled_scene(
        &self,
        scene: &GaussianScene,
        commands: &[ControlVector],
    ) -> Result<(GaussianScene, Vec<AppliedControl>), ControlError> {
        let applied = self.resolve(commands)?;
        let states: Vec<[f64; 3]> = applied.iter().map(|a| a.state.snapped).collect();
        let out = self.deformation(scene, &states)?;
        Ok((apply_deformation(scene, &out)?, applied))
    }
}

/// Render `scene` with each commanded cluster deformed to its snapped state
/// and all other clusters at rest.
pub fn control_render(
    scene: &GaussianScene,
    rig: &ControlRig,
    commands: &[ControlVector],
    cam: &Camera,
) -> Result<(RgbImage, Vec<AppliedControl>), ControlError> {
    let (controlled, applied) = rig.controlled_scene(scene, commands)?;
    let b = render_with(&controlled, cam, &RenderConfig::default())?;
    Ok((b.color_image(), applied))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::TrajectorySample;
    use crate::scene::{Gaussian3D, Intrinsics, Pose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(cluster: usize, members: Vec<usize>, dir: [f64; 3]) -> ClusterTrajectory {
        ClusterTrajectory {
            cluster,
            members,
            samples: (0..5)
                .map(|j| TrajectorySample {
                    t: j as f64 * 0.1,
                    center: [
                        j as f64 * dir[0],
                        j as f64 * dir[1],
                        2.0 + j as f64 * dir[2],
                    ],
                })
                .collect(),
        }
    }

    fn scene() -> GaussianScene {
        GaussianScene::new(
            (0..6)
                .map(|i| {
                    Gaussian3D::isotropic(
                        [i as f64 * 0.15 - 0.4, 0.0, 2.0],
                        0.08,
                        0.8,
                        [0.2, 0.5, 0.9],
                    )
                })
                .collect(),
        )
    }

    fn rig(randomize: bool) -> ControlRig {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut rig = ControlRig::build(
            vec![
                traj(3, vec![0, 1], [0.02, 0.0, 0.0]),
                traj(8, vec![4, 5], [0.0, 0.03, 0.0]),
            ],
            &scene(),
            NetworkConfig::default(),
            false,
            &mut rng,
        )
        .unwrap();
        if randomize {
            for net in rig.networks_mut() {
                for w in &mut net.mlp.layers.last_mut().unwrap().weight {
                    *w = rng.gen_range(-0.02..0.02);
                }
            }
        }
        rig
    }

    fn cam() -> Camera {
        Camera::new(
            Intrinsics::new(64.0, 64.0, 16.0, 16.0, 32, 32).unwrap(),
            Pose::identity(),
        )
    }

    #[test]
    fn commands_parse() {
        assert_eq!(
            parse_command("2:0.1,-0.2,3").unwrap(),
            ControlVector {
                cluster: 2,
                v: [0.1, -0.2, 3.0]
            }
        );
        for bad in ["2", "x:1,2,3", "1:1,2", "1:1,2,3,4", "1:a,b,c"] {
            assert!(parse_command(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn empty_commands_render_the_rest_scene() {
        let s = scene();
        let r = rig(false);
        let (img, applied) = control_render(&s, &r, &[], &cam()).unwrap();
        let rest = render_with(&s, &cam(), &RenderConfig::default())
            .unwrap()
            .color_image();
        assert_eq!(img, rest);
        assert!(applied
            .iter()
            .all(|a| a.state.sample == 0 && a.query.is_none()));
    }

    #[test]
    fn disjoint_commands_commute() {
        let s = scene();
        let r = rig(true);
        let a = ControlVector::new(3, [0.05, 0.0, 0.0]).unwrap();
        let b = ControlVector::new(8, [0.0, 0.1, 0.0]).unwrap();
        let (x, _) = control_render(&s, &r, &[a, b], &cam()).unwrap();
        let (y, _) = control_render(&s, &r, &[b, a], &cam()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn deformation_is_local_to_the_cluster() {
        let s = scene();
        let r = rig(true);
        let (out, _) = r
            .controlled_scene(&s, &[ControlVector::new(3, [0.06, 0.0, 0.0]).unwrap()])
            .unwrap();
        for i in [2, 3] {
            assert_eq!(out.gaussians[i], s.gaussians[i]);
        }
        assert_ne!(out.gaussians[0], s.gaussians[0]);
    }

    #[test]
    fn snapped_time_stays_on_the_trajectory() {
        let r = rig(false);
        let applied = r
            .resolve(&[ControlVector::new(8, [5.0, 3.0, 1.0]).unwrap()])
            .unwrap();
        let a = applied[r.slot_of(8).unwrap()];
        let (t0, t1) = r.trajectories[1].time_range();
        assert!(a.state.t >= t0 && a.state.t <= t1);
        assert_eq!(a.state.sample, 4);
    }

    #[test]
    fn unknown_and_duplicate_clusters_are_errors() {
        let r = rig(false);
        let c = ControlVector::new(3, [0.0; 3]).unwrap();
        assert!(matches!(
            r.resolve(&[ControlVector::new(5, [0.0; 3]).unwrap()]),
            Err(ControlError::UnknownCluster(5))
        ));
        assert!(matches!(
            r.resolve(&[c, c]),
            Err(ControlError::DuplicateCommand(3))
        ));
    }

    #[test]
    fn overlapping_members_are_rejected() {
        let t = vec![
            traj(0, vec![0, 1], [0.01; 3]),
            traj(1, vec![1, 2], [0.01; 3]),
        ];
        let err = ControlRig::build(
            t,
            &scene(),
            NetworkConfig::default(),
            false,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(matches!(
            err,
            Err(ControlError::OverlappingClusters(0, 1, 1))
        ));
    }
}
