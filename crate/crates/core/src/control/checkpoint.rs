//! Binary checkpoint container: `GSCK`, a `u32` version, a `u32` header
//! length, a JSON header, a `u64` parameter count and the parameters as
//! little-endian `f32`. Parameters are the Gaussians (center, log-scale,
//! quaternion, opacity, color) followed by each network's flattened weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoding::FrequencyEncoder;
use super::mlp::{Dense, Mlp};
use super::model::DeformationModel;
use super::{ControlError, ControlNetworks, ControlRig};
use crate::discovery::ClusterTrajectory;
use crate::scene::{Gaussian3D, GaussianScene};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const GAUSSIAN_PARAMS: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointBody {
    /// Time-conditioned network over all Gaussians.
    Deformable(DeformationModel),
    Controllable(ControlRig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub scene: GaussianScene,
    pub body: CheckpointBody,
}

#[derive(Serialize, Deserialize)]
struct NetworkLayout {
    encoder: FrequencyEncoder,
    condition_dim: usize,
    slots: usize,
    /// `[inputs, outputs]` per layer.
    layers: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Deformable,
    Controllable,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: Kind,
    gaussian_count: usize,
    background: [f64; 3],
    shared: bool,
    networks: Vec<NetworkLayout>,
    #[serde(default)]
    trajectories: Vec<ClusterTrajectory>,
}

fn layout(m: &DeformationModel) -> NetworkLayout {
    NetworkLayout {
        encoder: m.encoder.clone(),
        condition_dim: m.condition_dim,
        slots: m.slots,
        layers: m.mlp.layers.iter().map(|l| [l.inputs, l.outputs]).collect(),
    }
}

fn fmt_err(message: impl Into<String>) -> ControlError {
    ControlError::Checkpoint {
        path: String::new(),
        message: message.into(),
    }
}

impl Checkpoint {
    fn networks(&self) -> (Vec<&DeformationModel>, bool) {
        match &self.body {
            CheckpointBody::Deformable(m) => (vec![m], false),
            CheckpointBody::Controllable(rig) => (
                rig.networks(),
                matches!(rig.networks, ControlNetworks::Shared(_)),
            ),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (nets, shared) = self.networks();
        let header = Header {
            kind: match self.body {
                CheckpointBody::Deformable(_) => Kind::Deformable,
                CheckpointBody::Controllable(_) => Kind::Controllable,
            },
            gaussian_count: self.scene.len(),
            background: self.scene.background,
            shared,
            networks: nets.iter().map(|m| layout(m)).collect(),
            trajectories: match &self.body {
                CheckpointBody::Controllable(rig) => rig.trajectories.clone(),
                CheckpointBody::Deformable(_) => Vec::new(),
            },
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut params: Vec<f64> = Vec::new();
        for g in &self.scene.gaussians {
            params.extend_from_slice(&g.center);
            params.extend(g.scale.iter().map(|s| s.ln()));
            params.extend_from_slice(&g.quat);
            params.push(g.opacity);
            params.extend_from_slice(&g.color);
        }
        for m in &nets {
            params.extend(m.mlp.params());
        }
        let mut out = Vec::with_capacity(20 + json.len() + 4 * params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ControlError> {
        let take = |at: usize, n: usize| -> Result<&[u8], ControlError> {
            bytes
                .get(at..at + n)
                .ok_or_else(|| fmt_err(format!("truncated at byte {at}")))
        };
        if take(0, 4)? != CHECKPOINT_MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(take(8, 4)?.try_into().unwrap()) as usize;
        let header: Header =
            serde_json::from_slice(take(12, hlen)?).map_err(|e| fmt_err(format!("header: {e}")))?;
        let at = 12 + hlen;
        let count = u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize;
        let blob = take(
            at + 8,
            count
                .checked_mul(4)
                .ok_or_else(|| fmt_err("parameter count overflows"))?,
        )?;
        if bytes.len() != at + 8 + 4 * count {
            return Err(fmt_err("trailing bytes after parameters"));
        }
        let params: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();

        let mut models = Vec::with_capacity(header.networks.len());
        for (i, n) in header.networks.iter().enumerate() {
            if n.layers.is_empty() {
                return Err(fmt_err(format!("network {i} has no layers")));
            }
            let layers: Vec<Dense> = n.layers.iter().map(|&[a, b]| Dense::zeros(a, b)).collect();
            if n.encoder.bounds.dim() != n.condition_dim + 3
                || n.layers[0][0] != n.encoder.output_dim() + n.slots
            {
                return Err(fmt_err(format!("network {i} layout is inconsistent")));
            }
            models.push(DeformationModel {
                encoder: n.encoder.clone(),
                condition_dim: n.condition_dim,
                slots: n.slots,
                mlp: Mlp { layers },
            });
        }
        let expected = header.gaussian_count * GAUSSIAN_PARAMS
            + models.iter().map(|m| m.mlp.param_count()).sum::<usize>();
        if expected != count {
            return Err(fmt_err(format!(
                "header implies {expected} parameters, blob has {count}"
            )));
        }
        let (g_params, mut rest) = params.split_at(header.gaussian_count * GAUSSIAN_PARAMS);
        let gaussians = g_params
            .chunks_exact(GAUSSIAN_PARAMS)
            .map(|p| Gaussian3D {
                center: [p[0], p[1], p[2]],
                scale: [p[3].exp(), p[4].exp(), p[5].exp()],
                quat: [p[6], p[7], p[8], p[9]],
                opacity: p[10],
                color: [p[11], p[12], p[13]],
                velocity: None,
            })
            .collect();
        let mut scene = GaussianScene::new(gaussians);
        scene.background = header.background;
        scene
            .validate()
            .map_err(|e| fmt_err(format!("stored scene: {e}")))?;
        for m in &mut models {
            let n = m.mlp.param_count();
            m.mlp.set_params(&rest[..n]);
            rest = &rest[n..];
        }

        let body = match header.kind {
            Kind::Deformable => {
                if models.len() != 1 || models[0].slots != 0 {
                    return Err(fmt_err("deformable checkpoint must hold one network"));
                }
                CheckpointBody::Deformable(models.pop().unwrap())
            }
            Kind::Controllable => {
                let networks = if header.shared {
                    if models.len() != 1 {
                        return Err(fmt_err("shared checkpoint must hold one network"));
                    }
                    ControlNetworks::Shared(models.pop().unwrap())
                } else {
                    ControlNetworks::PerCluster(models)
                };
                CheckpointBody::Controllable(ControlRig::new(header.trajectories, networks)?)
            }
        };
        if let CheckpointBody::Controllable(rig) = &body {
            for tr in &rig.trajectories {
                if let Some(&bad) = tr.members.iter().find(|&&g| g >= scene.len()) {
                    return Err(ControlError::MemberOutOfRange {
                        index: bad,
                        count: scene.len(),
                    });
                }
            }
        }
        Ok(Checkpoint { scene, body })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ControlError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| ControlError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ControlError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ControlError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            ControlError::Checkpoint { message, .. } => ControlError::Checkpoint {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// The same checkpoint after an `f32` round trip of every parameter.
    pub fn quantized(&self) -> Result<Self, ControlError> {
        Checkpoint::from_bytes(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::NetworkConfig;
    use crate::discovery::TrajectorySample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checkpoint(shared: bool) -> Checkpoint {
        let mut scene = GaussianScene::new(
            (0..4)
                .map(|i| {
                    Gaussian3D::isotropic(
                        [i as f64 * 0.25, 0.0, 2.0],
                        0.125,
                        0.5,
                        [0.25, 0.5, 0.75],
                    )
                })
                .collect(),
        );
        scene.background = [0.0, 0.5, 1.0];
        let trajs = vec![ClusterTrajectory {
            cluster: 4,
            members: vec![1, 2],
            samples: vec![
                TrajectorySample {
                    t: 0.0,
                    center: [0.3, 0.0, 2.0],
                },
                TrajectorySample {
                    t: 0.5,
                    center: [0.4, 0.1, 2.0],
                },
            ],
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rig =
            ControlRig::build(trajs, &scene, NetworkConfig::default(), shared, &mut rng).unwrap();
        for net in rig.networks_mut() {
            for w in &mut net.mlp.layers.last_mut().unwrap().weight {
                *w = rng.gen_range(-0.1..0.1);
            }
        }
        Checkpoint {
            scene,
            body: CheckpointBody::Controllable(rig),
        }
    }

    #[test]
    fn round_trip_after_quantization_is_exact() {
        for shared in [false, true] {
            let q = checkpoint(shared).quantized().unwrap();
            let bytes = q.to_bytes();
            assert_eq!(&bytes[..4], b"GSCK");
            assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), q);
            assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = checkpoint(false).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }
}
