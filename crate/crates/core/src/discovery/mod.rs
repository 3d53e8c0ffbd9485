//! Dynamic-object discovery: back-project dynamic-flow masks onto Gaussians,
//! cluster the dynamic ones by their frame-0 centers and track cluster
//! centroids over time.

pub mod hdbscan;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::BinaryMask;
use crate::render::RenderBuffers;

pub use hdbscan::{
    default_min_cluster_size, hdbscan, same_partition, ClusterLabeling, HdbscanParams,
    DEFAULT_EPSILON, DEFAULT_MIN_SAMPLES, MIN_CLUSTER_FLOOR, MIN_CLUSTER_FRACTION,
};

/// Minimum blend weight for a splat-center hit.
pub const DEFAULT_MIN_WEIGHT: f64 = 0.05;
pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("frame {frame}: mask is {mask_w}x{mask_h} but buffers are {buf_w}x{buf_h}")]
    SizeMismatch {
        frame: usize,
        mask_w: usize,
        mask_h: usize,
        buf_w: usize,
        buf_h: usize,
    },
    #[error("frame {0}: render buffers carry no contribution lists")]
    MissingContributions(usize),
    #[error("{points} points but min_samples is {min_samples}")]
    TooFewPoints { points: usize, min_samples: usize },
    #[error("point {0} is not finite")]
    NonFinitePoint(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing frame: {0}")]
    MissingFrame(String),
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicScore {
    /// `hits / frames` per Gaussian.
    pub score: Vec<f64>,
    pub hits: Vec<usize>,
    pub frames: usize,
}

/// Sorted, unique Gaussian indices judged dynamic.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DynamicSet {
    pub indices: Vec<usize>,
}

impl DynamicSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `|A ∩ B| / |A ∪ B|`; two empty sets score 1.
    pub fn jaccard(&self, other: &[usize]) -> f64 {
        let a: std::collections::BTreeSet<usize> = self.indices.iter().copied().collect();
        let b: std::collections::BTreeSet<usize> = other.iter().copied().collect();
        let union = a.union(&b).count();
        if union == 0 {
            return 1.0;
        }
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// One frame of evidence: the binarized dynamic-flow mask and the render
/// (with contribution lists) it was computed against.
#[derive(Debug, Clone, Copy)]
pub struct MaskedFrame<'a> {
    pub mask: &'a BinaryMask,
    pub buffers: &'a RenderBuffers,
}

/// Count, per Gaussian, the frames where its splat center lands on a masked
/// pixel and its blend weight there exceeds `min_weight`.
pub fn score_dynamic_gaussians(
    frames: &[MaskedFrame<'_>],
    gaussian_count: usize,
    min_weight: f64,
) -> Result<DynamicScore, DiscoveryError> {
    let mut hits = vec![0usize; gaussian_count];
    for (f, frame) in frames.iter().enumerate() {
        let (m, b) = (frame.mask, frame.buffers);
        if m.width != b.width || m.height != b.height {
            return Err(DiscoveryError::SizeMismatch {
                frame: f,
                mask_w: m.width,
                mask_h: m.height,
                buf_w: b.width,
                buf_h: b.height,
            });
        }
        if b.contributions.len() != b.width * b.height {
            return Err(DiscoveryError::MissingContributions(f));
        }
        for s in &b.splats {
            if s.index >= gaussian_count {
                continue;
            }
            let (x, y) = (s.mean[0].round(), s.mean[1].round());
            if x < 0.0 || y < 0.0 || x >= b.width as f64 || y >= b.height as f64 {
                continue;
            }
            let p = b.pixel(x as usize, y as usize);
            if !m.data[p] {
                continue;
            }
            let weight = b.contributions[p]
                .iter()
                .find(|c| c.index == s.index)
                .map_or(0.0, |c| c.weight);
            if weight > min_weight {
                hits[s.index] += 1;
            }
        }
    }
    let n = frames.len();
    Ok(DynamicScore {
        score: hits
            .iter()
            .map(|&h| if n == 0 { 0.0 } else { h as f64 / n as f64 })
            .collect(),
        hits,
        frames: n,
    })
}

/// `{ i | score_i ≥ theta }`.
pub fn select_dynamic(scores: &DynamicScore, theta: f64) -> Result<DynamicSet, DiscoveryError> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(DiscoveryError::InvalidParameter(format!(
            "theta {theta} outside (0, 1]"
        )));
    }
    Ok(DynamicSet {
        indices: (0..scores.score.len())
            .filter(|&i| scores.score[i] >= theta)
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTrajectory {
    pub cluster: usize,
    /// Time-ordered centroid samples, starting at `t = 0`.
    pub samples: Vec<TrajectorySample>,
    /// Gaussian indices of the members.
    pub members: Vec<usize>,
}

impl ClusterTrajectory {
    /// Control vector `ς(t_j) − ς(0)` of sample `j`.
    pub fn control_vector(&self, j: usize) -> [f64; 3] {
        let c0 = self.samples[0].center;
        let c = self.samples[j].center;
        [c[0] - c0[0], c[1] - c0[1], c[2] - c0[2]]
    }

    /// Control vector at an arbitrary time, linearly interpolated between
    /// samples and clamped at the ends.
    pub fn control_vector_at(&self, t: f64) -> [f64; 3] {
        let s = &self.samples;
        let j = s.partition_point(|x| x.t <= t);
        if j == 0 {
            return self.control_vector(0);
        }
        if j == s.len() {
            return self.control_vector(s.len() - 1);
        }
        let (a, b) = (self.control_vector(j - 1), self.control_vector(j));
        let w = (t - s[j - 1].t) / (s[j].t - s[j - 1].t);
        std::array::from_fn(|k| a[k] + w * (b[k] - a[k]))
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }
}

/// Mean member center per frame for every cluster.
///
/// `points` maps labeling rows to Gaussian indices; `positions[f][g]` is the
/// center of Gaussian `g` at `times[f]`.
pub fn cluster_trajectories(
    labeling: &ClusterLabeling,
    points: &[usize],
    times: &[f64],
    positions: &[Vec<[f64; 3]>],
) -> Result<Vec<ClusterTrajectory>, DiscoveryError> {
    if points.len() != labeling.labels.len() {
        return Err(DiscoveryError::InvalidParameter(format!(
            "{} labels for {} points",
            labeling.labels.len(),
            points.len()
        )));
    }
    if positions.len() != times.len() {
        return Err(DiscoveryError::MissingFrame(format!(
            "{} timestamps but {} position frames",
            times.len(),
            positions.len()
        )));
    }
    if times.first() != Some(&0.0) {
        return Err(DiscoveryError::MissingFrame("no frame at t = 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DiscoveryError::InvalidParameter(
            "timestamps must be strictly increasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(labeling.cluster_count);
    for k in 0..labeling.cluster_count {
        let members: Vec<usize> = labeling.members(k).into_iter().map(|r| points[r]).collect();
        let mut samples = Vec::with_capacity(times.len());
        for (f, (&t, frame)) in times.iter().zip(positions).enumerate() {
            let mut sum = [0.0; 3];
            for &g in &members {
                let c = frame.get(g).ok_or_else(|| {
                    DiscoveryError::MissingFrame(format!("frame {f} lacks Gaussian {g}"))
                })?;
                for d in 0..3 {
                    sum[d] += c[d];
                }
            }
            let n = members.len() as f64;
            samples.push(TrajectorySample {
                t,
                center: sum.map(|s| s / n),
            });
        }
        out.push(ClusterTrajectory {
            cluster: k,
            samples,
            members,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnappedState {
    pub t: f64,
    /// Sample index of `t`.
    pub sample: usize,
    pub snapped: [f64; 3],
    /// `|v_query − snapped|`.
    pub distance: f64,
}

/// Snap a control vector to the closest observed state; ties go to the
/// earlier sample.
pub fn nearest_trajectory_state(
    traj: &ClusterTrajectory,
    query: [f64; 3],
) -> Result<SnappedState, DiscoveryError> {
    if traj.samples.is_empty() {
        return Err(DiscoveryError::EmptyTrajectory);
    }
    let mut best: Option<(f64, usize)> = None;
    for j in 0..traj.samples.len() {
        let v = traj.control_vector(j);
        let d2: f64 = (0..3).map(|k| (query[k] - v[k]).powi(2)).sum();
        if best.is_none_or(|(b, _)| d2 < b) {
            best = Some((d2, j));
        }
    }
    let (d2, j) = best.unwrap();
    Ok(SnappedState {
        t: traj.samples[j].t,
        sample: j,
        snapped: traj.control_vector(j),
        distance: d2.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub id: usize,
    pub member_indices: Vec<usize>,
    /// `[t, x, y, z]` rows.
    pub trajectory: Vec<[f64; 4]>,
}

/// On-disk form of a discovery run (`clusters.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersFile {
    pub clusters: Vec<ClusterRecord>,
    /// Dynamic Gaussians that were not assigned to any cluster.
    pub noise: Vec<usize>,
}

impl ClustersFile {
    pub fn new(trajectories: &[ClusterTrajectory], noise: Vec<usize>) -> Self {
        ClustersFile {
            clusters: trajectories
                .iter()
                .map(|tr| ClusterRecord {
                    id: tr.cluster,
                    member_indices: tr.members.clone(),
                    trajectory: tr
                        .samples
                        .iter()
                        .map(|s| [s.t, s.center[0], s.center[1], s.center[2]])
                        .collect(),
                })
                .collect(),
            noise,
        }
    }

    pub fn trajectories(&self) -> Vec<ClusterTrajectory> {
        self.clusters
            .iter()
            .map(|c| ClusterTrajectory {
                cluster: c.id,
                members: c.member_indices.clone(),
                samples: c
                    .trajectory
                    .iter()
                    .map(|r| TrajectorySample {
                        t: r[0],
                        center: [r[1], r[2], r[3]],
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("clusters serialization is infallible")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiscoveryError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| DiscoveryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiscoveryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DiscoveryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: ClustersFile =
            serde_json::from_str(&text).map_err(|e| DiscoveryError::Format {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        for (k, c) in file.clusters.iter().enumerate() {
            if c.trajectory.is_empty() || c.trajectory[0][0] != 0.0 {
                return Err(DiscoveryError::Format {
                    path: path.display().to_string(),
                    message: format!("clusters[{k}].trajectory must start at t = 0"),
                });
            }
            if c.trajectory.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                return Err(DiscoveryError::Format {
                    path: path.display().to_string(),
                    message: format!("clusters[{k}].trajectory timestamps must increase"),
                });
            }
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoveryConfig {
    pub min_weight: f64,
    pub theta: f64,
    pub min_samples: usize,
    /// `None` uses [`default_min_cluster_size`] of the dynamic set.
    pub min_cluster_size: Option<usize>,
    pub epsilon: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            min_weight: DEFAULT_MIN_WEIGHT,
            theta: DEFAULT_THETA,
            min_samples: DEFAULT_MIN_SAMPLES,
            min_cluster_size: None,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub scores: DynamicScore,
    pub dynamic: DynamicSet,
    /// Labels over `dynamic.indices`.
    pub labeling: ClusterLabeling,
    pub trajectories: Vec<ClusterTrajectory>,
}

impl Discovery {
    pub fn noise(&self) -> Vec<usize> {
        self.labeling
            .noise()
            .into_iter()
            .map(|r| self.dynamic.indices[r])
            .collect()
    }

    pub fn clusters_file(&self) -> ClustersFile {
        ClustersFile::new(&self.trajectories, self.noise())
    }
}

/// Score, select, cluster on frame-0 centers (`positions[0]`) and track.
pub fn discover(
    frames: &[MaskedFrame<'_>],
    times: &[f64],
    positions: &[Vec<[f64; 3]>],
    cfg: &DiscoveryConfig,
) -> Result<Discovery, DiscoveryError> {
    let count = positions
        .first()
        .ok_or_else(|| DiscoveryError::MissingFrame("no position frames".into()))?
        .len();
    let scores = score_dynamic_gaussians(frames, count, cfg.min_weight)?;
    let dynamic = select_dynamic(&scores, cfg.theta)?;
    let points: Vec<[f64; 3]> = dynamic.indices.iter().map(|&g| positions[0][g]).collect();
    let params = HdbscanParams {
        min_samples: cfg.min_samples,
        min_cluster_size: cfg
            .min_cluster_size
            .unwrap_or_else(|| default_min_cluster_size(points.len())),
        epsilon: cfg.epsilon,
        allow_single_cluster: true,
    };
    let labeling = if points.len() < params.min_samples {
        log::warn!(
            "{} dynamic Gaussians, fewer than min_samples; no interactive objects",
            points.len()
        );
        ClusterLabeling::all_noise(points.len())
    } else {
        hdbscan(&points, &params)?
    };
    let trajectories = cluster_trajectories(&labeling, &dynamic.indices, times, positions)?;
    Ok(Discovery {
        scores,
        dynamic,
        labeling,
        trajectories,
    })
}
