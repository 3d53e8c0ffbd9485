use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{Bounds, EncodingConfig, FrequencyEncoder};
use super::mlp::{Mlp, MlpCache};
use super::{ControlError, ControlVector};
use crate::math;
use crate::scene::GaussianScene;

/// Network outputs per Gaussian: center offset (3), log-scale offset (3), quaternion offset (4).
pub const OUTPUT_DIM: usize = 10;
pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_HIDDEN_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub width: usize,
    pub hidden_layers: usize,
    pub encoding: EncodingConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            width: DEFAULT_WIDTH,
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
            encoding: EncodingConfig::default(),
        }
    }
}

/// Deformation network mapping `(condition, center)` to per-Gaussian offsets.
///
/// The condition is a control vector (3 components) or a time (1 component).
/// Both are encoded together with the center. In shared mode `slots > 0` and
/// a one-hot cluster slot is appended to the features unencoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationModel {
    pub encoder: FrequencyEncoder,
    pub condition_dim: usize,
    pub slots: usize,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianOffset {
    pub center: [f64; 3],
    pub log_scale: [f64; 3],
    pub quat: [f64; 4],
}

impl GaussianOffset {
    pub fn from_output(o: &[f64]) -> Self {
        GaussianOffset {
            center: [o[0], o[1], o[2]],
            log_scale: [o[3], o[4], o[5]],
            quat: [o[6], o[7], o[8], o[9]],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.center
            .iter()
            .chain(&self.log_scale)
            .chain(&self.quat)
            .all(|v| *v == 0.0)
    }
}

/// Offsets for a set of Gaussians; every other Gaussian is left as is.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeformationOutput {
    pub indices: Vec<usize>,
    pub offsets: Vec<GaussianOffset>,
}

impl DeformationOutput {
    pub fn is_zero(&self) -> bool {
        self.offsets.iter().all(GaussianOffset::is_zero)
    }
}

/// Cached forward pass, kept for the backward pass during training.
#[derive(Debug, Clone)]
pub struct DeformationPass {
    pub inputs: Vec<[f64; 3]>,
    pub cache: MlpCache,
}

impl DeformationModel {
    pub fn new(
        cfg: NetworkConfig,
        condition_bounds: Bounds,
        position_bounds: Bounds,
        slots: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ControlError> {
        if position_bounds.dim() != 3 {
            return Err(ControlError::Config(
                "position bounds must be 3-dimensional".into(),
            ));
        }
        if cfg.width == 0 {
            return Err(ControlError::Config(
                "network width must be positive".into(),
            ));
        }
        let condition_dim = condition_bounds.dim();
        let bounds = Bounds {
            lo: condition_bounds
                .lo
                .into_iter()
                .chain(position_bounds.lo)
                .collect(),
            hi: condition_bounds
                .hi
                .into_iter()
                .chain(position_bounds.hi)
                .collect(),
        };
        let encoder = FrequencyEncoder::new(cfg.encoding, bounds)?;
        let mlp = Mlp::new(
            encoder.output_dim() + slots,
            cfg.width,
            cfg.hidden_layers,
            OUTPUT_DIM,
            rng,
        );
        Ok(DeformationModel {
            encoder,
            condition_dim,
            slots,
            mlp,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn check_condition(&self, condition: &[f64], slot: Option<usize>) -> Result<(), ControlError> {
        if condition.len() != self.condition_dim {
            return Err(ControlError::Config(format!(
                "condition has {} components, model expects {}",
                condition.len(),
                self.condition_dim
            )));
        }
        if !condition.iter().all(|v| v.is_finite()) {
            return Err(ControlError::NonFinite("condition".into()));
        }
        match (self.slots, slot) {
            (0, None) => Ok(()),
            (n, Some(s)) if s < n => Ok(()),
            _ => Err(ControlError::Config(format!(
                "cluster slot {slot:?} invalid for a model with {} slots",
                self.slots
            ))),
        }
    }

    /// Feature rows for each center, row-major.
    pub fn features(
        &self,
        condition: &[f64],
        centers: &[[f64; 3]],
        slot: Option<usize>,
    ) -> Vec<f64> {
        let d = self.feature_dim();
        let enc = self.encoder.output_dim();
        let mut out = vec![0.0; centers.len() * d];
        let mut input = condition.to_vec();
        input.extend_from_slice(&[0.0; 3]);
        for (r, c) in centers.iter().enumerate() {
            input[self.condition_dim..].copy_from_slice(c);
            let row = &mut out[r * d..(r + 1) * d];
            self.encoder.encode_into(&input, &mut row[..enc]);
            if let Some(s) = slot {
                row[enc + s] = 1.0;
            }
        }
        out
    }

    pub fn forward(
        &self,
        condition: &[f64],
        centers: &[[f64; 3]],
        slot: Option<usize>,
    ) -> Result<(Vec<GaussianOffset>, DeformationPass), ControlError> {
        self.check_condition(condition, slot)?;
        let x = self.features(condition, centers, slot);
        let cache = self.mlp.forward_batch(&x, centers.len());
        let offsets = cache
            .output()
            .chunks(OUTPUT_DIM)
            .map(GaussianOffset::from_output)
            .collect();
        Ok((
            offsets,
            DeformationPass {
                inputs: centers.to_vec(),
                cache,
            },
        ))
    }

    /// Gradients of `Σ d_offsets · offsets` for the network parameters and the centers.
    pub fn backward(
        &self,
        condition: &[f64],
        pass: &DeformationPass,
        d_offsets: &[f64],
    ) -> (Vec<f64>, Vec<[f64; 3]>) {
        let (grad, d_features) = self.mlp.backward_batch(&pass.cache, d_offsets);
        let d = self.feature_dim();
        let enc = self.encoder.output_dim();
        let mut input = condition.to_vec();
        input.extend_from_slice(&[0.0; 3]);
        let mut d_centers = Vec::with_capacity(pass.inputs.len());
        for (r, c) in pass.inputs.iter().enumerate() {
            input[self.condition_dim..].copy_from_slice(c);
            let mut d_in = vec![0.0; input.len()];
            self.encoder
                .backward(&input, &d_features[r * d..r * d + enc], &mut d_in);
            d_centers.push([
                d_in[self.condition_dim],
                d_in[self.condition_dim + 1],
                d_in[self.condition_dim + 2],
            ]);
        }
        (grad, d_centers)
    }

    pub(crate) fn deform_slot(
        &self,
        condition: &[f64],
        scene: &GaussianScene,
        members: &[usize],
        slot: Option<usize>,
    ) -> Result<DeformationOutput, ControlError> {
        let mut indices = members.to_vec();
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= scene.len()) {
            return Err(ControlError::MemberOutOfRange {
                index: bad,
                count: scene.len(),
            });
        }
        let centers: Vec<[f64; 3]> = indices.iter().map(|&i| scene.gaussians[i].center).collect();
        let (offsets, _) = self.forward(condition, &centers, slot)?;
        Ok(DeformationOutput { indices, offsets })
    }
}

/// Network outputs for each member of `members` under control vector `v_c`.
pub fn deform(
    model: &DeformationModel,
    v_c: &ControlVector,
    scene: &GaussianScene,
    members: &[usize],
) -> Result<DeformationOutput, ControlError> {
    model.deform_slot(&v_c.v, scene, members, None)
}

/// Deformed attributes of one Gaussian: `X + ΔX`, `s·exp(Δlog s)`, `normalize(q + Δq)`.
pub fn deformed_attributes(
    center: [f64; 3],
    scale: [f64; 3],
    quat: [f64; 4],
    off: &GaussianOffset,
) -> Option<([f64; 3], [f64; 3], [f64; 4])> {
    let q = [
        quat[0] + off.quat[0],
        quat[1] + off.quat[1],
        quat[2] + off.quat[2],
        quat[3] + off.quat[3],
    ];
    let n = math::quat_norm(q);
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    Some((
        std::array::from_fn(|k| center[k] + off.center[k]),
        std::array::from_fn(|k| scale[k] * off.log_scale[k].exp()),
        math::quat_normalize(q),
    ))
}

/// Apply offsets to their Gaussians. Opacity and color are unchanged and
/// Gaussians not listed in `out` are copied verbatim.
pub fn apply_deformation(
    scene: &GaussianScene,
    out: &DeformationOutput,
) -> Result<GaussianScene, ControlError> {
    let mut next = scene.clone();
    for (&i, off) in out.indices.iter().zip(&out.offsets) {
        let g = next
            .gaussians
            .get_mut(i)
            .ok_or(ControlError::MemberOutOfRange {
                index: i,
                count: scene.len(),
            })?;
        if off.is_zero() {
            continue;
        }
        let (c, s, q) = deformed_attributes(g.center, g.scale, g.quat, off)
            .ok_or(ControlError::ZeroQuaternion(i))?;
        if !c.iter().chain(&s).all(|v| v.is_finite()) {
            return Err(ControlError::NonFinite(format!("deformed Gaussian {i}")));
        }
        g.center = c;
        g.scale = s;
        g.quat = q;
    }
    Ok(next)
}
