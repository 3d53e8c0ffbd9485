//! Deformation of a base scene by one or more networks, with its backward pass.

use super::backward::GaussianGrad;
use super::TrainError;
use crate::control::{
    deformed_attributes, ControlError, DeformationModel, DeformationPass, GaussianOffset,
    OUTPUT_DIM,
};
use crate::math;
use crate::scene::GaussianScene;

/// Members of one network evaluation and the condition they share.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformGroup {
    /// Index into the network list.
    pub network: usize,
    /// One-hot slot for shared networks.
    pub slot: Option<usize>,
    pub condition: Vec<f64>,
    /// Sorted, distinct Gaussian indices.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Deformed {
    pub scene: GaussianScene,
    passes: Vec<(Vec<GaussianOffset>, DeformationPass)>,
}

/// Apply every group to `base`. Members always go through
/// `normalize(q + Δq)`, so the quaternion path is identical with and without
/// a zero offset.
pub fn deform_forward(
    base: &GaussianScene,
    networks: &[DeformationModel],
    groups: &[DeformGroup],
) -> Result<Deformed, TrainError> {
    let mut scene = base.clone();
    let mut passes = Vec::with_capacity(groups.len());
    for grp in groups {
        let net = &networks[grp.network];
        let centers: Vec<[f64; 3]> = grp
            .members
            .iter()
            .map(|&i| base.gaussians[i].center)
            .collect();
        let (offsets, pass) = net.forward(&grp.condition, &centers, grp.slot)?;
        for (&i, off) in grp.members.iter().zip(&offsets) {
            let g = &base.gaussians[i];
            let (c, s, q) = deformed_attributes(g.center, g.scale, g.quat, off)
                .ok_or(ControlError::ZeroQuaternion(i))?;
            if !c.iter().chain(&s).all(|v| v.is_finite()) {
                return Err(TrainError::Degenerate(format!(
                    "deformed Gaussian {i} is not finite"
                )));
            }
            let d = &mut scene.gaussians[i];
            d.center = c;
            d.scale = s;
            d.quat = q;
        }
        passes.push((offsets, pass));
    }
    Ok(Deformed { scene, passes })
}

/// Gradients of `base` and of every network given gradients on the deformed
/// scene. Network gradients are added to `net_grads`.
pub fn deform_backward(
    base: &GaussianScene,
    networks: &[DeformationModel],
    groups: &[DeformGroup],
    deformed: &Deformed,
    grads: &[GaussianGrad],
    net_grads: &mut [Vec<f64>],
) -> Vec<GaussianGrad> {
    let mut out = grads.to_vec();
    for (grp, (offsets, pass)) in groups.iter().zip(&deformed.passes) {
        let mut d_off = vec![0.0; grp.members.len() * OUTPUT_DIM];
        for (r, (&i, off)) in grp.members.iter().zip(offsets).enumerate() {
            let g = &grads[i];
            let b = &base.gaussians[i];
            let s_def = &deformed.scene.gaussians[i].scale;
            let row = &mut d_off[r * OUTPUT_DIM..(r + 1) * OUTPUT_DIM];
            row[..3].copy_from_slice(&g.center);
            let mut q_pre = [0.0; 4];
            for k in 0..4 {
                q_pre[k] = b.quat[k] + off.quat[k];
            }
            let g_pre = math::quat_normalize_backward(q_pre, g.quat);
            let o = &mut out[i];
            for k in 0..3 {
                row[3 + k] = g.scale[k] * s_def[k];
                o.scale[k] = g.scale[k] * off.log_scale[k].exp();
            }
            row[6..10].copy_from_slice(&g_pre);
            o.quat = g_pre;
        }
        let net = &networks[grp.network];
        let (theta, d_centers) = net.backward(&grp.condition, pass, &d_off);
        for (a, b) in net_grads[grp.network].iter_mut().zip(&theta) {
            *a += b;
        }
        for (&i, dc) in grp.members.iter().zip(&d_centers) {
            for k in 0..3 {
                out[i].center[k] += dc[k];
            }
        }
    }
    out
}
