//! Analytic backward pass through compositing and EWA projection.

use nalgebra::{Matrix2, Matrix2x3, Vector3};

use crate::exec;
use crate::math::{self, Mat3, Vec3};
use crate::render::{
    project_gaussian, project_scene, projection_jacobian, rasterize, splat_displacements,
    RenderBuffers, RenderConfig, COV2D_DILATION, COVERAGE_EPS, MAX_ALPHA,
};
use crate::scene::{Camera, GaussianScene};

/// Rows of pixels per work item of the compositing backward pass.
const BAND_ROWS: usize = 4;

/// Gradient with respect to one Gaussian's rendered attributes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaussianGrad {
    pub center: [f64; 3],
    pub scale: [f64; 3],
    /// With respect to the unit quaternion used for rendering.
    pub quat: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    flow: [f64; 2],
    depth: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
            self.flow[k] += o.flow[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

/// Forward render that keeps every composited splat per pixel.
#[derive(Debug, Clone)]
pub struct TrainingRender {
    pub buffers: RenderBuffers,
    /// Per-slot splat displacement towards the next state, when rendered with one.
    pub displacements: Option<Vec<[f64; 2]>>,
}

pub fn training_config() -> RenderConfig {
    RenderConfig {
        min_contribution: 0.0,
        ..RenderConfig::default()
    }
}

/// Render `scene` through `cam`, and the dynamic flow channel towards `next` if given.
/// Colors equal those of the default renderer.
pub fn render_for_training(
    scene: &GaussianScene,
    next: Option<&GaussianScene>,
    cam: &Camera,
) -> TrainingRender {
    let splats = project_scene(scene, cam);
    let displacements = next.map(|n| splat_displacements(&splats, n, cam));
    let intr = &cam.intrinsics;
    let buffers = rasterize(
        splats,
        displacements.as_deref(),
        intr.width,
        intr.height,
        scene.background,
        &training_config(),
    );
    TrainingRender {
        buffers,
        displacements,
    }
}

fn composite_backward(
    r: &TrainingRender,
    background: [f64; 3],
    d_color: &[[f64; 3]],
    d_flow: Option<&[[f64; 2]]>,
    d_depth: Option<&[f64]>,
) -> Vec<SplatGrad> {
    let b = &r.buffers;
    let (w, h) = (b.width, b.height);
    let splats = &b.splats;
    let bands = h.div_ceil(BAND_ROWS);
    let parts = exec::map_range(bands, |band| {
        let mut g = vec![SplatGrad::default(); splats.len()];
        let mut alphas: Vec<(f64, f64, f64)> = Vec::new();
        for y in band * BAND_ROWS..((band + 1) * BAND_ROWS).min(h) {
            for x in 0..w {
                let p = y * w + x;
                let list = &b.contributions[p];
                if list.is_empty() {
                    continue;
                }
                let (xf, yf) = (x as f64, y as f64);
                let gc = d_color[p];
                let gf = d_flow.map_or([0.0; 2], |f| f[p]);
                // Depth is Σ w Z / Σ w: a numerator channel and the accumulated weight.
                let gd = d_depth.map_or(0.0, |d| d[p]);
                let (g_num, g_acc) = if gd != 0.0 && b.accum_alpha[p] > COVERAGE_EPS {
                    let a = b.accum_alpha[p];
                    (gd / a, -gd * b.depth[p] / a)
                } else {
                    (0.0, 0.0)
                };
                alphas.clear();
                let mut t = 1.0;
                for c in list {
                    let s = &splats[c.slot];
                    let m2 = s.mahalanobis2(xf, yf);
                    let raw = s.opacity * (-0.5 * m2).exp();
                    let alpha = raw.min(MAX_ALPHA);
                    alphas.push((alpha, raw, t));
                    t *= 1.0 - alpha;
                }
                let mut suffix_c = [t * background[0], t * background[1], t * background[2]];
                let mut suffix_f = [0.0; 2];
                let mut suffix_num = 0.0;
                let mut suffix_acc = 0.0;
                for (k, c) in list.iter().enumerate().rev() {
                    let s = &splats[c.slot];
                    let (alpha, raw, ti) = alphas[k];
                    let wgt = ti * alpha;
                    let flow_i = r.displacements.as_ref().map_or([0.0; 2], |d| d[c.slot]);
                    let gs = &mut g[c.slot];
                    let inv = 1.0 / (1.0 - alpha);
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        gs.color[ch] += gc[ch] * wgt;
                        d_alpha += gc[ch] * (ti * s.color[ch] - suffix_c[ch] * inv);
                        suffix_c[ch] += s.color[ch] * wgt;
                    }
                    for k2 in 0..2 {
                        gs.flow[k2] += gf[k2] * wgt;
                        d_alpha += gf[k2] * (ti * flow_i[k2] - suffix_f[k2] * inv);
                        suffix_f[k2] += flow_i[k2] * wgt;
                    }
                    gs.depth += g_num * wgt;
                    d_alpha +=
                        g_num * (ti * s.depth - suffix_num * inv) + g_acc * (ti - suffix_acc * inv);
                    suffix_num += s.depth * wgt;
                    suffix_acc += wgt;
                    if raw >= MAX_ALPHA {
                        continue;
                    }
                    let dx = xf - s.mean[0];
                    let dy = yf - s.mean[1];
                    let m2 = s.mahalanobis2(xf, yf);
                    gs.opacity += d_alpha * (-0.5 * m2).exp();
                    let g_m2 = -0.5 * alpha * d_alpha;
                    gs.mean[0] += g_m2 * -2.0 * (s.conic[0] * dx + s.conic[1] * dy);
                    gs.mean[1] += g_m2 * -2.0 * (s.conic[1] * dx + s.conic[2] * dy);
                    gs.conic[0] += g_m2 * dx * dx;
                    gs.conic[1] += g_m2 * 2.0 * dx * dy;
                    gs.conic[2] += g_m2 * dy * dy;
                }
            }
        }
        g
    });
    let mut total = vec![SplatGrad::default(); splats.len()];
    for part in parts {
        for (a, b) in total.iter_mut().zip(&part) {
            a.add(b);
        }
    }
    total
}

/// Gradient of the projected mean with respect to the world-space center.
fn mean_backward(cam: &Camera, center: &Vec3, g_mean: [f64; 2]) -> Vec3 {
    let intr = &cam.intrinsics;
    let p = cam.pose.transform(center);
    let iz = 1.0 / p.z;
    let gp = Vec3::new(
        g_mean[0] * intr.fx * iz,
        g_mean[1] * intr.fy * iz,
        -(g_mean[0] * intr.fx * p.x + g_mean[1] * intr.fy * p.y) * iz * iz,
    );
    cam.pose.rotation.transpose() * gp
}

fn splat_backward(
    g: &crate::scene::Gaussian3D,
    cam: &Camera,
    sg: &SplatGrad,
    g_mean: [f64; 2],
) -> GaussianGrad {
    let intr = &cam.intrinsics;
    let center = g.center_vec();
    let p = cam.pose.transform(&center);
    let w = cam.pose.rotation;
    let rot = math::quat_to_rotation(g.quat);
    let scale = Vector3::from(g.scale);
    let cov3 = math::covariance(&rot, &scale);
    let jac = projection_jacobian(intr.fx, intr.fy, &p);
    let t: Matrix2x3<f64> = jac * w;
    let c2 = t * cov3 * t.transpose();
    let sigma = Matrix2::new(
        c2[(0, 0)] + COV2D_DILATION,
        c2[(0, 1)],
        c2[(1, 0)],
        c2[(1, 1)] + COV2D_DILATION,
    );
    let q = sigma.try_inverse().unwrap_or_else(Matrix2::zeros);
    let gq = Matrix2::new(
        sg.conic[0],
        0.5 * sg.conic[1],
        0.5 * sg.conic[1],
        sg.conic[2],
    );
    let g_sigma = -(q * gq * q);
    let g_cov3: Mat3 = t.transpose() * g_sigma * t;
    let g_t: Matrix2x3<f64> = 2.0 * g_sigma * t * cov3;
    let g_j: Matrix2x3<f64> = g_t * w.transpose();

    let (fx, fy) = (intr.fx, intr.fy);
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut gp = Vec3::new(
        g_j[(0, 2)] * (-fx * iz2),
        g_j[(1, 2)] * (-fy * iz2),
        g_j[(0, 0)] * (-fx * iz2)
            + g_j[(0, 2)] * (2.0 * fx * p.x * iz3)
            + g_j[(1, 1)] * (-fy * iz2)
            + g_j[(1, 2)] * (2.0 * fy * p.y * iz3),
    );
    gp += Vec3::new(
        g_mean[0] * fx * iz,
        g_mean[1] * fy * iz,
        -(g_mean[0] * fx * p.x + g_mean[1] * fy * p.y) * iz2 + sg.depth,
    );
    let g_center = w.transpose() * gp;
    let (g_rot, g_scale) = math::covariance_backward(&rot, &scale, &g_cov3);
    GaussianGrad {
        center: [g_center.x, g_center.y, g_center.z],
        scale: [g_scale.x, g_scale.y, g_scale.z],
        quat: math::quat_to_rotation_backward(g.quat, &g_rot),
        opacity: sg.opacity,
        color: sg.color,
    }
}

/// Gradients of a scalar loss given `∂L/∂color`, optionally `∂L/∂gs_flow`
/// (when the render carries the flow channel) and `∂L/∂depth`. Returns
/// per-Gaussian gradients for `scene` and center gradients for `next`.
pub fn render_backward(
    r: &TrainingRender,
    scene: &GaussianScene,
    next: Option<&GaussianScene>,
    cam: &Camera,
    d_color: &[[f64; 3]],
    d_flow: Option<&[[f64; 2]]>,
    d_depth: Option<&[f64]>,
) -> (Vec<GaussianGrad>, Vec<[f64; 3]>) {
    let sg = composite_backward(
        r,
        scene.background,
        d_color,
        d_flow.filter(|_| r.displacements.is_some()),
        d_depth,
    );
    let splats = &r.buffers.splats;
    let per_slot = exec::map_range(splats.len(), |slot| {
        let s = &splats[slot];
        let g = &scene.gaussians[s.index];
        let mut g_mean = sg[slot].mean;
        let mut g_next = [0.0; 3];
        if let Some(n) = next {
            let f = sg[slot].flow;
            let ng = &n.gaussians[s.index];
            if project_gaussian(ng, s.index, cam).is_some() && (f[0] != 0.0 || f[1] != 0.0) {
                g_mean[0] -= f[0];
                g_mean[1] -= f[1];
                let gn = mean_backward(cam, &ng.center_vec(), f);
                g_next = [gn.x, gn.y, gn.z];
            }
        }
        (s.index, splat_backward(g, cam, &sg[slot], g_mean), g_next)
    });
    let mut grads = vec![GaussianGrad::default(); scene.len()];
    let mut next_grads = vec![[0.0; 3]; scene.len()];
    for (i, g, gn) in per_slot {
        grads[i] = g;
        next_grads[i] = gn;
    }
    (grads, next_grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian3D, Intrinsics, Pose};

    fn cam() -> Camera {
        Camera::new(
            Intrinsics::new(20.0, 20.0, 6.3, 5.8, 12, 12).unwrap(),
            Pose::identity(),
        )
    }

    fn scene() -> GaussianScene {
        let mut a = Gaussian3D::isotropic([0.05, -0.02, 2.0], 0.35, 0.7, [0.9, 0.2, 0.1]);
        a.scale = [0.35, 0.25, 0.3];
        a.quat = math::quat_normalize([0.9, 0.2, -0.1, 0.3]);
        let b = Gaussian3D::isotropic([-0.1, 0.08, 2.6], 0.4, 0.6, [0.1, 0.7, 0.4]);
        let mut s = GaussianScene::new(vec![a, b]);
        s.background = [0.2, 0.3, 0.1];
        s
    }

    fn loss(s: &GaussianScene, weights: &[[f64; 3]]) -> f64 {
        let r = render_for_training(s, None, &cam());
        r.buffers
            .color
            .iter()
            .zip(weights)
            .map(|(c, w)| (0..3).map(|k| c[k] * w[k]).sum::<f64>())
            .sum()
    }

    #[test]
    fn color_render_matches_default_renderer() {
        let s = scene();
        let a = render_for_training(&s, None, &cam()).buffers.color;
        let b = crate::render::render(&s, &cam()).unwrap().color;
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_central_differences() {
        let s = scene();
        let weights: Vec<[f64; 3]> = (0..144)
            .map(|i| [(i as f64 * 0.3).sin(), (i as f64 * 0.7).cos(), 0.5])
            .collect();
        let r = render_for_training(&s, None, &cam());
        let (g, _) = render_backward(&r, &s, None, &cam(), &weights, None, None);
        let h = 1e-6;
        let check = |name: &str, a: f64, f: &dyn Fn(&mut GaussianScene, f64)| {
            let mut sp = s.clone();
            f(&mut sp, h);
            let mut sm = s.clone();
            f(&mut sm, -h);
            let n = (loss(&sp, &weights) - loss(&sm, &weights)) / (2.0 * h);
            assert!(
                (a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-3),
                "{name}: analytic {a} numeric {n}"
            );
        };
        for i in 0..2 {
            for k in 0..3 {
                check("center", g[i].center[k], &|s, d| {
                    s.gaussians[i].center[k] += d
                });
                check("scale", g[i].scale[k], &|s, d| s.gaussians[i].scale[k] += d);
                check("color", g[i].color[k], &|s, d| s.gaussians[i].color[k] += d);
            }
            for k in 0..4 {
                check("quat", g[i].quat[k], &|s, d| s.gaussians[i].quat[k] += d);
            }
            check("opacity", g[i].opacity, &|s, d| s.gaussians[i].opacity += d);
        }
    }

    #[test]
    fn flow_and_depth_gradients_match_central_differences() {
        let s = scene();
        let mut next = s.clone();
        next.gaussians[0].center[0] += 0.04;
        next.gaussians[1].center[1] -= 0.03;
        let wc: Vec<[f64; 3]> = (0..144)
            .map(|i| [0.2, (i as f64 * 0.4).sin(), 0.1])
            .collect();
        let wf: Vec<[f64; 2]> = (0..144).map(|i| [(i as f64 * 0.9).cos(), 0.3]).collect();
        let wd: Vec<f64> = (0..144).map(|i| (i as f64 * 0.23).sin()).collect();
        let loss = |a: &GaussianScene, b: &GaussianScene| {
            let r = render_for_training(a, Some(b), &cam());
            let c: f64 = r
                .buffers
                .color
                .iter()
                .zip(&wc)
                .map(|(c, w)| (0..3).map(|k| c[k] * w[k]).sum::<f64>())
                .sum();
            let f: f64 = r
                .buffers
                .gs_flow
                .iter()
                .zip(&wf)
                .map(|(f, w)| f[0] * w[0] + f[1] * w[1])
                .sum();
            let d: f64 = r.buffers.depth.iter().zip(&wd).map(|(z, w)| z * w).sum();
            c + f + d
        };
        let r = render_for_training(&s, Some(&next), &cam());
        let (g, gn) = render_backward(&r, &s, Some(&next), &cam(), &wc, Some(&wf), Some(&wd));
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..3 {
                let (mut a, mut b) = (s.clone(), s.clone());
                a.gaussians[i].center[k] += h;
                b.gaussians[i].center[k] -= h;
                let n = (loss(&a, &next) - loss(&b, &next)) / (2.0 * h);
                assert!(
                    (g[i].center[k] - n).abs() <= 1e-5 * n.abs().max(1e-3),
                    "center {i} {k}: {} vs {n}",
                    g[i].center[k]
                );
                let (mut a, mut b) = (next.clone(), next.clone());
                a.gaussians[i].center[k] += h;
                b.gaussians[i].center[k] -= h;
                let n = (loss(&s, &a) - loss(&s, &b)) / (2.0 * h);
                assert!(
                    (gn[i][k] - n).abs() <= 1e-5 * n.abs().max(1e-3),
                    "next {i} {k}: {} vs {n}",
                    gn[i][k]
                );
            }
        }
    }

    fn single() -> GaussianScene {
        let mut s = GaussianScene::new(vec![Gaussian3D::isotropic(
            [0.1, -0.05, 2.0],
            0.3,
            0.65,
            [0.4, 0.6, 0.2],
        )]);
        s.background = [0.0; 3];
        s
    }

    #[test]
    fn one_pixel_color_gradient_is_alpha_times_sign() {
        let s = single();
        let c = cam();
        let r = render_for_training(&s, None, &c);
        let p = r.buffers.pixel(7, 5);
        let target = [0.1, 0.9, 0.0];
        let sign: [f64; 3] = std::array::from_fn(|k| (r.buffers.color[p][k] - target[k]).signum());
        let mut w = vec![[0.0; 3]; 144];
        w[p] = sign.map(|v| v / 3.0);
        let (g, _) = render_backward(&r, &s, None, &c, &w, None, None);
        let alpha = r.buffers.accum_alpha[p];
        let loss = |s: &GaussianScene| {
            let b = render_for_training(s, None, &c).buffers;
            (0..3)
                .map(|k| (b.color[p][k] - target[k]).abs())
                .sum::<f64>()
                / 3.0
        };
        let h = 1e-4;
        for k in 0..3 {
            let hand = alpha * sign[k] / 3.0;
            assert!(
                (g[0].color[k] - hand).abs() <= 1e-12,
                "{} vs {hand}",
                g[0].color[k]
            );
            let (mut a, mut b) = (s.clone(), s.clone());
            a.gaussians[0].color[k] += h;
            b.gaussians[0].color[k] -= h;
            let n = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((hand - n).abs() <= 1e-5 * hand.abs(), "{hand} vs {n}");
        }
    }

    #[test]
    fn one_pixel_flow_gradient_is_twice_alpha_times_residual() {
        let s = single();
        let c = cam();
        let mut next = s.clone();
        next.gaussians[0].center = [0.13, -0.03, 2.05];
        let r = render_for_training(&s, Some(&next), &c);
        let p = r.buffers.pixel(6, 6);
        let target = [0.4, -0.2];
        let res = [
            target[0] - r.buffers.gs_flow[p][0],
            target[1] - r.buffers.gs_flow[p][1],
        ];
        let mut d = vec![[0.0; 2]; 144];
        d[p] = [-2.0 * res[0], -2.0 * res[1]];
        let (_, gn) = render_backward(
            &r,
            &s,
            Some(&next),
            &c,
            &vec![[0.0; 3]; 144],
            Some(&d),
            None,
        );
        // Gradient on the 2D mean at t is -2·T₁α₁·residual, chained through
        // the pinhole projection of the next center.
        let alpha = r.buffers.accum_alpha[p];
        let [x, y, z] = next.gaussians[0].center;
        let (fx, fy) = (c.intrinsics.fx, c.intrinsics.fy);
        let g2 = [-2.0 * alpha * res[0], -2.0 * alpha * res[1]];
        let hand = [
            g2[0] * fx / z,
            g2[1] * fy / z,
            -(g2[0] * fx * x + g2[1] * fy * y) / (z * z),
        ];
        let loss = |n: &GaussianScene| {
            let f = render_for_training(&s, Some(n), &c).buffers.gs_flow[p];
            (target[0] - f[0]).powi(2) + (target[1] - f[1]).powi(2)
        };
        let h = 1e-6;
        for k in 0..3 {
            assert!(
                (gn[0][k] - hand[k]).abs() <= 1e-10 * hand[k].abs().max(1.0),
                "{k}: {} vs {}",
                gn[0][k],
                hand[k]
            );
            let (mut a, mut b) = (next.clone(), next.clone());
            a.gaussians[0].center[k] += h;
            b.gaussians[0].center[k] -= h;
            let n = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!(
                (hand[k] - n).abs() <= 1e-5 * hand[k].abs(),
                "{k}: {} vs {n}",
                hand[k]
            );
        }
    }
}
