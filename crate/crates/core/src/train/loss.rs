use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::flow::{FlowMap, FlowUnits, FlowWeighting};
use crate::math;
use crate::render::{render_with_flow, RenderConfig, RgbImage, COVERAGE_EPS};
use crate::scene::{Camera, GaussianScene};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const DEFAULT_LAMBDA: f64 = 0.8;
pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the L1 term; D-SSIM gets `1 − lambda`.
    pub lambda: f64,
    /// Weight of the dynamic-flow term.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            beta: DEFAULT_BETA,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(TrainError::Config(format!(
                "beta {} must be finite and non-negative",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub dssim: f64,
    /// Zero when the sample carries no flow target.
    pub flow: f64,
    pub total: f64,
}

/// `λ L_rgb + (1 − λ) L_dssim + β L_flow`.
pub fn total_loss(cfg: &LossConfig, rgb: f64, dssim: f64, flow: f64) -> f64 {
    cfg.lambda * rgb + (1.0 - cfg.lambda) * dssim + cfg.beta * flow
}

fn check_sizes(a: &RgbImage, b: &RgbImage) -> Result<(), TrainError> {
    if !a.same_size(b) {
        return Err(TrainError::SizeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean absolute difference over pixels and channels.
pub fn photometric_loss(rendered: &RgbImage, target: &RgbImage) -> Result<f64, TrainError> {
    Ok(photometric_loss_grad(rendered, target)?.0)
}

/// L1 loss and its gradient with respect to `rendered`.
pub fn photometric_loss_grad(
    rendered: &RgbImage,
    target: &RgbImage,
) -> Result<(f64, Vec<[f64; 3]>), TrainError> {
    check_sizes(rendered, target)?;
    let n = (rendered.data.len() * 3) as f64;
    let mut sum = math::CompensatedSum::default();
    let grad = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| {
            std::array::from_fn(|c| {
                let d = r[c] - t[c];
                sum.add(d.abs());
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok((sum.value() / n, grad))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" Gaussian filter of a `w × h` plane.
fn blur_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|i| k[i] * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Adjoint of [`blur_valid`]: scatters a valid-size map back to `w × h`.
fn blur_adjoint(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for i in 0..SSIM_WINDOW {
                rows[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

/// Mean SSIM over valid window positions and channels, with its gradient
/// with respect to `a` when `want_grad` is set.
fn ssim(a: &RgbImage, b: &RgbImage, want_grad: bool) -> (f64, Option<Vec<[f64; 3]>>) {
    let (w, h) = (a.width, a.height);
    let k = gaussian_window();
    let count = ((w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1) * 3) as f64;
    let mut total = math::CompensatedSum::default();
    let mut grad = want_grad.then(|| vec![[0.0; 3]; w * h]);
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
        let sq =
            |v: &[f64], u: &[f64]| -> Vec<f64> { v.iter().zip(u).map(|(p, q)| p * q).collect() };
        let mx = blur_valid(&x, w, h, &k);
        let my = blur_valid(&y, w, h, &k);
        let exx = blur_valid(&sq(&x, &x), w, h, &k);
        let eyy = blur_valid(&sq(&y, &y), w, h, &k);
        let exy = blur_valid(&sq(&x, &y), w, h, &k);
        let n = mx.len();
        let (mut g_mu, mut g_xx, mut g_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for p in 0..n {
            let (ux, uy) = (mx[p], my[p]);
            let vx = exx[p] - ux * ux;
            let vy = eyy[p] - uy * uy;
            let cxy = exy[p] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total.add(s);
            if want_grad {
                let scale = 1.0 / count;
                g_mu[p] = scale
                    * ((2.0 * uy * a2 - 2.0 * uy * a1) / (b1 * b2)
                        - s * (2.0 * ux / b1 - 2.0 * ux / b2));
                g_xx[p] = scale * (-s / b2);
                g_xy[p] = scale * (2.0 * a1 / (b1 * b2));
            }
        }
        if let Some(g) = grad.as_mut() {
            let gm = blur_adjoint(&g_mu, w, h, &k);
            let gxx = blur_adjoint(&g_xx, w, h, &k);
            let gxy = blur_adjoint(&g_xy, w, h, &k);
            for q in 0..w * h {
                g[q][c] = gm[q] + 2.0 * x[q] * gxx[q] + y[q] * gxy[q];
            }
        }
    }
    (total.value() / count, grad)
}

fn check_ssim_size(a: &RgbImage) -> Result<(), TrainError> {
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(TrainError::ImageTooSmall {
            width: a.width,
            height: a.height,
            min: SSIM_WINDOW,
        });
    }
    Ok(())
}

/// `(1 − SSIM) / 2` with an 11×11 Gaussian window (σ = 1.5), valid positions only.
pub fn dssim_loss(rendered: &RgbImage, target: &RgbImage) -> Result<f64, TrainError> {
    check_sizes(rendered, target)?;
    check_ssim_size(rendered)?;
    Ok((1.0 - ssim(rendered, target, false).0) / 2.0)
}

/// D-SSIM and its gradient with respect to `rendered`.
pub fn dssim_loss_grad(
    rendered: &RgbImage,
    target: &RgbImage,
) -> Result<(f64, Vec<[f64; 3]>), TrainError> {
    check_sizes(rendered, target)?;
    check_ssim_size(rendered)?;
    let (s, g) = ssim(rendered, target, true);
    let g = g
        .unwrap()
        .into_iter()
        .map(|v| v.map(|x| -0.5 * x))
        .collect();
    Ok(((1.0 - s) / 2.0, g))
}

/// Mean over valid pixels of `|target − rendered|²` and its gradient with
/// respect to `rendered`.
pub fn flow_residual_loss(
    target: &[[f64; 2]],
    rendered: &[[f64; 2]],
    valid: &[bool],
) -> Result<(f64, Vec<[f64; 2]>), TrainError> {
    if target.len() != rendered.len() || valid.len() != rendered.len() {
        return Err(TrainError::SizeMismatch(format!(
            "flow target {}, rendered {}, mask {}",
            target.len(),
            rendered.len(),
            valid.len()
        )));
    }
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return Err(TrainError::NoValidPixels);
    }
    let mut sum = math::CompensatedSum::default();
    let grad = (0..target.len())
        .map(|p| {
            if !valid[p] {
                return [0.0; 2];
            }
            let r = [target[p][0] - rendered[p][0], target[p][1] - rendered[p][1]];
            sum.add(r[0] * r[0] + r[1] * r[1]);
            [-2.0 * r[0] / n as f64, -2.0 * r[1] / n as f64]
        })
        .collect();
    Ok((sum.value() / n as f64, grad))
}

/// Dynamic-flow loss `mean |u − u_cam − Σ T_i α_i (μ_i,t − μ_i,0)|²` over
/// pixels where `u` and `u_cam` are valid and `scene0` covers the pixel.
/// `u` and `u_cam` are displacements in pixels over the same interval.
pub fn flow_loss(
    u: &FlowMap,
    u_cam: &FlowMap,
    scene0: &GaussianScene,
    scene_t: &GaussianScene,
    cam: &Camera,
) -> Result<f64, TrainError> {
    u.check_compatible(u_cam)?;
    if u.units != FlowUnits::Pixels {
        return Err(TrainError::Config(
            "flow loss expects displacements in pixels".into(),
        ));
    }
    let b = render_with_flow(
        scene0,
        scene_t,
        cam,
        FlowWeighting::Unnormalized,
        &RenderConfig::default(),
    )?;
    if b.width != u.width || b.height != u.height {
        return Err(TrainError::SizeMismatch(format!(
            "flow {}x{} vs render {}x{}",
            u.width, u.height, b.width, b.height
        )));
    }
    let target: Vec<[f64; 2]> = u
        .data
        .iter()
        .zip(&u_cam.data)
        .map(|(a, c)| [a[0] - c[0], a[1] - c[1]])
        .collect();
    let valid: Vec<bool> = (0..target.len())
        .map(|p| u.is_valid(p) && u_cam.is_valid(p) && b.accum_alpha[p] > COVERAGE_EPS)
        .collect();
    Ok(flow_residual_loss(&target, &b.gs_flow, &valid)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::new(
            w,
            h,
            (0..w * h)
                .map(|_| [rng.gen(), rng.gen(), rng.gen()])
                .collect(),
        )
    }

    #[test]
    fn l1_cases() {
        let a = random_image(7, 5, 1);
        assert_eq!(photometric_loss(&a, &a).unwrap(), 0.0);
        let zero = RgbImage::filled(4, 4, [0.0; 3]);
        let one = RgbImage::filled(4, 4, [1.0; 3]);
        assert_eq!(photometric_loss(&zero, &one).unwrap(), 1.0);
        let b = random_image(7, 5, 2);
        let brute: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs()))
            .sum::<f64>()
            / 105.0;
        assert!((photometric_loss(&a, &b).unwrap() - brute).abs() < 1e-12);
        assert!(photometric_loss(&a, &zero).is_err());
    }

    #[test]
    fn dssim_cases() {
        let a = random_image(16, 13, 3);
        let b = random_image(16, 13, 4);
        assert!(dssim_loss(&a, &a).unwrap().abs() < 1e-15);
        assert!((dssim_loss(&a, &b).unwrap() - dssim_loss(&b, &a).unwrap()).abs() < 1e-12);
        let zero = RgbImage::filled(12, 12, [0.0; 3]);
        let one = RgbImage::filled(12, 12, [1.0; 3]);
        // Constant images: SSIM = C1 C2 / ((1 + C1) C2) = C1 / (1 + C1).
        let expected = (1.0 - SSIM_C1 / (1.0 + SSIM_C1)) / 2.0;
        assert!((dssim_loss(&zero, &one).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            dssim_loss(&random_image(10, 12, 1), &random_image(10, 12, 2)),
            Err(TrainError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn dssim_gradient_matches_central_difference() {
        let a = random_image(13, 12, 5);
        let b = random_image(13, 12, 6);
        let (_, g) = dssim_loss_grad(&a, &b).unwrap();
        let h = 1e-5;
        for &(p, c) in &[(0, 0), (17, 1), (77, 2), (155, 0), (100, 1)] {
            let mut ap = a.clone();
            ap.data[p][c] += h;
            let mut am = a.clone();
            am.data[p][c] -= h;
            let n = (dssim_loss(&ap, &b).unwrap() - dssim_loss(&am, &b).unwrap()) / (2.0 * h);
            assert!((n - g[p][c]).abs() < 1e-8, "{p},{c}: {n} vs {}", g[p][c]);
        }
    }

    #[test]
    fn total_loss_is_the_weighted_sum() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(&cfg, 1.0, 1.0, 1.0), 1.5);
        assert_eq!(total_loss(&cfg, 0.0, 0.0, 0.0), 0.0);
        let no_flow = LossConfig { beta: 0.0, ..cfg };
        assert_eq!(
            total_loss(&no_flow, 0.3, 0.2, 1e6),
            total_loss(&no_flow, 0.3, 0.2, 0.0)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let (a, b, c): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
            let d: f64 = rng.gen();
            let base = total_loss(&cfg, a, b, c);
            assert!((total_loss(&cfg, a + d, b, c) - base - cfg.lambda * d).abs() < 1e-12);
            assert!((total_loss(&cfg, a, b + d, c) - base - (1.0 - cfg.lambda) * d).abs() < 1e-12);
            assert!((total_loss(&cfg, a, b, c + d) - base - cfg.beta * d).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_residual_cases() {
        let t = vec![[1.0, 1.0]; 6];
        let r = vec![[0.0, 0.0]; 6];
        let mut valid = vec![true; 6];
        assert_eq!(flow_residual_loss(&t, &r, &valid).unwrap().0, 2.0);
        assert_eq!(flow_residual_loss(&t, &t, &valid).unwrap().0, 0.0);
        valid.iter_mut().for_each(|v| *v = false);
        assert!(matches!(
            flow_residual_loss(&t, &r, &valid),
            Err(TrainError::NoValidPixels)
        ));
    }
}
