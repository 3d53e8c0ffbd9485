//! Flat trainable layout of a Gaussian scene: per Gaussian the center (3),
//! log-scale (3), raw quaternion (4), opacity logit (1) and color (3).

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::backward::GaussianGrad;
use crate::math;
use crate::scene::{Gaussian3D, GaussianScene};

pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// Learning-rate multipliers relative to the base rate, per parameter group.
pub const LR_CENTER: f64 = 1.0;
pub const LR_LOG_SCALE: f64 = 31.25;
pub const LR_QUAT: f64 = 6.25;
pub const LR_OPACITY: f64 = 312.5;
pub const LR_COLOR: f64 = 15.625;

/// Opacities are kept this far from 0 and 1 so the logit stays finite.
const OPACITY_MARGIN: f64 = 1e-4;

/// Which attribute a flat parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussianBlock {
    Center,
    LogScale,
    Quat,
    Opacity,
    Color,
}

impl GaussianBlock {
    pub const ALL: [GaussianBlock; 5] = [
        GaussianBlock::Center,
        GaussianBlock::LogScale,
        GaussianBlock::Quat,
        GaussianBlock::Opacity,
        GaussianBlock::Color,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GaussianBlock::Center => "gaussians.center",
            GaussianBlock::LogScale => "gaussians.log_scale",
            GaussianBlock::Quat => "gaussians.rotation",
            GaussianBlock::Opacity => "gaussians.opacity",
            GaussianBlock::Color => "gaussians.color",
        }
    }

    /// Offsets within one Gaussian's 14 parameters.
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            GaussianBlock::Center => 0..3,
            GaussianBlock::LogScale => 3..6,
            GaussianBlock::Quat => 6..10,
            GaussianBlock::Opacity => 10..11,
            GaussianBlock::Color => 11..14,
        }
    }

    fn lr(self) -> f64 {
        match self {
            GaussianBlock::Center => LR_CENTER,
            GaussianBlock::LogScale => LR_LOG_SCALE,
            GaussianBlock::Quat => LR_QUAT,
            GaussianBlock::Opacity => LR_OPACITY,
            GaussianBlock::Color => LR_COLOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub values: Vec<f64>,
    pub background: [f64; 3],
}

impl GaussianParams {
    pub fn from_scene(scene: &GaussianScene) -> Self {
        let mut values = Vec::with_capacity(scene.len() * PARAMS_PER_GAUSSIAN);
        for g in &scene.gaussians {
            values.extend_from_slice(&g.center);
            values.extend(g.scale.iter().map(|s| s.ln()));
            values.extend_from_slice(&g.quat);
            values.push(math::logit(
                g.opacity.clamp(OPACITY_MARGIN, 1.0 - OPACITY_MARGIN),
            ));
            values.extend_from_slice(&g.color);
        }
        GaussianParams {
            values,
            background: scene.background,
        }
    }

    pub fn gaussian_count(&self) -> usize {
        self.values.len() / PARAMS_PER_GAUSSIAN
    }

    /// Scene with unit quaternions, positive scales and opacities in (0, 1).
    pub fn to_scene(&self) -> GaussianScene {
        let gaussians = self
            .values
            .chunks_exact(PARAMS_PER_GAUSSIAN)
            .map(|p| Gaussian3D {
                center: [p[0], p[1], p[2]],
                scale: [p[3].exp(), p[4].exp(), p[5].exp()],
                quat: math::quat_normalize([p[6], p[7], p[8], p[9]]),
                opacity: math::sigmoid(p[10]),
                color: [p[11], p[12], p[13]],
                velocity: None,
            })
            .collect();
        let mut s = GaussianScene::new(gaussians);
        s.background = self.background;
        s
    }

    /// Chain rendered-attribute gradients of the scene from [`Self::to_scene`]
    /// back to the flat parameters.
    pub fn gradient(&self, grads: &[GaussianGrad]) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for (i, (p, g)) in self
            .values
            .chunks_exact(PARAMS_PER_GAUSSIAN)
            .zip(grads)
            .enumerate()
        {
            let o = &mut out[i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN];
            o[..3].copy_from_slice(&g.center);
            for k in 0..3 {
                o[3 + k] = g.scale[k] * p[3 + k].exp();
            }
            o[6..10].copy_from_slice(&math::quat_normalize_backward(
                [p[6], p[7], p[8], p[9]],
                g.quat,
            ));
            let op = math::sigmoid(p[10]);
            o[10] = g.opacity * op * (1.0 - op);
            o[11..14].copy_from_slice(&g.color);
        }
        out
    }

    /// Per-parameter learning-rate multipliers.
    pub fn lr_scale(&self) -> Vec<f64> {
        let mut one = [0.0; PARAMS_PER_GAUSSIAN];
        for b in GaussianBlock::ALL {
            for k in b.range() {
                one[k] = b.lr();
            }
        }
        one.iter()
            .copied()
            .cycle()
            .take(self.values.len())
            .collect()
    }

    /// Keep colors in the displayable range.
    pub fn project(&mut self) {
        for p in self.values.chunks_exact_mut(PARAMS_PER_GAUSSIAN) {
            for c in &mut p[11..14] {
                *c = c.clamp(0.0, 1.0);
            }
        }
    }
}

/// Standard deviations of the seeded perturbation applied to an initial scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub center: f64,
    pub log_scale: f64,
    pub color: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            center: 0.005,
            log_scale: 0.05,
            color: 0.03,
        }
    }
}

/// Copy of `scene` with Gaussian noise on centers, log-scales and colors.
/// Motion scripts and per-Gaussian velocities are dropped.
pub fn perturb_scene(scene: &GaussianScene, p: &Perturbation, rng: &mut impl Rng) -> GaussianScene {
    let noise = |sd: f64, rng: &mut _| {
        if sd > 0.0 {
            Normal::new(0.0, sd).expect("finite deviation").sample(rng)
        } else {
            0.0
        }
    };
    let mut out = scene.clone();
    out.motion = None;
    for g in &mut out.gaussians {
        g.velocity = None;
        for k in 0..3 {
            g.center[k] += noise(p.center, rng);
        }
        for k in 0..3 {
            g.scale[k] *= noise(p.log_scale, rng).exp();
        }
        for k in 0..3 {
            g.color[k] = (g.color[k] + noise(p.color, rng)).clamp(0.0, 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> GaussianScene {
        let mut a = Gaussian3D::isotropic([0.1, 0.2, 2.0], 0.3, 0.6, [0.2, 0.4, 0.9]);
        a.quat = math::quat_normalize([1.0, 0.2, 0.0, -0.1]);
        let mut s = GaussianScene::new(vec![
            a,
            Gaussian3D::isotropic([0.0, 0.0, 3.0], 0.2, 0.9, [1.0, 0.0, 0.5]),
        ]);
        s.background = [0.1, 0.2, 0.3];
        s
    }

    #[test]
    fn pack_then_unpack_round_trips() {
        let s = scene();
        let back = GaussianParams::from_scene(&s).to_scene();
        for (a, b) in s.gaussians.iter().zip(&back.gaussians) {
            for k in 0..3 {
                assert!((a.center[k] - b.center[k]).abs() < 1e-15);
                assert!((a.scale[k] - b.scale[k]).abs() < 1e-15);
                assert!((a.color[k] - b.color[k]).abs() < 1e-15);
            }
            assert!((a.opacity - b.opacity).abs() < 1e-12);
        }
        assert_eq!(back.background, s.background);
    }

    #[test]
    fn gradient_chain_matches_central_differences() {
        let p = GaussianParams::from_scene(&scene());
        // Linear functional of the unpacked scene.
        let w: Vec<f64> = (0..PARAMS_PER_GAUSSIAN * 2)
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let f = |p: &GaussianParams| -> f64 {
            let s = p.to_scene();
            let mut acc = 0.0;
            for (i, g) in s.gaussians.iter().enumerate() {
                let v: Vec<f64> = g
                    .center
                    .iter()
                    .chain(&g.scale)
                    .chain(&g.quat)
                    .chain(std::iter::once(&g.opacity))
                    .chain(&g.color)
                    .copied()
                    .collect();
                acc += v.iter().zip(&w[i * 14..]).map(|(a, b)| a * b).sum::<f64>();
            }
            acc
        };
        let grads: Vec<GaussianGrad> = (0..2)
            .map(|i| {
                let w = &w[i * 14..];
                GaussianGrad {
                    center: [w[0], w[1], w[2]],
                    scale: [w[3], w[4], w[5]],
                    quat: [w[6], w[7], w[8], w[9]],
                    opacity: w[10],
                    color: [w[11], w[12], w[13]],
                }
            })
            .collect();
        let a = p.gradient(&grads);
        let h = 1e-6;
        for j in 0..p.values.len() {
            let (mut hi, mut lo) = (p.clone(), p.clone());
            hi.values[j] += h;
            lo.values[j] -= h;
            let n = (f(&hi) - f(&lo)) / (2.0 * h);
            assert!((a[j] - n).abs() < 1e-7, "param {j}: {} vs {n}", a[j]);
        }
    }

    #[test]
    fn lr_scale_and_projection() {
        let mut p = GaussianParams::from_scene(&scene());
        let s = p.lr_scale();
        assert_eq!(
            &s[..14],
            &[
                1.0, 1.0, 1.0, 31.25, 31.25, 31.25, 6.25, 6.25, 6.25, 6.25, 312.5, 15.625, 15.625,
                15.625
            ]
        );
        assert_eq!(s.len(), 28);
        p.values[11] = 1.5;
        p.values[12] = -0.2;
        p.project();
        assert_eq!(&p.values[11..13], &[1.0, 0.0]);
    }

    #[test]
    fn perturbation_is_seeded() {
        let s = scene();
        let a = perturb_scene(
            &s,
            &Perturbation::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let b = perturb_scene(
            &s,
            &Perturbation::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        assert_eq!(a, b);
        assert_ne!(a, s);
        let none = Perturbation {
            center: 0.0,
            log_scale: 0.0,
            color: 0.0,
        };
        assert_eq!(
            perturb_scene(&s, &none, &mut ChaCha8Rng::seed_from_u64(3)).gaussians,
            s.gaussians
        );
    }
}
