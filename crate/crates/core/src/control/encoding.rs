use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use super::ControlError;

pub const DEFAULT_BANDS: usize = 6;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// Axis-aligned normalization box for one group of input components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ControlError> {
        if lo.len() != hi.len() {
            return Err(ControlError::Config(format!(
                "bounds of length {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (k, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(ControlError::Config(format!(
                    "bounds[{k}] = [{a}, {b}] is empty or non-finite"
                )));
            }
        }
        Ok(Bounds { lo, hi })
    }

    /// Box `[-r, r]` per component, so zero maps to the center.
    pub fn symmetric(radius: &[f64]) -> Result<Self, ControlError> {
        Bounds::new(radius.iter().map(|r| -r).collect(), radius.to_vec())
    }

    /// Bounding box of `points`, each side grown by `pad` times its extent
    /// (and at least `min_half` on each side of the center).
    pub fn enclosing(points: &[[f64; 3]], pad: f64, min_half: f64) -> Result<Self, ControlError> {
        if points.is_empty() {
            return Err(ControlError::Config("no points to bound".into()));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let mut l = Vec::with_capacity(3);
        let mut h = Vec::with_capacity(3);
        for k in 0..3 {
            let mid = 0.5 * (lo[k] + hi[k]);
            let half = (0.5 * (hi[k] - lo[k]) * (1.0 + 2.0 * pad)).max(min_half);
            l.push(mid - half);
            h.push(mid + half);
        }
        Bounds::new(l, h)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Frequency bands `L`.
    pub bands: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            bands: DEFAULT_BANDS,
        }
    }
}

/// Sinusoidal encoding `sin/cos(2^ℓ π x̂)`, `ℓ = 0..L−1`, of each input
/// component normalized to `x̂ ∈ [−½, ½]` by its bounds. Per component the
/// layout is `sin ℓ=0, cos ℓ=0, sin ℓ=1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEncoder {
    pub bands: usize,
    pub bounds: Bounds,
}

impl FrequencyEncoder {
    pub fn new(cfg: EncodingConfig, bounds: Bounds) -> Result<Self, ControlError> {
        if cfg.bands == 0 {
            return Err(ControlError::Config(
                "encoding needs at least one frequency band".into(),
            ));
        }
        Ok(FrequencyEncoder {
            bands: cfg.bands,
            bounds,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.bands * self.input_dim()
    }

    /// Normalized component and whether it had to be clamped.
    fn normalize(&self, k: usize, v: f64) -> (f64, bool) {
        let (lo, hi) = (self.bounds.lo[k], self.bounds.hi[k]);
        let x = (v - lo) / (hi - lo) - 0.5;
        if x.is_nan() {
            return (0.0, true);
        }
        let c = x.clamp(-0.5, 0.5);
        (c, c != x)
    }

    /// Write the features of `input` into `out`. Out-of-bounds components
    /// are clamped; the first clamp in the process logs a warning.
    pub fn encode_into(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.input_dim());
        debug_assert_eq!(out.len(), self.output_dim());
        let mut clamped = false;
        for (k, &v) in input.iter().enumerate() {
            let (x, c) = self.normalize(k, v);
            clamped |= c;
            let base = 2 * self.bands * k;
            let mut freq = PI;
            for l in 0..self.bands {
                let (s, co) = (freq * x).sin_cos();
                out[base + 2 * l] = s;
                out[base + 2 * l + 1] = co;
                freq *= 2.0;
            }
        }
        if clamped && !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("encoder input outside its normalization bounds; clamped");
        }
    }

    pub fn encode(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_into(input, &mut out);
        out
    }

    /// Accumulate `∂L/∂input` from `∂L/∂features`. Clamped components get zero.
    pub fn backward(&self, input: &[f64], d_out: &[f64], d_input: &mut [f64]) {
        for (k, &v) in input.iter().enumerate() {
            let (x, clamped) = self.normalize(k, v);
            if clamped {
                continue;
            }
            let scale = 1.0 / (self.bounds.hi[k] - self.bounds.lo[k]);
            let base = 2 * self.bands * k;
            let mut freq = PI;
            let mut acc = 0.0;
            for l in 0..self.bands {
                let (s, c) = (freq * x).sin_cos();
                acc += freq * (c * d_out[base + 2 * l] - s * d_out[base + 2 * l + 1]);
                freq *= 2.0;
            }
            d_input[k] += acc * scale;
        }
    }
}

/// Features of a control vector and a Gaussian center: the encoding of the
/// 6-vector `(v_c, X)` with `v_bounds` for the first three components and
/// `x_bounds` for the rest.
pub fn encode(
    v_c: [f64; 3],
    x: [f64; 3],
    cfg: EncodingConfig,
    v_bounds: &Bounds,
    x_bounds: &Bounds,
) -> Result<Vec<f64>, ControlError> {
    if v_bounds.dim() != 3 || x_bounds.dim() != 3 {
        return Err(ControlError::Config(
            "control and position bounds must be 3-dimensional".into(),
        ));
    }
    let bounds = Bounds {
        lo: v_bounds.lo.iter().chain(&x_bounds.lo).copied().collect(),
        hi: v_bounds.hi.iter().chain(&x_bounds.hi).copied().collect(),
    };
    let enc = FrequencyEncoder::new(cfg, bounds)?;
    Ok(enc.encode(&[v_c[0], v_c[1], v_c[2], x[0], x[1], x[2]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Bounds {
        Bounds::symmetric(&[1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_input_at_center_gives_sin0_cos1() {
        let f = encode(
            [0.0; 3],
            [0.0; 3],
            EncodingConfig::default(),
            &unit_box(),
            &unit_box(),
        )
        .unwrap();
        assert_eq!(f.len(), 72);
        for pair in f.chunks(2) {
            assert_eq!(pair, [0.0, 1.0]);
        }
    }

    #[test]
    fn output_dimension_is_two_l_per_component() {
        for bands in 1..8 {
            let enc = FrequencyEncoder::new(
                EncodingConfig { bands },
                Bounds::symmetric(&[1.0; 6]).unwrap(),
            )
            .unwrap();
            assert_eq!(enc.output_dim(), 2 * 3 * bands * 2);
        }
        assert!(FrequencyEncoder::new(EncodingConfig { bands: 0 }, unit_box()).is_err());
    }

    #[test]
    fn encoding_is_deterministic_and_clamps() {
        let enc = FrequencyEncoder::new(EncodingConfig::default(), unit_box()).unwrap();
        let a = enc.encode(&[0.3, -0.7, 0.1]);
        let b = enc.encode(&[0.3, -0.7, 0.1]);
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(enc.encode(&[5.0, 0.0, 0.0]), enc.encode(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn backward_matches_central_difference() {
        let enc = FrequencyEncoder::new(
            EncodingConfig { bands: 4 },
            Bounds::new(vec![-1.0, 0.0], vec![2.0, 0.5]).unwrap(),
        )
        .unwrap();
        let input = [0.37, 0.11];
        let weights: Vec<f64> = (0..enc.output_dim())
            .map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3)
            .collect();
        let f = |x: &[f64]| {
            enc.encode(x)
                .iter()
                .zip(&weights)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut grad = [0.0; 2];
        enc.backward(&input, &weights, &mut grad);
        for k in 0..2 {
            let h = 1e-6;
            let mut p = input;
            p[k] += h;
            let mut m = input;
            m[k] -= h;
            let n = (f(&p) - f(&m)) / (2.0 * h);
            assert!(
                (n - grad[k]).abs() < 1e-6 * (1.0 + n.abs()),
                "{k}: {n} vs {}",
                grad[k]
            );
        }
    }
}
