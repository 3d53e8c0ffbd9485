//! Decomposition of optical flow into camera-induced flow, dynamic Gaussian
//! flow and a depth-dispersion residual; `.flo` I/O; and a finite-difference
//! oracle for the instantaneous motion model.

mod basis;
mod flo;
mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use basis::{
    analytic_motion_field, binarize_flow, camera_flow, decompose_flow, flow_basis, residual_term,
    CameraFlow, FlowDecomposition, PixelFlowBasis,
};
pub use flo::{
    decode_flo, encode_flo, flow_to_color, read_flo, write_flo, write_flow_png, FLO_MAGIC,
};
pub use oracle::{camera_velocity_from_poses, finite_difference_flow_oracle, OracleMode};

/// Per-component value marking an unknown flow vector (Middlebury convention).
pub const INVALID_FLOW: f64 = 1e10;
/// Vectors with a component above this magnitude are treated as invalid.
pub const INVALID_THRESHOLD: f64 = 1e9;
/// Default binarization threshold in pixels.
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow map size mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("flow units mismatch: {0:?} vs {1:?}")]
    UnitsMismatch(FlowUnits, FlowUnits),
    #[error("render buffers carry no contribution lists")]
    MissingContributions,
    #[error("time interval must be positive, got {0}")]
    InvalidInterval(f64),
    #[error("bad .flo magic {0}")]
    BadMagic(f32),
    #[error("truncated .flo payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowUnits {
    /// Displacement over one frame interval.
    Pixels,
    /// Instantaneous rate.
    PixelsPerSecond,
}

/// How blend weights enter accumulated per-pixel flow terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowWeighting {
    /// Raw `T_i α_i`, whose sum is the accumulated alpha.
    #[default]
    Unnormalized,
    /// `T_i α_i / Σ T_j α_j`.
    Normalized,
}

/// Sign applied to camera velocities before use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowSign {
    #[default]
    Positive,
    Negative,
}

impl FlowSign {
    pub fn apply(self, v: crate::scene::CameraVelocity) -> crate::scene::CameraVelocity {
        match self {
            FlowSign::Positive => v,
            FlowSign::Negative => v.negated(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    pub width: usize,
    pub height: usize,
    pub units: FlowUnits,
    pub data: Vec<[f64; 2]>,
}

pub fn is_valid_flow(v: [f64; 2]) -> bool {
    v[0].abs() <= INVALID_THRESHOLD && v[1].abs() <= INVALID_THRESHOLD
}

impl FlowMap {
    pub fn new(width: usize, height: usize, units: FlowUnits, data: Vec<[f64; 2]>) -> Self {
        assert_eq!(data.len(), width * height, "flow buffer size");
        FlowMap {
            width,
            height,
            units,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize, units: FlowUnits) -> Self {
        FlowMap::new(width, height, units, vec![[0.0; 2]; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.data[y * self.width + x]
    }

    pub fn is_valid(&self, p: usize) -> bool {
        is_valid_flow(self.data[p])
    }

    /// Largest vector magnitude over valid pixels.
    pub fn max_magnitude(&self) -> f64 {
        self.data
            .iter()
            .filter(|v| is_valid_flow(**v))
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f64::max)
    }

    pub fn check_compatible(&self, other: &FlowMap) -> Result<(), FlowError> {
        if self.width != other.width || self.height != other.height {
            return Err(FlowError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        if self.units != other.units {
            return Err(FlowError::UnitsMismatch(self.units, other.units));
        }
        Ok(())
    }

    fn rescaled(&self, factor: f64, units: FlowUnits) -> FlowMap {
        let data = self
            .data
            .iter()
            .map(|v| {
                if is_valid_flow(*v) {
                    [v[0] * factor, v[1] * factor]
                } else {
                    *v
                }
            })
            .collect();
        FlowMap::new(self.width, self.height, units, data)
    }

    /// Convert to pixels per second given the frame interval. Rates pass through.
    pub fn to_rate(&self, dt: f64) -> Result<FlowMap, FlowError> {
        if !(dt > 0.0) {
            return Err(FlowError::InvalidInterval(dt));
        }
        Ok(match self.units {
            FlowUnits::Pixels => self.rescaled(1.0 / dt, FlowUnits::PixelsPerSecond),
            FlowUnits::PixelsPerSecond => self.clone(),
        })
    }

    /// Convert to pixels of displacement over `dt`. Displacements pass through.
    pub fn to_displacement(&self, dt: f64) -> Result<FlowMap, FlowError> {
        if !(dt > 0.0) {
            return Err(FlowError::InvalidInterval(dt));
        }
        Ok(match self.units {
            FlowUnits::PixelsPerSecond => self.rescaled(dt, FlowUnits::Pixels),
            FlowUnits::Pixels => self.clone(),
        })
    }

    /// Elementwise `self − other`; invalid where either side is invalid.
    pub fn sub(&self, other: &FlowMap) -> Result<FlowMap, FlowError> {
        self.check_compatible(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                if is_valid_flow(*a) && is_valid_flow(*b) {
                    [a[0] - b[0], a[1] - b[1]]
                } else {
                    [INVALID_FLOW; 2]
                }
            })
            .collect();
        Ok(FlowMap::new(self.width, self.height, self.units, data))
    }

    /// Elementwise `self + other`; invalid where either side is invalid.
    pub fn add(&self, other: &FlowMap) -> Result<FlowMap, FlowError> {
        self.check_compatible(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                if is_valid_flow(*a) && is_valid_flow(*b) {
                    [a[0] + b[0], a[1] + b[1]]
                } else {
                    [INVALID_FLOW; 2]
                }
            })
            .collect();
        Ok(FlowMap::new(self.width, self.height, self.units, data))
    }
}

/// Per-pixel boolean mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer size");
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        BinaryMask::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_conversion_round_trips() {
        let f = FlowMap::new(
            2,
            1,
            FlowUnits::Pixels,
            vec![[1.0, -2.0], [INVALID_FLOW; 2]],
        );
        let r = f.to_rate(0.5).unwrap();
        assert_eq!(r.units, FlowUnits::PixelsPerSecond);
        assert_eq!(r.data[0], [2.0, -4.0]);
        assert!(!r.is_valid(1));
        assert_eq!(r.to_displacement(0.5).unwrap(), f);
        assert!(f.to_rate(0.0).is_err());
    }

    #[test]
    fn mismatched_maps_are_rejected() {
        let a = FlowMap::zeros(2, 2, FlowUnits::Pixels);
        let b = FlowMap::zeros(2, 2, FlowUnits::PixelsPerSecond);
        let c = FlowMap::zeros(3, 2, FlowUnits::Pixels);
        assert!(matches!(a.sub(&b), Err(FlowError::UnitsMismatch(..))));
        assert!(matches!(a.sub(&c), Err(FlowError::DimensionMismatch(..))));
    }
}
