use nalgebra::Matrix2x3;

use super::{is_valid_flow, BinaryMask, FlowError, FlowMap, FlowUnits, FlowWeighting};
use crate::exec;
use crate::render::{RenderBuffers, COVERAGE_EPS};
use crate::scene::{CameraVelocity, Intrinsics};

/// Per-pixel matrices of the instantaneous motion field
/// `u = A v / Z + B ω` for camera velocity `(v, ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFlowBasis {
    /// Pixel per meter (before division by depth).
    pub a: Matrix2x3<f64>,
    /// Pixel per radian.
    pub b: Matrix2x3<f64>,
    pub pixel: (f64, f64),
}

pub fn flow_basis(intr: &Intrinsics, x: f64, y: f64) -> PixelFlowBasis {
    let (fx, fy) = (intr.fx, intr.fy);
    let dx = x - intr.cx;
    let dy = y - intr.cy;
    PixelFlowBasis {
        a: Matrix2x3::new(-fx, 0.0, dx, 0.0, -fy, dy),
        b: Matrix2x3::new(
            dx * dy / fy,
            -fx - dx * dx / fx,
            dy * fx / fy,
            fy + dy * dy / fy,
            -dx * dy / fx,
            -dx * fy / fx,
        ),
        pixel: (x, y),
    }
}

fn pixel_basis(intr: &Intrinsics, p: usize) -> PixelFlowBasis {
    flow_basis(intr, (p % intr.width) as f64, (p / intr.width) as f64)
}

fn to_pair(v: nalgebra::Vector2<f64>) -> [f64; 2] {
    [v.x, v.y]
}

/// Camera-induced flow and the mask of pixels where it is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFlow {
    pub flow: FlowMap,
    /// True where depth is positive.
    pub covered: BinaryMask,
}

/// `A v / Z + B ω` per pixel, in pixels per second. Pixels with depth 0 get zero flow.
pub fn camera_flow(vel: &CameraVelocity, depth: &[f64], intr: &Intrinsics) -> CameraFlow {
    assert_eq!(depth.len(), intr.pixel_count(), "depth buffer size");
    let data: Vec<[f64; 2]> = exec::map_range(depth.len(), |p| {
        let z = depth[p];
        if !(z > 0.0) {
            return [0.0, 0.0];
        }
        let basis = pixel_basis(intr, p);
        to_pair(basis.a * vel.v / z + basis.b * vel.omega)
    });
    CameraFlow {
        flow: FlowMap::new(intr.width, intr.height, FlowUnits::PixelsPerSecond, data),
        covered: BinaryMask::new(
            intr.width,
            intr.height,
            depth.iter().map(|z| *z > 0.0).collect(),
        ),
    }
}

fn weight_scale(buffers: &RenderBuffers, p: usize, weighting: FlowWeighting) -> Option<f64> {
    let a = buffers.accum_alpha[p];
    if !(a > COVERAGE_EPS) {
        return None;
    }
    Some(match weighting {
        FlowWeighting::Unnormalized => 1.0,
        FlowWeighting::Normalized => 1.0 / a,
    })
}

fn check_buffers(buffers: &RenderBuffers, intr: &Intrinsics) {
    assert_eq!(buffers.width, intr.width, "buffer width");
    assert_eq!(buffers.height, intr.height, "buffer height");
}

/// Depth-dispersion residual `Δ = A Σ_i w_i v (1/Z_i − 1/Z)` with `Z` the
/// composited depth and `w_i` the recorded blend weights (optionally
/// normalized by the accumulated alpha). Zero where uncovered.
pub fn residual_term(
    buffers: &RenderBuffers,
    intr: &Intrinsics,
    vel: &CameraVelocity,
    weighting: FlowWeighting,
) -> Result<FlowMap, FlowError> {
    check_buffers(buffers, intr);
    if buffers.contributions.len() != intr.pixel_count() {
        return Err(FlowError::MissingContributions);
    }
    let data = exec::map_range(intr.pixel_count(), |p| {
        let Some(scale) = weight_scale(buffers, p, weighting) else {
            return [0.0, 0.0];
        };
        let inv_z = 1.0 / buffers.depth[p];
        let bracket: f64 = buffers.contributions[p]
            .iter()
            .map(|c| c.weight * (1.0 / c.depth - inv_z))
            .sum();
        to_pair(pixel_basis(intr, p).a * vel.v * (scale * bracket))
    });
    Ok(FlowMap::new(
        intr.width,
        intr.height,
        FlowUnits::PixelsPerSecond,
        data,
    ))
}

/// Motion field of a static scene seen by a moving camera, evaluated per
/// contributor and blended with normalized weights: `Σ_i w̄_i A v / Z_i + B ω`.
/// This is the exact instantaneous flow of the composited surface points.
pub fn analytic_motion_field(
    buffers: &RenderBuffers,
    intr: &Intrinsics,
    vel: &CameraVelocity,
) -> Result<FlowMap, FlowError> {
    check_buffers(buffers, intr);
    if buffers.contributions.len() != intr.pixel_count() {
        return Err(FlowError::MissingContributions);
    }
    let data = exec::map_range(intr.pixel_count(), |p| {
        let Some(scale) = weight_scale(buffers, p, FlowWeighting::Normalized) else {
            return [0.0, 0.0];
        };
        let basis = pixel_basis(intr, p);
        let inv: f64 = buffers.contributions[p]
            .iter()
            .map(|c| c.weight / c.depth)
            .sum();
        to_pair(basis.a * vel.v * (scale * inv) + basis.b * vel.omega)
    });
    Ok(FlowMap::new(
        intr.width,
        intr.height,
        FlowUnits::PixelsPerSecond,
        data,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDecomposition {
    pub u: FlowMap,
    pub u_cam: FlowMap,
    pub u_gs: FlowMap,
    pub delta: FlowMap,
}

impl FlowDecomposition {
    /// Largest `|u − (u_cam + u_gs + Δ)|` over valid pixels.
    pub fn closure_error(&self) -> f64 {
        (0..self.u.data.len())
            .filter(|&p| self.u.is_valid(p))
            .map(|p| {
                let (u, c, g, d) = (
                    self.u.data[p],
                    self.u_cam.data[p],
                    self.u_gs.data[p],
                    self.delta.data[p],
                );
                (u[0] - (c[0] + g[0] + d[0])).hypot(u[1] - (c[1] + g[1] + d[1]))
            })
            .fold(0.0, f64::max)
    }
}

/// `u_gs = u − u_cam − Δ` elementwise.
pub fn decompose_flow(
    u: &FlowMap,
    u_cam: &FlowMap,
    delta: &FlowMap,
) -> Result<FlowDecomposition, FlowError> {
    u.check_compatible(u_cam)?;
    u.check_compatible(delta)?;
    let u_gs = u.sub(u_cam)?.sub(delta)?;
    Ok(FlowDecomposition {
        u: u.clone(),
        u_cam: u_cam.clone(),
        u_gs,
        delta: delta.clone(),
    })
}

/// True where `|f| > tau`; invalid vectors are false.
pub fn binarize_flow(f: &FlowMap, tau: f64) -> BinaryMask {
    assert!(tau >= 0.0, "tau must be non-negative");
    BinaryMask::new(
        f.width,
        f.height,
        f.data
            .iter()
            .map(|v| is_valid_flow(*v) && v[0].hypot(v[1]) > tau)
            .collect(),
    )
}
