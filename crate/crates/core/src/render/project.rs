use nalgebra::Matrix2x3;

use crate::math::{Mat3, Vec3};
use crate::scene::{Camera, Gaussian3D};

/// Gaussians closer than this (camera-frame depth, meters) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic dilation added to every projected covariance, in pixels².
pub const COV2D_DILATION: f64 = 0.3;
/// Splat support radius in standard deviations.
pub const SUPPORT_SIGMAS: f64 = 3.0;
pub const MAX_ALPHA: f64 = 0.999;

/// A Gaussian projected onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Mean in pixels.
    pub mean: [f64; 2],
    /// Covariance `(xx, xy, yy)` in pixels², dilation included.
    pub cov: [f64; 3],
    /// Inverse covariance `(xx, xy, yy)`.
    pub conic: [f64; 3],
    /// Camera-frame depth of the center.
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Index of the source Gaussian in its scene.
    pub index: usize,
    /// Half-extent of the support ellipse's bounding box, `3 sqrt(cov_xx)` and `3 sqrt(cov_yy)`.
    pub extent: [f64; 2],
}

impl Splat2D {
    /// Mahalanobis distance squared of pixel `(x, y)` from the mean.
    #[inline]
    pub fn mahalanobis2(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

/// Pinhole Jacobian of `(fx X/Z + cx, fy Y/Z + cy)` at camera-frame point `p`.
pub fn projection_jacobian(fx: f64, fy: f64, p: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        fx * iz,
        0.0,
        -fx * p.x * iz * iz,
        0.0,
        fy * iz,
        -fy * p.y * iz * iz,
    )
}

/// EWA projection `J W Σ Wᵀ Jᵀ + dilation·I`, as `(xx, xy, yy)`.
pub fn project_covariance(cov3d: &Mat3, rotation: &Mat3, jac: &Matrix2x3<f64>) -> [f64; 3] {
    let t = jac * rotation;
    let c = t * cov3d * t.transpose();
    [
        c[(0, 0)] + COV2D_DILATION,
        c[(0, 1)],
        c[(1, 1)] + COV2D_DILATION,
    ]
}

pub fn invert_cov2d(cov: [f64; 3]) -> Option<[f64; 3]> {
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) || !(cov[0] + cov[2] > 0.0) {
        return None;
    }
    Some([cov[2] / det, -cov[1] / det, cov[0] / det])
}

/// Project one Gaussian. Returns `None` when it is behind the near plane or
/// its support lies entirely outside the image.
pub fn project_gaussian(g: &Gaussian3D, index: usize, cam: &Camera) -> Option<Splat2D> {
    project_parts(
        &g.center_vec(),
        &g.covariance(),
        g.opacity,
        g.color,
        index,
        cam,
    )
}

/// [`project_gaussian`] on raw attributes.
pub fn project_parts(
    center: &Vec3,
    cov3d: &Mat3,
    opacity: f64,
    color: [f64; 3],
    index: usize,
    cam: &Camera,
) -> Option<Splat2D> {
    let intr = &cam.intrinsics;
    let p = cam.pose.transform(center);
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let mean = intr.project(&p);
    let jac = projection_jacobian(intr.fx, intr.fy, &p);
    let cov = project_covariance(cov3d, &cam.pose.rotation, &jac);
    let conic = invert_cov2d(cov)?;
    let extent = [
        SUPPORT_SIGMAS * cov[0].sqrt(),
        SUPPORT_SIGMAS * cov[2].sqrt(),
    ];
    let (w, h) = (intr.width as f64, intr.height as f64);
    if mean.x + extent[0] < -0.5
        || mean.x - extent[0] > w - 0.5
        || mean.y + extent[1] < -0.5
        || mean.y - extent[1] > h - 0.5
    {
        return None;
    }
    Some(Splat2D {
        mean: [mean.x, mean.y],
        cov,
        conic,
        depth: p.z,
        opacity,
        color,
        index,
        extent,
    })
}

/// `o · exp(-½ dᵀ Σ'⁻¹ d)` clamped to `[0, MAX_ALPHA]`.
pub fn alpha_at(s: &Splat2D, x: f64, y: f64) -> f64 {
    (s.opacity * (-0.5 * s.mahalanobis2(x, y)).exp()).clamp(0.0, MAX_ALPHA)
}
