//! Scene primitives: Gaussians, cameras and scripted dynamic scenes.

mod io;
mod motion;
mod ply;
pub mod presets;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, Mat3, Vec3};

pub use io::{load_scene, parse_scene, save_scene, scene_to_json};
pub use motion::{MotionObject, MotionScript, Trajectory};
pub use ply::{import_splat_ply, write_splat_ply, SH_C0};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid PLY: {0}")]
    Ply(String),
    #[error("time {t} outside motion range [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("invalid camera: {0}")]
    Camera(String),
}

impl SceneError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        SceneError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Tolerance within which a stored quaternion is silently renormalized.
pub const QUAT_RENORMALIZE_TOLERANCE: f64 = 1e-3;
const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics in pixels. Pixel `(x, y)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, SceneError> {
        let intr = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneError::Camera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(SceneError::Camera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vec3) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Point on the ray through pixel `(x, y)` at camera depth `z`.
    pub fn unproject(&self, x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new((x - self.cx) / self.fx * z, (y - self.cy) / self.fy * z, z)
    }
}

/// World-to-camera rigid transform: `p_cam = rotation * p_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    /// Row-major 3x3.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = SceneError;

    fn try_from(r: PoseRepr) -> Result<Self, SceneError> {
        let m = r.rotation;
        let pose = Pose {
            rotation: Mat3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            translation: Vec3::from(r.translation),
        };
        pose.validate()?;
        Ok(pose)
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let r = p.rotation;
        PoseRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Pose of a camera centered at `center` whose camera-to-world rotation is `cam_to_world`.
    pub fn from_center(cam_to_world: Mat3, center: Vec3) -> Self {
        let rotation = cam_to_world.transpose();
        Pose {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        if ortho > ORTHONORMAL_TOLERANCE || (r.determinant() - 1.0).abs() > ORTHONORMAL_TOLERANCE {
            return Err(SceneError::Camera(format!(
                "rotation is not a proper orthonormal matrix (deviation {ortho:.3e}, det {:.12})",
                r.determinant()
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(SceneError::Camera("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn transform(&self, p_world: &Vec3) -> Vec3 {
        self.rotation * p_world + self.translation
    }

    pub fn inverse_transform(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Instantaneous camera velocity, expressed in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraVelocity {
    pub v: Vec3,
    pub omega: Vec3,
}

impl CameraVelocity {
    pub fn is_finite(&self) -> bool {
        self.v
            .iter()
            .chain(self.omega.iter())
            .all(|c| c.is_finite())
    }

    pub fn negated(&self) -> Self {
        CameraVelocity {
            v: -self.v,
            omega: -self.omega,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<CameraVelocity>,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Camera {
            intrinsics,
            pose,
            velocity: None,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.intrinsics.validate()?;
        self.pose.validate()?;
        if let Some(v) = &self.velocity {
            if !v.is_finite() {
                return Err(SceneError::Camera("non-finite velocity".into()));
            }
        }
        Ok(())
    }
}

/// One scene primitive. Color is the constant (degree-0) radiance band in RGB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub center: [f64; 3],
    pub scale: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub quat: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
    /// Instantaneous world-frame velocity; populated by [`GaussianScene::sample_at`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 3]>,
}

impl Gaussian3D {
    pub fn isotropic(center: [f64; 3], sigma: f64, opacity: f64, color: [f64; 3]) -> Self {
        Gaussian3D {
            center,
            scale: [sigma; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            opacity,
            color,
            velocity: None,
        }
    }

    pub fn center_vec(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn rotation(&self) -> Mat3 {
        math::quat_to_rotation(self.quat)
    }

    pub fn covariance(&self) -> Mat3 {
        math::covariance(&self.rotation(), &Vector3::from(self.scale))
    }

    /// Check invariants, renormalizing a nearly-unit quaternion in place.
    /// `path` prefixes the field path reported in errors.
    pub fn validate(&mut self, path: &str) -> Result<(), SceneError> {
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(SceneError::schema(
                format!("{path}.center"),
                "non-finite component",
            ));
        }
        if !self.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(SceneError::schema(
                format!("{path}.scale"),
                "components must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(SceneError::schema(
                format!("{path}.opacity"),
                format!("{} outside [0, 1]", self.opacity),
            ));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(SceneError::schema(
                format!("{path}.color"),
                "components outside [0, 1]",
            ));
        }
        let norm = math::quat_norm(self.quat);
        let deviation = (norm - 1.0).abs();
        if !(deviation <= QUAT_RENORMALIZE_TOLERANCE) {
            return Err(SceneError::schema(
                format!("{path}.quat"),
                format!("norm {norm} is not unit"),
            ));
        }
        if deviation > 1e-9 {
            // Single-precision storage alone leaves deviations near 1e-7.
            if deviation > 1e-6 {
                log::warn!("{path}.quat has norm {norm}; renormalizing");
            }
            self.quat = math::quat_normalize(self.quat);
        }
        Ok(())
    }
}

/// Ordered set of Gaussians with optional scripted motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian3D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionScript>,
    #[serde(default)]
    pub background: [f64; 3],
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        GaussianScene {
            gaussians,
            motion: None,
            background: [0.0; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&mut self) -> Result<(), SceneError> {
        for (i, g) in self.gaussians.iter_mut().enumerate() {
            g.validate(&format!("gaussians[{i}]"))?;
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(SceneError::schema(
                "background",
                "components outside [0, 1]",
            ));
        }
        if let Some(m) = &self.motion {
            m.validate(self.gaussians.len())?;
        }
        Ok(())
    }

    /// The scene at time `t`: centers displaced by the motion script and
    /// `velocity` set to the analytic trajectory derivative (zero for
    /// Gaussians without scripted motion). Without a script the scene is
    /// returned unchanged for any `t`.
    pub fn sample_at(&self, t: f64) -> Result<GaussianScene, SceneError> {
        let Some(motion) = &self.motion else {
            return Ok(self.clone());
        };
        if !(0.0..=motion.t_max).contains(&t) {
            return Err(SceneError::TimeOutOfRange {
                t,
                t_max: motion.t_max,
            });
        }
        let mut out = self.clone();
        for g in &mut out.gaussians {
            g.velocity = Some([0.0; 3]);
        }
        for object in &motion.objects {
            let d = object.trajectory.displacement(t);
            let v = object.trajectory.velocity(t);
            for &i in &object.indices {
                let g = &mut out.gaussians[i];
                for k in 0..3 {
                    g.center[k] += d[k];
                }
                g.velocity = Some(v);
            }
        }
        Ok(out)
    }

    /// Indices of Gaussians assigned to a trajectory, in ascending order.
    pub fn scripted_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .motion
            .iter()
            .flat_map(|m| m.objects.iter().flat_map(|o| o.indices.iter().copied()))
            .collect();
        idx.sort_unstable();
        idx
    }

    /// Axis-aligned bounds of the Gaussian centers.
    pub fn center_bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for g in &self.gaussians {
            for k in 0..3 {
                lo[k] = lo[k].min(g.center[k]);
                hi[k] = hi[k].max(g.center[k]);
            }
        }
        (lo, hi)
    }
}

/// Free-function form of [`GaussianScene::sample_at`].
pub fn sample_scene_at(scene: &GaussianScene, t: f64) -> Result<GaussianScene, SceneError> {
    scene.sample_at(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_reject_bad_principal_point() {
        assert!(Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).is_ok());
        assert!(Intrinsics::new(100.0, 100.0, 100.0, 50.0, 100, 100).is_err());
        assert!(Intrinsics::new(0.0, 100.0, 50.0, 50.0, 100, 100).is_err());
    }

    #[test]
    fn pose_validation_rejects_reflections() {
        let mut p = Pose::identity();
        assert!(p.validate().is_ok());
        p.rotation[(0, 0)] = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn pose_round_trips_points() {
        let cam_to_world = math::rotation_exp(&Vec3::new(0.1, -0.2, 0.3));
        let pose = Pose::from_center(cam_to_world, Vec3::new(1.0, 2.0, -3.0));
        let p = Vec3::new(0.3, -0.4, 2.0);
        assert!((pose.inverse_transform(&pose.transform(&p)) - p).norm() < 1e-12);
        assert!((pose.center() - Vec3::new(1.0, 2.0, -3.0)).norm() < 1e-12);
    }

    #[test]
    fn static_scene_samples_unchanged() {
        let scene = GaussianScene::new(vec![Gaussian3D::isotropic(
            [0.0, 0.0, 2.0],
            0.1,
            1.0,
            [1.0, 0.0, 0.0],
        )]);
        assert_eq!(scene.sample_at(5.0).unwrap(), scene);
    }

    #[test]
    fn linear_motion_shifts_only_its_object() {
        let mut scene = GaussianScene::new(vec![
            Gaussian3D::isotropic([0.0, 0.0, 2.0], 0.1, 1.0, [1.0, 0.0, 0.0]),
            Gaussian3D::isotropic([1.0, 0.0, 2.0], 0.1, 1.0, [0.0, 1.0, 0.0]),
        ]);
        scene.motion = Some(MotionScript {
            objects: vec![MotionObject {
                indices: vec![0],
                trajectory: Trajectory::Linear {
                    velocity: [1.0, 0.0, 0.0],
                },
            }],
            t_max: 1.0,
        });
        let s = scene.sample_at(0.5).unwrap();
        assert_eq!(s.gaussians[0].center, [0.5, 0.0, 2.0]);
        assert_eq!(s.gaussians[1].center, [1.0, 0.0, 2.0]);
        assert_eq!(s.gaussians[0].velocity, Some([1.0, 0.0, 0.0]));
        assert_eq!(s.gaussians[1].velocity, Some([0.0, 0.0, 0.0]));
        assert!(matches!(
            scene.sample_at(1.5),
            Err(SceneError::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn gaussian_validation_names_the_field() {
        let mut g = Gaussian3D::isotropic([0.0; 3], 0.1, 1.5, [0.0; 3]);
        let err = g.validate("gaussians[0]").unwrap_err();
        assert!(err.to_string().contains("gaussians[0].opacity"), "{err}");
    }

    #[test]
    fn near_unit_quaternion_is_renormalized() {
        let mut g = Gaussian3D::isotropic([0.0; 3], 0.1, 0.5, [0.0; 3]);
        g.quat = [1.0005, 0.0, 0.0, 0.0];
        g.validate("g").unwrap();
        assert!((math::quat_norm(g.quat) - 1.0).abs() < 1e-12);
        g.quat = [1.5, 0.0, 0.0, 0.0];
        assert!(g.validate("g").is_err());
    }
}
