//! Synthetic desk-scale scenes with scripted motion and a smooth camera path.
//! They provide exact ground truth (object membership, trajectories, camera
//! velocity) for every oracle check.

use std::f64::consts::PI;
use std::str::FromStr;

use super::{
    Camera, CameraVelocity, Gaussian3D, GaussianScene, Intrinsics, MotionObject, MotionScript,
    Pose, Trajectory,
};
#[cfg(test)]
use crate::math;
use crate::math::{Mat3, Vec3};

pub const IMAGE_SIZE: usize = 64;
pub const FOCAL: f64 = 64.0;
pub const FRAME_COUNT: usize = 30;
pub const FRAME_INTERVAL: f64 = 1.0 / 30.0;
pub const T_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Static,
    OneObject,
    TwoObjects,
}

impl PresetKind {
    pub const ALL: [PresetKind; 3] = [
        PresetKind::Static,
        PresetKind::OneObject,
        PresetKind::TwoObjects,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PresetKind::Static => "static",
            PresetKind::OneObject => "one-object",
            PresetKind::TwoObjects => "two-objects",
        }
    }
}

impl FromStr for PresetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PresetKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!("unknown preset `{s}` (expected static, one-object or two-objects)")
            })
    }
}

/// Camera moving on a smooth path. At `t = 0` the pose is the identity.
/// Center: `translation_amplitude * (sin(2 pi f t), 1 - cos(2 pi f t), sin(pi f t))`.
/// Camera-to-world rotation: `Ry(yaw(t)) * Rx(pitch(t))` with
/// `yaw = yaw_amplitude * sin(2 pi f t)`, `pitch = pitch_amplitude * sin(4 pi f t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPath {
    pub intrinsics: Intrinsics,
    pub translation_amplitude: [f64; 3],
    pub yaw_amplitude: f64,
    pub pitch_amplitude: f64,
    pub frequency: f64,
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

impl CameraPath {
    fn angles(&self, t: f64) -> (f64, f64, f64, f64) {
        let w = 2.0 * PI * self.frequency;
        let yaw = self.yaw_amplitude * (w * t).sin();
        let pitch = self.pitch_amplitude * (2.0 * w * t).sin();
        let d_yaw = self.yaw_amplitude * w * (w * t).cos();
        let d_pitch = self.pitch_amplitude * 2.0 * w * (2.0 * w * t).cos();
        (yaw, pitch, d_yaw, d_pitch)
    }

    fn center(&self, t: f64) -> (Vec3, Vec3) {
        let w = 2.0 * PI * self.frequency;
        let a = self.translation_amplitude;
        let c = Vec3::new(
            a[0] * (w * t).sin(),
            a[1] * (1.0 - (w * t).cos()),
            a[2] * (0.5 * w * t).sin(),
        );
        let dc = Vec3::new(
            a[0] * w * (w * t).cos(),
            a[1] * w * (w * t).sin(),
            a[2] * 0.5 * w * (0.5 * w * t).cos(),
        );
        (c, dc)
    }

    fn cam_to_world(&self, t: f64) -> Mat3 {
        let (yaw, pitch, _, _) = self.angles(t);
        rot_y(yaw) * rot_x(pitch)
    }

    pub fn pose(&self, t: f64) -> Pose {
        Pose::from_center(self.cam_to_world(t), self.center(t).0)
    }

    /// Analytic camera velocity in the camera's own frame: `v = Rᵀ ċ` and
    /// `ω = yaw' Rx(pitch)ᵀ e_y + pitch' e_x`.
    pub fn velocity(&self, t: f64) -> CameraVelocity {
        let (_, pitch, d_yaw, d_pitch) = self.angles(t);
        let r = self.cam_to_world(t);
        let (_, dc) = self.center(t);
        let omega = d_yaw * (rot_x(pitch).transpose() * Vec3::y()) + d_pitch * Vec3::x();
        CameraVelocity {
            v: r.transpose() * dc,
            omega,
        }
    }

    pub fn camera(&self, t: f64) -> Camera {
        Camera {
            intrinsics: self.intrinsics,
            pose: self.pose(t),
            velocity: Some(self.velocity(t)),
        }
    }
}

/// A preset scene with its camera path and ground-truth object membership.
#[derive(Debug, Clone)]
pub struct Preset {
    pub kind: PresetKind,
    pub scene: GaussianScene,
    pub camera_path: CameraPath,
    pub frame_count: usize,
    pub frame_interval: f64,
    /// Gaussian indices of each moving object, in script order.
    pub dynamic_groups: Vec<Vec<usize>>,
    /// Rest (t = 0) centroid of each moving object.
    pub object_centers: Vec<[f64; 3]>,
}

impl Preset {
    pub fn new(kind: PresetKind) -> Self {
        build(kind)
    }

    pub fn frame_time(&self, f: usize) -> f64 {
        f as f64 * self.frame_interval
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.frame_count).map(|f| self.frame_time(f)).collect()
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.camera_path.intrinsics
    }

    /// All Gaussian indices that move, ascending.
    pub fn dynamic_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.dynamic_groups.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }

    /// Ground-truth centroid path of moving object `k`.
    pub fn object_center_at(&self, k: usize, t: f64) -> [f64; 3] {
        let motion = self
            .scene
            .motion
            .as_ref()
            .expect("preset with moving objects");
        let d = motion.objects[k].trajectory.displacement(t);
        let c = self.object_centers[k];
        [c[0] + d[0], c[1] + d[1], c[2] + d[2]]
    }

    /// Largest distance of object `k` from its rest position over the frame times.
    pub fn motion_amplitude(&self, k: usize) -> f64 {
        let c0 = Vec3::from(self.object_centers[k]);
        self.frame_times()
            .into_iter()
            .map(|t| (Vec3::from(self.object_center_at(k, t)) - c0).norm())
            .fold(0.0, f64::max)
    }
}

pub fn default_intrinsics() -> Intrinsics {
    let half = IMAGE_SIZE as f64 / 2.0;
    Intrinsics {
        fx: FOCAL,
        fy: FOCAL,
        cx: half,
        cy: half,
        width: IMAGE_SIZE,
        height: IMAGE_SIZE,
    }
}

pub fn default_camera_path() -> CameraPath {
    CameraPath {
        intrinsics: default_intrinsics(),
        translation_amplitude: [0.12, 0.04, 0.08],
        yaw_amplitude: 0.04,
        pitch_amplitude: 0.02,
        frequency: 0.5,
    }
}

/// Wall of `n × n` isotropic Gaussians in the plane `z = depth`, with a smooth color pattern.
fn wall(n: usize, spacing: f64, sigma: f64, depth: f64) -> Vec<Gaussian3D> {
    let offset = (n as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = (i as f64 - offset) * spacing;
            let y = (j as f64 - offset) * spacing;
            let color = [
                0.5 + 0.35 * (1.7 * x + 0.3).sin(),
                0.5 + 0.35 * (2.1 * y - 0.5).cos(),
                0.5 + 0.3 * (1.3 * (x + y)).sin(),
            ];
            out.push(Gaussian3D::isotropic([x, y, depth], sigma, 0.95, color));
        }
    }
    out
}

/// Flat disc of 25 Gaussians (rings of 1, 8 and 16) facing the camera.
fn disc(center: [f64; 3], ring_spacing: f64, sigma: f64, base: [f64; 3]) -> Vec<Gaussian3D> {
    let mut out = Vec::with_capacity(25);
    for (ring, count) in [(0usize, 1usize), (1, 8), (2, 16)] {
        let r = ring as f64 * ring_spacing;
        for k in 0..count {
            let a = 2.0 * PI * k as f64 / count as f64 + 0.2 * ring as f64;
            let shade = 1.0 - 0.12 * ring as f64 + 0.05 * (3.0 * a).sin();
            let color = base.map(|c| (c * shade).clamp(0.0, 1.0));
            out.push(Gaussian3D::isotropic(
                [center[0] + r * a.cos(), center[1] + r * a.sin(), center[2]],
                sigma,
                0.9,
                color,
            ));
        }
    }
    out
}

fn triangle_wave(amplitude: f64, axis: [f64; 3]) -> Trajectory {
    // Keyframes every 0.1 s, period 0.4 s.
    let pattern = [0.0, 1.0, 0.0, -1.0];
    let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
    let offsets = (0..=10)
        .map(|k| axis.map(|a| a * amplitude * pattern[k % 4]))
        .collect();
    Trajectory::Keyframes { times, offsets }
}

fn mean_center(gs: &[Gaussian3D]) -> [f64; 3] {
    let n = gs.len() as f64;
    let mut c = [0.0; 3];
    for g in gs {
        for k in 0..3 {
            c[k] += g.center[k] / n;
        }
    }
    c
}

fn build(kind: PresetKind) -> Preset {
    let sigma = 0.04;
    let spacing = 0.06;
    let mut gaussians = Vec::new();
    let mut background = [0.0; 3];
    let mut objects: Vec<(Vec<Gaussian3D>, Trajectory)> = Vec::new();
    let mut statics: Vec<Vec<Gaussian3D>> = Vec::new();

    match kind {
        PresetKind::Static => {
            gaussians.extend(wall(12, 0.35, 0.25, 3.0));
            statics.push(disc([-0.45, -0.2, 2.0], spacing, sigma, [0.9, 0.2, 0.15]));
            statics.push(disc([0.4, 0.25, 2.0], spacing, sigma, [0.15, 0.8, 0.25]));
            statics.push(disc([0.35, -0.45, 2.2], spacing, sigma, [0.2, 0.3, 0.9]));
            statics.push(disc([-0.4, 0.45, 1.8], spacing, sigma, [0.9, 0.85, 0.2]));
        }
        PresetKind::OneObject => {
            background = [0.1, 0.1, 0.1];
            let palette = [
                [0.9, 0.2, 0.15],
                [0.15, 0.8, 0.25],
                [0.2, 0.3, 0.9],
                [0.9, 0.85, 0.2],
                [0.8, 0.3, 0.8],
                [0.2, 0.8, 0.8],
            ];
            let mut slot = 0;
            for (j, y) in [-0.5, 0.0, 0.5].into_iter().enumerate() {
                for (i, x) in [-0.75, -0.25, 0.25, 0.75].into_iter().enumerate() {
                    if (i, j) == (3, 2) {
                        continue;
                    }
                    let color = palette[slot % palette.len()];
                    let d = disc([x, y, 2.5], spacing, sigma, color);
                    if (i, j) == (1, 1) {
                        objects.push((d, triangle_wave(0.12, [1.0, 0.0, 0.0])));
                    } else {
                        statics.push(d);
                    }
                    slot += 1;
                }
            }
        }
        PresetKind::TwoObjects => {
            gaussians.extend(wall(12, 0.35, 0.25, 3.0));
            objects.push((
                disc([-0.45, -0.2, 2.0], spacing, sigma, [0.9, 0.2, 0.15]),
                triangle_wave(0.15, [1.0, 0.0, 0.0]),
            ));
            objects.push((
                disc([0.4, 0.25, 2.0], spacing, sigma, [0.15, 0.8, 0.25]),
                Trajectory::Arc {
                    radius: 0.12,
                    angular_velocity: 4.0 * PI,
                    phase: 0.0,
                    axis_u: [1.0, 0.0, 0.0],
                    axis_v: [0.0, 1.0, 0.0],
                },
            ));
            statics.push(disc([0.35, -0.45, 2.2], spacing, sigma, [0.2, 0.3, 0.9]));
            statics.push(disc([-0.4, 0.45, 1.8], spacing, sigma, [0.9, 0.85, 0.2]));
        }
    }

    for s in statics {
        gaussians.extend(s);
    }
    let mut motion_objects = Vec::new();
    let mut dynamic_groups = Vec::new();
    let mut object_centers = Vec::new();
    for (members, trajectory) in objects {
        let start = gaussians.len();
        object_centers.push(mean_center(&members));
        gaussians.extend(members);
        let indices: Vec<usize> = (start..gaussians.len()).collect();
        dynamic_groups.push(indices.clone());
        motion_objects.push(MotionObject {
            indices,
            trajectory,
        });
    }

    let mut scene = GaussianScene::new(gaussians);
    scene.background = background;
    if !motion_objects.is_empty() {
        scene.motion = Some(MotionScript {
            objects: motion_objects,
            t_max: T_MAX,
        });
    }
    scene.validate().expect("preset scenes are valid");

    Preset {
        kind,
        scene,
        camera_path: default_camera_path(),
        frame_count: FRAME_COUNT,
        frame_interval: FRAME_INTERVAL,
        dynamic_groups,
        object_centers,
    }
}
