//! Cameras, scenes and controllable checkpoints as the commands and the
//! server load them.

use std::path::Path;

use gsflow::control::{Checkpoint, CheckpointBody, ControlRig};
use gsflow::dataset::load_poses;
use gsflow::discovery::ClustersFile;
use gsflow::scene::presets::default_intrinsics;
use gsflow::scene::{import_splat_ply, load_scene, Camera, GaussianScene, Intrinsics, Pose};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::args::CameraArgs;
use crate::{CliError, CliResult};

pub const MIN_RADIUS: f64 = 0.25;
pub const MAX_RADIUS: f64 = 50.0;
pub const MAX_PITCH_DEG: f64 = 89.0;

/// Scene from JSON, or from a binary splat PLY when the extension is `.ply`.
pub fn load_any_scene(path: &Path) -> CliResult<GaussianScene> {
    let ply = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    Ok(if ply {
        import_splat_ply(path)?
    } else {
        load_scene(path)?
    })
}

/// The camera chosen by `--camera` or `--poses`/`--frame`, and that frame's time.
pub fn camera_from_args(a: &CameraArgs) -> CliResult<Option<(Camera, Option<f64>)>> {
    if let Some(p) = &a.camera {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
        let cam: Camera = serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
        cam.validate()?;
        return Ok(Some((cam, None)));
    }
    if let Some(p) = &a.poses {
        let poses = load_poses(p)?;
        let rec = poses.frames.get(a.frame).ok_or_else(|| {
            CliError::Usage(format!(
                "--frame {} out of range ({} frames)",
                a.frame,
                poses.frames.len()
            ))
        })?;
        let cam = Camera {
            intrinsics: poses.intrinsics,
            pose: rec.pose,
            velocity: rec.velocity,
        };
        return Ok(Some((cam, Some(rec.t))));
    }
    Ok(None)
}

/// Orbit parameters in degrees and meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub yaw: f64,
    pub pitch: f64,
    pub radius: f64,
}

impl Orbit {
    pub fn clamped(self) -> Orbit {
        Orbit {
            yaw: self.yaw,
            pitch: self.pitch.clamp(-MAX_PITCH_DEG, MAX_PITCH_DEG),
            radius: self.radius.clamp(MIN_RADIUS, MAX_RADIUS),
        }
    }

    /// Camera at `target + r (cos p sin y, −sin p, −cos p cos y)` looking at
    /// `target`, with image y along world +y (down) at zero pitch.
    pub fn camera(self, target: [f64; 3], intrinsics: Intrinsics) -> Camera {
        let o = self.clamped();
        let (sy, cy) = o.yaw.to_radians().sin_cos();
        let (sp, cp) = o.pitch.to_radians().sin_cos();
        let t = Vector3::from(target);
        let eye = t + o.radius * Vector3::new(cp * sy, -sp, -cp * cy);
        let f = (t - eye).normalize();
        let x = Vector3::y().cross(&f).normalize();
        let y = f.cross(&x);
        Camera::new(
            intrinsics,
            Pose::from_center(Matrix3::from_columns(&[x, y, f]), eye),
        )
    }
}

/// Center of the axis-aligned box around all Gaussian centers.
pub fn aabb_center(scene: &GaussianScene) -> [f64; 3] {
    let (lo, hi) = scene.center_bounds();
    [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ]
}

/// Straight-on orbit whose eye sits at the target's distance from the origin.
pub fn default_orbit(scene: &GaussianScene) -> Orbit {
    let c = aabb_center(scene);
    let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    Orbit {
        yaw: 0.0,
        pitch: 0.0,
        radius: r,
    }
    .clamped()
}

/// Camera from the arguments, or the default orbit with preset intrinsics.
pub fn camera_or_orbit(a: &CameraArgs, scene: &GaussianScene) -> CliResult<Camera> {
    Ok(match camera_from_args(a)? {
        Some((cam, _)) => cam,
        None => default_orbit(scene).camera(aabb_center(scene), default_intrinsics()),
    })
}

/// A controllable checkpoint, optionally with its trajectories replaced by `clusters`.
pub fn load_controllable(
    checkpoint: &Path,
    clusters: Option<&Path>,
) -> CliResult<(GaussianScene, ControlRig)> {
    let ck = Checkpoint::load(checkpoint)?;
    let CheckpointBody::Controllable(rig) = ck.body else {
        return Err(CliError::Invalid(format!(
            "{} holds a deformable model; train the controllable stage first",
            checkpoint.display()
        )));
    };
    let rig = match clusters {
        Some(p) => {
            let trajectories = ClustersFile::load(p)?.trajectories();
            ControlRig::new(trajectories, rig.networks)?
        }
        None => rig,
    };
    Ok((ck.scene, rig))
}
