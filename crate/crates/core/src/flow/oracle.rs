use super::{FlowError, FlowMap, FlowUnits, INVALID_FLOW};
use crate::exec;
use crate::math::{self, Vec3};
use crate::render::{render_with, RenderConfig};
use crate::scene::{Camera, CameraVelocity, GaussianScene, Pose};

/// How the oracle turns a pixel's contributors into one surface point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleMode {
    /// Each contributor's point on the pixel ray is advected and re-projected;
    /// the resulting flows are blended with normalized weights.
    #[default]
    Weighted,
    /// Only the contributor with the largest blend weight is followed.
    Dominant,
}

/// Finite-difference flow of frame `t0` towards `t0 + dt`, in pixels per second.
///
/// Frame 0 is rendered from `cam0` at time `t0`. For a contributor with depth
/// `Z_i` at pixel `m`, the point on the ray through `m` at depth `Z_i` is moved
/// by that Gaussian's scripted displacement and projected through `cam1`.
/// Uncovered pixels and points behind `cam1` are marked invalid.
pub fn finite_difference_flow_oracle(
    scene: &GaussianScene,
    cam0: &Camera,
    cam1: &Camera,
    t0: f64,
    dt: f64,
    mode: OracleMode,
) -> Result<FlowMap, FlowError> {
    if !(dt > 0.0) {
        return Err(FlowError::InvalidInterval(dt));
    }
    let s0 = scene.sample_at(t0)?;
    let s1 = scene.sample_at(t0 + dt)?;
    let buffers = render_with(&s0, cam0, &RenderConfig::exact()).map_err(|_| {
        FlowError::Scene(crate::scene::SceneError::schema(
            "gaussians",
            "cannot render an empty scene",
        ))
    })?;
    let intr = cam0.intrinsics;
    let data = exec::map_range(intr.pixel_count(), |p| {
        let contribs = &buffers.contributions[p];
        if contribs.is_empty() {
            return [INVALID_FLOW; 2];
        }
        let (x, y) = ((p % intr.width) as f64, (p / intr.width) as f64);
        let flow_of = |index: usize, depth: f64| -> Option<[f64; 2]> {
            let world = cam0.pose.inverse_transform(&intr.unproject(x, y, depth));
            let shift =
                Vec3::from(s1.gaussians[index].center) - Vec3::from(s0.gaussians[index].center);
            let pc = cam1.pose.transform(&(world + shift));
            if !(pc.z > 0.0) {
                return None;
            }
            let q = cam1.intrinsics.project(&pc);
            Some([(q.x - x) / dt, (q.y - y) / dt])
        };
        match mode {
            OracleMode::Dominant => {
                let best =
                    contribs
                        .iter()
                        .fold(&contribs[0], |b, c| if c.weight > b.weight { c } else { b });
                flow_of(best.index, best.depth).unwrap_or([INVALID_FLOW; 2])
            }
            OracleMode::Weighted => {
                let total: f64 = contribs.iter().map(|c| c.weight).sum();
                let mut acc = [0.0; 2];
                for c in contribs {
                    let Some(f) = flow_of(c.index, c.depth) else {
                        return [INVALID_FLOW; 2];
                    };
                    acc[0] += c.weight / total * f[0];
                    acc[1] += c.weight / total * f[1];
                }
                acc
            }
        }
    });
    Ok(FlowMap::new(
        intr.width,
        intr.height,
        FlowUnits::PixelsPerSecond,
        data,
    ))
}

/// Camera velocity in frame-0 camera coordinates from two world-to-camera poses.
///
/// `R_rel = R0 R1ᵀ` and `t_rel = t0 − R_rel t1` locate camera 1 in camera 0's
/// frame; `v = t_rel / dt` and `ω = log(R_rel) / dt`.
pub fn camera_velocity_from_poses(
    p0: &Pose,
    p1: &Pose,
    dt: f64,
) -> Result<CameraVelocity, FlowError> {
    if !(dt > 0.0) {
        return Err(FlowError::InvalidInterval(dt));
    }
    let r_rel = p0.rotation * p1.rotation.transpose();
    let t_rel = p0.translation - r_rel * p1.translation;
    Ok(CameraVelocity {
        v: t_rel / dt,
        omega: math::rotation_log(&r_rel) / dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::camera_flow;
    use crate::math::Mat3;
    use crate::scene::presets::{Preset, PresetKind};

    #[test]
    fn identical_poses_give_zero_velocity() {
        let p = Pose::from_center(
            math::rotation_exp(&Vec3::new(0.1, 0.2, -0.1)),
            Vec3::new(1.0, 0.0, 2.0),
        );
        let v = camera_velocity_from_poses(&p, &p, 0.1).unwrap();
        assert!(v.v.norm() < 1e-15 && v.omega.norm() < 1e-15);
        assert!(camera_velocity_from_poses(&p, &p, 0.0).is_err());
    }

    #[test]
    fn pure_translation_in_camera_frame() {
        let p0 = Pose::identity();
        let p1 = Pose::from_center(Mat3::identity(), Vec3::new(0.1, 0.0, 0.0));
        let v = camera_velocity_from_poses(&p0, &p1, 0.1).unwrap();
        assert!((v.v - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(v.omega.norm() < 1e-15);
    }

    #[test]
    fn rotation_about_optical_axis() {
        let p0 = Pose::identity();
        let p1 = Pose::from_center(
            math::rotation_exp(&Vec3::new(0.0, 0.0, 0.01)),
            Vec3::zeros(),
        );
        let v = camera_velocity_from_poses(&p0, &p1, 0.1).unwrap();
        assert!((v.omega - Vec3::new(0.0, 0.0, 0.1)).norm() < 1e-12);
        assert!(v.v.norm() < 1e-9);
    }

    #[test]
    fn static_scene_identical_cameras_has_zero_flow() {
        let preset = Preset::new(PresetKind::Static);
        let cam = preset.camera_path.camera(0.0);
        let f = finite_difference_flow_oracle(
            &preset.scene,
            &cam,
            &cam,
            0.0,
            0.01,
            OracleMode::Weighted,
        )
        .unwrap();
        assert!(f.max_magnitude() < 1e-9);
        assert!(f.data.iter().any(|v| super::super::is_valid_flow(*v)));
    }

    #[test]
    fn sign_convention_agrees_with_oracle() {
        // Translation and rotation separately: the motion-field model with the
        // camera's own velocity must match finite differences of re-projection.
        let preset = Preset::new(PresetKind::Static);
        let intr = preset.intrinsics();
        let cam0 = Camera::new(intr, Pose::identity());
        let dt = 1e-4;
        for (center, axis_angle) in [
            (Vec3::new(0.2, -0.1, 0.3), Vec3::zeros()),
            (Vec3::zeros(), Vec3::new(0.05, -0.1, 0.2)),
        ] {
            let pose1 = Pose::from_center(math::rotation_exp(&(axis_angle * dt)), center * dt);
            let cam1 = Camera::new(intr, pose1);
            let vel = camera_velocity_from_poses(&cam0.pose, &cam1.pose, dt).unwrap();
            let oracle = finite_difference_flow_oracle(
                &preset.scene,
                &cam0,
                &cam1,
                0.0,
                dt,
                OracleMode::Dominant,
            )
            .unwrap();
            let buffers = render_with(&preset.scene, &cam0, &RenderConfig::exact()).unwrap();
            let mut depth = vec![0.0; intr.pixel_count()];
            for (p, c) in buffers.contributions.iter().enumerate() {
                if let Some(best) = c.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)) {
                    depth[p] = best.depth;
                }
            }
            let analytic = camera_flow(&vel, &depth, &intr).flow;
            let scale = analytic.max_magnitude();
            assert!(scale > 1.0);
            let err = oracle.sub(&analytic).unwrap().max_magnitude();
            assert!(err < 0.01 * scale, "error {err} vs scale {scale}");
        }
    }
}
