//! Frame sequences with camera poses and optical flow, either simulated from
//! a preset or read back from a run directory laid out as
//! `scene.json`, `poses.json`, `frames/frame_NNNN.png` and `flows/flow_NNNN.flo`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discovery::{discover, Discovery, DiscoveryConfig, MaskedFrame};
use crate::exec;
use crate::flow::{
    binarize_flow, camera_flow, camera_velocity_from_poses, decompose_flow,
    finite_difference_flow_oracle, read_flo, residual_term, write_flo, BinaryMask,
    FlowDecomposition, FlowError, FlowMap, FlowWeighting, OracleMode,
};
use crate::render::{render_with, RenderBuffers, RenderConfig, RgbImage};
use crate::scene::presets::Preset;
use crate::scene::{
    load_scene, save_scene, Camera, CameraVelocity, GaussianScene, Intrinsics, Pose, SceneError,
};
use crate::Result;

/// Camera state of one frame as stored in `poses.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub t: f64,
    pub pose: Pose,
    /// Instantaneous camera velocity, when known analytically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<CameraVelocity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosesFile {
    pub intrinsics: Intrinsics,
    pub frame_interval: f64,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub intrinsics: Intrinsics,
    pub frame_interval: f64,
    pub frames: Vec<FrameRecord>,
    /// Frame images, quantized to 8 bits.
    pub images: Vec<RgbImage>,
    /// Flow from frame `f` to `f + 1` as a pixel displacement; one fewer than frames.
    pub flows: Vec<FlowMap>,
    /// Ground-truth scene with its motion script, when known.
    pub scene: Option<GaussianScene>,
}

fn quantize(img: &RgbImage) -> RgbImage {
    let data = img
        .data
        .iter()
        .map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0))
        .collect();
    RgbImage::new(img.width, img.height, data)
}

fn io_error(path: &Path, source: std::io::Error) -> crate::Error {
    SceneError::Io {
        path: path.display().to_string(),
        source,
    }
    .into()
}

pub fn frame_path(dir: &Path, f: usize) -> PathBuf {
    dir.join("frames").join(format!("frame_{f:04}.png"))
}

pub fn flow_path(dir: &Path, f: usize) -> PathBuf {
    dir.join("flows").join(format!("flow_{f:04}.flo"))
}

impl Sequence {
    /// Render every preset frame and the finite-difference flow between consecutive frames.
    pub fn simulate(preset: &Preset) -> Result<Self> {
        let path = &preset.camera_path;
        let dt = preset.frame_interval;
        let times = preset.frame_times();
        let frames: Vec<FrameRecord> = times
            .iter()
            .enumerate()
            .map(|(index, &t)| FrameRecord {
                index,
                t,
                pose: path.pose(t),
                velocity: Some(path.velocity(t)),
            })
            .collect();
        let mut images = Vec::with_capacity(frames.len());
        for r in &frames {
            let s = preset.scene.sample_at(r.t)?;
            let b = render_with(&s, &path.camera(r.t), &RenderConfig::default())?;
            images.push(quantize(&b.color_image()));
        }
        let flows = exec::map_range(frames.len().saturating_sub(1), |f| {
            let (c0, c1) = (path.camera(times[f]), path.camera(times[f + 1]));
            finite_difference_flow_oracle(
                &preset.scene,
                &c0,
                &c1,
                times[f],
                dt,
                OracleMode::Weighted,
            )
            .and_then(|u| u.to_displacement(dt))
        })
        .into_iter()
        .collect::<Result<Vec<_>, FlowError>>()?;
        Ok(Sequence {
            intrinsics: preset.intrinsics(),
            frame_interval: dt,
            frames,
            images,
            flows,
            scene: Some(preset.scene.clone()),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|r| r.t).collect()
    }

    pub fn camera(&self, f: usize) -> Camera {
        Camera {
            intrinsics: self.intrinsics,
            pose: self.frames[f].pose,
            velocity: self.frames[f].velocity,
        }
    }

    /// Average camera velocity over the interval from frame `f` to `f + 1`, from the two poses.
    pub fn interval_velocity(&self, f: usize) -> Result<CameraVelocity> {
        let (a, b) = (&self.frames[f], &self.frames[f + 1]);
        Ok(camera_velocity_from_poses(&a.pose, &b.pose, b.t - a.t)?)
    }

    pub fn poses_file(&self) -> PosesFile {
        PosesFile {
            intrinsics: self.intrinsics,
            frame_interval: self.frame_interval,
            frames: self.frames.clone(),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["frames", "flows"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| io_error(&p, e))?;
        }
        if let Some(scene) = &self.scene {
            save_scene(scene, dir.join("scene.json"))?;
        }
        let poses = dir.join("poses.json");
        let text = serde_json::to_string_pretty(&self.poses_file()).expect("poses serialize");
        std::fs::write(&poses, text).map_err(|e| io_error(&poses, e))?;
        for (f, img) in self.images.iter().enumerate() {
            img.write_png(frame_path(dir, f))?;
        }
        for (f, flow) in self.flows.iter().enumerate() {
            write_flo(flow_path(dir, f), flow)?;
        }
        Ok(())
    }

    /// Read a run directory. `scene.json` and the flows are optional; when
    /// flows are present there must be one per consecutive frame pair.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let poses = load_poses(dir.join("poses.json"))?;
        let mut images = Vec::with_capacity(poses.frames.len());
        for f in 0..poses.frames.len() {
            let img = RgbImage::read_png(frame_path(dir, f))?;
            if img.width != poses.intrinsics.width || img.height != poses.intrinsics.height {
                return Err(SceneError::schema(
                    format!("frames[{f}]"),
                    format!(
                        "image is {}x{}, intrinsics say {}x{}",
                        img.width, img.height, poses.intrinsics.width, poses.intrinsics.height
                    ),
                )
                .into());
            }
            images.push(img);
        }
        let mut flows = Vec::new();
        if flow_path(dir, 0).exists() {
            for f in 0..poses.frames.len().saturating_sub(1) {
                flows.push(read_flo(flow_path(dir, f))?);
            }
        }
        let scene_path = dir.join("scene.json");
        let scene = if scene_path.exists() {
            Some(load_scene(&scene_path)?)
        } else {
            None
        };
        Ok(Sequence {
            intrinsics: poses.intrinsics,
            frame_interval: poses.frame_interval,
            frames: poses.frames,
            images,
            flows,
            scene,
        })
    }

    /// Ground-truth scene sampled at each frame time.
    pub fn ground_truth_states(&self) -> Result<Vec<GaussianScene>> {
        let scene = self
            .scene
            .as_ref()
            .ok_or_else(|| SceneError::schema("scene", "sequence has no ground-truth scene"))?;
        self.frames
            .iter()
            .map(|r| Ok(scene.sample_at(r.t)?))
            .collect()
    }

    /// Ground-truth Gaussian centers per frame.
    pub fn ground_truth_positions(&self) -> Result<Vec<Vec<[f64; 3]>>> {
        Ok(self
            .ground_truth_states()?
            .iter()
            .map(|s| s.gaussians.iter().map(|g| g.center).collect())
            .collect())
    }

    /// Render ground-truth frames with contribution lists, one per flow interval.
    pub fn ground_truth_renders(&self) -> Result<Vec<RenderBuffers>> {
        let states = self.ground_truth_states()?;
        let mut out = Vec::with_capacity(self.flows.len());
        for f in 0..self.flows.len() {
            out.push(render_with(
                &states[f],
                &self.camera(f),
                &RenderConfig::default(),
            )?);
        }
        Ok(out)
    }

    /// Dynamic-object discovery from per-frame scene states: masks from the
    /// observed flow decomposed against renders of `states`, clustering and
    /// trajectories from their centers.
    pub fn discover_states(
        &self,
        states: &[GaussianScene],
        tau: f64,
        cfg: &DiscoveryConfig,
    ) -> Result<Discovery> {
        if states.len() != self.len() {
            return Err(SceneError::schema(
                "states",
                format!("{} states for {} frames", states.len(), self.len()),
            )
            .into());
        }
        let renders = (0..self.flows.len())
            .map(|f| render_with(&states[f], &self.camera(f), &RenderConfig::default()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let masks = self.dynamic_masks(&renders, tau)?;
        let frames: Vec<MaskedFrame<'_>> = masks
            .iter()
            .zip(&renders)
            .map(|(m, b)| MaskedFrame {
                mask: &m.mask,
                buffers: b,
            })
            .collect();
        let positions: Vec<Vec<[f64; 3]>> = states
            .iter()
            .map(|s| s.gaussians.iter().map(|g| g.center).collect())
            .collect();
        Ok(discover(&frames, &self.times(), &positions, cfg)?)
    }

    /// Decompose each flow interval against the given per-frame renders and
    /// threshold the dynamic part at `tau` pixels.
    pub fn dynamic_masks(&self, renders: &[RenderBuffers], tau: f64) -> Result<Vec<DynamicMask>> {
        if renders.len() < self.flows.len() {
            return Err(SceneError::schema(
                "renders",
                format!(
                    "{} renders for {} flow intervals",
                    renders.len(),
                    self.flows.len()
                ),
            )
            .into());
        }
        (0..self.flows.len())
            .map(|f| {
                let dt = self.frames[f + 1].t - self.frames[f].t;
                let vel = self.interval_velocity(f)?;
                dynamic_flow_mask(&self.flows[f], &renders[f], &self.intrinsics, &vel, dt, tau)
            })
            .collect()
    }
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<PosesFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let poses: PosesFile = serde_path_to_error::deserialize(de)
        .map_err(|e| SceneError::schema(e.path().to_string(), e.into_inner().to_string()))?;
    poses.intrinsics.validate()?;
    for (i, w) in poses.frames.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(SceneError::schema(
                format!("frames[{}].t", i + 1),
                "frame times must increase",
            )
            .into());
        }
    }
    Ok(poses)
}

/// Flow decomposition of one interval and its binarized dynamic part.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMask {
    /// Rates in pixels per second.
    pub decomposition: FlowDecomposition,
    pub mask: BinaryMask,
}

/// `u_gs = u − u_cam − Δ` for observed displacement `u` over `dt`, with
/// `u_cam` and `Δ` from the render's depth and contributions. The mask marks
/// pixels whose dynamic displacement exceeds `tau` pixels.
pub fn dynamic_flow_mask(
    u: &FlowMap,
    buffers: &RenderBuffers,
    intr: &Intrinsics,
    vel: &CameraVelocity,
    dt: f64,
    tau: f64,
) -> Result<DynamicMask> {
    let u = u.to_rate(dt)?;
    let cam = camera_flow(vel, &buffers.depth, intr);
    let delta = residual_term(buffers, intr, vel, FlowWeighting::Normalized)?;
    let decomposition = decompose_flow(&u, &cam.flow, &delta)?;
    let mask = binarize_flow(&decomposition.u_gs.to_displacement(dt)?, tau);
    Ok(DynamicMask {
        decomposition,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::presets::PresetKind;

    fn short(kind: PresetKind, frames: usize) -> Preset {
        let mut p = Preset::new(kind);
        p.frame_count = frames;
        p
    }

    #[test]
    fn save_then_load_round_trips() {
        let seq = Sequence::simulate(&short(PresetKind::OneObject, 3)).unwrap();
        assert_eq!(seq.images.len(), 3);
        assert_eq!(seq.flows.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        seq.save(dir.path()).unwrap();
        assert!(dir.path().join("frames/frame_0002.png").exists());
        assert!(dir.path().join("flows/flow_0001.flo").exists());
        let back = Sequence::load(dir.path()).unwrap();
        assert_eq!(back.images, seq.images);
        assert_eq!(back.frames, seq.frames);
        assert_eq!(back.scene, seq.scene);
        for (a, b) in back.flows.iter().zip(&seq.flows) {
            for (p, q) in a.data.iter().zip(&b.data) {
                assert!((p[0] - q[0]).abs() < 1e-3 * (1.0 + q[0].abs()));
                assert!((p[1] - q[1]).abs() < 1e-3 * (1.0 + q[1].abs()));
            }
        }
    }

    #[test]
    fn static_preset_has_no_dynamic_pixels() {
        let seq = Sequence::simulate(&short(PresetKind::Static, 4)).unwrap();
        let renders = seq.ground_truth_renders().unwrap();
        for m in seq.dynamic_masks(&renders, 0.5).unwrap() {
            assert_eq!(m.mask.count(), 0);
        }
    }

    #[test]
    fn non_increasing_times_are_rejected() {
        let seq = Sequence::simulate(&short(PresetKind::Static, 2)).unwrap();
        let mut poses = seq.poses_file();
        poses.frames[1].t = 0.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.json");
        std::fs::write(&path, serde_json::to_string(&poses).unwrap()).unwrap();
        assert!(load_poses(&path).is_err());
    }
}
