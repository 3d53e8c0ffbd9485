//! Per-frame loss evaluation and the deformable and controllable stages.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, DEFAULT_LR};
use super::backward::{render_backward, render_for_training, GaussianGrad};
use super::deform::{deform_backward, deform_forward, DeformGroup};
use super::loss::{
    dssim_loss_grad, flow_residual_loss, photometric_loss_grad, total_loss, LossBreakdown,
    LossConfig,
};
use super::params::GaussianParams;
use super::TrainError;
use crate::control::{
    scene_bounds, Bounds, ControlNetworks, ControlRig, DeformationModel, NetworkConfig,
};
use crate::dataset::Sequence;
use crate::discovery::{ClusterTrajectory, Discovery, DiscoveryConfig};
use crate::flow::{camera_flow, flow_basis, BinaryMask};
use crate::render::{psnr, RgbImage, COVERAGE_EPS};
use crate::scene::{CameraVelocity, GaussianScene};

/// Every frame with `f % HOLDOUT_PERIOD == HOLDOUT_PERIOD - 1` is held out.
pub const HOLDOUT_PERIOD: usize = 5;
pub const DEFAULT_STEPS: usize = 2000;
/// Learning-rate multiplier of deformation-network weights.
pub const LR_NETWORK: f64 = 5.0;

pub fn is_holdout(f: usize) -> bool {
    f % HOLDOUT_PERIOD == HOLDOUT_PERIOD - 1
}

pub fn training_frames(n: usize) -> Vec<usize> {
    (0..n).filter(|&f| !is_holdout(f)).collect()
}

pub fn holdout_frames(n: usize) -> Vec<usize> {
    (0..n).filter(|&f| is_holdout(f)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub loss: LossConfig,
    pub seed: u64,
    pub network: NetworkConfig,
    /// One network for all clusters instead of one per cluster.
    pub shared: bool,
    /// Keep Gaussian parameters fixed and train only the networks.
    pub freeze_gaussians: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: DEFAULT_STEPS,
            lr: DEFAULT_LR,
            loss: LossConfig::default(),
            seed: 0,
            network: NetworkConfig::default(),
            shared: false,
            freeze_gaussians: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.loss.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub frame: usize,
    pub rgb: f64,
    pub dssim: f64,
    pub flow: f64,
    pub total: f64,
    pub psnr: f64,
}

/// Metrics log as CSV with columns `step,L_RGB,L_DSSIM,L_uGS,PSNR`.
pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut s = String::from("step,L_RGB,L_DSSIM,L_uGS,PSNR\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.8},{:.8},{:.8},{:.4}\n",
            r.step, r.rgb, r.dssim, r.flow, r.psnr
        ));
    }
    s
}

/// Gaussians plus deformation networks, the full trainable state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub gaussians: GaussianParams,
    pub networks: Vec<DeformationModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub gaussians: Vec<f64>,
    pub networks: Vec<Vec<f64>>,
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.gaussians.values.len()
            + self
                .networks
                .iter()
                .map(|n| n.mlp.param_count())
                .sum::<usize>()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.gaussians.values.clone();
        for n in &self.networks {
            v.extend(n.mlp.params());
        }
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let g = self.gaussians.values.len();
        self.gaussians.values.copy_from_slice(&v[..g]);
        let mut at = g;
        for n in &mut self.networks {
            let c = n.mlp.param_count();
            n.mlp.set_params(&v[at..at + c]);
            at += c;
        }
    }

    /// The deformed scene for `groups`.
    pub fn scene_for(&self, groups: &[DeformGroup]) -> Result<GaussianScene, TrainError> {
        Ok(deform_forward(&self.gaussians.to_scene(), &self.networks, groups)?.scene)
    }
}

impl ModelGrad {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.gaussians.clone();
        for n in &self.networks {
            v.extend_from_slice(n);
        }
        v
    }
}

/// One frame's supervision.
#[derive(Debug, Clone, Copy)]
pub struct FrameTarget<'a> {
    pub seq: &'a Sequence,
    pub frame: usize,
    /// Use the flow from `frame` to `frame + 1` with the deformation in `next`.
    pub with_flow: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEval {
    pub loss: LossBreakdown,
    pub psnr: f64,
    pub image: RgbImage,
    pub grad: Option<ModelGrad>,
}

fn interval(seq: &Sequence, f: usize) -> Result<(CameraVelocity, f64), TrainError> {
    let vel = seq.interval_velocity(f).map_err(|e| match e {
        crate::Error::Flow(e) => TrainError::Flow(e),
        other => TrainError::Config(other.to_string()),
    })?;
    Ok((vel, seq.frames[f + 1].t - seq.frames[f].t))
}

/// Camera-induced displacement over the interval after frame `f`, from the rendered depth.
fn frame_camera_flow(seq: &Sequence, f: usize, depth: &[f64]) -> Result<Vec<[f64; 2]>, TrainError> {
    let (vel, dt) = interval(seq, f)?;
    let cam = camera_flow(&vel, depth, &seq.intrinsics);
    Ok(cam
        .flow
        .data
        .iter()
        .map(|v| [v[0] * dt, v[1] * dt])
        .collect())
}

/// `∂L/∂depth` from `∂L/∂u_cam` through `u_cam = dt (A v / Z + B ω)`.
fn camera_flow_depth_grad(
    seq: &Sequence,
    f: usize,
    depth: &[f64],
    d_cam: &[[f64; 2]],
) -> Result<Vec<f64>, TrainError> {
    let (vel, dt) = interval(seq, f)?;
    let intr = &seq.intrinsics;
    Ok((0..depth.len())
        .map(|p| {
            let z = depth[p];
            if !(z > 0.0) || d_cam[p] == [0.0, 0.0] {
                return 0.0;
            }
            let av = flow_basis(intr, (p % intr.width) as f64, (p / intr.width) as f64).a * vel.v;
            -dt * (d_cam[p][0] * av.x + d_cam[p][1] * av.y) / (z * z)
        })
        .collect())
}

/// Loss of `model` on one frame and, if asked, its gradient.
pub fn evaluate_frame(
    model: &Model,
    target: FrameTarget<'_>,
    groups: &[DeformGroup],
    next_groups: &[DeformGroup],
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<FrameEval, TrainError> {
    let seq = target.seq;
    let f = target.frame;
    let with_flow = target.with_flow && f + 1 < seq.len();
    let base = model.gaussians.to_scene();
    let cur = deform_forward(&base, &model.networks, groups)?;
    let next = if with_flow {
        Some(deform_forward(&base, &model.networks, next_groups)?)
    } else {
        None
    };
    let cam = seq.camera(f);
    let r = render_for_training(&cur.scene, next.as_ref().map(|n| &n.scene), &cam);
    let image = r.buffers.color_image();
    let gt = &seq.images[f];
    let (l1, g1) = photometric_loss_grad(&image, gt)?;
    let (ds, g2) = dssim_loss_grad(&image, gt)?;

    let mut flow_value = 0.0;
    let mut d_flow: Option<Vec<[f64; 2]>> = None;
    if next.is_some() {
        let u = &seq.flows[f];
        let u_cam = frame_camera_flow(seq, f, &r.buffers.depth)?;
        let flow_target: Vec<[f64; 2]> = u
            .data
            .iter()
            .zip(&u_cam)
            .map(|(a, c)| [a[0] - c[0], a[1] - c[1]])
            .collect();
        let valid: Vec<bool> = (0..flow_target.len())
            .map(|p| u.is_valid(p) && r.buffers.accum_alpha[p] > COVERAGE_EPS)
            .collect();
        match flow_residual_loss(&flow_target, &r.buffers.gs_flow, &valid) {
            Ok((v, g)) => {
                flow_value = v;
                d_flow = Some(
                    g.into_iter()
                        .map(|x| [cfg.beta * x[0], cfg.beta * x[1]])
                        .collect(),
                );
            }
            Err(TrainError::NoValidPixels) => {}
            Err(e) => return Err(e),
        }
    }
    let loss = LossBreakdown {
        rgb: l1,
        dssim: ds,
        flow: flow_value,
        total: total_loss(cfg, l1, ds, flow_value),
    };
    let p = psnr(&image, gt);

    let grad = if want_grad {
        let d_color: Vec<[f64; 3]> = g1
            .iter()
            .zip(&g2)
            .map(|(a, b)| std::array::from_fn(|k| cfg.lambda * a[k] + (1.0 - cfg.lambda) * b[k]))
            .collect();
        // The flow target u − u_cam depends on the rendered depth; its
        // gradient with respect to u_cam equals the one for the rendered flow.
        let d_depth = match &d_flow {
            Some(g) => Some(camera_flow_depth_grad(seq, f, &r.buffers.depth, g)?),
            None => None,
        };
        let (g_cur, g_next) = render_backward(
            &r,
            &cur.scene,
            next.as_ref().map(|n| &n.scene),
            &cam,
            &d_color,
            d_flow.as_deref(),
            d_depth.as_deref(),
        );
        let mut net_grads: Vec<Vec<f64>> = model
            .networks
            .iter()
            .map(|n| vec![0.0; n.mlp.param_count()])
            .collect();
        let mut base_grads =
            deform_backward(&base, &model.networks, groups, &cur, &g_cur, &mut net_grads);
        if let Some(n) = &next {
            let gn: Vec<GaussianGrad> = g_next
                .iter()
                .map(|c| GaussianGrad {
                    center: *c,
                    ..GaussianGrad::default()
                })
                .collect();
            let extra =
                deform_backward(&base, &model.networks, next_groups, n, &gn, &mut net_grads);
            for (a, b) in base_grads.iter_mut().zip(&extra) {
                for k in 0..3 {
                    a.center[k] += b.center[k];
                    a.scale[k] += b.scale[k];
                }
                for k in 0..4 {
                    a.quat[k] += b.quat[k];
                }
            }
        }
        Some(ModelGrad {
            gaussians: model.gaussians.gradient(&base_grads),
            networks: net_grads,
        })
    } else {
        None
    };
    Ok(FrameEval {
        loss,
        psnr: p,
        image,
        grad,
    })
}

/// Maps a frame index to its deformation groups.
pub trait Conditioning {
    fn groups(&self, frame: usize) -> Vec<DeformGroup>;
}

/// Stage-one conditioning: every Gaussian, condition `[t]`.
#[derive(Debug, Clone)]
pub struct TimeConditioning {
    pub times: Vec<f64>,
    pub gaussian_count: usize,
}

impl Conditioning for TimeConditioning {
    fn groups(&self, frame: usize) -> Vec<DeformGroup> {
        vec![DeformGroup {
            network: 0,
            slot: None,
            condition: vec![self.times[frame]],
            members: (0..self.gaussian_count).collect(),
        }]
    }
}

/// Stage-two conditioning: each cluster's control vector at the frame.
#[derive(Debug, Clone)]
pub struct ControlConditioning {
    pub trajectories: Vec<ClusterTrajectory>,
    pub shared: bool,
}

impl ControlConditioning {
    pub fn from_rig(rig: &ControlRig) -> Self {
        ControlConditioning {
            trajectories: rig.trajectories.clone(),
            shared: matches!(rig.networks, ControlNetworks::Shared(_)),
        }
    }
}

impl Conditioning for ControlConditioning {
    fn groups(&self, frame: usize) -> Vec<DeformGroup> {
        self.trajectories
            .iter()
            .enumerate()
            .map(|(slot, tr)| {
                let mut members = tr.members.clone();
                members.sort_unstable();
                members.dedup();
                DeformGroup {
                    network: if self.shared { 0 } else { slot },
                    slot: self.shared.then_some(slot),
                    condition: tr.control_vector(frame).to_vec(),
                    members,
                }
            })
            .collect()
    }
}

/// Optimize `model` on the training frames of `seq`. Flow terms use pairs of
/// consecutive training frames when `use_flow` is set.
pub fn optimize(
    model: &mut Model,
    seq: &Sequence,
    cond: &dyn Conditioning,
    cfg: &TrainConfig,
    use_flow: bool,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<Vec<StepMetrics>, TrainError> {
    cfg.validate()?;
    let frames = training_frames(seq.len());
    if frames.len() < 2 {
        return Err(TrainError::Degenerate(format!(
            "{} training frames; need at least 2",
            frames.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g_len = model.gaussians.values.len();
    let mut scale = model.gaussians.lr_scale();
    if cfg.freeze_gaussians {
        scale.iter_mut().for_each(|s| *s = 0.0);
    }
    scale.resize(model.param_count(), LR_NETWORK);
    let mut adam = Adam::new(model.param_count(), cfg.lr);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if order.is_empty() {
            order = frames.clone();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let f = order.pop().unwrap();
        let with_flow = use_flow && f + 1 < seq.len() && !is_holdout(f + 1);
        let groups = cond.groups(f);
        let next_groups = if with_flow {
            cond.groups(f + 1)
        } else {
            Vec::new()
        };
        let eval = evaluate_frame(
            model,
            FrameTarget {
                seq,
                frame: f,
                with_flow,
            },
            &groups,
            &next_groups,
            &cfg.loss,
            true,
        )?;
        if !eval.loss.total.is_finite() {
            return Err(TrainError::Degenerate(format!(
                "loss is {} at step {step}",
                eval.loss.total
            )));
        }
        let grad = eval.grad.expect("gradient requested").flat();
        let mut params = model.flat();
        adam.step(&mut params, &grad, Some(&scale))?;
        if cfg.freeze_gaussians {
            params[..g_len].copy_from_slice(&model.gaussians.values);
        }
        model.set_flat(&params);
        model.gaussians.project();
        let m = StepMetrics {
            step,
            frame: f,
            rgb: eval.loss.rgb,
            dssim: eval.loss.dssim,
            flow: eval.loss.flow,
            total: eval.loss.total,
            psnr: eval.psnr,
        };
        on_step(&m);
        log.push(m);
    }
    Ok(log)
}

/// Mean PSNR of `model` over `frames`.
pub fn mean_psnr(
    model: &Model,
    seq: &Sequence,
    cond: &dyn Conditioning,
    frames: &[usize],
) -> Result<f64, TrainError> {
    if frames.is_empty() {
        return Err(TrainError::Config("no frames to evaluate".into()));
    }
    let mut sum = 0.0;
    for &f in frames {
        let scene = model.scene_for(&cond.groups(f))?;
        let img = crate::render::render(&scene, &seq.camera(f))?.color_image();
        sum += psnr(&img, &seq.images[f]);
    }
    Ok(sum / frames.len() as f64)
}

/// Mean endpoint error, in pixels, between each observed flow interval and
/// the model's prediction `u_cam + ũ_GS` over covered pixels.
pub fn flow_endpoint_error(
    model: &Model,
    seq: &Sequence,
    cond: &dyn Conditioning,
) -> Result<f64, TrainError> {
    endpoint_error(model, seq, cond, &|_, _| true)
}

/// Mean `|u − u_cam − ũ_GS|` over the covered pixels set in `masks`, one
/// mask per flow interval.
pub fn dynamic_flow_residual(
    model: &Model,
    seq: &Sequence,
    cond: &dyn Conditioning,
    masks: &[BinaryMask],
) -> Result<f64, TrainError> {
    if masks.len() != seq.flows.len() {
        return Err(TrainError::SizeMismatch(format!(
            "{} masks for {} flow intervals",
            masks.len(),
            seq.flows.len()
        )));
    }
    endpoint_error(model, seq, cond, &|f, p| masks[f].data[p])
}

fn endpoint_error(
    model: &Model,
    seq: &Sequence,
    cond: &dyn Conditioning,
    keep: &dyn Fn(usize, usize) -> bool,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for f in 0..seq.flows.len() {
        let cur = model.scene_for(&cond.groups(f))?;
        let next = model.scene_for(&cond.groups(f + 1))?;
        let r = render_for_training(&cur, Some(&next), &seq.camera(f));
        let u_cam = frame_camera_flow(seq, f, &r.buffers.depth)?;
        let u = &seq.flows[f];
        for p in 0..u.data.len() {
            if !(u.is_valid(p) && r.buffers.accum_alpha[p] > COVERAGE_EPS && keep(f, p)) {
                continue;
            }
            let e0 = u.data[p][0] - u_cam[p][0] - r.buffers.gs_flow[p][0];
            let e1 = u.data[p][1] - u_cam[p][1] - r.buffers.gs_flow[p][1];
            sum += (e0 * e0 + e1 * e1).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        return Err(TrainError::NoValidPixels);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformableResult {
    /// Canonical Gaussians the time network deforms.
    pub scene: GaussianScene,
    pub model: DeformationModel,
    pub metrics: Vec<StepMetrics>,
}

impl DeformableResult {
    fn as_model(&self) -> Model {
        Model {
            gaussians: GaussianParams::from_scene(&self.scene),
            networks: vec![self.model.clone()],
        }
    }

    fn conditioning(&self, times: &[f64]) -> TimeConditioning {
        TimeConditioning {
            times: times.to_vec(),
            gaussian_count: self.scene.len(),
        }
    }

    /// The scene at time `t`.
    pub fn scene_at(&self, t: f64) -> Result<GaussianScene, TrainError> {
        let cond = TimeConditioning {
            times: vec![t],
            gaussian_count: self.scene.len(),
        };
        Ok(deform_forward(
            &self.scene,
            std::slice::from_ref(&self.model),
            &cond.groups(0),
        )?
        .scene)
    }

    /// Deformed Gaussian centers at each time.
    pub fn positions(&self, times: &[f64]) -> Result<Vec<Vec<[f64; 3]>>, TrainError> {
        times
            .iter()
            .map(|&t| {
                Ok(self
                    .scene_at(t)?
                    .gaussians
                    .iter()
                    .map(|g| g.center)
                    .collect())
            })
            .collect()
    }

    pub fn mean_psnr(&self, seq: &Sequence, frames: &[usize]) -> Result<f64, TrainError> {
        mean_psnr(
            &self.as_model(),
            seq,
            &self.conditioning(&seq.times()),
            frames,
        )
    }

    /// Dynamic-object discovery on this model: masks from the observed flow
    /// decomposed against the model's renders, trajectories from its
    /// per-frame centers.
    pub fn discover(
        &self,
        seq: &Sequence,
        tau: f64,
        cfg: &DiscoveryConfig,
    ) -> crate::Result<Discovery> {
        let states: Vec<GaussianScene> = seq
            .times()
            .iter()
            .map(|&t| self.scene_at(t))
            .collect::<Result<_, _>>()?;
        seq.discover_states(&states, tau, cfg)
    }
}

/// Time bounds of a sequence, with a floor on the width.
fn time_bounds(seq: &Sequence) -> Result<Bounds, TrainError> {
    let t = seq.times();
    let (lo, hi) = (t[0], t[t.len() - 1]);
    Ok(Bounds::new(vec![lo], vec![hi.max(lo + 1e-3)])?)
}

/// Stage one: a time-conditioned network over all Gaussians of `init`,
/// trained with the photometric and D-SSIM terms.
pub fn train_deformable_stage(
    seq: &Sequence,
    init: &GaussianScene,
    cfg: &TrainConfig,
    on_step: impl FnMut(&StepMetrics),
) -> Result<DeformableResult, TrainError> {
    let times = seq.times();
    if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(TrainError::Degenerate(
            "need at least two distinct timestamps".into(),
        ));
    }
    if init.is_empty() {
        return Err(TrainError::Degenerate(
            "initial scene has no Gaussians".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = DeformationModel::new(
        cfg.network,
        time_bounds(seq)?,
        scene_bounds(init)?,
        0,
        &mut rng,
    )?;
    let mut model = Model {
        gaussians: GaussianParams::from_scene(init),
        networks: vec![net],
    };
    let cond = TimeConditioning {
        times: times.clone(),
        gaussian_count: init.len(),
    };
    let stage_cfg = TrainConfig {
        loss: LossConfig {
            beta: 0.0,
            ..cfg.loss
        },
        ..*cfg
    };
    let metrics = optimize(&mut model, seq, &cond, &stage_cfg, false, on_step)?;
    Ok(DeformableResult {
        scene: model.gaussians.to_scene(),
        model: model.networks.pop().unwrap(),
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllableResult {
    /// Base Gaussians the cluster networks deform.
    pub scene: GaussianScene,
    pub rig: ControlRig,
    pub metrics: Vec<StepMetrics>,
}

impl ControllableResult {
    fn as_model(&self) -> Model {
        Model {
            gaussians: GaussianParams::from_scene(&self.scene),
            networks: self.rig.networks().into_iter().cloned().collect(),
        }
    }

    /// The scene with every cluster at its state for `frame`.
    pub fn scene_at_frame(&self, frame: usize) -> Result<GaussianScene, TrainError> {
        let cond = ControlConditioning::from_rig(&self.rig);
        let nets: Vec<DeformationModel> = self.rig.networks().into_iter().cloned().collect();
        Ok(deform_forward(&self.scene, &nets, &cond.groups(frame))?.scene)
    }

    pub fn mean_psnr(&self, seq: &Sequence, frames: &[usize]) -> Result<f64, TrainError> {
        mean_psnr(
            &self.as_model(),
            seq,
            &ControlConditioning::from_rig(&self.rig),
            frames,
        )
    }

    pub fn flow_endpoint_error(&self, seq: &Sequence) -> Result<f64, TrainError> {
        flow_endpoint_error(
            &self.as_model(),
            seq,
            &ControlConditioning::from_rig(&self.rig),
        )
    }

    pub fn dynamic_flow_residual(
        &self,
        seq: &Sequence,
        masks: &[BinaryMask],
    ) -> Result<f64, TrainError> {
        dynamic_flow_residual(
            &self.as_model(),
            seq,
            &ControlConditioning::from_rig(&self.rig),
            masks,
        )
    }
}

/// Stage two: per-cluster (or shared) networks driven by control vectors,
/// trained jointly with the Gaussians of `base` unless frozen. `rig` continues
/// from existing networks instead of fresh ones.
pub fn train_controllable_stage(
    seq: &Sequence,
    base: &GaussianScene,
    trajectories: &[ClusterTrajectory],
    rig: Option<ControlRig>,
    cfg: &TrainConfig,
    on_step: impl FnMut(&StepMetrics),
) -> Result<ControllableResult, TrainError> {
    for tr in trajectories {
        if tr.samples.len() < seq.len() {
            return Err(TrainError::MissingTrajectory {
                cluster: tr.cluster,
                samples: tr.samples.len(),
                frames: seq.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let rig = match rig {
        Some(r) => r,
        None => ControlRig::build(
            trajectories.to_vec(),
            base,
            cfg.network,
            cfg.shared,
            &mut rng,
        )?,
    };
    let cond = ControlConditioning::from_rig(&rig);
    let mut model = Model {
        gaussians: GaussianParams::from_scene(base),
        networks: rig.networks().into_iter().cloned().collect(),
    };
    let metrics = optimize(&mut model, seq, &cond, cfg, cfg.loss.beta > 0.0, on_step)?;
    let networks = if cond.shared {
        ControlNetworks::Shared(model.networks.pop().unwrap())
    } else {
        ControlNetworks::PerCluster(model.networks)
    };
    Ok(ControllableResult {
        scene: model.gaussians.to_scene(),
        rig: ControlRig::new(rig.trajectories, networks)?,
        metrics,
    })
}

/// Which stage a metrics row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Deformable,
    Controllable,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Deformable => "deformable",
            Stage::Controllable => "controllable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub deformable: DeformableResult,
    pub discovery: Discovery,
    pub controllable: ControllableResult,
}

/// Both stages with discovery in between: the stage-one model supplies the
/// renders and per-frame centers for discovery, and its state at t = 0 is
/// the stage-two base.
pub fn train_pipeline(
    seq: &Sequence,
    init: &GaussianScene,
    cfg: &TrainConfig,
    tau: f64,
    discovery: &DiscoveryConfig,
    mut on_step: impl FnMut(Stage, &StepMetrics),
) -> crate::Result<PipelineResult> {
    let deformable = train_deformable_stage(seq, init, cfg, |m| on_step(Stage::Deformable, m))?;
    let found = deformable.discover(seq, tau, discovery)?;
    let base = deformable.scene_at(seq.frames[0].t)?;
    let controllable = train_controllable_stage(seq, &base, &found.trajectories, None, cfg, |m| {
        on_step(Stage::Controllable, m)
    })?;
    Ok(PipelineResult {
        deformable,
        discovery: found,
        controllable,
    })
}
