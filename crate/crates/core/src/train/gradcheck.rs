//! Central-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::params::{GaussianBlock, GaussianParams, PARAMS_PER_GAUSSIAN};
use super::stage::{
    evaluate_frame, Conditioning, ControlConditioning, FrameTarget, Model, TimeConditioning,
};
use super::TrainError;
use crate::control::{Bounds, ControlNetworks, ControlRig, DeformationModel, NetworkConfig};
use crate::dataset::{FrameRecord, Sequence};
use crate::discovery::{ClusterTrajectory, TrajectorySample};
use crate::exec;
use crate::flow::{FlowMap, FlowUnits};
use crate::math;
use crate::render::{project_scene, render, RgbImage};
use crate::scene::{Camera, Gaussian3D, GaussianScene, Intrinsics, Pose};

pub const DEFAULT_GRADCHECK_STEP: f64 = 1e-4;
/// Floor of the relative-error denominator.
pub const GRADCHECK_FLOOR: f64 = 1e-8;
const GRADCHECK_SIZE: usize = 16;
const GRADCHECK_GAUSSIANS: usize = 5;
/// Minimum distance of any pixel's squared Mahalanobis distance from the
/// support cutoff in the generated scenes. A step of 1e-4 on any parameter
/// moves m² by a few thousandths at most.
const SUPPORT_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCheckComponent {
    /// `½‖x‖²`, a self-test of the checker.
    Quadratic,
    /// Time-conditioned network over all Gaussians.
    Deformable,
    /// Two clusters, one network each, with the flow term.
    Controllable,
}

impl GradCheckComponent {
    pub const ALL: [GradCheckComponent; 3] = [
        GradCheckComponent::Quadratic,
        GradCheckComponent::Deformable,
        GradCheckComponent::Controllable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradCheckComponent::Quadratic => "quadratic",
            GradCheckComponent::Deformable => "deformable",
            GradCheckComponent::Controllable => "controllable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub block: String,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
    /// Analytic and numeric values at the worst parameter.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub component: GradCheckComponent,
    pub h: f64,
    pub blocks: Vec<BlockError>,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error.is_finite() && self.max_relative_error < tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Compare `analytic` against central differences of `f` at `x`, reporting
/// the worst relative error within each named block of indices.
pub fn check_gradient<F>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    blocks: &[(String, Vec<usize>)],
    h: f64,
) -> Vec<BlockError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    blocks
        .iter()
        .map(|(name, idx)| {
            let errs = exec::map_slice(idx, |&i| {
                let mut xp = x.to_vec();
                xp[i] = x[i] + h;
                let fp = f(&xp);
                xp[i] = x[i] - h;
                let fm = f(&xp);
                let n = (fp - fm) / (2.0 * h);
                (relative_error(analytic[i], n), analytic[i], n)
            });
            let worst = errs
                .iter()
                .copied()
                .fold((0.0, 0.0, 0.0), |w, e| if e.0 > w.0 { e } else { w });
            BlockError {
                block: name.clone(),
                parameters: idx.len(),
                max_relative_error: worst.0,
                max_abs_gradient: idx.iter().map(|&i| analytic[i].abs()).fold(0.0, f64::max),
                worst_analytic: worst.1,
                worst_numeric: worst.2,
            }
        })
        .collect()
}

fn report(component: GradCheckComponent, h: f64, blocks: Vec<BlockError>) -> GradCheckReport {
    let max = blocks
        .iter()
        .map(|b| b.max_relative_error)
        .fold(0.0, f64::max);
    GradCheckReport {
        component,
        h,
        blocks,
        max_relative_error: max,
    }
}

fn intrinsics() -> Intrinsics {
    let s = GRADCHECK_SIZE;
    Intrinsics::new(16.0, 16.0, 7.3, 7.6, s, s).expect("valid intrinsics")
}

fn random_scene(rng: &mut ChaCha8Rng) -> GaussianScene {
    let gaussians = (0..GRADCHECK_GAUSSIANS)
        .map(|i| {
            let z = 2.0 + 0.3 * i as f64 + rng.gen_range(0.0..0.1);
            let mut g = Gaussian3D::isotropic(
                [rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45), z],
                0.2,
                rng.gen_range(0.4..0.8),
                [
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                ],
            );
            g.scale = [
                rng.gen_range(0.15..0.35),
                rng.gen_range(0.15..0.35),
                rng.gen_range(0.15..0.35),
            ];
            g.quat = math::quat_normalize([
                1.0,
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ]);
            g
        })
        .collect();
    let mut s = GaussianScene::new(gaussians);
    s.background = [0.3, 0.2, 0.4];
    s
}

/// Smallest `|m² − 9|` over all pixels and splats.
fn support_margin(scene: &GaussianScene, cam: &Camera) -> f64 {
    let cut = crate::render::SUPPORT_SIGMAS * crate::render::SUPPORT_SIGMAS;
    let intr = &cam.intrinsics;
    let mut m = f64::INFINITY;
    for s in project_scene(scene, cam) {
        for y in 0..intr.height {
            for x in 0..intr.width {
                m = m.min((s.mahalanobis2(x as f64, y as f64) - cut).abs());
            }
        }
    }
    m
}

/// Two-frame, 16×16 sequence whose targets differ from the render of
/// `scene` by at least 0.05 per channel and whose flow is a smooth field.
fn sequence(scene: &GaussianScene, rng: &mut ChaCha8Rng) -> Result<Sequence, TrainError> {
    let intr = intrinsics();
    let poses = [
        Pose::identity(),
        Pose::from_center(
            math::rotation_exp(&math::Vec3::new(0.0, 0.02, 0.0)),
            math::Vec3::new(0.03, -0.01, 0.0),
        ),
    ];
    let frames: Vec<FrameRecord> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| FrameRecord {
            index: i,
            t: 0.1 * i as f64,
            pose: *p,
            velocity: None,
        })
        .collect();
    let mut images = Vec::new();
    for p in &poses {
        let r = render(scene, &Camera::new(intr, *p))?;
        let data = r
            .color
            .iter()
            .map(|c| {
                c.map(|v| {
                    let off = rng.gen_range(0.05..0.2);
                    if rng.gen_bool(0.5) {
                        v + off
                    } else {
                        v - off
                    }
                })
            })
            .collect();
        images.push(RgbImage::new(intr.width, intr.height, data));
    }
    let flow = (0..intr.pixel_count())
        .map(|p| {
            let (x, y) = ((p % intr.width) as f64, (p / intr.width) as f64);
            [0.4 * (0.3 * x).sin() + 0.1, -0.3 * (0.2 * y).cos()]
        })
        .collect();
    Ok(Sequence {
        intrinsics: intr,
        frame_interval: 0.1,
        frames,
        images,
        flows: vec![FlowMap::new(
            intr.width,
            intr.height,
            FlowUnits::Pixels,
            flow,
        )],
        scene: None,
    })
}

fn randomize_output(net: &mut DeformationModel, rng: &mut ChaCha8Rng) {
    let last = net.mlp.layers.last_mut().expect("network has layers");
    for w in &mut last.weight {
        *w = rng.gen_range(-0.03..0.03);
    }
    for b in &mut last.bias {
        *b = rng.gen_range(-0.01..0.01);
    }
}

struct Setup {
    model: Model,
    seq: Sequence,
    cond: Box<dyn Conditioning + Sync>,
}

/// Encoder box of at least 2 m on each side of the scene center. The
/// fixture's splats sit within about a meter, and bounds that tight put the
/// top frequency band high enough that central differences at h = 1e-4 pick
/// up O(h²) truncation error in the center block.
fn position_bounds(scene: &GaussianScene) -> Result<Bounds, TrainError> {
    let centers: Vec<[f64; 3]> = scene.gaussians.iter().map(|g| g.center).collect();
    Ok(Bounds::enclosing(&centers, 0.1, 2.0)?)
}

fn setup(component: GradCheckComponent, seed: u64) -> Result<Setup, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetworkConfig::default();
    for _ in 0..1000 {
        let scene = random_scene(&mut rng);
        let seq = sequence(&scene, &mut rng)?;
        let (mut networks, cond): (Vec<DeformationModel>, Box<dyn Conditioning + Sync>) =
            match component {
                GradCheckComponent::Deformable => {
                    let net = DeformationModel::new(
                        cfg,
                        Bounds::new(vec![0.0], vec![0.1])?,
                        position_bounds(&scene)?,
                        0,
                        &mut rng,
                    )?;
                    let cond = TimeConditioning {
                        times: seq.times(),
                        gaussian_count: scene.len(),
                    };
                    (vec![net], Box::new(cond))
                }
                GradCheckComponent::Controllable => {
                    let traj =
                        |cluster: usize, members: Vec<usize>, d: [f64; 3]| ClusterTrajectory {
                            cluster,
                            members,
                            samples: (0..2)
                                .map(|j| TrajectorySample {
                                    t: 0.1 * j as f64,
                                    center: [
                                        j as f64 * d[0],
                                        j as f64 * d[1],
                                        2.0 + j as f64 * d[2],
                                    ],
                                })
                                .collect(),
                        };
                    let trajs = vec![
                        traj(0, vec![0, 2], [0.04, 0.01, 0.0]),
                        traj(1, vec![3], [-0.02, 0.03, 0.01]),
                    ];
                    let mut nets = Vec::new();
                    for _ in &trajs {
                        nets.push(DeformationModel::new(
                            cfg,
                            Bounds::symmetric(&[0.05; 3])?,
                            position_bounds(&scene)?,
                            0,
                            &mut rng,
                        )?);
                    }
                    let rig = ControlRig::new(trajs, ControlNetworks::PerCluster(nets))?;
                    let cond = ControlConditioning::from_rig(&rig);
                    (
                        rig.networks().into_iter().cloned().collect(),
                        Box::new(cond),
                    )
                }
                GradCheckComponent::Quadratic => unreachable!("quadratic has no scene"),
            };
        for n in &mut networks {
            randomize_output(n, &mut rng);
        }
        let model = Model {
            gaussians: GaussianParams::from_scene(&scene),
            networks,
        };
        let ok = (0..2).all(|f| {
            let cam = seq.camera(0);
            let r = model.scene_for(&cond.groups(f));
            r.is_ok_and(|s| {
                project_scene(&s, &cam).len() == GRADCHECK_GAUSSIANS
                    && support_margin(&s, &cam) > SUPPORT_MARGIN
            })
        });
        if ok {
            return Ok(Setup { model, seq, cond });
        }
    }
    Err(TrainError::Degenerate(
        "no gradcheck scene clear of the support cutoff".into(),
    ))
}

fn model_blocks(model: &Model) -> Vec<(String, Vec<usize>)> {
    let n = model.gaussians.gaussian_count();
    let mut blocks: Vec<(String, Vec<usize>)> = GaussianBlock::ALL
        .iter()
        .map(|b| {
            let idx = (0..n)
                .flat_map(|g| b.range().map(move |k| g * PARAMS_PER_GAUSSIAN + k))
                .collect();
            (b.name().to_string(), idx)
        })
        .collect();
    let mut at = model.gaussians.values.len();
    for (i, net) in model.networks.iter().enumerate() {
        for (k, layer) in net.mlp.layers.iter().enumerate() {
            let w = layer.weight.len();
            let b = layer.bias.len();
            blocks.push((
                format!("network{i}.layer{k}.weight"),
                (at..at + w).collect(),
            ));
            blocks.push((
                format!("network{i}.layer{k}.bias"),
                (at + w..at + w + b).collect(),
            ));
            at += w + b;
        }
    }
    blocks
}

/// Gradient check of `component` at step `h`. Pipeline components use the
/// full loss (L1, D-SSIM and the flow term with β = 0.5) on frame 0.
pub fn gradcheck(component: GradCheckComponent, h: f64) -> Result<GradCheckReport, TrainError> {
    gradcheck_with_loss(component, h, &LossConfig::default())
}

/// [`gradcheck`] with explicit loss weights.
pub fn gradcheck_with_loss(
    component: GradCheckComponent,
    h: f64,
    cfg: &LossConfig,
) -> Result<GradCheckReport, TrainError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(TrainError::Config(format!("step {h} must be positive")));
    }
    if component == GradCheckComponent::Quadratic {
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let f = |v: &[f64]| 0.5 * v.iter().map(|a| a * a).sum::<f64>();
        let blocks = vec![("x".to_string(), (0..x.len()).collect())];
        return Ok(report(component, h, check_gradient(f, &x, &x, &blocks, h)));
    }
    let Setup { model, seq, cond } = setup(component, 7)?;
    let cfg = *cfg;
    let groups = cond.groups(0);
    let next = cond.groups(1);
    let target = FrameTarget {
        seq: &seq,
        frame: 0,
        with_flow: true,
    };
    let eval = evaluate_frame(&model, target, &groups, &next, &cfg, true)?;
    let analytic = eval.grad.expect("gradient requested").flat();
    let x = model.flat();
    let loss = |v: &[f64]| -> f64 {
        let mut m = model.clone();
        m.set_flat(v);
        evaluate_frame(&m, target, &groups, &next, &cfg, false).map_or(f64::NAN, |e| e.loss.total)
    };
    let blocks = model_blocks(&model);
    Ok(report(
        component,
        h,
        check_gradient(loss, &x, &analytic, &blocks, h),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_matches_exactly() {
        let r = gradcheck(GradCheckComponent::Quadratic, 1e-4).unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
    }

    #[test]
    fn relative_error_uses_the_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
