//! The `train` subcommand.

use std::path::{Path, PathBuf};

use gsflow::control::{Checkpoint, CheckpointBody, ControlRig};
use gsflow::dataset::Sequence;
use gsflow::discovery::{ClustersFile, DiscoveryConfig};
use gsflow::scene::GaussianScene;
use gsflow::train::{
    holdout_frames, metrics_csv, perturb_scene, train_controllable_stage, train_deformable_stage,
    train_pipeline, training_frames, DeformableResult, LossConfig, Perturbation, Stage,
    StepMetrics, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::args::{Cli, GlobalArgs, StageArg, TrainArgs};
use crate::manifest::{beside, RunManifest};
use crate::view::load_any_scene;
use crate::{CliError, CliResult};

const LOG_EVERY: usize = 100;

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn log_step(stage: Stage, m: &StepMetrics) {
    if m.step.is_multiple_of(LOG_EVERY) {
        log::info!(
            "{} step {} frame {}: rgb {:.5} dssim {:.5} flow {:.5} psnr {:.2}",
            stage.name(),
            m.step,
            m.frame,
            m.rgb,
            m.dssim,
            m.flow,
            m.psnr
        );
    }
}

struct Paths {
    checkpoint: PathBuf,
    stage_one: PathBuf,
    clusters_out: PathBuf,
}

impl Paths {
    fn new(a: &TrainArgs) -> Self {
        Paths {
            checkpoint: a.checkpoint_out.clone(),
            stage_one: with_suffix(&a.checkpoint_out, ".deformable"),
            clusters_out: a
                .clusters_out
                .clone()
                .unwrap_or_else(|| a.checkpoint_out.with_file_name("clusters.json")),
        }
    }

    fn csv(&self, stage: Stage) -> PathBuf {
        with_suffix(&self.checkpoint, &format!(".{}.csv", stage.name()))
    }

    fn outputs(&self, stage: StageArg) -> Vec<PathBuf> {
        match stage {
            StageArg::Deformable => vec![self.checkpoint.clone(), self.csv(Stage::Deformable)],
            StageArg::Controllable => vec![self.checkpoint.clone(), self.csv(Stage::Controllable)],
            StageArg::Both => vec![
                self.stage_one.clone(),
                self.csv(Stage::Deformable),
                self.clusters_out.clone(),
                self.checkpoint.clone(),
                self.csv(Stage::Controllable),
            ],
        }
    }
}

fn initial_scene(a: &TrainArgs, seq: &Sequence, seed: u64) -> CliResult<GaussianScene> {
    let scene = match &a.scene {
        Some(p) => load_any_scene(p)?,
        None => seq.scene.clone().ok_or_else(|| {
            CliError::Usage("no scene.json in the samples directory; pass --scene".into())
        })?,
    };
    let t0 = seq.frames.first().map_or(0.0, |r| r.t);
    let scene = scene.sample_at(t0)?;
    Ok(if a.perturb {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perturb_scene(&scene, &Perturbation::default(), &mut rng)
    } else {
        scene
    })
}

pub fn train(cli: &Cli, g: &GlobalArgs, a: &TrainArgs) -> CliResult<()> {
    let paths = Paths::new(a);
    let mut inputs: Vec<&Path> = vec![&a.samples];
    inputs.extend(a.scene.as_deref());
    inputs.extend(a.checkpoint_in.as_deref());
    inputs.extend(a.clusters.as_deref());
    let outs = paths.outputs(a.stage);
    let out_refs: Vec<&Path> = outs.iter().map(|p| p.as_path()).collect();
    RunManifest::new(cli, &inputs, &out_refs)?
        .write(g.manifest.as_deref(), Some(&beside(&a.checkpoint_out)))?;

    let cfg = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        loss: LossConfig {
            lambda: a.lambda,
            beta: a.beta,
        },
        seed: g.seed,
        shared: a.shared,
        freeze_gaussians: a.freeze_gaussians,
        ..Default::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let seq = Sequence::load(&a.samples)?;
    let train_f = training_frames(seq.len());
    let held_f = holdout_frames(seq.len());

    match a.stage {
        StageArg::Deformable => {
            let init = initial_scene(a, &seq, g.seed)?;
            let r = train_deformable_stage(&seq, &init, &cfg, |m| log_step(Stage::Deformable, m))?;
            write(
                &paths.csv(Stage::Deformable),
                metrics_csv(&r.metrics).as_bytes(),
            )?;
            save(
                &paths.checkpoint,
                r.scene.clone(),
                CheckpointBody::Deformable(r.model.clone()),
            )?;
            summary(json!({
                "stage": "deformable",
                "train_psnr": r.mean_psnr(&seq, &train_f)?,
                "holdout_psnr": r.mean_psnr(&seq, &held_f)?,
                "checkpoint": paths.checkpoint.display().to_string(),
            }));
        }
        StageArg::Controllable => {
            let (base, rig) = controllable_start(a, &seq, g.seed)?;
            let trajectories = match (&a.clusters, &rig) {
                (Some(p), _) => ClustersFile::load(p)?.trajectories(),
                (None, Some(r)) => r.trajectories.clone(),
                (None, None) => {
                    return Err(CliError::Usage(
                        "--stage controllable needs --clusters".into(),
                    ))
                }
            };
            let rig = match rig {
                Some(r) => Some(ControlRig::new(trajectories.clone(), r.networks)?),
                None => None,
            };
            let r = train_controllable_stage(&seq, &base, &trajectories, rig, &cfg, |m| {
                log_step(Stage::Controllable, m)
            })?;
            write(
                &paths.csv(Stage::Controllable),
                metrics_csv(&r.metrics).as_bytes(),
            )?;
            save(
                &paths.checkpoint,
                r.scene.clone(),
                CheckpointBody::Controllable(r.rig.clone()),
            )?;
            summary(json!({
                "stage": "controllable",
                "train_psnr": r.mean_psnr(&seq, &train_f)?,
                "holdout_psnr": r.mean_psnr(&seq, &held_f)?,
                "flow_endpoint_error": r.flow_endpoint_error(&seq)?,
                "checkpoint": paths.checkpoint.display().to_string(),
            }));
        }
        StageArg::Both => {
            let init = initial_scene(a, &seq, g.seed)?;
            let disc = DiscoveryConfig::default();
            let r = train_pipeline(&seq, &init, &cfg, a.tau, &disc, log_step)?;
            write(
                &paths.csv(Stage::Deformable),
                metrics_csv(&r.deformable.metrics).as_bytes(),
            )?;
            save(
                &paths.stage_one,
                r.deformable.scene.clone(),
                CheckpointBody::Deformable(r.deformable.model.clone()),
            )?;
            write(
                &paths.clusters_out,
                r.discovery.clusters_file().to_json().as_bytes(),
            )?;
            let c = &r.controllable;
            write(
                &paths.csv(Stage::Controllable),
                metrics_csv(&c.metrics).as_bytes(),
            )?;
            save(
                &paths.checkpoint,
                c.scene.clone(),
                CheckpointBody::Controllable(c.rig.clone()),
            )?;
            summary(json!({
                "stage": "both",
                "clusters": r.discovery.trajectories.len(),
                "train_psnr": c.mean_psnr(&seq, &train_f)?,
                "holdout_psnr": c.mean_psnr(&seq, &held_f)?,
                "flow_endpoint_error": c.flow_endpoint_error(&seq)?,
                "checkpoint": paths.checkpoint.display().to_string(),
                "clusters_out": paths.clusters_out.display().to_string(),
            }));
        }
    }
    Ok(())
}

/// Base scene and optional networks to continue from for the controllable stage.
fn controllable_start(
    a: &TrainArgs,
    seq: &Sequence,
    seed: u64,
) -> CliResult<(GaussianScene, Option<ControlRig>)> {
    let Some(p) = &a.checkpoint_in else {
        return Ok((initial_scene(a, seq, seed)?, None));
    };
    let ck = Checkpoint::load(p)?;
    Ok(match ck.body {
        CheckpointBody::Deformable(model) => {
            let stage = DeformableResult {
                scene: ck.scene,
                model,
                metrics: Vec::new(),
            };
            (stage.scene_at(seq.frames[0].t)?, None)
        }
        CheckpointBody::Controllable(rig) => (ck.scene, Some(rig)),
    })
}

fn save(path: &Path, scene: GaussianScene, body: CheckpointBody) -> CliResult<()> {
    let ck = Checkpoint { scene, body };
    write(path, &ck.to_bytes())
}

fn summary(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
}
