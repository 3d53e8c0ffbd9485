//! simulate, render, flow, discover, control and gradcheck.

use std::path::{Path, PathBuf};

use gsflow::control::{control_render, parse_command, AppliedControl, Checkpoint, CheckpointBody};
use gsflow::dataset::{load_poses, Sequence};
use gsflow::discovery::DiscoveryConfig;
use gsflow::flow::{
    binarize_flow, camera_flow, camera_velocity_from_poses, decompose_flow, read_flo,
    residual_term, write_flo, write_flow_png, FlowSign, FlowWeighting,
};
use gsflow::render::{encode_png_rgb8, render as render_scene, write_pfm};
use gsflow::scene::presets::{Preset, PresetKind};
use gsflow::scene::GaussianScene;
use gsflow::train::{gradcheck as run_gradcheck, DeformableResult, GradCheckComponent};
use serde_json::json;

use crate::args::*;
use crate::manifest::{beside, RunManifest};
use crate::view::{camera_from_args, camera_or_orbit, load_any_scene, load_controllable};
use crate::{CliError, CliResult};

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(d) => std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e)),
        None => Ok(()),
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

pub fn simulate(cli: &Cli, g: &GlobalArgs, a: &SimulateArgs) -> CliResult<()> {
    let kind = match a.preset {
        PresetArg::Static => PresetKind::Static,
        PresetArg::OneObject => PresetKind::OneObject,
        PresetArg::TwoObjects => PresetKind::TwoObjects,
    };
    let mut preset = Preset::new(kind);
    if let Some(n) = a.frames {
        if n < 2 {
            return Err(CliError::Usage("--frames must be at least 2".into()));
        }
        preset.frame_count = n;
    }
    let outs: Vec<PathBuf> = ["scene.json", "poses.json", "frames", "flows"]
        .iter()
        .map(|s| a.out.join(s))
        .collect();
    let out_refs: Vec<&Path> = outs.iter().map(|p| p.as_path()).collect();
    RunManifest::new(cli, &[], &out_refs)?
        .write(g.manifest.as_deref(), Some(&a.out.join("manifest.json")))?;
    let seq = Sequence::simulate(&preset)?;
    seq.save(&a.out)?;
    log::info!(
        "wrote {} frames of preset {} to {}",
        seq.len(),
        kind.name(),
        a.out.display()
    );
    Ok(())
}

pub fn render_cmd_camera(a: &CameraArgs) -> CliResult<(gsflow::scene::Camera, Option<f64>)> {
    camera_from_args(a)?
        .ok_or_else(|| CliError::Usage("a camera is required: pass --camera or --poses".into()))
}

pub fn render(cli: &Cli, g: &GlobalArgs, a: &RenderArgs) -> CliResult<()> {
    let (cam, frame_t) = render_cmd_camera(&a.camera)?;
    let mut inputs: Vec<&Path> = vec![&a.scene];
    inputs.extend(a.camera.camera.as_deref());
    inputs.extend(a.camera.poses.as_deref());
    let mut outputs: Vec<&Path> = vec![&a.out];
    outputs.extend(a.depth_out.as_deref());
    RunManifest::new(cli, &inputs, &outputs)?
        .write(g.manifest.as_deref(), Some(&beside(&a.out)))?;
    let t = a.t.or(frame_t).unwrap_or(0.0);
    let scene = load_any_scene(&a.scene)?.sample_at(t)?;
    let b = render_scene(&scene, &cam)?;
    create_parent(&a.out)?;
    b.color_image().write_png(&a.out)?;
    if let Some(d) = &a.depth_out {
        create_parent(d)?;
        write_pfm(d, b.width, b.height, &b.depth)?;
    }
    Ok(())
}

/// The last run of digits in the file stem, e.g. 7 for `flow_0007.flo`.
fn frame_from_name(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let end = stem.rfind(|c: char| c.is_ascii_digit())? + 1;
    let start = stem[..end]
        .rfind(|c: char| !c.is_ascii_digit())
        .map_or(0, |i| i + 1);
    stem[start..end].parse().ok()
}

fn default_prefix(u: &Path) -> String {
    let stem = u.file_stem().and_then(|s| s.to_str()).unwrap_or("flow");
    u.with_file_name(format!("{stem}_")).display().to_string()
}

pub fn flow(cli: &Cli, g: &GlobalArgs, a: &FlowArgs) -> CliResult<()> {
    let f = match a.frame.or_else(|| frame_from_name(&a.u)) {
        Some(f) => f,
        None => {
            return Err(CliError::Usage(
                "cannot infer the frame index from --u; pass --frame".into(),
            ))
        }
    };
    if !(a.tau >= 0.0) {
        return Err(CliError::Usage(format!(
            "--tau {} must be non-negative",
            a.tau
        )));
    }
    let scene_path = match &a.scene {
        Some(p) => p.clone(),
        None => a.poses.with_file_name("scene.json"),
    };
    let prefix = a.out_prefix.clone().unwrap_or_else(|| default_prefix(&a.u));
    let names = [
        "cam.flo",
        "gs.flo",
        "residual.flo",
        "u.png",
        "cam.png",
        "gs.png",
        "residual.png",
        "dynamic_mask.png",
    ];
    let outs: Vec<PathBuf> = names
        .iter()
        .map(|n| PathBuf::from(format!("{prefix}{n}")))
        .collect();
    let out_refs: Vec<&Path> = outs.iter().map(|p| p.as_path()).collect();
    RunManifest::new(cli, &[&a.u, &a.poses, &scene_path], &out_refs)?.write(
        g.manifest.as_deref(),
        Some(Path::new(&format!("{prefix}manifest.json"))),
    )?;

    let poses = load_poses(&a.poses)?;
    if f + 1 >= poses.frames.len() {
        return Err(CliError::Invalid(format!(
            "frame {f} has no successor in {} ({} frames)",
            a.poses.display(),
            poses.frames.len()
        )));
    }
    let (r0, r1) = (&poses.frames[f], &poses.frames[f + 1]);
    let dt = a.dt.unwrap_or(r1.t - r0.t);
    let sign = match a.flow_sign {
        SignArg::Plus => FlowSign::Positive,
        SignArg::Minus => FlowSign::Negative,
    };
    let vel = sign.apply(camera_velocity_from_poses(&r0.pose, &r1.pose, dt)?);
    let u = read_flo(&a.u)?;
    let intr = poses.intrinsics;
    if u.width != intr.width || u.height != intr.height {
        return Err(CliError::Invalid(format!(
            "flow is {}x{}, intrinsics say {}x{}",
            u.width, u.height, intr.width, intr.height
        )));
    }
    let scene = load_any_scene(&scene_path)?.sample_at(r0.t)?;
    let cam = gsflow::scene::Camera {
        intrinsics: intr,
        pose: r0.pose,
        velocity: Some(vel),
    };
    let buffers = render_scene(&scene, &cam)?;
    let cam_flow = camera_flow(&vel, &buffers.depth, &intr).flow;
    let delta = residual_term(&buffers, &intr, &vel, FlowWeighting::Normalized)?;
    let d = decompose_flow(&u.to_rate(dt)?, &cam_flow, &delta)?;
    let (u_cam, u_gs, res) = (
        d.u_cam.to_displacement(dt)?,
        d.u_gs.to_displacement(dt)?,
        d.delta.to_displacement(dt)?,
    );
    let mask = binarize_flow(&u_gs, a.tau);

    if let Some(p) = outs.first() {
        create_parent(p)?;
    }
    write_flo(&outs[0], &u_cam)?;
    write_flo(&outs[1], &u_gs)?;
    write_flo(&outs[2], &res)?;
    write_flow_png(&outs[3], &u)?;
    write_flow_png(&outs[4], &u_cam)?;
    write_flow_png(&outs[5], &u_gs)?;
    write_flow_png(&outs[6], &res)?;
    let gray: Vec<u8> = mask
        .data
        .iter()
        .flat_map(|&m| [if m { 255 } else { 0 }; 3])
        .collect();
    write_bytes(&outs[7], &encode_png_rgb8(mask.width, mask.height, &gray))?;
    print_json(&json!({
        "frame": f,
        "dt": dt,
        "closure_error_px": d.closure_error() * dt,
        "max_camera_flow_px": u_cam.max_magnitude(),
        "max_dynamic_flow_px": u_gs.max_magnitude(),
        "max_residual_px": res.max_magnitude(),
        "dynamic_pixels": mask.count(),
        "outputs": outs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    }));
    Ok(())
}

pub fn discover(cli: &Cli, g: &GlobalArgs, a: &DiscoverArgs) -> CliResult<()> {
    let mut inputs: Vec<&Path> = vec![&a.frames];
    inputs.extend(a.scene.as_deref());
    inputs.extend(a.checkpoint.as_deref());
    RunManifest::new(cli, &inputs, &[&a.out])?
        .write(g.manifest.as_deref(), Some(&beside(&a.out)))?;
    if !(a.tau >= 0.0) || !(0.0..=1.0).contains(&a.theta) {
        return Err(CliError::Usage(
            "--tau must be non-negative and --theta in [0, 1]".into(),
        ));
    }
    let seq = Sequence::load(&a.frames)?;
    if seq.flows.is_empty() {
        return Err(CliError::Invalid(format!(
            "{} has no flows",
            a.frames.display()
        )));
    }
    let states: Vec<GaussianScene> = match &a.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let CheckpointBody::Deformable(model) = ck.body else {
                return Err(CliError::Invalid(format!(
                    "{} is not a deformable checkpoint",
                    p.display()
                )));
            };
            let stage = DeformableResult {
                scene: ck.scene,
                model,
                metrics: Vec::new(),
            };
            seq.times()
                .iter()
                .map(|&t| stage.scene_at(t))
                .collect::<Result<_, _>>()?
        }
        None => {
            let scene = match &a.scene {
                Some(p) => load_any_scene(p)?,
                None => seq.scene.clone().ok_or_else(|| {
                    CliError::Usage("no scene.json in the run directory; pass --scene".into())
                })?,
            };
            seq.times()
                .iter()
                .map(|&t| scene.sample_at(t))
                .collect::<Result<_, _>>()?
        }
    };
    let cfg = DiscoveryConfig {
        min_weight: a.min_weight,
        theta: a.theta,
        min_samples: a.min_samples,
        min_cluster_size: a.min_cluster_size,
        epsilon: a.epsilon,
    };
    let found = seq.discover_states(&states, a.tau, &cfg)?;
    create_parent(&a.out)?;
    found.clusters_file().save(&a.out)?;
    print_json(&json!({
        "dynamic": found.dynamic.len(),
        "clusters": found.trajectories.iter().map(|t| json!({"id": t.cluster, "members": t.members.len()})).collect::<Vec<_>>(),
        "noise": found.noise().len(),
        "out": a.out.display().to_string(),
    }));
    Ok(())
}

pub fn applied_json(applied: &[AppliedControl]) -> serde_json::Value {
    applied
        .iter()
        .map(|a| {
            json!({
                "k": a.cluster,
                "v_query": a.query,
                "v_snapped": a.state.snapped,
                "t_star": a.state.t,
                "sample": a.state.sample,
                "gap": a.state.distance,
            })
        })
        .collect()
}

pub fn control(cli: &Cli, g: &GlobalArgs, a: &ControlArgs) -> CliResult<()> {
    let commands = a
        .commands
        .iter()
        .map(|c| parse_command(c).map_err(|e| CliError::Usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let mut inputs: Vec<&Path> = vec![&a.checkpoint];
    inputs.extend(a.clusters.as_deref());
    inputs.extend(a.camera.camera.as_deref());
    inputs.extend(a.camera.poses.as_deref());
    RunManifest::new(cli, &inputs, &[&a.out])?
        .write(g.manifest.as_deref(), Some(&beside(&a.out)))?;
    let (scene, rig) = load_controllable(&a.checkpoint, a.clusters.as_deref())?;
    let cam = camera_or_orbit(&a.camera, &scene)?;
    let (img, applied) = control_render(&scene, &rig, &commands, &cam)?;
    create_parent(&a.out)?;
    img.write_png(&a.out)?;
    print_json(&json!({ "applied": applied_json(&applied), "out": a.out.display().to_string() }));
    Ok(())
}

pub fn gradcheck(cli: &Cli, g: &GlobalArgs, a: &GradcheckArgs) -> CliResult<()> {
    let outputs: Vec<&Path> = a.out.iter().map(|p| p.as_path()).collect();
    let default = a.out.as_deref().map(beside);
    RunManifest::new(cli, &[], &outputs)?.write(g.manifest.as_deref(), default.as_deref())?;
    let components: Vec<GradCheckComponent> = match a.component {
        ComponentArg::Quadratic => vec![GradCheckComponent::Quadratic],
        ComponentArg::Deformable => vec![GradCheckComponent::Deformable],
        ComponentArg::Controllable => vec![GradCheckComponent::Controllable],
        ComponentArg::All => GradCheckComponent::ALL.to_vec(),
    };
    let reports = components
        .into_iter()
        .map(|c| run_gradcheck(c, a.h))
        .collect::<Result<Vec<_>, _>>()?;
    let pass = reports.iter().all(|r| r.passes(a.tolerance));
    let text = serde_json::to_string_pretty(
        &json!({ "tolerance": a.tolerance, "pass": pass, "reports": reports }),
    )
    .expect("json");
    println!("{text}");
    if let Some(p) = &a.out {
        create_parent(p)?;
        write_bytes(p, text.as_bytes())?;
    }
    if !pass {
        return Err(CliError::Failed(format!(
            "gradient check exceeds tolerance {}",
            a.tolerance
        )));
    }
    Ok(())
}
