//! Live control endpoint: one WebSocket per viewer at `/ws` plus static
//! viewer assets over HTTP.
//!
//! Client messages (JSON text):
//! * `{"type":"hello"}` → `{"type":"scene", ...}`
//! * `{"type":"control","k":K,"v":[x,y,z]}` → `{"type":"ack", k, v_query, v_snapped, t_star, gap, frame_id, states}`
//! * `{"type":"camera","yaw":deg,"pitch":deg,"radius":m}` → `{"type":"frame", frame_id, orbit, states}`
//!
//! Each ack or frame message is followed by a binary message holding the
//! frame id as 8 little-endian bytes and then the PNG. Control and camera
//! requests update the session at once but renders are coalesced: while one
//! render runs, newer requests replace older pending ones, so only the latest
//! state is acknowledged. Errors come back as `{"type":"error", message}` and
//! leave the session unchanged.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use gsflow::control::{control_render, AppliedControl, ControlRig, ControlVector};
use gsflow::scene::presets::default_intrinsics;
use gsflow::scene::{Camera, GaussianScene};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::{mpsc, Notify};
use tower_http::services::ServeDir;

use crate::args::{Cli, GlobalArgs, ServeArgs};
use crate::commands::applied_json;
use crate::manifest::RunManifest;
use crate::view::{aabb_center, camera_from_args, default_orbit, load_controllable, Orbit};
use crate::{CliError, CliResult};

const CACHE_LIMIT: usize = 256;

const INDEX_HTML: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>gsflow</title></head>
<body>
<p id="status">connecting</p>
<img id="frame" width="384" style="image-rendering: pixelated">
<pre id="scene"></pre>
<script>
const ws = new WebSocket(`ws://${location.host}/ws`);
ws.binaryType = "arraybuffer";
ws.onopen = () => { document.getElementById("status").textContent = "connected"; ws.send(JSON.stringify({type: "hello"})); };
ws.onclose = () => { document.getElementById("status").textContent = "disconnected"; };
ws.onmessage = (e) => {
  if (typeof e.data === "string") {
    const m = JSON.parse(e.data);
    if (m.type === "scene") document.getElementById("scene").textContent = JSON.stringify(m.clusters.map(c => ({id: c.id, samples: c.trajectory.length})));
    return;
  }
  const png = new Blob([e.data.slice(8)], {type: "image/png"});
  document.getElementById("frame").src = URL.createObjectURL(png);
};
</script>
</body></html>
"#;

/// Everything a session renders from; shared by all connections.
pub struct ServeContext {
    pub scene: GaussianScene,
    pub rig: ControlRig,
    pub initial_camera: Camera,
    pub initial_orbit: Orbit,
    /// Orbit target: center of the scene's bounding box.
    pub target: [f64; 3],
    cache: Mutex<HashMap<u64, Arc<Vec<u8>>>>,
}

impl ServeContext {
    /// `camera` overrides the default orbit as the starting view.
    pub fn new(scene: GaussianScene, rig: ControlRig, camera: Option<Camera>) -> Arc<Self> {
        let target = aabb_center(&scene);
        let initial_orbit = default_orbit(&scene);
        let initial_camera =
            camera.unwrap_or_else(|| initial_orbit.camera(target, default_intrinsics()));
        Arc::new(ServeContext {
            scene,
            rig,
            initial_camera,
            initial_orbit,
            target,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn scene_message(&self) -> serde_json::Value {
        let clusters: Vec<_> = self
            .rig
            .trajectories
            .iter()
            .map(|tr| {
                let vs: Vec<[f64; 3]> = (0..tr.samples.len()).map(|j| tr.control_vector(j)).collect();
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for v in &vs {
                    for k in 0..3 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                json!({
                    "id": tr.cluster,
                    "members": tr.members.len(),
                    "trajectory": tr.samples.iter().map(|s| [s.t, s.center[0], s.center[1], s.center[2]]).collect::<Vec<_>>(),
                    "control_vectors": vs,
                    "extent": { "min": lo, "max": hi },
                })
            })
            .collect();
        let intr = self.initial_camera.intrinsics;
        json!({
            "type": "scene",
            "clusters": clusters,
            "gaussians": self.scene.len(),
            "width": intr.width,
            "height": intr.height,
            "orbit": self.initial_orbit,
            "target": self.target,
        })
    }

    /// Render for a camera and per-slot queries; the frame id hashes the
    /// camera and the snapped states, so equal inputs share a cached PNG.
    pub fn render(
        &self,
        camera: &Camera,
        queries: &[Option<[f64; 3]>],
    ) -> CliResult<(Vec<AppliedControl>, u64, Arc<Vec<u8>>)> {
        let commands: Vec<ControlVector> = queries
            .iter()
            .zip(&self.rig.trajectories)
            .filter_map(|(q, tr)| {
                q.map(|v| ControlVector {
                    cluster: tr.cluster,
                    v,
                })
            })
            .collect();
        let applied = self.rig.resolve(&commands)?;
        let id = frame_id(camera, &applied);
        if let Some(png) = self.cache.lock().unwrap().get(&id) {
            return Ok((applied, id, png.clone()));
        }
        let (img, _) = control_render(&self.scene, &self.rig, &commands, camera)?;
        let png = Arc::new(img.encode_png());
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(id, png.clone());
        Ok((applied, id, png))
    }
}

pub fn frame_id(camera: &Camera, applied: &[AppliedControl]) -> u64 {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(camera).expect("camera serializes"));
    for a in applied {
        h.update((a.cluster as u64).to_le_bytes());
        h.update((a.state.sample as u64).to_le_bytes());
        for c in a.state.snapped {
            h.update(c.to_le_bytes());
        }
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Binary frame payload: frame id (u64 LE) followed by the PNG.
pub fn frame_payload(id: u64, png: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + png.len());
    out.extend_from_slice(&id.to_le_bytes());
    out.extend_from_slice(png);
    out
}

pub fn format_frame_id(id: u64) -> String {
    format!("{id:016x}")
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMessage {
    Hello,
    Control { k: usize, v: [f64; 3] },
    Camera { yaw: f64, pitch: f64, radius: f64 },
}

#[derive(Debug, Clone, Copy)]
enum Trigger {
    Control { k: usize, v: [f64; 3] },
    Camera,
}

struct Session {
    queries: Vec<Option<[f64; 3]>>,
    camera: Camera,
    orbit: Orbit,
    pending: Option<Trigger>,
    closed: bool,
}

pub fn router(ctx: Arc<ServeContext>, assets: Option<PathBuf>) -> Router {
    let app = Router::new().route("/ws", get(ws_handler));
    let app = match assets {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(INDEX_HTML) })),
    };
    app.with_state(ctx)
}

async fn ws_handler(
    ws: WebSocketUpgrade,
    State(ctx): State<Arc<ServeContext>>,
) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session(socket, ctx))
}

fn error_message(message: impl Into<String>) -> Message {
    Message::Text(
        json!({ "type": "error", "message": message.into() })
            .to_string()
            .into(),
    )
}

async fn session(socket: WebSocket, ctx: Arc<ServeContext>) {
    let (mut sink, mut stream) = socket.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            if sink.send(m).await.is_err() {
                break;
            }
        }
    });
    let state = Arc::new(Mutex::new(Session {
        queries: vec![None; ctx.rig.cluster_count()],
        camera: ctx.initial_camera,
        orbit: ctx.initial_orbit,
        pending: None,
        closed: false,
    }));
    let wake = Arc::new(Notify::new());
    let worker = tokio::spawn(render_worker(
        ctx.clone(),
        state.clone(),
        wake.clone(),
        out_tx.clone(),
    ));

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let parsed: ClientMessage = match serde_json::from_str(text.as_str()) {
            Ok(m) => m,
            Err(e) => {
                let _ = out_tx.send(error_message(format!("bad message: {e}")));
                continue;
            }
        };
        match parsed {
            ClientMessage::Hello => {
                let _ = out_tx.send(Message::Text(ctx.scene_message().to_string().into()));
            }
            ClientMessage::Control { k, v } => {
                let slot = match ctx.rig.slot_of(k) {
                    Ok(s) => s,
                    Err(e) => {
                        let _ = out_tx.send(error_message(e.to_string()));
                        continue;
                    }
                };
                if !v.iter().all(|c| c.is_finite()) {
                    let _ = out_tx.send(error_message(format!(
                        "control vector for cluster {k} is not finite"
                    )));
                    continue;
                }
                let mut s = state.lock().unwrap();
                s.queries[slot] = Some(v);
                s.pending = Some(Trigger::Control { k, v });
                drop(s);
                wake.notify_one();
            }
            ClientMessage::Camera { yaw, pitch, radius } => {
                if ![yaw, pitch, radius].iter().all(|c| c.is_finite()) {
                    let _ = out_tx.send(error_message("orbit parameters must be finite"));
                    continue;
                }
                let orbit = Orbit { yaw, pitch, radius }.clamped();
                let intr = ctx.initial_camera.intrinsics;
                let mut s = state.lock().unwrap();
                s.orbit = orbit;
                s.camera = orbit.camera(ctx.target, intr);
                s.pending = Some(Trigger::Camera);
                drop(s);
                wake.notify_one();
            }
        }
    }
    state.lock().unwrap().closed = true;
    wake.notify_one();
    let _ = worker.await;
    drop(out_tx);
    let _ = writer.await;
}

async fn render_worker(
    ctx: Arc<ServeContext>,
    state: Arc<Mutex<Session>>,
    wake: Arc<Notify>,
    out: mpsc::UnboundedSender<Message>,
) {
    loop {
        wake.notified().await;
        let (trigger, camera, queries, orbit) = {
            let mut s = state.lock().unwrap();
            if s.closed {
                return;
            }
            match s.pending.take() {
                Some(t) => (t, s.camera, s.queries.clone(), s.orbit),
                None => continue,
            }
        };
        let c = ctx.clone();
        let result = tokio::task::spawn_blocking(move || c.render(&camera, &queries)).await;
        let (applied, id, png) = match result {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => {
                let _ = out.send(error_message(e.to_string()));
                continue;
            }
            Err(e) => {
                let _ = out.send(error_message(format!("render task failed: {e}")));
                continue;
            }
        };
        let states = applied_json(&applied);
        let text = match trigger {
            Trigger::Control { k, v } => {
                let a = applied
                    .iter()
                    .find(|a| a.cluster == k)
                    .expect("acknowledged cluster is resolved");
                json!({
                    "type": "ack",
                    "k": k,
                    "v_query": v,
                    "v_snapped": a.state.snapped,
                    "t_star": a.state.t,
                    "gap": a.state.distance,
                    "frame_id": format_frame_id(id),
                    "states": states,
                })
            }
            Trigger::Camera => json!({
                "type": "frame",
                "frame_id": format_frame_id(id),
                "orbit": orbit,
                "states": states,
            }),
        };
        if out.send(Message::Text(text.to_string().into())).is_err()
            || out
                .send(Message::Binary(frame_payload(id, &png).into()))
                .is_err()
        {
            return;
        }
    }
}

/// Bind and serve until the process ends.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    ctx: Arc<ServeContext>,
    assets: Option<PathBuf>,
) -> std::io::Result<()> {
    axum::serve(listener, router(ctx, assets)).await
}

fn check_assets(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "--assets {} is not a directory",
            dir.display()
        )))
    }
}

pub fn run(cli: &Cli, g: &GlobalArgs, a: &ServeArgs) -> CliResult<()> {
    let mut inputs: Vec<&Path> = vec![&a.checkpoint];
    inputs.extend(a.clusters.as_deref());
    inputs.extend(a.camera.camera.as_deref());
    inputs.extend(a.camera.poses.as_deref());
    RunManifest::new(cli, &inputs, &[])?.write(g.manifest.as_deref(), None)?;
    if let Some(d) = &a.assets {
        check_assets(d)?;
    }
    let (scene, rig) = load_controllable(&a.checkpoint, a.clusters.as_deref())?;
    let camera = camera_from_args(&a.camera)?.map(|(c, _)| c);
    let ctx = ServeContext::new(scene, rig, camera);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start runtime: {e}")))?;
    let addr: SocketAddr = a.addr;
    let assets = a.assets.clone();
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Failed(format!("cannot bind {addr}: {e}")))?;
        log::info!(
            "serving on http://{}",
            listener
                .local_addr()
                .map_err(|e| CliError::Failed(e.to_string()))?
        );
        serve_on(listener, ctx, assets)
            .await
            .map_err(|e| CliError::Failed(format!("server error: {e}")))
    })
}
