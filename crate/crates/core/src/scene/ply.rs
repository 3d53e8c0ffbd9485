//! Binary little-endian PLY import/export in the layout used by trained
//! Gaussian-splatting checkpoints (pre-activation opacity and log-scales,
//! SH DC color band).

use std::io::Write;
use std::path::Path;

use super::{Gaussian3D, GaussianScene, SceneError};
use crate::math;

/// Zeroth-order real spherical harmonic, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_1;

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    "f_dc_0", "f_dc_1", "f_dc_2",
];

#[derive(Debug, Clone, Copy)]
enum PropType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PropType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => PropType::I8,
            "uchar" | "uint8" => PropType::U8,
            "short" | "int16" => PropType::I16,
            "ushort" | "uint16" => PropType::U16,
            "int" | "int32" => PropType::I32,
            "uint" | "uint32" => PropType::U32,
            "float" | "float32" => PropType::F32,
            "double" | "float64" => PropType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PropType::I8 | PropType::U8 => 1,
            PropType::I16 | PropType::U16 => 2,
            PropType::I32 | PropType::U32 | PropType::F32 => 4,
            PropType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            PropType::I8 => b[0] as i8 as f64,
            PropType::U8 => b[0] as f64,
            PropType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            PropType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            PropType::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PropType::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PropType::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PropType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

fn ply_err(msg: impl Into<String>) -> SceneError {
    SceneError::Ply(msg.into())
}

/// Read a splat PLY. Opacity goes through a sigmoid, scales through `exp`,
/// quaternions are normalized and colors are `clamp(0.5 + SH_C0 * f_dc, 0, 1)`.
pub fn import_splat_ply(path: impl AsRef<Path>) -> Result<GaussianScene, SceneError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_splat_ply(&bytes)
}

pub(crate) fn parse_splat_ply(bytes: &[u8]) -> Result<GaussianScene, SceneError> {
    if !bytes.starts_with(b"ply\n") {
        return Err(ply_err("missing `ply` magic"));
    }
    let marker = b"end_header\n";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| ply_err("missing end_header"))?
        + marker.len();
    let header =
        std::str::from_utf8(&bytes[..header_end]).map_err(|_| ply_err("header is not UTF-8"))?;

    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut vertex_is_first = true;
    let mut props: Vec<(String, PropType)> = Vec::new();
    for line in header.lines().skip(1) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(ply_err(format!("unsupported format `{fmt}`")));
                }
            }
            ["element", name, count] => {
                if *name == "vertex" {
                    if vertex_count.is_some() || !vertex_is_first {
                        return Err(ply_err("vertex must be the first element"));
                    }
                    vertex_count = Some(
                        count
                            .parse::<usize>()
                            .map_err(|_| ply_err("bad vertex count"))?,
                    );
                    in_vertex = true;
                } else {
                    if vertex_count.is_none() {
                        vertex_is_first = false;
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(ply_err("list properties on vertex unsupported"))
            }
            ["property", ty, name] if in_vertex => {
                let ty = PropType::parse(ty)
                    .ok_or_else(|| ply_err(format!("unknown property type `{ty}`")))?;
                props.push((name.to_string(), ty));
            }
            _ => {}
        }
    }
    let n = vertex_count.ok_or_else(|| ply_err("no vertex element"))?;
    let mut offsets = [0usize; REQUIRED.len()];
    let mut types = [PropType::F32; REQUIRED.len()];
    for (k, name) in REQUIRED.iter().enumerate() {
        let mut off = 0;
        let mut found = false;
        for (pname, ty) in &props {
            if pname == name {
                offsets[k] = off;
                types[k] = *ty;
                found = true;
                break;
            }
            off += ty.size();
        }
        if !found {
            return Err(ply_err(format!("missing vertex property `{name}`")));
        }
    }
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let body = &bytes[header_end..];
    if body.len() < n * stride {
        return Err(ply_err(format!(
            "truncated vertex data: need {} bytes, have {}",
            n * stride,
            body.len()
        )));
    }

    let mut gaussians = Vec::with_capacity(n);
    for i in 0..n {
        let rec = &body[i * stride..(i + 1) * stride];
        let v: [f64; REQUIRED.len()] = std::array::from_fn(|k| types[k].read(&rec[offsets[k]..]));
        let quat = [v[7], v[8], v[9], v[10]];
        let norm = math::quat_norm(quat);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(ply_err(format!("vertex {i} has a zero-norm quaternion")));
        }
        gaussians.push(Gaussian3D {
            center: [v[0], v[1], v[2]],
            scale: [v[4].exp(), v[5].exp(), v[6].exp()],
            quat: math::quat_normalize(quat),
            opacity: math::sigmoid(v[3]),
            color: [
                (0.5 + SH_C0 * v[11]).clamp(0.0, 1.0),
                (0.5 + SH_C0 * v[12]).clamp(0.0, 1.0),
                (0.5 + SH_C0 * v[13]).clamp(0.0, 1.0),
            ],
            velocity: None,
        });
    }
    Ok(GaussianScene::new(gaussians))
}

/// Write a scene in the same PLY layout (inverse activations, float32).
pub fn write_splat_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let io_err = |source| SceneError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        scene.gaussians.len()
    )
    .unwrap();
    for name in [
        "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    ] {
        writeln!(out, "property float {name}").unwrap();
    }
    for name in ["rot_0", "rot_1", "rot_2", "rot_3"] {
        writeln!(out, "property float {name}").unwrap();
    }
    out.extend_from_slice(b"end_header\n");
    for g in &scene.gaussians {
        let opacity = g.opacity.clamp(1e-6, 1.0 - 1e-6);
        let values = [
            g.center[0],
            g.center[1],
            g.center[2],
            (g.color[0] - 0.5) / SH_C0,
            (g.color[1] - 0.5) / SH_C0,
            (g.color[2] - 0.5) / SH_C0,
            math::logit(opacity),
            g.scale[0].ln(),
            g.scale[1].ln(),
            g.scale[2].ln(),
            g.quat[0],
            g.quat[1],
            g.quat[2],
            g.quat[3],
        ];
        for v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(io_err)
}
