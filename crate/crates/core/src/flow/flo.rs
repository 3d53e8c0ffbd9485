//! Middlebury `.flo` files and the standard flow color wheel.

use std::path::Path;

use super::{is_valid_flow, FlowError, FlowMap, FlowUnits, INVALID_FLOW};
use crate::render::encode_png_rgb8;

pub const FLO_MAGIC: f32 = 202021.25;

fn io_err(path: &Path, source: std::io::Error) -> FlowError {
    FlowError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize as `.flo`: magic, width, height, then interleaved float32 `(u, v)`.
pub fn encode_flo(f: &FlowMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * f.data.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(f.width as i32).to_le_bytes());
    out.extend_from_slice(&(f.height as i32).to_le_bytes());
    for v in &f.data {
        out.extend_from_slice(&(v[0] as f32).to_le_bytes());
        out.extend_from_slice(&(v[1] as f32).to_le_bytes());
    }
    out
}

/// Parse a `.flo` payload. Values are pixel displacements.
pub fn decode_flo(bytes: &[u8]) -> Result<FlowMap, FlowError> {
    if bytes.len() < 12 {
        return Err(FlowError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let word = |k: usize| {
        [
            bytes[4 * k],
            bytes[4 * k + 1],
            bytes[4 * k + 2],
            bytes[4 * k + 3],
        ]
    };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(FlowError::BadMagic(magic));
    }
    let w = i32::from_le_bytes(word(1));
    let h = i32::from_le_bytes(word(2));
    if w <= 0 || h <= 0 {
        return Err(FlowError::DimensionMismatch(
            w.max(0) as usize,
            h.max(0) as usize,
            0,
            0,
        ));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() < expected {
        return Err(FlowError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let data = (0..w * h)
        .map(|p| {
            let u = f32::from_le_bytes(word(3 + 2 * p)) as f64;
            let v = f32::from_le_bytes(word(4 + 2 * p)) as f64;
            if is_valid_flow([u, v]) {
                [u, v]
            } else {
                [INVALID_FLOW; 2]
            }
        })
        .collect();
    Ok(FlowMap::new(w, h, FlowUnits::Pixels, data))
}

pub fn write_flo(path: impl AsRef<Path>, f: &FlowMap) -> Result<(), FlowError> {
    let path = path.as_ref();
    std::fs::write(path, encode_flo(f)).map_err(|e| io_err(path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowMap, FlowError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_flo(&bytes)
}

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(RY + YG + GC + CB + BM + MR);
    for i in 0..RY {
        wheel.push([255.0, (255 * i / RY) as f64, 0.0]);
    }
    for i in 0..YG {
        wheel.push([(255 - 255 * i / YG) as f64, 255.0, 0.0]);
    }
    for i in 0..GC {
        wheel.push([0.0, 255.0, (255 * i / GC) as f64]);
    }
    for i in 0..CB {
        wheel.push([0.0, (255 - 255 * i / CB) as f64, 255.0]);
    }
    for i in 0..BM {
        wheel.push([(255 * i / BM) as f64, 0.0, 255.0]);
    }
    for i in 0..MR {
        wheel.push([255.0, 0.0, (255 - 255 * i / MR) as f64]);
    }
    wheel
}

/// 8-bit RGB visualization with the Middlebury color wheel. Magnitudes are
/// normalized by the largest valid magnitude; invalid pixels are black.
pub fn flow_to_color(f: &FlowMap) -> Vec<u8> {
    let wheel = color_wheel();
    let ncols = wheel.len();
    let max_rad = f.max_magnitude().max(1e-12);
    let mut out = Vec::with_capacity(3 * f.data.len());
    for v in &f.data {
        if !is_valid_flow(*v) {
            out.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let (u, w) = (v[0] / max_rad, v[1] / max_rad);
        let rad = u.hypot(w);
        let a = (-w).atan2(-u) / std::f64::consts::PI;
        let fk = (a + 1.0) / 2.0 * (ncols - 1) as f64;
        let k0 = fk.floor() as usize % ncols;
        let k1 = (k0 + 1) % ncols;
        let frac = fk - fk.floor();
        for c in 0..3 {
            let col = ((1.0 - frac) * wheel[k0][c] + frac * wheel[k1][c]) / 255.0;
            let col = if rad <= 1.0 {
                1.0 - rad * (1.0 - col)
            } else {
                col * 0.75
            };
            out.push((255.0 * col).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn write_flow_png(path: impl AsRef<Path>, f: &FlowMap) -> Result<(), FlowError> {
    let path = path.as_ref();
    std::fs::write(path, encode_png_rgb8(f.width, f.height, &flow_to_color(f)))
        .map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_one_file_size() {
        let f = FlowMap::new(2, 1, FlowUnits::Pixels, vec![[1.0, 0.0], [0.0, 1.0]]);
        let bytes = encode_flo(&f);
        assert_eq!(bytes.len(), 12 + 16);
        assert_eq!(decode_flo(&bytes).unwrap(), f);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let f = FlowMap::zeros(2, 2, FlowUnits::Pixels);
        let mut bytes = encode_flo(&f);
        let short = bytes[..bytes.len() - 1].to_vec();
        assert!(matches!(
            decode_flo(&short),
            Err(FlowError::Truncated { .. })
        ));
        bytes[..4].copy_from_slice(&0.0f32.to_le_bytes());
        assert!(matches!(decode_flo(&bytes), Err(FlowError::BadMagic(m)) if m == 0.0));
    }

    proptest! {
        #[test]
        fn write_read_round_trip(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<[f64; 2]> = (0..w * h)
                .map(|_| [rng.gen_range(-50.0f32..50.0) as f64, rng.gen_range(-50.0f32..50.0) as f64])
                .collect();
            let f = FlowMap::new(w, h, FlowUnits::Pixels, data);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("f.flo");
            write_flo(&path, &f).unwrap();
            prop_assert_eq!(read_flo(&path).unwrap(), f);
        }
    }

    #[test]
    fn color_wheel_has_55_entries_and_zero_is_white() {
        assert_eq!(color_wheel().len(), 55);
        let f = FlowMap::new(2, 1, FlowUnits::Pixels, vec![[0.0, 0.0], [1.0, 0.0]]);
        let rgb = flow_to_color(&f);
        assert_eq!(&rgb[..3], &[255, 255, 255]);
    }
}
