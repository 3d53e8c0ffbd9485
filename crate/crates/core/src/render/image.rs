use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::RenderError;

/// Linear RGB image with components nominally in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

fn io_err(path: &Path, source: std::io::Error) -> RenderError {
    RenderError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer size");
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        RgbImage::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// 8-bit sRGB-agnostic quantization: `round(255 · clamp(v, 0, 1))`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn encode_png(&self) -> Vec<u8> {
        encode_png_rgb8(self.width, self.height, &self.to_rgb8())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_png()).map_err(|e| io_err(path, e))
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage, RenderError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        decode_png(&bytes)
    }
}

pub fn encode_png_rgb8(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(rgb).expect("in-memory PNG data");
    }
    out
}

/// Decode an 8-bit RGB or RGBA PNG (alpha is dropped).
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, RenderError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| RenderError::Format(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| RenderError::Format(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::Format("only 8-bit PNG is supported".into()));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(RenderError::Format(format!(
                "unsupported PNG color type {other:?}"
            )))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let data = buf[..w * h * channels]
        .chunks_exact(channels)
        .map(|p| {
            [
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            ]
        })
        .collect();
    Ok(RgbImage::new(w, h, data))
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> f64 {
    assert!(a.same_size(b), "image size mismatch");
    let n = (a.data.len() * 3) as f64;
    a.data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n
}

/// `10 log10(1 / MSE)` for unit-range images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    -10.0 * mse(a, b).log10()
}

/// Single-channel PFM (`Pf`, little-endian, rows stored bottom to top).
pub fn write_pfm(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    values: &[f64],
) -> Result<(), RenderError> {
    let path = path.as_ref();
    assert_eq!(values.len(), width * height);
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for v in &values[y * width..(y + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&out).map_err(|e| io_err(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>), RenderError> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<std::fs::File>| -> Result<String, RenderError> {
        line.clear();
        r.read_line(&mut line).map_err(|e| io_err(path, e))?;
        Ok(line.trim().to_string())
    };
    if next_line(&mut r)? != "Pf" {
        return Err(RenderError::Format("expected single-channel PFM".into()));
    }
    let dims = next_line(&mut r)?;
    let mut it = dims.split_whitespace().map(|t| t.parse::<usize>());
    let (Some(Ok(w)), Some(Ok(h))) = (it.next(), it.next()) else {
        return Err(RenderError::Format("bad PFM dimensions".into()));
    };
    let scale: f64 = next_line(&mut r)?
        .parse()
        .map_err(|_| RenderError::Format("bad PFM scale".into()))?;
    let mut raw = vec![0u8; w * h * 4];
    r.read_exact(&mut raw).map_err(|e| io_err(path, e))?;
    let mut values = vec![0.0; w * h];
    for (k, c) in raw.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, col) = (h - 1 - k / w, k % w);
        values[row * w + col] = v as f64;
    }
    Ok((w, h, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantized() {
        let img = RgbImage::new(3, 2, (0..6).map(|i| [i as f64 / 5.0, 1.0, 0.0]).collect());
        let back = decode_png(&img.encode_png()).unwrap();
        assert_eq!(back.width, 3);
        for (a, b) in img.data.iter().zip(&back.data) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let v: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        write_pfm(&p, 4, 3, &v).unwrap();
        let (w, h, back) = read_pfm(&p).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, v);
    }

    #[test]
    fn psnr_of_known_error() {
        let a = RgbImage::filled(4, 4, [0.5; 3]);
        let b = RgbImage::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
    }
}
