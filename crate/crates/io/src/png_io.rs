//! 8-bit RGB images and 16-bit depth maps as PNG.
//!
//! Depth is stored as integer multiples of a scale (metres per unit, 0.001 by
//! default) recorded in a JSON sidecar next to the image; zero means no
//! measurement.

use std::path::{Path, PathBuf};

use jga_core::{DepthMap, Image};
use png::{BitDepth, ColorType, Transformations};
use serde::{Deserialize, Serialize};

use crate::config::{parse_json, to_json_pretty};
use crate::{read_file, write_file, IoError};

pub const DEFAULT_DEPTH_SCALE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSidecar {
    /// World units per stored integer step.
    pub scale: f64,
}

impl Default for DepthSidecar {
    fn default() -> Self {
        Self {
            scale: DEFAULT_DEPTH_SCALE,
        }
    }
}

fn png_err(e: impl std::fmt::Display) -> IoError {
    IoError::Png(e.to_string())
}

fn encode(width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
    }
    Ok(out)
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(bytes: &[u8]) -> Result<Decoded, IoError> {
    let mut dec = png::Decoder::new(bytes);
    dec.set_transformations(Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut data = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut data).map_err(png_err)?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

/// Quantizes to 8 bits after clamping into `[0, 1]`.
pub fn encode_rgb(img: &Image) -> Result<Vec<u8>, IoError> {
    if img.channels != 3 {
        return Err(IoError::Png(format!(
            "RGB PNG needs 3 channels, image has {}",
            img.channels
        )));
    }
    let data: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode(img.width, img.height, ColorType::Rgb, BitDepth::Eight, &data)
}

/// Decodes 8-bit gray, RGB or RGBA (alpha dropped) into an RGB image.
pub fn decode_rgb(bytes: &[u8]) -> Result<Image, IoError> {
    let d = decode(bytes)?;
    if d.depth != BitDepth::Eight {
        return Err(IoError::Png(format!("expected 8-bit color, got {:?}", d.depth)));
    }
    let src = match d.color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        other => return Err(IoError::Png(format!("unsupported color type {other:?}"))),
    };
    let mut data = Vec::with_capacity(d.width * d.height * 3);
    for px in d.data.chunks_exact(src) {
        if src < 3 {
            data.extend([px[0] as f64 / 255.0; 3]);
        } else {
            data.extend(px[..3].iter().map(|v| *v as f64 / 255.0));
        }
    }
    Ok(Image::new(d.width, d.height, 3, data)?)
}

/// Quantizes depth to 16-bit integers of `scale` world units.
pub fn depth_to_u16(depth: &DepthMap, scale: f64) -> Vec<u16> {
    depth
        .data
        .iter()
        .map(|d| (d / scale).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect()
}

pub fn encode_depth_u16(width: usize, height: usize, values: &[u16]) -> Result<Vec<u8>, IoError> {
    let data: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(width, height, ColorType::Grayscale, BitDepth::Sixteen, &data)
}

pub fn decode_depth_u16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), IoError> {
    let d = decode(bytes)?;
    if d.color != ColorType::Grayscale || d.depth != BitDepth::Sixteen {
        return Err(IoError::Png(format!(
            "depth PNG must be 16-bit grayscale, got {:?} {:?}",
            d.color, d.depth
        )));
    }
    let values = d
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((d.width, d.height, values))
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

pub fn read_rgb_png(path: &Path) -> Result<Image, IoError> {
    decode_rgb(&read_file(path)?)
}

pub fn write_rgb_png(path: &Path, img: &Image) -> Result<(), IoError> {
    write_file(path, &encode_rgb(img)?)
}

/// Writes the depth PNG and its scale sidecar.
pub fn write_depth_png(path: &Path, depth: &DepthMap, sidecar: DepthSidecar) -> Result<(), IoError> {
    let values = depth_to_u16(depth, sidecar.scale);
    write_file(path, &encode_depth_u16(depth.width, depth.height, &values)?)?;
    write_file(&sidecar_path(path), &to_json_pretty(&sidecar))
}

/// Reads a depth PNG, using the sidecar scale when present.
pub fn read_depth_png(path: &Path) -> Result<DepthMap, IoError> {
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        parse_json::<DepthSidecar>(&read_file(&side)?, &side.display().to_string())?
    } else {
        DepthSidecar::default()
    };
    if !(sidecar.scale > 0.0 && sidecar.scale.is_finite()) {
        return Err(IoError::Config {
            path: side.display().to_string(),
            message: "depth scale must be positive".into(),
        });
    }
    let (w, h, values) = decode_depth_u16(&read_file(path)?)?;
    Ok(DepthMap::new(
        w,
        h,
        values.iter().map(|v| *v as f64 * sidecar.scale).collect(),
    )?)
}
