//! Grid types shared by every stage, plus their on-disk encodings.
//!
//! Three formats are supported, all strict: a reader accepts exactly the
//! byte streams its writer emits.
//!
//! * PGM (`P5\n<w> <h>\n255\n` + `w*h` bytes) for 8-bit rasters and masks.
//!   Masks use the sample values 0 and 255.
//! * FRAS (`FRAS\n<w> <h> <scale>\n` + `w*h` little-endian `f32`) for
//!   activity maps.
//! * A JSON sidecar `<stem>.meta.json` carrying what PGM cannot: scanner
//!   resolution, map scale and slide dimensions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit slide pixels, row-major, one or three interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideRaster {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
    resolution_um_per_px: f64,
}

impl SlideRaster {
    pub fn new(
        width: u32,
        height: u32,
        channels: u8,
        pixels: Vec<u8>,
        resolution_um_per_px: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain(format!("raster dimensions {width}x{height} must be positive")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::domain(format!("raster channels must be 1 or 3, got {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(Error::domain(format!(
                "raster has {} samples, expected {expected}",
                pixels.len()
            )));
        }
        if !(resolution_um_per_px > 0.0 && resolution_um_per_px.is_finite()) {
            return Err(Error::domain(format!(
                "resolution must be positive, got {resolution_um_per_px}"
            )));
        }
        Ok(SlideRaster {
            width,
            height,
            channels,
            pixels,
            resolution_um_per_px,
        })
    }

    pub fn gray(width: u32, height: u32, pixels: Vec<u8>, resolution_um_per_px: f64) -> Result<Self> {
        Self::new(width, height, 1, pixels, resolution_um_per_px)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn resolution_um_per_px(&self) -> f64 {
        self.resolution_um_per_px
    }

    /// Sample `c` of pixel `(x, y)`.
    #[inline]
    pub fn sample(&self, x: u32, y: u32, c: u8) -> u8 {
        let idx = (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize;
        self.pixels[idx]
    }

    /// Pixel-center subsampling by an integer factor; see [`scaled_dim`] and
    /// [`sample_coord`]. The resolution is multiplied by the factor.
    pub fn downsample(&self, factor: u32) -> Result<SlideRaster> {
        if factor == 0 {
            return Err(Error::domain("downsample factor must be >= 1"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let w = scaled_dim(self.width, factor);
        let h = scaled_dim(self.height, factor);
        let ch = self.channels as usize;
        let mut out = Vec::with_capacity(w as usize * h as usize * ch);
        for y in 0..h {
            let sy = sample_coord(y, factor, self.height);
            for x in 0..w {
                let sx = sample_coord(x, factor, self.width);
                let base = (sy as usize * self.width as usize + sx as usize) * ch;
                out.extend_from_slice(&self.pixels[base..base + ch]);
            }
        }
        SlideRaster::new(w, h, self.channels, out, self.resolution_um_per_px * factor as f64)
    }
}

/// Per-pixel mitotic activity, row-major `f32`, stored at `1/scale` of the
/// slide's full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    width: u32,
    height: u32,
    scale: u32,
    values: Vec<f32>,
}

impl DensityMap {
    pub fn new(width: u32, height: u32, scale: u32, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain(format!("map dimensions {width}x{height} must be positive")));
        }
        if scale == 0 {
            return Err(Error::domain("map scale must be >= 1"));
        }
        if values.len() != width as usize * height as usize {
            return Err(Error::domain(format!(
                "map has {} values, expected {}",
                values.len(),
                width as usize * height as usize
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(format!(
                "map value {} at index {i} is not finite and non-negative",
                values[i]
            )));
        }
        Ok(DensityMap {
            width,
            height,
            scale,
            values,
        })
    }

    pub fn zeros(width: u32, height: u32, scale: u32) -> Result<Self> {
        Self::new(width, height, scale, vec![0.0; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }
}

/// Row-major 0/1 grid at `1/scale` resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    scale: u32,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, scale: u32, bits: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain(format!("mask dimensions {width}x{height} must be positive")));
        }
        if scale == 0 {
            return Err(Error::domain("mask scale must be >= 1"));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::domain(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                width as usize * height as usize
            )));
        }
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::domain(format!("mask bit {} at index {i} is not 0 or 1", bits[i])));
        }
        Ok(BinaryMask {
            width,
            height,
            scale,
            bits,
        })
    }

    pub fn filled(width: u32, height: u32, scale: u32, bit: bool) -> Result<Self> {
        Self::new(width, height, scale, vec![bit as u8; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] != 0
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }

    pub fn to_density(&self) -> DensityMap {
        DensityMap {
            width: self.width,
            height: self.height,
            scale: self.scale,
            values: self.bits.iter().map(|&b| b as f32).collect(),
        }
    }
}

/// Number of samples along an axis of `full` pixels after subsampling by
/// `scale`. Trailing partial blocks are dropped; never less than one.
pub fn scaled_dim(full: u32, scale: u32) -> u32 {
    (full / scale).max(1)
}

/// Full-resolution coordinate sampled for reduced-scale index `i`: the
/// center pixel of block `i`, clamped into the axis.
#[inline]
pub fn sample_coord(i: u32, scale: u32, full: u32) -> u32 {
    (i * scale + scale / 2).min(full - 1)
}

// ---------------------------------------------------------------------------
// PGM

const PGM: &str = "pgm";

pub fn encode_pgm(width: u32, height: u32, pixels: &[u8]) -> Vec<u8> {
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(pixels);
    out
}

/// Decodes a strict P5 stream into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let rest = bytes
        .strip_prefix(b"P5\n")
        .ok_or_else(|| Error::format(PGM, "magic", "expected `P5` followed by a newline"))?;
    let (width, rest) = take_decimal(rest, b' ', PGM, "width")?;
    let (height, rest) = take_decimal(rest, b'\n', PGM, "height")?;
    let (maxval, payload) = take_decimal(rest, b'\n', PGM, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(PGM, "maxval", format!("expected 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(PGM, "width", format!("dimensions {width}x{height} must be positive")));
    }
    let expected = width as u64 * height as u64;
    if (payload.len() as u64) < expected {
        return Err(Error::format(
            PGM,
            "payload",
            format!("truncated: {} bytes for {width}x{height}", payload.len()),
        ));
    }
    if payload.len() as u64 > expected {
        return Err(Error::format(
            PGM,
            "payload",
            format!("{} trailing bytes after {width}x{height} samples", payload.len() as u64 - expected),
        ));
    }
    Ok((width, height, payload.to_vec()))
}

/// Parses a canonical decimal (no sign, no leading zeros) terminated by `sep`.
fn take_decimal<'a>(
    bytes: &'a [u8],
    sep: u8,
    format: &'static str,
    field: &'static str,
) -> Result<(u32, &'a [u8])> {
    let end = bytes
        .iter()
        .take(11)
        .position(|&b| b == sep)
        .ok_or_else(|| Error::format(format, field, "missing or overlong value"))?;
    let digits = &bytes[..end];
    let canonical = !digits.is_empty()
        && digits.iter().all(u8::is_ascii_digit)
        && (digits.len() == 1 || digits[0] != b'0');
    if !canonical {
        return Err(Error::format(
            format,
            field,
            format!("`{}` is not a canonical decimal", String::from_utf8_lossy(digits)),
        ));
    }
    let value = std::str::from_utf8(digits)
        .ok()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| Error::format(format, field, "value out of range"))?;
    Ok((value, &bytes[end + 1..]))
}

/// Reads a P5 file as a single-channel raster with the given resolution.
pub fn read_pgm(path: &Path, resolution_um_per_px: f64) -> Result<SlideRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, pixels) = decode_pgm(&bytes)?;
    SlideRaster::gray(w, h, pixels, resolution_um_per_px)
}

pub fn write_pgm(raster: &SlideRaster, path: &Path) -> Result<()> {
    if raster.channels() != 1 {
        return Err(Error::format(
            PGM,
            "channels",
            format!("P5 holds one channel, raster has {}", raster.channels()),
        ));
    }
    write_atomic(path, &encode_pgm(raster.width(), raster.height(), raster.pixels()))
}

/// Reads a slide raster, taking the resolution from `override_res` or else
/// from the sidecar next to `path`.
pub fn read_slide(path: &Path, override_res: Option<f64>) -> Result<SlideRaster> {
    let resolution = match override_res {
        Some(r) => r,
        None => read_sidecar(path)?.resolution_um_per_px.ok_or_else(|| {
            Error::domain(format!(
                "no resolution for {}: pass --resolution or add `resolution_um_per_px` to {}",
                path.display(),
                sidecar_path(path).display()
            ))
        })?,
    };
    read_pgm(path, resolution)
}

pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    let pixels: Vec<u8> = mask.bits().iter().map(|&b| b * 255).collect();
    encode_pgm(mask.width(), mask.height(), &pixels)
}

pub fn decode_mask_pgm(bytes: &[u8], scale: u32) -> Result<BinaryMask> {
    let (w, h, pixels) = decode_pgm(bytes)?;
    let mut bits = Vec::with_capacity(pixels.len());
    for (i, p) in pixels.into_iter().enumerate() {
        match p {
            0 => bits.push(0),
            255 => bits.push(1),
            other => {
                return Err(Error::format(
                    PGM,
                    "payload",
                    format!("mask sample {other} at index {i} is neither 0 nor 255"),
                ))
            }
        }
    }
    BinaryMask::new(w, h, scale, bits)
}

pub fn write_mask_pgm(mask: &BinaryMask, path: &Path) -> Result<()> {
    write_atomic(path, &encode_mask_pgm(mask))
}

pub fn read_mask_pgm(path: &Path, scale: u32) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask_pgm(&bytes, scale)
}

// ---------------------------------------------------------------------------
// FRAS

const FRAS: &str = "fras";

pub fn encode_fras(map: &DensityMap) -> Vec<u8> {
    let header = format!("FRAS\n{} {} {}\n", map.width(), map.height(), map.scale());
    let mut out = Vec::with_capacity(header.len() + map.values().len() * 4);
    out.extend_from_slice(header.as_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fras(bytes: &[u8]) -> Result<DensityMap> {
    let rest = bytes
        .strip_prefix(b"FRAS\n")
        .ok_or_else(|| Error::format(FRAS, "magic", "expected `FRAS` followed by a newline"))?;
    let (width, rest) = take_decimal(rest, b' ', FRAS, "width")?;
    let (height, rest) = take_decimal(rest, b' ', FRAS, "height")?;
    let (scale, payload) = take_decimal(rest, b'\n', FRAS, "scale")?;
    if width == 0 || height == 0 {
        return Err(Error::format(FRAS, "width", format!("dimensions {width}x{height} must be positive")));
    }
    if scale == 0 {
        return Err(Error::format(FRAS, "scale", "must be >= 1"));
    }
    let expected = width as u64 * height as u64 * 4;
    if payload.len() as u64 != expected {
        return Err(Error::format(
            FRAS,
            "payload",
            format!("{} bytes, expected {expected} for {width}x{height}", payload.len()),
        ));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::format(
            FRAS,
            "payload",
            format!("value {} at index {i} is not finite and non-negative", values[i]),
        ));
    }
    DensityMap::new(width, height, scale, values)
}

pub fn read_fras(path: &Path) -> Result<DensityMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fras(&bytes)
}

pub fn write_fras(map: &DensityMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_fras(map))
}

// ---------------------------------------------------------------------------
// Sidecar metadata

/// Contents of `<stem>.meta.json`. Absent keys are omitted on write.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_um_per_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_px: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height_px: Option<u32>,
}

/// `dir/name.ext` → `dir/name.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn read_sidecar(path: &Path) -> Result<SidecarMeta> {
    let meta = sidecar_path(path);
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_sidecar(path: &Path, meta: &SidecarMeta) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    write_atomic(&sidecar_path(path), text.as_bytes())
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
