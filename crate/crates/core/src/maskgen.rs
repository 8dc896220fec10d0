//! Valid-origin mask: positions whose proposal window is almost entirely
//! covered by tissue.
//!
//! Pipeline: pixel-center downsample, grayscale, Otsu threshold (tissue is
//! the dark class), square closing, then an exact windowed tissue count via
//! an integral image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{window_at_scale, WindowSize};
use crate::proposal::IntegralImage;
use crate::raster::{BinaryMask, SlideRaster};

pub const DEFAULT_DOWNSAMPLE: u32 = 32;
pub const DEFAULT_CLOSING_RADIUS: u32 = 2;
/// Minimum tissue fraction inside a valid window.
pub const DEFAULT_COVERAGE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub downsample: u32,
    /// Half-side of the square closing element, at the downsampled scale.
    pub closing_radius_px: u32,
    pub coverage_threshold: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            downsample: DEFAULT_DOWNSAMPLE,
            closing_radius_px: DEFAULT_CLOSING_RADIUS,
            coverage_threshold: DEFAULT_COVERAGE,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        if self.downsample == 0 {
            return Err(Error::domain("downsample must be >= 1"));
        }
        if !(self.coverage_threshold > 0.0 && self.coverage_threshold <= 1.0) {
            return Err(Error::domain(format!(
                "coverage threshold must lie in (0, 1], got {}",
                self.coverage_threshold
            )));
        }
        Ok(())
    }
}

/// Luma with weights 0.299/0.587/0.114, rounded half up, computed in
/// integer arithmetic.
pub fn to_grayscale(raster: &SlideRaster) -> SlideRaster {
    if raster.channels() == 1 {
        return raster.clone();
    }
    let gray = raster
        .pixels()
        .chunks_exact(3)
        .map(|c| ((299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32 + 500) / 1000) as u8)
        .collect();
    SlideRaster::gray(raster.width(), raster.height(), gray, raster.resolution_um_per_px())
        .expect("dimensions carried over from a valid raster")
}

pub fn histogram(gray: &SlideRaster) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &p in gray.pixels() {
        hist[p as usize] += 1;
    }
    hist
}

/// Otsu's threshold: the `t` maximising between-class variance with classes
/// `<= t` and `> t`. Ties go to the smallest `t`.
pub fn otsu_threshold(gray: &SlideRaster) -> Result<u8> {
    if gray.channels() != 1 {
        return Err(Error::domain("otsu threshold needs a single-channel raster"));
    }
    otsu_from_histogram(&histogram(gray))
}

pub fn otsu_from_histogram(hist: &[u64; 256]) -> Result<u8> {
    let total: u64 = hist.iter().sum();
    let sum_all: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
    let mut n0 = 0u64;
    let mut s0 = 0u64;
    // w0·w1·(mu0 - mu1)² = (s0·N - S·n0)² / (N²·n0·n1); N² is constant, so
    // candidates are ranked by d²/(n0·n1), compared exactly.
    let mut best: Option<(u8, u128, u64)> = None;
    for t in 0..256usize {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (s0 as i128 * total as i128 - sum_all as i128 * n0 as i128).unsigned_abs();
        let d2 = d * d;
        let q = n0 * n1;
        let wins = match best {
            None => d2 > 0,
            Some((_, bd2, bq)) => mul_wide(d2, bq) > mul_wide(bd2, q),
        };
        if wins {
            best = Some((t as u8, d2, q));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::Degenerate("image has a single gray level; no threshold separates it".into()))
}

/// 256-bit product as `(high, low)`.
fn mul_wide(a: u128, b: u64) -> (u128, u128) {
    let lo = (a & u64::MAX as u128) * b as u128;
    let hi = (a >> 64) * b as u128;
    let (low, carry) = (hi << 64).overflowing_add(lo);
    ((hi >> 64) + carry as u128, low)
}

/// Tissue where the pixel is at most `t` (stained tissue is darker than
/// the bright background).
pub fn tissue_mask(gray: &SlideRaster, t: u8, scale: u32) -> Result<BinaryMask> {
    if gray.channels() != 1 {
        return Err(Error::domain("tissue mask needs a single-channel raster"));
    }
    let bits = gray.pixels().iter().map(|&p| (p <= t) as u8).collect();
    BinaryMask::new(gray.width(), gray.height(), scale, bits)
}

/// Running count of ones in `[i - r, i + r]` along a line, as a prefix sum.
fn line_prefix(line: &[u8]) -> Vec<u32> {
    let mut pre = Vec::with_capacity(line.len() + 1);
    pre.push(0u32);
    let mut acc = 0;
    for &b in line {
        acc += b as u32;
        pre.push(acc);
    }
    pre
}

/// One separable pass. `dilate`: any one within the radius (outside is 0).
/// Erode: all ones within the radius (outside is 1), i.e. no in-bounds zero.
fn pass_1d(line: &[u8], radius: usize, dilate: bool, out: &mut [u8]) {
    let n = line.len();
    let pre = line_prefix(line);
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(n);
        let ones = pre[hi] - pre[lo];
        out[i] = if dilate {
            (ones > 0) as u8
        } else {
            (ones as usize == hi - lo) as u8
        };
    }
}

fn square_op(mask: &[u8], w: usize, h: usize, radius: usize, dilate: bool) -> Vec<u8> {
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        pass_1d(&mask[y * w..(y + 1) * w], radius, dilate, &mut rows[y * w..(y + 1) * w]);
    }
    let mut out = vec![0u8; w * h];
    let mut col = vec![0u8; h];
    let mut col_out = vec![0u8; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        pass_1d(&col, radius, dilate, &mut col_out);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    out
}

pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    let bits = square_op(mask.bits(), mask.width() as usize, mask.height() as usize, radius as usize, true);
    BinaryMask::new(mask.width(), mask.height(), mask.scale(), bits).expect("same shape")
}

pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    let bits = square_op(mask.bits(), mask.width() as usize, mask.height() as usize, radius as usize, false);
    BinaryMask::new(mask.width(), mask.height(), mask.scale(), bits).expect("same shape")
}

/// Morphological closing with a `(2r+1)²` square. Off-image pixels count
/// as background for the dilation and as foreground for the erosion, so the
/// result always contains the input.
pub fn close(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    erode(&dilate(mask, radius), radius)
}

/// Smallest tissue count `c` with `c / area >= threshold`.
pub fn required_count(threshold: f64, area: u64) -> u64 {
    let a = area as f64;
    let mut c = (threshold * a).ceil().clamp(0.0, a) as u64;
    while c > 0 && (c - 1) as f64 / a >= threshold {
        c -= 1;
    }
    while c < area && (c as f64) / a < threshold {
        c += 1;
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidMaskReport {
    pub mask: BinaryMask,
    pub otsu_threshold: u8,
    /// Fraction of downsampled pixels that are tissue after closing.
    pub tissue_fraction: f64,
    pub valid_origins: u64,
    /// Window used at the mask's scale.
    pub window: WindowSize,
}

/// The valid mask at `params.downsample` scale, indexed by window origin:
/// bit `(x, y)` is 1 when the window `[x, x+w) × [y, y+h)` lies inside the
/// map, the full-resolution window at `(x·s, y·s)` lies inside the slide,
/// and the tissue count inside the window reaches the coverage threshold.
pub fn valid_mask(raster: &SlideRaster, window: WindowSize, params: &MaskParams) -> Result<BinaryMask> {
    valid_mask_report(raster, window, params).map(|r| r.mask)
}

pub fn valid_mask_report(raster: &SlideRaster, window: WindowSize, params: &MaskParams) -> Result<ValidMaskReport> {
    params.validate()?;
    if window.width_px > raster.width() || window.height_px > raster.height() {
        return Err(Error::domain(format!(
            "window {}x{} is larger than slide {}x{}",
            window.width_px,
            window.height_px,
            raster.width(),
            raster.height()
        )));
    }
    let s = params.downsample;
    let small = raster.downsample(s)?;
    let mw = window_at_scale(window, s);
    if mw.width_px > small.width() || mw.height_px > small.height() {
        return Err(Error::domain(format!(
            "window {}x{} at scale {s} exceeds the downsampled slide {}x{}",
            mw.width_px,
            mw.height_px,
            small.width(),
            small.height()
        )));
    }
    let gray = to_grayscale(&small);
    let t = otsu_threshold(&gray)?;
    let tissue = close(&tissue_mask(&gray, t, s)?, params.closing_radius_px);
    let tissue_fraction = tissue.count_ones() as f64 / tissue.bits().len() as f64;

    let ii = IntegralImage::from_mask(&tissue);
    let need = required_count(params.coverage_threshold, mw.area());
    let (w, h) = (tissue.width(), tissue.height());
    // origins whose full-resolution window stays on the slide
    let max_x = ((raster.width() - window.width_px) / s).min(w - mw.width_px);
    let max_y = ((raster.height() - window.height_px) / s).min(h - mw.height_px);
    let mut bits = vec![0u8; w as usize * h as usize];
    let mut valid = 0;
    for y in 0..=max_y {
        for x in 0..=max_x {
            if ii.sum_unchecked(x, y, mw) >= need {
                bits[(y * w + x) as usize] = 1;
                valid += 1;
            }
        }
    }
    Ok(ValidMaskReport {
        mask: BinaryMask::new(w, h, s, bits)?,
        otsu_threshold: t,
        tissue_fraction,
        valid_origins: valid,
        window: mw,
    })
}
