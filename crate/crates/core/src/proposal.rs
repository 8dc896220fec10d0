//! Windowed activity aggregation and the masked argmax that yields the
//! region proposal.

use std::cmp::Ordering;
use std::ops::{Add, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{agreed_mitoses, window_count, AnnotationSet};
use crate::error::{Error, Result};
use crate::geometry::{hpf_window_pixels, HpfSpec, WindowSize};
use crate::maskgen::{to_grayscale, valid_mask_report, MaskParams, ValidMaskReport};
use crate::raster::{scaled_dim, BinaryMask, DensityMap, SlideRaster};
use crate::Point;

pub trait Accumulator: Copy + Default + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Send + Sync {}
impl Accumulator for u64 {}
impl Accumulator for f64 {}

/// Summed-area table with a zero first row and column: entry `(i, j)` holds
/// the sum of all inputs strictly above and to the left.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralImage<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Accumulator> IntegralImage<T> {
    fn build(width: u32, height: u32, value: impl Fn(usize) -> T) -> Self {
        let stride = width as usize + 1;
        let mut data = vec![T::default(); stride * (height as usize + 1)];
        for y in 0..height as usize {
            let mut row = T::default();
            for x in 0..width as usize {
                row = row + value(y * width as usize + x);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        IntegralImage { width, height, data }
    }

    /// Source dimensions (the table is one larger in each direction).
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> T {
        self.data[y as usize * (self.width as usize + 1) + x as usize]
    }

    /// Sum over `[x, x+w) × [y, y+h)` without bounds checks beyond indexing.
    #[inline]
    pub fn sum_unchecked(&self, x: u32, y: u32, size: WindowSize) -> T {
        let (x1, y1) = (x + size.width_px, y + size.height_px);
        // grouped so unsigned accumulators never underflow
        (self.at(x1, y1) - self.at(x1, y)) - (self.at(x, y1) - self.at(x, y))
    }

    pub fn window_sum(&self, origin: Point, size: WindowSize) -> Result<T> {
        let fits = |o: u32, len: u32, full: u32| o as u64 + len as u64 <= full as u64;
        if !fits(origin.0, size.width_px, self.width) || !fits(origin.1, size.height_px, self.height) {
            return Err(Error::domain(format!(
                "window {}x{} at ({}, {}) exceeds {}x{}",
                size.width_px, size.height_px, origin.0, origin.1, self.width, self.height
            )));
        }
        Ok(self.sum_unchecked(origin.0, origin.1, size))
    }

    pub fn total(&self) -> T {
        self.at(self.width, self.height)
    }
}

impl IntegralImage<u64> {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let bits = mask.bits();
        Self::build(mask.width(), mask.height(), |i| bits[i] as u64)
    }
}

impl IntegralImage<f64> {
    pub fn from_density(map: &DensityMap) -> Self {
        let values = map.values();
        Self::build(map.width(), map.height(), |i| values[i] as f64)
    }
}

/// Best window found by [`masked_argmax`], at the activity map's scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMax {
    pub x: u32,
    pub y: u32,
    pub sum: f64,
    pub mean: f64,
}

/// Larger sum wins; equal sums go to the smaller row-major position.
fn better(a: (f64, u32, u32), b: (f64, u32, u32)) -> (f64, u32, u32) {
    match a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal) {
        Ordering::Greater => a,
        Ordering::Less => b,
        Ordering::Equal => {
            if (a.2, a.1) <= (b.2, b.1) {
                a
            } else {
                b
            }
        }
    }
}

/// The valid origin whose window holds the most activity.
///
/// Rows are scanned in parallel and merged with a total order on
/// `(sum, y, x)`, so the result does not depend on the partitioning.
pub fn masked_argmax(activity: &DensityMap, valid: &BinaryMask, window: WindowSize) -> Result<WindowMax> {
    if (activity.width(), activity.height()) != (valid.width(), valid.height()) {
        return Err(Error::domain(format!(
            "activity {}x{} and valid mask {}x{} differ in size",
            activity.width(),
            activity.height(),
            valid.width(),
            valid.height()
        )));
    }
    if activity.scale() != valid.scale() {
        return Err(Error::domain(format!(
            "activity scale {} differs from valid mask scale {}",
            activity.scale(),
            valid.scale()
        )));
    }
    if window.width_px > activity.width() || window.height_px > activity.height() {
        return Err(Error::domain(format!(
            "window {}x{} exceeds map {}x{}",
            window.width_px,
            window.height_px,
            activity.width(),
            activity.height()
        )));
    }
    let ii = IntegralImage::from_density(activity);
    let max_x = activity.width() - window.width_px;
    let max_y = activity.height() - window.height_px;
    let best = (0..=max_y)
        .into_par_iter()
        .filter_map(|y| {
            let mut row_best: Option<(f64, u32, u32)> = None;
            for x in 0..=max_x {
                if !valid.get(x, y) {
                    continue;
                }
                let cand = (ii.sum_unchecked(x, y, window), x, y);
                row_best = Some(match row_best {
                    None => cand,
                    Some(b) => better(b, cand),
                });
            }
            row_best
        })
        .reduce_with(better);
    let (sum, x, y) = best.ok_or(Error::EmptyMask)?;
    Ok(WindowMax {
        x,
        y,
        sum,
        mean: sum / window.area() as f64,
    })
}

/// The proposed counting region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    /// Full-resolution origin.
    pub origin_x: u32,
    pub origin_y: u32,
    /// Full-resolution window from the field geometry.
    pub window: WindowSize,
    /// Mean activity inside the searched window.
    pub activity_score: f64,
    /// Agreed mitoses inside the full-resolution window, when annotations
    /// were supplied.
    pub gt_mc: Option<u64>,
    pub scale: u32,
    pub map_origin: Point,
    pub map_window: WindowSize,
}

#[derive(Debug, Clone)]
pub struct ProposalOutcome {
    pub proposal: RegionProposal,
    pub valid: ValidMaskReport,
}

/// Full pipeline: window geometry, valid mask, masked argmax at the
/// activity map's scale, rescaling to full resolution.
///
/// The activity map must be stored at `params.downsample` with the
/// downsampled slide's dimensions.
pub fn propose(
    raster: &SlideRaster,
    activity: &DensityMap,
    spec: &HpfSpec,
    params: &MaskParams,
    annotations: Option<&AnnotationSet>,
) -> Result<RegionProposal> {
    propose_detailed(raster, activity, spec, params, annotations).map(|o| o.proposal)
}

pub fn propose_detailed(
    raster: &SlideRaster,
    activity: &DensityMap,
    spec: &HpfSpec,
    params: &MaskParams,
    annotations: Option<&AnnotationSet>,
) -> Result<ProposalOutcome> {
    params.validate()?;
    let s = params.downsample;
    if activity.scale() != s {
        return Err(Error::domain(format!(
            "activity map scale {} does not match mask downsample {s}",
            activity.scale()
        )));
    }
    let expected = (scaled_dim(raster.width(), s), scaled_dim(raster.height(), s));
    if (activity.width(), activity.height()) != expected {
        return Err(Error::domain(format!(
            "activity map is {}x{}, slide {}x{} at scale {s} needs {}x{}",
            activity.width(),
            activity.height(),
            raster.width(),
            raster.height(),
            expected.0,
            expected.1
        )));
    }
    if let Some(a) = annotations {
        if a.width_px != raster.width() || a.y_offset + a.height_px > raster.height() {
            return Err(Error::domain(format!(
                "annotations cover {}x{}, slide is {}x{}",
                a.width_px,
                a.y_offset + a.height_px,
                raster.width(),
                raster.height()
            )));
        }
    }
    let window = hpf_window_pixels(spec, raster.resolution_um_per_px())?;
    let valid = valid_mask_report(raster, window, params)?;
    let best = masked_argmax(activity, &valid.mask, valid.window)?;
    let origin = (best.x * s, best.y * s);
    let gt_mc = annotations.map(|a| window_count(&agreed_mitoses(a), origin, window));
    Ok(ProposalOutcome {
        proposal: RegionProposal {
            origin_x: origin.0,
            origin_y: origin.1,
            window,
            activity_score: best.mean,
            gt_mc,
            scale: s,
            map_origin: (best.x, best.y),
            map_window: valid.window,
        },
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Quantile with linear interpolation between order statistics
/// (position `p·(n-1)` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn quartiles(values: &[u64]) -> Result<Quartiles> {
    if values.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(Quartiles {
        q1: quantile_sorted(&sorted, 0.25),
        q2: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDistribution {
    /// Window counts at valid stride-grid origins, row-major.
    pub counts: Vec<u64>,
    pub quartiles: Quartiles,
}

/// Mitotic count of the full-resolution window at every valid origin of
/// `valid` on a `stride`-spaced grid (in mask pixels).
///
/// Counts for all origins are accumulated at once: each point contributes
/// to a rectangle of origins, added through a 2-D difference table.
pub fn mc_distribution(points: &[Point], valid: &BinaryMask, window: WindowSize, stride: u32) -> Result<McDistribution> {
    if stride == 0 {
        return Err(Error::domain("stride must be >= 1"));
    }
    let counts_grid = origin_counts(points, valid.width(), valid.height(), valid.scale(), window);
    let w = valid.width() as usize;
    let mut counts = Vec::new();
    for y in (0..valid.height()).step_by(stride as usize) {
        for x in (0..valid.width()).step_by(stride as usize) {
            if valid.get(x, y) {
                counts.push(counts_grid[y as usize * w + x as usize] as u64);
            }
        }
    }
    let quartiles = quartiles(&counts)?;
    Ok(McDistribution { counts, quartiles })
}

/// Count of points inside the full-resolution window anchored at
/// `(x·scale, y·scale)`, for every map origin.
pub fn origin_counts(points: &[Point], width: u32, height: u32, scale: u32, window: WindowSize) -> Vec<i64> {
    let (w, h) = (width as usize, height as usize);
    let stride = w + 1;
    let mut diff = vec![0i64; stride * (h + 1)];
    let range = |p: u32, len: u32, n: usize| -> Option<(usize, usize)> {
        let (p, len, s) = (p as u64, len as u64, scale as u64);
        let lo = if p + 1 > len { (p + 1 - len).div_ceil(s) } else { 0 };
        let hi = (p / s).min(n as u64 - 1);
        (lo <= hi).then_some((lo as usize, hi as usize))
    };
    for &(px, py) in points {
        let (Some((x0, x1)), Some((y0, y1))) = (range(px, window.width_px, w), range(py, window.height_px, h)) else {
            continue;
        };
        diff[y0 * stride + x0] += 1;
        diff[y0 * stride + x1 + 1] -= 1;
        diff[(y1 + 1) * stride + x0] -= 1;
        diff[(y1 + 1) * stride + x1 + 1] += 1;
    }
    let mut out = vec![0i64; w * h];
    let mut above = vec![0i64; w + 1];
    for y in 0..h {
        let mut run = 0;
        for x in 0..w {
            run += diff[y * stride + x];
            above[x] += run;
            out[y * w + x] = above[x];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quartile {
    Q1,
    Q2,
    Q3,
    Q4,
}

/// Quartile of the distribution the count falls in; boundary values go to
/// the upper quartile.
pub fn quartile_placement(mc: u64, q: &Quartiles) -> Quartile {
    let v = mc as f64;
    if v >= q.q3 {
        Quartile::Q4
    } else if v >= q.q2 {
        Quartile::Q3
    } else if v >= q.q1 {
        Quartile::Q2
    } else {
        Quartile::Q1
    }
}

/// Downsampled grayscale slide with the proposal outline burned in white.
pub fn overlay(raster: &SlideRaster, proposal: &RegionProposal) -> Result<SlideRaster> {
    let small = to_grayscale(&raster.downsample(proposal.scale)?);
    let (w, h) = (small.width(), small.height());
    let mut px = small.into_pixels();
    let (x0, y0) = proposal.map_origin;
    let x1 = (x0 + proposal.map_window.width_px - 1).min(w - 1);
    let y1 = (y0 + proposal.map_window.height_px - 1).min(h - 1);
    for x in x0..=x1 {
        px[(y0 * w + x) as usize] = 255;
        px[(y1 * w + x) as usize] = 255;
    }
    for y in y0..=y1 {
        px[(y * w + x0) as usize] = 255;
        px[(y * w + x1) as usize] = 255;
    }
    SlideRaster::gray(w, h, px, raster.resolution_um_per_px() * proposal.scale as f64)
}
