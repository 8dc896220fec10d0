//! Activity maps: filled-circle ground truth from point annotations, and
//! whole-slide assembly of overlapping patch predictions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{sample_coord, scaled_dim, BinaryMask, DensityMap};
use crate::Point;

/// Circle radius (px at 0.25 µm/px) used for ground-truth rendering and
/// detection matching.
pub const DEFAULT_CIRCLE_RADIUS_PX: u32 = 25;
pub const DEFAULT_PATCH_SIZE: u32 = 512;
pub const DEFAULT_PATCH_MARGIN: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircleSpec {
    pub radius_px: u32,
}

impl Default for CircleSpec {
    fn default() -> Self {
        CircleSpec {
            radius_px: DEFAULT_CIRCLE_RADIUS_PX,
        }
    }
}

impl CircleSpec {
    pub fn new(radius_px: u32) -> Result<Self> {
        if radius_px == 0 {
            return Err(Error::domain("circle radius must be >= 1"));
        }
        Ok(CircleSpec { radius_px })
    }

    /// Lattice points within the radius of a pixel center.
    pub fn pixel_count(&self) -> u64 {
        let r = self.radius_px as i64;
        (-r..=r)
            .map(|dy| {
                let span = ((r * r - dy * dy) as f64).sqrt().floor() as i64;
                // floor(sqrt) can be off by one for large arguments
                let mut s = span;
                while (s + 1) * (s + 1) + dy * dy <= r * r {
                    s += 1;
                }
                while s * s + dy * dy > r * r {
                    s -= 1;
                }
                (2 * s + 1) as u64
            })
            .sum()
    }
}

/// Renders filled circles around `points` into a mask at `1/scale`
/// resolution.
///
/// Reduced-scale pixel `(i, j)` samples full-resolution pixel
/// `(sample_coord(i), sample_coord(j))`; it is set when that pixel lies
/// within `radius_px` (Euclidean, integer pixel grid) of any point. Points
/// are taken to sit on their pixel, so at scale 1 a radius of 1 sets the
/// point and its four neighbours.
pub fn render_gt_map(points: &[Point], width: u32, height: u32, circle: CircleSpec, scale: u32) -> Result<BinaryMask> {
    if width == 0 || height == 0 || scale == 0 {
        return Err(Error::domain("render dimensions and scale must be positive"));
    }
    if let Some(p) = points.iter().find(|p| p.0 >= width || p.1 >= height) {
        return Err(Error::domain(format!("point ({}, {}) outside {width}x{height}", p.0, p.1)));
    }
    let mw = scaled_dim(width, scale);
    let mh = scaled_dim(height, scale);
    let r = circle.radius_px as i64;
    let r2 = r * r;

    // bucket points by the reduced rows they can touch, so rows render independently
    let mut rows: Vec<Vec<Point>> = vec![Vec::new(); mh as usize];
    for &(px, py) in points {
        let lo = (py as i64 - r).max(0);
        let hi = (py as i64 + r).min(height as i64 - 1);
        for j in reduced_range(lo, hi, scale, height, mh) {
            rows[j as usize].push((px, py));
        }
    }

    let mut bits = vec![0u8; mw as usize * mh as usize];
    bits.par_chunks_mut(mw as usize)
        .zip(rows.par_iter())
        .enumerate()
        .for_each(|(j, (row, pts))| {
            let sy = sample_coord(j as u32, scale, height) as i64;
            for &(px, py) in pts {
                let dy = sy - py as i64;
                let rem = r2 - dy * dy;
                if rem < 0 {
                    continue;
                }
                let lo = (px as i64 - r).max(0);
                let hi = (px as i64 + r).min(width as i64 - 1);
                for i in reduced_range(lo, hi, scale, width, mw) {
                    let dx = sample_coord(i, scale, width) as i64 - px as i64;
                    if dx * dx <= rem {
                        row[i as usize] = 1;
                    }
                }
            }
        });
    BinaryMask::new(mw, mh, scale, bits)
}

/// Reduced indices whose sampled full-resolution coordinate may fall in
/// `[lo, hi]`.
fn reduced_range(lo: i64, hi: i64, scale: u32, full: u32, reduced: u32) -> impl Iterator<Item = u32> {
    let s = scale as i64;
    let first = ((lo - s / 2).max(0) / s).min(reduced as i64 - 1) as u32;
    let last = ((hi - s / 2).max(0) / s + 1).min(reduced as i64 - 1) as u32;
    (first..=last).filter(move |&i| {
        let c = sample_coord(i, scale, full) as i64;
        c >= lo && c <= hi
    })
}

/// How the patch margin is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    /// `margin` px are discarded on every patch side: stride `patch - 2·margin`.
    #[default]
    PerSide,
    /// Neighbouring patches overlap by `margin` px in total: stride `patch - margin`.
    Total,
}

/// Origins of overlapping square patches covering a slide, and which patch
/// owns each pixel when stitching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub width: u32,
    pub height: u32,
    pub patch_size: u32,
    pub margin: u32,
    pub mode: OverlapMode,
    xs: Vec<u32>,
    ys: Vec<u32>,
}

impl PatchGrid {
    pub fn new(width: u32, height: u32, patch_size: u32, margin: u32, mode: OverlapMode) -> Result<Self> {
        let overlap = match mode {
            OverlapMode::PerSide => 2 * margin as u64,
            OverlapMode::Total => margin as u64,
        };
        if patch_size as u64 <= overlap {
            return Err(Error::domain(format!(
                "patch size {patch_size} leaves no stride with margin {margin} ({mode:?})"
            )));
        }
        if width < patch_size || height < patch_size {
            return Err(Error::domain(format!(
                "slide {width}x{height} is smaller than one {patch_size}px patch"
            )));
        }
        let stride = patch_size - overlap as u32;
        Ok(PatchGrid {
            width,
            height,
            patch_size,
            margin,
            mode,
            xs: axis_origins(width, patch_size, stride),
            ys: axis_origins(height, patch_size, stride),
        })
    }

    pub fn stride(&self) -> u32 {
        match self.mode {
            OverlapMode::PerSide => self.patch_size - 2 * self.margin,
            OverlapMode::Total => self.patch_size - self.margin,
        }
    }

    pub fn x_origins(&self) -> &[u32] {
        &self.xs
    }

    pub fn y_origins(&self) -> &[u32] {
        &self.ys
    }

    /// Patch origins in row-major order (y outer, x inner).
    pub fn origins(&self) -> Vec<Point> {
        self.ys
            .iter()
            .flat_map(|&y| self.xs.iter().map(move |&x| (x, y)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Core of patch `idx` along the x axis: the patch minus its discarded
    /// margins, extended to the slide edge for border patches.
    pub fn x_core(&self, idx: usize) -> (u32, u32) {
        self.core(&self.xs, idx, self.width)
    }

    pub fn y_core(&self, idx: usize) -> (u32, u32) {
        self.core(&self.ys, idx, self.height)
    }

    fn core(&self, origins: &[u32], idx: usize, full: u32) -> (u32, u32) {
        let (left, right) = match self.mode {
            OverlapMode::PerSide => (self.margin, self.margin),
            OverlapMode::Total => (self.margin / 2, self.margin - self.margin / 2),
        };
        let o = origins[idx];
        let start = if idx == 0 { 0 } else { o + left };
        let end = if idx + 1 == origins.len() { full } else { o + self.patch_size - right };
        (start, end)
    }

    /// Half-open x ranges owned by each patch column.
    pub fn x_owned(&self) -> Vec<(u32, u32)> {
        owned_ranges(&self.xs, self.patch_size, self.width)
    }

    pub fn y_owned(&self) -> Vec<(u32, u32)> {
        owned_ranges(&self.ys, self.patch_size, self.height)
    }
}

fn axis_origins(full: u32, patch: u32, stride: u32) -> Vec<u32> {
    let mut out = vec![0];
    let mut o = 0u32;
    while o + patch < full {
        o += stride;
        out.push(o.min(full - patch));
    }
    out
}

/// Each pixel goes to the patch on its side of the midpoint of the overlap
/// between consecutive patches. For the regular stride this is exactly the
/// core boundary; for the clamped last patch it splits the larger overlap
/// evenly, which keeps every pixel inside its owner's core.
fn owned_ranges(origins: &[u32], patch: u32, full: u32) -> Vec<(u32, u32)> {
    let cuts: Vec<u32> = origins
        .windows(2)
        .map(|w| ((w[1] as u64 + w[0] as u64 + patch as u64) / 2) as u32)
        .collect();
    (0..origins.len())
        .map(|i| {
            let start = if i == 0 { 0 } else { cuts[i - 1] };
            let end = if i + 1 == origins.len() { full } else { cuts[i] };
            (start, end)
        })
        .collect()
}

pub fn make_patch_grid(width: u32, height: u32, patch_size: u32, margin: u32) -> Result<PatchGrid> {
    PatchGrid::new(width, height, patch_size, margin, OverlapMode::PerSide)
}

/// Assembles per-patch predictions (row-major, one per grid origin) into a
/// whole-slide map. Each output pixel is copied from the patch that owns
/// it; overlaps are never blended.
pub fn stitch_predictions(grid: &PatchGrid, patches: &[DensityMap]) -> Result<DensityMap> {
    if patches.len() != grid.len() {
        return Err(Error::domain(format!(
            "grid has {} patches, received {}",
            grid.len(),
            patches.len()
        )));
    }
    let p = grid.patch_size;
    let scale = patches[0].scale();
    for (i, patch) in patches.iter().enumerate() {
        if patch.width() != p || patch.height() != p {
            return Err(Error::domain(format!(
                "patch {i} is {}x{}, expected {p}x{p}",
                patch.width(),
                patch.height()
            )));
        }
        if patch.scale() != scale {
            return Err(Error::domain(format!("patch {i} has scale {}, expected {scale}", patch.scale())));
        }
        if let Some(v) = patch.values().iter().find(|&&v| v > 1.0) {
            return Err(Error::domain(format!("patch {i} holds value {v} outside [0, 1]")));
        }
    }

    let xo = grid.x_owned();
    let yo = grid.y_owned();
    let ncols = grid.xs.len();
    let mut row_owner = vec![0usize; grid.height as usize];
    for (j, &(a, b)) in yo.iter().enumerate() {
        row_owner[a as usize..b as usize].fill(j);
    }

    let w = grid.width as usize;
    let mut values = vec![0f32; w * grid.height as usize];
    values.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let j = row_owner[y];
        let py = (y as u32 - grid.ys[j]) as usize;
        for (i, &(a, b)) in xo.iter().enumerate() {
            let patch = &patches[j * ncols + i];
            let base = py * p as usize;
            let px0 = (a - grid.xs[i]) as usize;
            let px1 = (b - grid.xs[i]) as usize;
            row[a as usize..b as usize].copy_from_slice(&patch.values()[base + px0..base + px1]);
        }
    });
    DensityMap::new(grid.width, grid.height, scale, values)
}

/// Cuts a map into the grid's patches (row-major), the inverse of
/// [`stitch_predictions`].
pub fn cut_patches(map: &DensityMap, grid: &PatchGrid) -> Result<Vec<DensityMap>> {
    if map.width() != grid.width || map.height() != grid.height {
        return Err(Error::domain(format!(
            "map {}x{} does not match grid {}x{}",
            map.width(),
            map.height(),
            grid.width,
            grid.height
        )));
    }
    let p = grid.patch_size as usize;
    grid.origins()
        .into_iter()
        .map(|(ox, oy)| {
            let mut vals = Vec::with_capacity(p * p);
            for y in oy as usize..oy as usize + p {
                let start = y * map.width() as usize + ox as usize;
                vals.extend_from_slice(&map.values()[start..start + p]);
            }
            DensityMap::new(grid.patch_size, grid.patch_size, map.scale(), vals)
        })
        .collect()
}
