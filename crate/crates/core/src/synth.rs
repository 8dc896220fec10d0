//! Synthetic slides with known ground truth, a simulated imperfect
//! detector, and an exhaustive reference implementation of the proposal.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{agreed_mitoses, window_count, Annotation, AnnotationSet, Label};
use crate::density::{render_gt_map, CircleSpec};
use crate::error::{Error, Result};
use crate::geometry::{hpf_window_pixels, window_at_scale, HpfSpec};
use crate::maskgen::MaskParams;
use crate::proposal::RegionProposal;
use crate::raster::{BinaryMask, DensityMap, SlideRaster};
use crate::rng::{self, stream_id};
use crate::Point;

const STREAM_NOISE: u8 = 10;
const STREAM_POINTS: u8 = 11;
const STREAM_FN: u8 = 12;
const STREAM_FP: u8 = 13;

/// Upper bound on the exhaustive oracle's work, `W·H·w·h` at map scale.
pub const ORACLE_WORK_LIMIT: u64 = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    #[serde(default)]
    pub rotation_rad: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.rotation_rad.sin_cos();
        let u = (dx * c + dy * s) / self.semi_x;
        let v = (-dx * s + dy * c) / self.semi_y;
        u * u + v * v <= 1.0
    }
}

/// Gaussian bump of mitotic intensity; `rate` is the peak in mitoses per
/// megapixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub cx: f64,
    pub cy: f64,
    pub sigma_px: f64,
    pub rate: f64,
}

fn default_background() -> u8 {
    240
}

fn default_tissue() -> u8 {
    120
}

fn default_resolution() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_resolution")]
    pub resolution_um_per_px: f64,
    /// Union of ellipses.
    pub tissue: Vec<Ellipse>,
    #[serde(default)]
    pub hotspots: Vec<Hotspot>,
    /// Mitoses per megapixel of tissue, everywhere.
    #[serde(default)]
    pub base_rate: f64,
    #[serde(default = "default_background")]
    pub background_gray: u8,
    #[serde(default = "default_tissue")]
    pub tissue_gray: u8,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Fraction of points where the second observer says `nonmitosis`.
    #[serde(default)]
    pub disagreement_fraction: f64,
    /// Fraction of points both observers mark `unclassifiable`.
    #[serde(default)]
    pub unclassifiable_fraction: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("synthetic slide must have positive size"));
        }
        if self.tissue.is_empty() {
            return Err(Error::domain("synthetic slide needs at least one tissue ellipse"));
        }
        if self
            .tissue
            .iter()
            .any(|e| !(e.semi_x > 0.0 && e.semi_y > 0.0))
        {
            return Err(Error::domain("ellipse semi-axes must be positive"));
        }
        let rates_ok = self.base_rate >= 0.0
            && self.base_rate.is_finite()
            && self
                .hotspots
                .iter()
                .all(|h| h.rate >= 0.0 && h.rate.is_finite() && h.sigma_px > 0.0);
        if !rates_ok {
            return Err(Error::domain("rates must be non-negative and sigmas positive"));
        }
        let fracs = [self.disagreement_fraction, self.unclassifiable_fraction];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || fracs.iter().sum::<f64>() > 1.0 {
            return Err(Error::domain("label fractions must lie in [0, 1] and sum to at most 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::domain("noise sigma must be non-negative"));
        }
        Ok(())
    }

    /// Tissue test at the center of pixel `(x, y)`.
    pub fn is_tissue(&self, x: u32, y: u32) -> bool {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        self.tissue.iter().any(|e| e.contains(fx, fy))
    }

    /// Intensity in mitoses per pixel at the center of `(x, y)`, ignoring
    /// the tissue restriction.
    pub fn intensity(&self, x: u32, y: u32) -> f64 {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let bumps: f64 = self
            .hotspots
            .iter()
            .map(|h| {
                let d2 = (fx - h.cx).powi(2) + (fy - h.cy).powi(2);
                h.rate * (-d2 / (2.0 * h.sigma_px * h.sigma_px)).exp()
            })
            .sum();
        (self.base_rate + bumps) / 1e6
    }

    fn intensity_bound(&self) -> f64 {
        (self.base_rate + self.hotspots.iter().map(|h| h.rate).sum::<f64>()) / 1e6
    }

    pub fn tissue_mask(&self) -> BinaryMask {
        let w = self.width as usize;
        let mut bits = vec![0u8; w * self.height as usize];
        bits.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, b) in row.iter_mut().enumerate() {
                *b = self.is_tissue(x as u32, y as u32) as u8;
            }
        });
        BinaryMask::new(self.width, self.height, 1, bits).expect("validated dimensions")
    }
}

/// Renders the raster and samples annotations by thinning a homogeneous
/// process at the intensity bound. A point is kept with probability
/// `λ(p)/λ_max` when its pixel lies in tissue; repeated pixels are kept
/// once.
pub fn generate(spec: &SynthSpec) -> Result<(SlideRaster, AnnotationSet)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::domain(e.to_string()))?;
    let mut pixels = vec![0u8; w as usize * h as usize];
    pixels.par_chunks_mut(w as usize).enumerate().for_each(|(y, row)| {
        let mut rng = rng::stream(spec.seed, stream_id(STREAM_NOISE, y as u64));
        for (x, p) in row.iter_mut().enumerate() {
            let base = if spec.is_tissue(x as u32, y as u32) {
                spec.tissue_gray
            } else {
                spec.background_gray
            } as f64;
            let v = if spec.noise_sigma > 0.0 {
                base + noise.sample(&mut rng)
            } else {
                base
            };
            *p = v.round().clamp(0.0, 255.0) as u8;
        }
    });
    let raster = SlideRaster::gray(w, h, pixels, spec.resolution_um_per_px)?;

    let mut rng = rng::stream(spec.seed, stream_id(STREAM_POINTS, 0));
    let bound = spec.intensity_bound();
    let mean = bound * w as f64 * h as f64;
    let n = if mean > 0.0 {
        Poisson::new(mean).map_err(|e| Error::domain(e.to_string()))?.sample(&mut rng) as u64
    } else {
        0
    };
    let mut seen = std::collections::HashSet::new();
    let mut items = Vec::new();
    for _ in 0..n {
        let x = (rng.gen::<f64>() * w as f64).floor().min(w as f64 - 1.0) as u32;
        let y = (rng.gen::<f64>() * h as f64).floor().min(h as f64 - 1.0) as u32;
        let u: f64 = rng.gen();
        let label_draw: f64 = rng.gen();
        if !spec.is_tissue(x, y) || u * bound >= spec.intensity(x, y) || !seen.insert((x, y)) {
            continue;
        }
        let (obs1, obs2) = if label_draw < spec.disagreement_fraction {
            (Label::Mitosis, Label::NonMitosis)
        } else if label_draw < spec.disagreement_fraction + spec.unclassifiable_fraction {
            (Label::Unclassifiable, Label::Unclassifiable)
        } else {
            (Label::Mitosis, Label::Mitosis)
        };
        items.push(Annotation::new(x, y, obs1, obs2));
    }
    let set = AnnotationSet::new(format!("synth-{}", spec.seed), w, h, items)?;
    Ok((raster, set))
}

/// Imperfections applied by [`corrupt_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    /// Probability each true circle is dropped.
    pub fn_rate: f64,
    /// Spurious circles per megapixel of tissue.
    pub fp_rate: f64,
    pub blur_radius: u32,
    pub seed: u64,
}

/// A simulated detector output: the ground-truth circles for `points` with
/// some removed, spurious ones added inside `tissue` (a scale-1 mask of the
/// slide), a box blur, and clamping to `[0, 1]`.
///
/// Circles are dropped individually, which is why this takes the points
/// rather than an already rendered map.
pub fn corrupt_map(
    points: &[Point],
    tissue: &BinaryMask,
    circle: CircleSpec,
    scale: u32,
    c: &Corruption,
) -> Result<DensityMap> {
    if !(0.0..1.0).contains(&c.fn_rate) || !(c.fp_rate >= 0.0 && c.fp_rate.is_finite()) {
        return Err(Error::domain("fn_rate must lie in [0, 1) and fp_rate must be non-negative"));
    }
    if tissue.scale() != 1 {
        return Err(Error::domain("tissue mask must be at full resolution"));
    }
    let (w, h) = (tissue.width(), tissue.height());

    let mut kept: Vec<Point> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| {
            let mut rng = rng::stream(c.seed, stream_id(STREAM_FN, i as u64));
            rng.gen::<f64>() >= c.fn_rate
        })
        .map(|(_, &p)| p)
        .collect();

    let tissue_px = tissue.count_ones();
    if c.fp_rate > 0.0 && tissue_px > 0 {
        let mut rng = rng::stream(c.seed, stream_id(STREAM_FP, 0));
        let mean = c.fp_rate * tissue_px as f64 / 1e6;
        let n = Poisson::new(mean).map_err(|e| Error::domain(e.to_string()))?.sample(&mut rng) as u64;
        let mut added = 0;
        while added < n {
            let p = (rng.gen_range(0..w), rng.gen_range(0..h));
            if tissue.get(p.0, p.1) {
                kept.push(p);
                added += 1;
            }
        }
    }

    let map = render_gt_map(&kept, w, h, circle, scale)?.to_density();
    box_blur(&map, c.blur_radius)
}

/// Mean over the `(2r+1)²` neighbourhood clipped to the map, clamped to
/// `[0, 1]`.
pub fn box_blur(map: &DensityMap, radius: u32) -> Result<DensityMap> {
    if radius == 0 {
        let v = map.values().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        return DensityMap::new(map.width(), map.height(), map.scale(), v);
    }
    let (w, h) = (map.width() as usize, map.height() as usize);
    let r = radius as usize;
    let span = |i: usize, n: usize| (i.min(r) + (n - 1 - i).min(r) + 1) as f64;
    let window_sums = |src: &[f64], dst: &mut [f64]| {
        let n = src.len();
        let mut pre = vec![0.0; n + 1];
        for i in 0..n {
            pre[i + 1] = pre[i] + src[i];
        }
        for i in 0..n {
            dst[i] = pre[(i + r + 1).min(n)] - pre[i.saturating_sub(r)];
        }
    };
    let src: Vec<f64> = map.values().iter().map(|&v| v as f64).collect();
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        window_sums(&src[y * w..(y + 1) * w], &mut rows[y * w..(y + 1) * w]);
    }
    let mut out = vec![0f32; w * h];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        window_sums(&col, &mut col_out);
        let span_x = span(x, w);
        for y in 0..h {
            out[y * w + x] = (col_out[y] / (span_x * span(y, h))).clamp(0.0, 1.0) as f32;
        }
    }
    DensityMap::new(map.width(), map.height(), map.scale(), out)
}

/// Reference proposal by exhaustive per-origin recomputation.
///
/// Every stage after the field geometry is reimplemented independently of
/// the production path: pixel-center downsampling, luma, a pixel-level Otsu
/// scan, closing by explicit neighbourhood search, and window sums and
/// tissue counts by direct summation.
pub fn oracle_propose(
    raster: &SlideRaster,
    activity: &DensityMap,
    spec: &HpfSpec,
    params: &MaskParams,
    annotations: Option<&AnnotationSet>,
) -> Result<RegionProposal> {
    let s = params.downsample;
    let window = hpf_window_pixels(spec, raster.resolution_um_per_px())?;
    let mw = window_at_scale(window, s);
    let (sw, sh) = ((raster.width() / s).max(1), (raster.height() / s).max(1));
    let work = sw as u64 * sh as u64 * mw.area();
    if work > ORACLE_WORK_LIMIT {
        return Err(Error::OracleScale {
            work,
            limit: ORACLE_WORK_LIMIT,
        });
    }
    if activity.scale() != s || (activity.width(), activity.height()) != (sw, sh) {
        return Err(Error::domain("activity map does not match the downsampled slide"));
    }
    if window.width_px > raster.width() || window.height_px > raster.height() || mw.width_px > sw || mw.height_px > sh {
        return Err(Error::domain("window larger than slide"));
    }

    // downsample + luma
    let mut gray = vec![0u8; (sw * sh) as usize];
    for y in 0..sh {
        for x in 0..sw {
            let fx = (x * s + s / 2).min(raster.width() - 1);
            let fy = (y * s + s / 2).min(raster.height() - 1);
            gray[(y * sw + x) as usize] = if raster.channels() == 1 {
                raster.sample(fx, fy, 0)
            } else {
                let (r, g, b) = (raster.sample(fx, fy, 0), raster.sample(fx, fy, 1), raster.sample(fx, fy, 2));
                ((299 * r as u32 + 587 * g as u32 + 114 * b as u32) as f64 / 1000.0 + 0.5).floor() as u8
            };
        }
    }

    // Otsu by direct class statistics
    let mut best_t = None;
    let mut best_var = 0.0;
    let n = gray.len() as f64;
    for t in 0..=255u8 {
        let (mut n0, mut s0, mut n1, mut s1) = (0.0, 0.0, 0.0, 0.0);
        for &g in &gray {
            if g <= t {
                n0 += 1.0;
                s0 += g as f64;
            } else {
                n1 += 1.0;
                s1 += g as f64;
            }
        }
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let var = (n0 / n) * (n1 / n) * (s0 / n0 - s1 / n1).powi(2);
        if var > best_var {
            best_var = var;
            best_t = Some(t);
        }
    }
    let t = best_t.ok_or_else(|| Error::Degenerate("single gray level".into()))?;
    let tissue: Vec<bool> = gray.iter().map(|&g| g <= t).collect();

    // closing by explicit neighbourhoods
    let r = params.closing_radius_px as i64;
    let at = |m: &[bool], x: i64, y: i64, outside: bool| {
        if x < 0 || y < 0 || x >= sw as i64 || y >= sh as i64 {
            outside
        } else {
            m[(y * sw as i64 + x) as usize]
        }
    };
    let neighbourhood = |m: &[bool], want_any: bool, outside: bool| -> Vec<bool> {
        let mut out = vec![false; m.len()];
        for y in 0..sh as i64 {
            for x in 0..sw as i64 {
                let mut any = false;
                let mut all = true;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let v = at(m, x + dx, y + dy, outside);
                        any |= v;
                        all &= v;
                    }
                }
                out[(y * sw as i64 + x) as usize] = if want_any { any } else { all };
            }
        }
        out
    };
    let closed = neighbourhood(&neighbourhood(&tissue, true, false), false, true);

    let area = mw.area() as f64;
    let mut best: Option<(f64, u32, u32)> = None;
    for y in 0..=sh - mw.height_px {
        for x in 0..=sw - mw.width_px {
            if x * s + window.width_px > raster.width() || y * s + window.height_px > raster.height() {
                continue;
            }
            let mut count = 0u64;
            let mut sum = 0.0f64;
            for yy in y..y + mw.height_px {
                for xx in x..x + mw.width_px {
                    let i = (yy * sw + xx) as usize;
                    count += closed[i] as u64;
                    sum += activity.values()[i] as f64;
                }
            }
            if (count as f64) / area < params.coverage_threshold {
                continue;
            }
            if best.is_none_or(|b| sum > b.0) {
                best = Some((sum, x, y));
            }
        }
    }
    let (sum, x, y) = best.ok_or(Error::EmptyMask)?;
    let origin = (x * s, y * s);
    Ok(RegionProposal {
        origin_x: origin.0,
        origin_y: origin.1,
        window,
        activity_score: sum / area,
        gt_mc: annotations.map(|a| window_count(&agreed_mitoses(a), origin, window)),
        scale: s,
        map_origin: (x, y),
        map_window: mw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            width: 200,
            height: 160,
            resolution_um_per_px: 0.25,
            tissue: vec![Ellipse {
                cx: 100.0,
                cy: 80.0,
                semi_x: 80.0,
                semi_y: 60.0,
                rotation_rad: 0.3,
            }],
            hotspots: vec![],
            base_rate: 2000.0,
            background_gray: 240,
            tissue_gray: 120,
            noise_sigma: 8.0,
            disagreement_fraction: 0.1,
            unclassifiable_fraction: 0.05,
            seed,
        }
    }

    #[test]
    fn zero_rates_give_no_points() {
        let spec = SynthSpec {
            base_rate: 0.0,
            ..disc_spec(1)
        };
        let (_, set) = generate(&spec).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn generate_is_deterministic_and_in_tissue() {
        let spec = disc_spec(5);
        let (r1, a1) = generate(&spec).unwrap();
        let (r2, a2) = generate(&spec).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(a1, a2);
        assert!(!a1.is_empty());
        assert!(a1.items().iter().all(|a| spec.is_tissue(a.x, a.y)));
        let (r3, _) = generate(&disc_spec(6)).unwrap();
        assert_ne!(r1, r3);
    }

    #[test]
    fn labels_follow_fractions() {
        let spec = SynthSpec {
            base_rate: 20000.0,
            ..disc_spec(2)
        };
        let (_, set) = generate(&spec).unwrap();
        let n = set.len() as f64;
        let dis = set.items().iter().filter(|a| a.obs1 != a.obs2).count() as f64;
        let unc = set.items().iter().filter(|a| a.obs1 == Label::Unclassifiable).count() as f64;
        assert!((dis / n - 0.1).abs() < 0.05, "{}", dis / n);
        assert!((unc / n - 0.05).abs() < 0.04, "{}", unc / n);
    }

    #[test]
    fn uncorrupted_map_is_the_gt_render() {
        let (_, set) = generate(&disc_spec(3)).unwrap();
        let pts = agreed_mitoses(&set);
        let tissue = disc_spec(3).tissue_mask();
        let c = Corruption {
            fn_rate: 0.0,
            fp_rate: 0.0,
            blur_radius: 0,
            seed: 1,
        };
        let circle = CircleSpec::new(3).unwrap();
        let out = corrupt_map(&pts, &tissue, circle, 1, &c).unwrap();
        assert_eq!(out, render_gt_map(&pts, 200, 160, circle, 1).unwrap().to_density());
    }

    #[test]
    fn blur_preserves_interior_mass_and_range() {
        let mut v = vec![0f32; 400];
        v[10 * 20 + 10] = 1.0;
        let m = DensityMap::new(20, 20, 1, v).unwrap();
        let b = box_blur(&m, 2).unwrap();
        assert!((b.total() - 1.0).abs() < 1e-6);
        assert!((b.get(8, 12) - 1.0 / 25.0).abs() < 1e-7);
        assert!(b.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn oracle_single_valid_origin() {
        // window equals the slide: exactly one origin
        let spec = HpfSpec {
            area_mm2: 1.0,
            n_fields: 1,
            aspect_w_over_h: 1.0,
        };
        let r = SlideRaster::gray(4, 4, vec![10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 200], 250.0)
            .unwrap();
        let params = MaskParams {
            downsample: 1,
            closing_radius_px: 0,
            coverage_threshold: 0.9,
        };
        let act = DensityMap::new(4, 4, 1, (0..16).map(|v| v as f32).collect()).unwrap();
        let p = oracle_propose(&r, &act, &spec, &params, None).unwrap();
        assert_eq!((p.origin_x, p.origin_y), (0, 0));
        assert_eq!(p.window.width_px, 4);
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let r = SlideRaster::gray(4096, 4096, vec![0; 4096 * 4096], 0.25).unwrap();
        let act = DensityMap::zeros(4096, 4096, 1).unwrap();
        let params = MaskParams {
            downsample: 1,
            ..MaskParams::default()
        };
        let spec = HpfSpec {
            area_mm2: 0.0001,
            ..HpfSpec::default()
        };
        assert!(matches!(
            oracle_propose(&r, &act, &spec, &params, None),
            Err(Error::OracleScale { .. })
        ));
    }
}
