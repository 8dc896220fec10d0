//! Reference implementations shared by the integration tests. Each one
//! recomputes its result directly, without the production data structures.

#![allow(dead_code)]

use hpf_roi::geometry::WindowSize;
use hpf_roi::raster::{BinaryMask, DensityMap};

/// Threshold maximizing between-class variance `w0·w1·(μ0 − μ1)²`, from
/// class statistics gathered pixel by pixel for each of the 256 candidates
/// and compared as exact rationals; the first maximizer wins.
pub fn exhaustive_otsu(px: &[u8]) -> u8 {
    // n²·w0·w1·(μ0 − μ1)² = (s0·n1 − s1·n0)² / (n0·n1)
    let mut best: Option<(u128, u128, u8)> = None;
    for t in 0..=255u8 {
        let (mut n0, mut n1, mut s0, mut s1) = (0i128, 0i128, 0i128, 0i128);
        for &p in px {
            if p <= t {
                n0 += 1;
                s0 += p as i128;
            } else {
                n1 += 1;
                s1 += p as i128;
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let num = (s0 * n1 - s1 * n0).pow(2) as u128;
        let den = (n0 * n1) as u128;
        if best.is_none_or(|(bn, bd, _)| num * bd > bn * den) {
            best = Some((num, den, t));
        }
    }
    best.unwrap().2
}

/// Best valid origin by summing every window pixel by pixel; strict `>`
/// keeps the first row-major maximizer.
pub fn exhaustive_argmax(map: &DensityMap, valid: &BinaryMask, window: WindowSize) -> Option<(f64, u32, u32)> {
    let (w, h) = (map.width(), map.height());
    let (ww, wh) = (window.width_px, window.height_px);
    if ww > w || wh > h {
        return None;
    }
    let mut best: Option<(f64, u32, u32)> = None;
    for y in 0..=h - wh {
        for x in 0..=w - ww {
            if !valid.get(x, y) {
                continue;
            }
            let mut s = 0.0;
            for yy in y..y + wh {
                for xx in x..x + ww {
                    s += map.get(xx, yy) as f64;
                }
            }
            if best.is_none_or(|b| s > b.0) {
                best = Some((s, x, y));
            }
        }
    }
    best
}

/// Central difference of the soft IoU loss in prediction component `v`.
pub fn central_difference(g: &[f64], p: &[f64], v: usize, h: f64) -> f64 {
    let at = |delta: f64| {
        let mut q = p.to_vec();
        q[v] += delta;
        let (mut i, mut u) = (0.0, 0.0);
        for (&x, &y) in g.iter().zip(&q) {
            i += x * y;
            u += x + y - x * y;
        }
        -i / u
    };
    (at(h) - at(-h)) / (2.0 * h)
}
