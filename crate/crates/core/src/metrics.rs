//! Soft-IoU loss and its gradient, radius-matched detection F1, Pearson
//! correlation and mean IoU.
//!
//! All reductions run sequentially in index order so repeated runs agree
//! bit for bit.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DensityMap};
use crate::Point;

/// Ground truth and prediction over the same pixel set, all values in
/// `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    ground_truth: Vec<f64>,
    prediction: Vec<f64>,
}

impl LabeledPair {
    pub fn new(ground_truth: Vec<f64>, prediction: Vec<f64>) -> Result<Self> {
        if ground_truth.len() != prediction.len() {
            return Err(Error::domain(format!(
                "ground truth has {} values, prediction {}",
                ground_truth.len(),
                prediction.len()
            )));
        }
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !ground_truth.iter().all(in_unit) || !prediction.iter().all(in_unit) {
            return Err(Error::domain("labels must lie in [0, 1]"));
        }
        Ok(LabeledPair {
            ground_truth,
            prediction,
        })
    }

    pub fn ground_truth(&self) -> &[f64] {
        &self.ground_truth
    }

    pub fn prediction(&self) -> &[f64] {
        &self.prediction
    }

    /// Soft intersection `Σ x·y` and union `Σ (x + y − x·y)`.
    pub fn intersection_union(&self) -> (f64, f64) {
        let mut i = 0.0;
        let mut u = 0.0;
        for (&x, &y) in self.ground_truth.iter().zip(&self.prediction) {
            let xy = x * y;
            i += xy;
            u += x + y - xy;
        }
        (i, u)
    }

    fn checked_terms(&self) -> Result<(f64, f64)> {
        let (i, u) = self.intersection_union();
        if u > 0.0 {
            Ok((i, u))
        } else {
            Err(Error::Degenerate("ground truth and prediction are both empty".into()))
        }
    }
}

/// `-I/U`, in `[-1, 0]`.
pub fn iou_loss(pair: &LabeledPair) -> Result<f64> {
    let (i, u) = pair.checked_terms()?;
    Ok(-i / u)
}

/// `∂L/∂y_v = -(x_v·U − I·(1 − x_v)) / U²`.
pub fn iou_loss_grad(pair: &LabeledPair) -> Result<Vec<f64>> {
    let (i, u) = pair.checked_terms()?;
    let u2 = u * u;
    Ok(pair
        .ground_truth
        .iter()
        .map(|&x| -(x * u - i * (1.0 - x)) / u2)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    /// `(gt_index, pred_index, distance)` in matching order.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Greedy one-to-one matching of detections to ground truth.
///
/// Candidate pairs are those closer than `radius_px`; they are taken in
/// ascending `(distance, gt_index, pred_index)` order, skipping pairs whose
/// ends are already used.
pub fn match_detections(gt: &[Point], pred: &[Point], radius_px: f64) -> Result<MatchResult> {
    if !(radius_px > 0.0 && radius_px.is_finite()) {
        return Err(Error::domain(format!("match radius must be positive, got {radius_px}")));
    }
    let cell = radius_px.ceil().max(1.0) as u64;
    let key = |p: &Point| (p.0 as u64 / cell, p.1 as u64 / cell);
    let mut buckets: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
    for (j, p) in pred.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(j);
    }

    let mut candidates = Vec::new();
    for (i, g) in gt.iter().enumerate() {
        let (cx, cy) = key(g);
        for ky in cy.saturating_sub(1)..=cy + 1 {
            for kx in cx.saturating_sub(1)..=cx + 1 {
                let Some(js) = buckets.get(&(kx, ky)) else { continue };
                for &j in js {
                    let dx = g.0 as f64 - pred[j].0 as f64;
                    let dy = g.1 as f64 - pred[j].1 as f64;
                    let d = (dx * dx + dy * dy).sqrt();
                    if d < radius_px {
                        candidates.push((d, i, j));
                    }
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in candidates {
        if gt_used[i] || pred_used[j] {
            continue;
        }
        gt_used[i] = true;
        pred_used[j] = true;
        pairs.push((i, j, d));
    }
    let tp = pairs.len() as u64;
    Ok(MatchResult {
        true_positives: tp,
        false_positives: pred.len() as u64 - tp,
        false_negatives: gt.len() as u64 - tp,
        pairs,
    })
}

/// `2TP / (2TP + FP + FN)`, zero when nothing was detected or annotated.
pub fn f1(m: &MatchResult) -> f64 {
    f1_counts(m.true_positives, m.false_positives, m.false_negatives)
}

pub fn f1_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Sample Pearson correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("vectors differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::domain("correlation needs at least two samples"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("a sample has zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn confusion(gt: &BinaryMask, pred: &BinaryMask) -> Result<[u64; 4]> {
    if (gt.width(), gt.height()) != (pred.width(), pred.height()) {
        return Err(Error::domain(format!(
            "masks differ in size: {}x{} vs {}x{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    // [both 0, gt only, pred only, both 1]
    let mut c = [0u64; 4];
    for (&g, &p) in gt.bits().iter().zip(pred.bits()) {
        c[(g | (p << 1)) as usize] += 1;
    }
    Ok([c[0], c[1], c[2], c[3]])
}

fn class_iou(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean over foreground and background of per-class IoU. A class absent
/// from both masks scores 1.
pub fn mean_iou(gt: &BinaryMask, pred: &BinaryMask) -> Result<f64> {
    let [nn, gt_only, pred_only, both] = confusion(gt, pred)?;
    let fg = class_iou(both, both + gt_only + pred_only);
    let bg = class_iou(nn, nn + gt_only + pred_only);
    Ok((fg + bg) / 2.0)
}

/// IoU of the foreground class alone.
pub fn foreground_iou(gt: &BinaryMask, pred: &BinaryMask) -> Result<f64> {
    let [_, gt_only, pred_only, both] = confusion(gt, pred)?;
    Ok(class_iou(both, both + gt_only + pred_only))
}

/// Binarizes a map at `threshold` (value `>= threshold` is foreground).
pub fn binarize(map: &DensityMap, threshold: f32) -> BinaryMask {
    let bits = map.values().iter().map(|&v| (v >= threshold) as u8).collect();
    BinaryMask::new(map.width(), map.height(), map.scale(), bits).expect("same shape as a valid map")
}

/// Centroids of the 8-connected foreground components of a binarized map,
/// in full-resolution coordinates.
pub fn detections_from_map(map: &DensityMap, threshold: f32) -> Vec<Point> {
    let mask = binarize(map, threshold);
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let s = map.scale();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || mask.bits()[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            sx += x as u64;
            sy += y as u64;
            n += 1;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && mask.bits()[j] == 1 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        // rounded centroid in map pixels, then the block center at full res
        let cx = ((2 * sx + n) / (2 * n)) as u32;
        let cy = ((2 * sy + n) / (2 * n)) as u32;
        out.push((cx * s + s / 2, cy * s + s / 2));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(x: &[f64], y: &[f64]) -> LabeledPair {
        LabeledPair::new(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn iou_loss_examples() {
        assert_eq!(iou_loss(&pair(&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0])).unwrap(), -1.0);
        assert_eq!(iou_loss(&pair(&[1.0, 0.0], &[0.0, 1.0])).unwrap(), 0.0);
        let l = iou_loss(&pair(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0])).unwrap();
        assert!((l + 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(iou_loss(&pair(&[0.0, 0.0], &[0.0, 0.0])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(iou_loss_grad(&pair(&[0.0], &[0.5])).unwrap(), vec![0.0]);
        assert_eq!(iou_loss_grad(&pair(&[1.0], &[0.5])).unwrap(), vec![-1.0]);
    }

    #[test]
    fn pair_validation() {
        assert!(LabeledPair::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(LabeledPair::new(vec![1.5], vec![0.0]).is_err());
    }

    #[test]
    fn matching_examples() {
        let m = match_detections(&[(0, 0)], &[(1, 0)], 2.0).unwrap();
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (1, 0, 0));
        let m = match_detections(&[(0, 0)], &[(5, 0)], 2.0).unwrap();
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (0, 1, 1));
        let m = match_detections(&[(0, 0), (2, 0)], &[(1, 0)], 2.0).unwrap();
        assert_eq!((m.true_positives, m.false_negatives), (1, 1));
        assert_eq!(m.pairs, vec![(0, 0, 1.0)]);
        // distance equal to the radius does not match
        let m = match_detections(&[(0, 0)], &[(2, 0)], 2.0).unwrap();
        assert_eq!(m.true_positives, 0);
        assert!(match_detections(&[], &[], 0.0).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_counts(1, 0, 0), 1.0);
        assert_eq!(f1_counts(0, 0, 0), 0.0);
        assert!((f1_counts(2, 1, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0, 5.0];
        assert!((pearson_r(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson_r(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson_r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
        assert!((r - 0.9934).abs() < 1e-3, "{r}");
        assert!(matches!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn mean_iou_examples() {
        let a = BinaryMask::new(2, 2, 1, vec![1, 0, 1, 0]).unwrap();
        assert_eq!(mean_iou(&a, &a).unwrap(), 1.0);
        let comp = BinaryMask::new(2, 2, 1, vec![0, 1, 0, 1]).unwrap();
        assert_eq!(mean_iou(&a, &comp).unwrap(), 0.0);
        let top = BinaryMask::new(2, 2, 1, vec![1, 1, 0, 0]).unwrap();
        assert!((mean_iou(&a, &top).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((foreground_iou(&a, &top).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty = BinaryMask::filled(2, 2, 1, false).unwrap();
        assert_eq!(mean_iou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn blobs_become_centroids() {
        let mut v = vec![0f32; 100];
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2), (7, 7)] {
            v[y * 10 + x] = 1.0;
        }
        let m = DensityMap::new(10, 10, 2, v).unwrap();
        // centroid (1.5, 1.5) rounds to (2, 2)
        assert_eq!(detections_from_map(&m, 0.5), vec![(5, 5), (15, 15)]);
    }
}
