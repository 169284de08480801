//! The evaluation metric: per-image instance matching at a grid of IoU
//! thresholds, F-beta with beta = 2, and the mean F2 over the grid.
//!
//! Matching is greedy by descending IoU among pairs with IoU strictly
//! above the threshold, one-to-one. At thresholds of 0.5 and above a
//! prediction can clear the bar with at most one ground-truth instance
//! (and vice versa), so greedy matching coincides with the optimal
//! assignment; the oracle tests verify this.

use alloc::vec::Vec;

use crate::mask::{BinaryMask, InstanceSet, MaskError};

/// IoU thresholds 0.50, 0.55, ..., 0.95. Values are exact f64 rationals
/// (k/20) so strict comparisons behave predictably.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    thresholds: Vec<f64>,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid {
            thresholds: (10..20).map(|i| i as f64 / 20.0).collect(),
        }
    }
}

impl ThresholdGrid {
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// Matching outcome at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

/// `|A ∩ B| / |A ∪ B|`; zero when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    if a.dims() != b.dims() {
        return Err(MaskError::DimMismatch {
            lhs: a.dims(),
            rhs: b.dims(),
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        Ok(0.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// All pairwise IoUs, reused across the threshold sweep.
pub fn pairwise_iou(preds: &InstanceSet, gts: &InstanceSet) -> Result<Vec<Vec<f64>>, MaskError> {
    if preds.dims() != gts.dims() {
        return Err(MaskError::DimMismatch {
            lhs: preds.dims(),
            rhs: gts.dims(),
        });
    }
    preds
        .iter()
        .map(|p| gts.iter().map(|g| iou(p, g)).collect())
        .collect()
}

/// Greedy one-to-one matching by descending IoU among pairs with
/// IoU strictly greater than `t`.
pub fn match_instances(
    preds: &InstanceSet,
    gts: &InstanceSet,
    t: f64,
) -> Result<MatchCounts, MaskError> {
    let ious = pairwise_iou(preds, gts)?;
    Ok(match_from_ious(&ious, preds.len(), gts.len(), t))
}

/// Matching on a precomputed IoU table.
pub fn match_from_ious(
    ious: &[Vec<f64>],
    n_preds: usize,
    n_gts: usize,
    t: f64,
) -> MatchCounts {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, row) in ious.iter().enumerate() {
        for (gi, &v) in row.iter().enumerate() {
            if v > t {
                candidates.push((v, pi, gi));
            }
        }
    }
    // descending IoU, ties by (pred, gt) index for determinism
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("IoU is finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut pred_used = alloc::vec![false; n_preds];
    let mut gt_used = alloc::vec![false; n_gts];
    let mut tp = 0usize;
    for (_, pi, gi) in candidates {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            tp += 1;
        }
    }
    MatchCounts {
        true_pos: tp,
        false_pos: n_preds - tp,
        false_neg: n_gts - tp,
    }
}

/// F-beta from match counts; 1 when everything is zero (empty image,
/// no predictions).
pub fn f_beta(counts: MatchCounts, beta: f64) -> f64 {
    let b2 = beta * beta;
    let tp = counts.true_pos as f64;
    let denom = (1.0 + b2) * tp + b2 * counts.false_neg as f64 + counts.false_pos as f64;
    if denom == 0.0 {
        1.0
    } else {
        (1.0 + b2) * tp / denom
    }
}

/// Mean F2 over the threshold grid for one image.
pub fn mean_f2(
    preds: &InstanceSet,
    gts: &InstanceSet,
    grid: &ThresholdGrid,
) -> Result<f64, MaskError> {
    let ious = pairwise_iou(preds, gts)?;
    let mut total = 0.0;
    for &t in grid.thresholds() {
        let counts = match_from_ious(&ious, preds.len(), gts.len(), t);
        total += f_beta(counts, 2.0);
    }
    Ok(total / grid.len() as f64)
}

/// Corpus composition: empty vs non-empty images and the ship-count
/// histogram with bins 0..=15 (counts above 15 clamp into the last bin).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub empty: usize,
    pub non_empty: usize,
    pub histogram: [usize; 16],
}

pub fn corpus_stats<I: IntoIterator<Item = usize>>(ship_counts: I) -> CorpusStats {
    let mut stats = CorpusStats {
        empty: 0,
        non_empty: 0,
        histogram: [0; 16],
    };
    for count in ship_counts {
        if count == 0 {
            stats.empty += 1;
        } else {
            stats.non_empty += 1;
        }
        stats.histogram[count.min(15)] += 1;
    }
    stats
}
