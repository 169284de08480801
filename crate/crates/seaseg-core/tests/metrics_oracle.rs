//! Greedy matching against a brute-force optimal assignment oracle on
//! random instance sets with up to three instances per side.

use seaseg_core::mask::{BinaryMask, InstanceSet};
use seaseg_core::metrics::{match_from_ious, pairwise_iou, ThresholdGrid};

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Random set of up to `max_n` disjoint rectangles on a `size`^2 grid.
fn random_instances(state: &mut u64, size: usize, max_n: usize) -> InstanceSet {
    let n = (splitmix(state) % (max_n as u64 + 1)) as usize;
    let mut occupied = BinaryMask::empty(size, size);
    let mut instances = Vec::new();
    for _ in 0..n {
        for _attempt in 0..20 {
            let rh = 1 + (splitmix(state) % 4) as usize;
            let cw = 1 + (splitmix(state) % 4) as usize;
            let r0 = (splitmix(state) % (size - rh + 1) as u64) as usize;
            let c0 = (splitmix(state) % (size - cw + 1) as u64) as usize;
            let mut cand = BinaryMask::empty(size, size);
            for r in r0..r0 + rh {
                for c in c0..c0 + cw {
                    cand.set(r, c, true);
                }
            }
            if !cand.intersects(&occupied) {
                occupied.union_with(&cand).unwrap();
                instances.push(cand);
                break;
            }
        }
    }
    InstanceSet::new(size, size, instances).unwrap()
}

/// Maximum number of one-to-one matches with IoU > t, by exhaustive
/// search over all injective prediction-to-gt assignments.
fn optimal_match_count(ious: &[Vec<f64>], n_preds: usize, n_gts: usize, t: f64) -> usize {
    fn recurse(
        ious: &[Vec<f64>],
        t: f64,
        pred: usize,
        n_preds: usize,
        gt_used: &mut Vec<bool>,
    ) -> usize {
        if pred == n_preds {
            return 0;
        }
        // skip this prediction
        let mut best = recurse(ious, t, pred + 1, n_preds, gt_used);
        for gi in 0..gt_used.len() {
            if !gt_used[gi] && ious[pred][gi] > t {
                gt_used[gi] = true;
                best = best.max(1 + recurse(ious, t, pred + 1, n_preds, gt_used));
                gt_used[gi] = false;
            }
        }
        best
    }
    let _ = n_gts;
    let mut used = vec![false; n_gts];
    recurse(ious, t, 0, n_preds, &mut used)
}

#[test]
fn greedy_equals_optimal_on_random_sets() {
    let grid = ThresholdGrid::default();
    let mut state = 0x5EED5EEDu64;
    for trial in 0..1000 {
        let preds = random_instances(&mut state, 10, 3);
        let gts = random_instances(&mut state, 10, 3);
        let ious = pairwise_iou(&preds, &gts).unwrap();
        for &t in grid.thresholds() {
            let greedy = match_from_ious(&ious, preds.len(), gts.len(), t);
            let optimal = optimal_match_count(&ious, preds.len(), gts.len(), t);
            assert_eq!(
                greedy.true_pos, optimal,
                "trial {trial} t={t}: greedy {} vs optimal {optimal}",
                greedy.true_pos
            );
            assert_eq!(greedy.true_pos + greedy.false_pos, preds.len());
            assert_eq!(greedy.true_pos + greedy.false_neg, gts.len());
        }
    }
}
