//! Segmentation losses with exact analytic gradients: cross-entropy,
//! aggregated soft Jaccard, Lovász-Softmax, and their convex combination.
//!
//! Each loss computes its value and its full gradient with respect to the
//! probability tensor at forward time and registers both as one scalar
//! tape node. The Lovász construction follows the sorted-error form: per
//! class, errors are sorted descending (stable, ties by pixel index) and
//! weighted by the discrete derivative of the Jaccard set function along
//! the sorted ground truth.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::tensor::{Tape, TensorError, TensorId};
use crate::types::LabelMap;
#[allow(unused_imports)]
use num_traits::Float;

/// Probabilities below this are clamped before the log in cross-entropy.
pub const CE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    Shape(String),
    Config(String),
    Tensor(TensorError),
}

impl core::fmt::Display for LossError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LossError::Shape(msg) => write!(f, "loss shape error: {msg}"),
            LossError::Config(msg) => write!(f, "loss config error: {msg}"),
            LossError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LossError {}

impl From<TensorError> for LossError {
    fn from(e: TensorError) -> Self {
        LossError::Tensor(e)
    }
}

/// Which IoU surrogate the combined objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouTerm {
    Jaccard,
    Lovasz,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the IoU term; cross-entropy gets `1 - alpha`.
    pub alpha: f64,
    pub iou_term: IouTerm,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.7,
            iou_term: IouTerm::Lovasz,
            epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LossError::Config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(LossError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn check_labels<T: Elem>(
    tape: &Tape<T>,
    probs: TensorId,
    labels: &LabelMap,
) -> Result<(), LossError> {
    let s = tape.shape(probs);
    if labels.n != s.n || labels.h != s.h || labels.w != s.w {
        return Err(LossError::Shape(format!(
            "labels {}x{}x{} do not match probabilities {}",
            labels.n, labels.h, labels.w, s
        )));
    }
    if let Some(bad) = labels.data.iter().find(|&&y| (y as usize) >= s.c) {
        return Err(LossError::Shape(format!(
            "label value {bad} out of range for {} classes",
            s.c
        )));
    }
    Ok(())
}

/// Mean over pixels of `-log p(true class)`, probabilities clamped at
/// 1e-12 before the log.
pub fn cross_entropy<T: Elem>(
    tape: &mut Tape<T>,
    probs: TensorId,
    labels: &LabelMap,
) -> Result<TensorId, LossError> {
    check_labels(tape, probs, labels)?;
    let s = tape.shape(probs);
    let hw = s.h * s.w;
    let npix = (s.n * hw).max(1);
    let inv = 1.0 / npix as f64;
    let clamp = T::from_f64(CE_CLAMP);

    let mut value = 0.0f64;
    let mut grad = vec![T::zero(); s.numel()];
    {
        let p = tape.value(probs);
        for n in 0..s.n {
            for pix in 0..hw {
                let y = labels.data[n * hw + pix] as usize;
                let idx = (n * s.c + y) * hw + pix;
                let pv = p[idx];
                if pv > clamp {
                    value -= pv.to_f64().ln();
                    grad[idx] = T::from_f64(-inv) / pv;
                } else {
                    value -= CE_CLAMP.ln();
                    // clamped region: constant, zero slope
                }
            }
        }
    }
    Ok(tape.scalar_fn(probs, T::from_f64(value * inv), grad)?)
}

/// Per-class soft Jaccard indices aggregated over all pixels:
/// `J_c = (sum(y*p) + eps) / (sum(y + p - y*p) + eps)`.
pub fn soft_jaccard_per_class<T: Elem>(
    probs: &[T],
    classes: usize,
    labels: &LabelMap,
    eps: f64,
) -> Vec<f64> {
    let mut inter = vec![0.0f64; classes];
    let mut union = vec![0.0f64; classes];
    let hw = labels.h * labels.w;
    for n in 0..labels.n {
        for pix in 0..hw {
            let y = labels.data[n * hw + pix] as usize;
            for c in 0..classes {
                let p = probs[(n * classes + c) * hw + pix].to_f64();
                let yc = if y == c { 1.0 } else { 0.0 };
                inter[c] += yc * p;
                union[c] += yc + p - yc * p;
            }
        }
    }

    (0..classes)
        .map(|c| (inter[c] + eps) / (union[c] + eps))
        .collect()
}

/// `1 - mean_c J_c` with the epsilon-smoothed aggregated Jaccard.
pub fn soft_jaccard_loss<T: Elem>(
    tape: &mut Tape<T>,
    probs: TensorId,
    labels: &LabelMap,
    eps: f64,
) -> Result<TensorId, LossError> {
    check_labels(tape, probs, labels)?;
    let s = tape.shape(probs);
    let hw = s.h * s.w;

    let mut inter = vec![0.0f64; s.c];
    let mut union = vec![0.0f64; s.c];
    {
        let p = tape.value(probs);
        for n in 0..s.n {
            for pix in 0..hw {
                let y = labels.data[n * hw + pix] as usize;
                for c in 0..s.c {
                    let pv = p[(n * s.c + c) * hw + pix].to_f64();
                    let yc = if y == c { 1.0 } else { 0.0 };
                    inter[c] += yc * pv;
                    union[c] += yc + pv - yc * pv;
                }
            }
        }
    }
    let inv_c = 1.0 / s.c as f64;
    let mut value = 1.0;
    for c in 0..s.c {
        value -= inv_c * (inter[c] + eps) / (union[c] + eps);
    }

    // dJ_c/dp = (y*(U+eps) - (I+eps)*(1-y)) / (U+eps)^2, loss takes -1/C of it
    let mut grad = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for pix in 0..hw {
            let y = labels.data[n * hw + pix] as usize;
            for c in 0..s.c {
                let u = union[c] + eps;
                let i = inter[c] + eps;
                let yc = if y == c { 1.0 } else { 0.0 };
                let dj = (yc * u - i * (1.0 - yc)) / (u * u);
                grad[(n * s.c + c) * hw + pix] = T::from_f64(-inv_c * dj);
            }
        }
    }
    Ok(tape.scalar_fn(probs, T::from_f64(value), grad)?)
}

/// Lovász gradient coefficients for one class: `g_k` along errors sorted
/// descending, where `jac_k = 1 - inter_k/union_k` walks the sorted
/// ground-truth indicator.
fn lovasz_grad(gt_sorted: &[bool]) -> Vec<f64> {
    let p = gt_sorted.iter().filter(|&&g| g).count() as f64;
    let mut g = Vec::with_capacity(gt_sorted.len());
    let mut cum_gt = 0.0f64;
    let mut cum_not = 0.0f64;
    let mut prev = 0.0f64;
    for (k, &is_gt) in gt_sorted.iter().enumerate() {
        if is_gt {
            cum_gt += 1.0;
        } else {
            cum_not += 1.0;
        }
        let inter = p - cum_gt;
        let union = p + cum_not;
        let jac = if union > 0.0 { 1.0 - inter / union } else { 0.0 };
        g.push(if k == 0 { jac } else { jac - prev });
        prev = jac;
    }
    g
}

/// Lovász-Softmax over the classes present in `labels`. Empty label maps
/// are defined as zero loss.
pub fn lovasz_softmax<T: Elem>(
    tape: &mut Tape<T>,
    probs: TensorId,
    labels: &LabelMap,
) -> Result<TensorId, LossError> {
    check_labels(tape, probs, labels)?;
    let s = tape.shape(probs);
    let hw = s.h * s.w;
    let npix = s.n * hw;

    let mut counts = vec![0usize; s.c];
    for &y in &labels.data {
        counts[y as usize] += 1;
    }
    let present: Vec<usize> = (0..s.c).filter(|&c| counts[c] > 0).collect();
    if present.is_empty() {
        return Ok(tape.scalar_fn(probs, T::zero(), vec![T::zero(); s.numel()])?);
    }

    let inv_present = 1.0 / present.len() as f64;
    let mut value = 0.0f64;
    let mut grad = vec![T::zero(); s.numel()];
    // scratch reused across classes: (error, flat pixel index)
    let mut errors: Vec<(f64, usize)> = Vec::with_capacity(npix);
    {
        let p = tape.value(probs);
        for &c in &present {
            errors.clear();
            for n in 0..s.n {
                for pix in 0..hw {
                    let y = labels.data[n * hw + pix] as usize;
                    let pv = p[(n * s.c + c) * hw + pix].to_f64();
                    let m = if y == c { 1.0 - pv } else { pv };
                    errors.push((m, n * hw + pix));
                }
            }
            // stable descending sort; ties keep pixel order
            errors.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite errors"));
            let gt_sorted: Vec<bool> = errors
                .iter()
                .map(|&(_, i)| labels.data[i] as usize == c)
                .collect();
            let g = lovasz_grad(&gt_sorted);
            for (k, &(m, flat)) in errors.iter().enumerate() {
                value += inv_present * m * g[k];
                let n = flat / hw;
                let pix = flat % hw;
                let sign = if labels.data[flat] as usize == c {
                    -1.0
                } else {
                    1.0
                };
                let gi = (n * s.c + c) * hw + pix;
                grad[gi] = grad[gi] + T::from_f64(inv_present * sign * g[k]);
            }
        }
    }
    Ok(tape.scalar_fn(probs, T::from_f64(value), grad)?)
}

/// `alpha * iou_term + (1 - alpha) * cross_entropy`.
pub fn combined_loss<T: Elem>(
    tape: &mut Tape<T>,
    probs: TensorId,
    labels: &LabelMap,
    cfg: &LossConfig,
) -> Result<TensorId, LossError> {
    cfg.validate()?;
    let iou = match cfg.iou_term {
        IouTerm::Jaccard => soft_jaccard_loss(tape, probs, labels, cfg.epsilon)?,
        IouTerm::Lovasz => lovasz_softmax(tape, probs, labels)?,
    };
    let ce = cross_entropy(tape, probs, labels)?;
    let a = tape.scale(iou, T::from_f64(cfg.alpha));
    let b = tape.scale(ce, T::from_f64(1.0 - cfg.alpha));
    Ok(tape.add(a, b)?)
}

/// Cross-entropy only (the `ce` CLI loss mode).
pub fn cross_entropy_only<T: Elem>(
    tape: &mut Tape<T>,
    probs: TensorId,
    labels: &LabelMap,
) -> Result<TensorId, LossError> {
    cross_entropy(tape, probs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    /// Builds a 2-class prob tensor from per-pixel foreground probs.
    fn probs_from_fg(tape: &mut Tape<f64>, fg: &[f64], h: usize, w: usize) -> TensorId {
        assert_eq!(fg.len(), h * w);
        let mut data = Vec::with_capacity(2 * h * w);
        for &p in fg {
            data.push(1.0 - p);
        }
        for &p in fg {
            data.push(p);
        }
        tape.leaf(data, Shape::new(1, 2, h, w), true).unwrap()
    }

    fn labels_from_fg(fg: &[u8], h: usize, w: usize) -> LabelMap {
        LabelMap::new(1, h, w, fg.to_vec())
    }

    #[test]
    fn ce_perfect_is_zero_and_uniform_is_ln2() {
        let mut tape = Tape::new();
        let probs = probs_from_fg(&mut tape, &[1.0, 0.0, 1.0, 0.0], 2, 2);
        let labels = labels_from_fg(&[1, 0, 1, 0], 2, 2);
        let loss = cross_entropy(&mut tape, probs, &labels).unwrap();
        assert_eq!(tape.value(loss)[0], 0.0);

        let mut tape = Tape::new();
        let probs = probs_from_fg(&mut tape, &[0.5; 4], 2, 2);
        let loss = cross_entropy(&mut tape, probs, &labels).unwrap();
        assert!((tape.value(loss)[0] - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn ce_shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let probs = probs_from_fg(&mut tape, &[0.5; 4], 2, 2);
        let labels = labels_from_fg(&[0; 6], 2, 3);
        assert!(matches!(
            cross_entropy(&mut tape, probs, &labels),
            Err(LossError::Shape(_))
        ));
    }

    #[test]
    fn jaccard_perfect_hard_prediction_is_zero() {
        let mut tape = Tape::new();
        let probs = probs_from_fg(&mut tape, &[1.0, 0.0, 0.0, 1.0], 2, 2);
        let labels = labels_from_fg(&[1, 0, 0, 1], 2, 2);
        let loss = soft_jaccard_loss(&mut tape, probs, &labels, 1e-7).unwrap();
        assert_eq!(tape.value(loss)[0], 0.0);
    }

    #[test]
    fn jaccard_half_foreground_case() {
        // prediction: fg everywhere; truth: fg on half the pixels
        let mut tape = Tape::new();
        let probs = probs_from_fg(&mut tape, &[1.0; 4], 2, 2);
        let labels = labels_from_fg(&[1, 1, 0, 0], 2, 2);
        let per_class =
            soft_jaccard_per_class(tape.value(probs), 2, &labels, 1e-7);
        assert!((per_class[1] - 0.5).abs() < 1e-6, "fg J = {}", per_class[1]);
        // bg: intersection empty, union = 2 true-bg pixels
        assert!(per_class[0] < 1e-6);
        let loss = soft_jaccard_loss(&mut tape, probs, &labels, 1e-7).unwrap();
        assert!((tape.value(loss)[0] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn jaccard_empty_class_smoothed_to_one() {
        let mut tape = Tape::new();
        // everything background, predicted background
        let probs = probs_from_fg(&mut tape, &[0.0; 4], 2, 2);
        let labels = labels_from_fg(&[0; 4], 2, 2);
        let per_class = soft_jaccard_per_class(tape.value(probs), 2, &labels, 1e-7);
        assert_eq!(per_class[1], 1.0, "empty class must smooth to J = 1");
        let loss = soft_jaccard_loss(&mut tape, probs, &labels, 1e-7).unwrap();
        assert!(tape.value(loss)[0].abs() < 1e-12);
        assert!(tape.value(loss)[0].is_finite());
    }

    #[test]
    fn lovasz_perfect_is_zero() {
        let mut tape = Tape::new();
        let probs = probs_from_fg(&mut tape, &[1.0, 0.0, 1.0, 1.0], 2, 2);
        let labels = labels_from_fg(&[1, 0, 1, 1], 2, 2);
        let loss = lovasz_softmax(&mut tape, probs, &labels).unwrap();
        assert_eq!(tape.value(loss)[0], 0.0);
    }

    #[test]
    fn lovasz_two_pixel_hand_trace() {
        // labels [fg, bg], p(fg) = [0.6, 0.4]: both classes contribute 0.4
        let mut tape = Tape::new();
        let probs = probs_from_fg(&mut tape, &[0.6, 0.4], 1, 2);
        let labels = labels_from_fg(&[1, 0], 1, 2);
        let loss = lovasz_softmax(&mut tape, probs, &labels).unwrap();
        assert!((tape.value(loss)[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn lovasz_vertex_inputs_equal_one_minus_iou() {
        // exhaustive over 2- and 3-pixel binary labelings and vertex probs
        for npix in [2usize, 3] {
            for label_bits in 0..(1u32 << npix) {
                for prob_bits in 0..(1u32 << npix) {
                    let labels_vec: Vec<u8> = (0..npix)
                        .map(|i| ((label_bits >> i) & 1) as u8)
                        .collect();
                    let fg: Vec<f64> = (0..npix)
                        .map(|i| ((prob_bits >> i) & 1) as f64)
                        .collect();
                    let mut tape = Tape::new();
                    let probs = probs_from_fg(&mut tape, &fg, 1, npix);
                    let labels = labels_from_fg(&labels_vec, 1, npix);
                    let loss = lovasz_softmax(&mut tape, probs, &labels).unwrap();

                    // reference: 1 - IoU per present class on the hard sets
                    let mut expect = 0.0;
                    let mut present = 0;
                    for c in 0..2u8 {
                        let has = labels_vec.iter().any(|&y| y == c);
                        if !has {
                            continue;
                        }
                        present += 1;
                        let mut inter = 0.0;
                        let mut union = 0.0;
                        for i in 0..npix {
                            let y = labels_vec[i] == c;
                            let p = if c == 1 { fg[i] > 0.5 } else { fg[i] < 0.5 };
                            if y && p {
                                inter += 1.0;
                            }
                            if y || p {
                                union += 1.0;
                            }
                        }
                        let iou = if union == 0.0 { 1.0 } else { inter / union };
                        expect += 1.0 - iou;
                    }
                    expect /= present as f64;
                    let got = tape.value(loss)[0];
                    assert!(
                        (got - expect).abs() < 1e-9,
                        "labels {labels_vec:?} probs {fg:?}: got {got}, want {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn lovasz_empty_label_map_is_zero() {
        let mut tape = Tape::<f64>::new();
        let probs = tape
            .leaf(vec![], Shape::new(0, 2, 2, 2), true)
            .unwrap();
        let labels = LabelMap::new(0, 2, 2, vec![]);
        let loss = lovasz_softmax(&mut tape, probs, &labels).unwrap();
        assert_eq!(tape.value(loss)[0], 0.0);
    }

    #[test]
    fn lovasz_piecewise_linear_for_fixed_order() {
        // With two classes both error vectors equal [1-a0, 1-a1, a2, a3];
        // these two points sort it the same way (pixels 1, 2, 3, 0), so the
        // loss must be linear along their segment.
        let p = [0.9, 0.6, 0.3, 0.2];
        let q = [0.95, 0.5, 0.45, 0.4];
        let labels = labels_from_fg(&[1, 1, 0, 0], 2, 2);
        let eval = |fg: &[f64]| {
            let mut tape = Tape::new();
            let probs = probs_from_fg(&mut tape, fg, 2, 2);
            let loss = lovasz_softmax(&mut tape, probs, &labels).unwrap();
            tape.value(loss)[0]
        };
        let lp = eval(&p);
        let lq = eval(&q);
        for &lambda in &[0.25, 0.5, 0.75] {
            let mix: Vec<f64> = p
                .iter()
                .zip(&q)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let lm = eval(&mix);
            let expect = lambda * lp + (1.0 - lambda) * lq;
            assert!(
                (lm - expect).abs() < 1e-12,
                "lambda {lambda}: {lm} vs {expect}"
            );
        }
    }

    #[test]
    fn combined_loss_endpoints() {
        let fg = [0.7, 0.2, 0.6, 0.4];
        let labels = labels_from_fg(&[1, 0, 1, 0], 2, 2);
        let eval = |alpha: f64| {
            let mut tape = Tape::new();
            let probs = probs_from_fg(&mut tape, &fg, 2, 2);
            let cfg = LossConfig {
                alpha,
                ..LossConfig::default()
            };
            let l = combined_loss(&mut tape, probs, &labels, &cfg).unwrap();
            let ce = cross_entropy(&mut tape, probs, &labels).unwrap();
            let lov = lovasz_softmax(&mut tape, probs, &labels).unwrap();
            (
                tape.value(l)[0],
                tape.value(ce)[0],
                tape.value(lov)[0],
            )
        };
        let (l0, ce, _) = eval(0.0);
        assert_eq!(l0, ce);
        let (l1, _, lov) = eval(1.0);
        assert_eq!(l1, lov);
    }

    #[test]
    fn combined_loss_perfect_prediction_is_zero_at_alpha_07() {
        let mut tape = Tape::new();
        let probs = probs_from_fg(&mut tape, &[1.0, 0.0], 1, 2);
        let labels = labels_from_fg(&[1, 0], 1, 2);
        let cfg = LossConfig::default();
        assert_eq!(cfg.alpha, 0.7);
        let l = combined_loss(&mut tape, probs, &labels, &cfg).unwrap();
        assert_eq!(tape.value(l)[0], 0.0);
    }

    #[test]
    fn combined_loss_rejects_bad_alpha() {
        let mut tape = Tape::<f64>::new();
        let probs = probs_from_fg(&mut tape, &[0.5, 0.5], 1, 2);
        let labels = labels_from_fg(&[1, 0], 1, 2);
        let cfg = LossConfig {
            alpha: 1.5,
            ..LossConfig::default()
        };
        assert!(matches!(
            combined_loss(&mut tape, probs, &labels, &cfg),
            Err(LossError::Config(_))
        ));
    }

    #[test]
    fn increasing_true_class_prob_never_increases_any_loss() {
        let base_fg = [0.3, 0.8, 0.45, 0.6, 0.15, 0.9];
        let label_data = [1u8, 1, 0, 0, 1, 0];
        let labels = labels_from_fg(&label_data, 2, 3);
        let losses = |fg: &[f64]| {
            let mut tape = Tape::new();
            let probs = probs_from_fg(&mut tape, fg, 2, 3);
            let ce = cross_entropy(&mut tape, probs, &labels).unwrap();
            let ja = soft_jaccard_loss(&mut tape, probs, &labels, 1e-7).unwrap();
            let lo = lovasz_softmax(&mut tape, probs, &labels).unwrap();
            [
                tape.value(ce)[0],
                tape.value(ja)[0],
                tape.value(lo)[0],
            ]
        };
        let before = losses(&base_fg);
        for pix in 0..base_fg.len() {
            let mut fg = base_fg;
            // move probability mass toward the true class at one pixel
            if label_data[pix] == 1 {
                fg[pix] = (fg[pix] + 0.07).min(1.0);
            } else {
                fg[pix] = (fg[pix] - 0.07).max(0.0);
            }
            let after = losses(&fg);
            for k in 0..3 {
                assert!(
                    after[k] <= before[k] + 1e-12,
                    "loss {k} increased at pixel {pix}: {} -> {}",
                    before[k],
                    after[k]
                );
            }
        }
    }

    #[test]
    fn all_losses_nonnegative_on_random_inputs() {
        for seed in 0..20u64 {
            let fg: Vec<f64> = crate::gradcheck::fill(seed, 12)
                .into_iter()
                .map(|v| (v + 2.0) / 4.0)
                .collect();
            let label_data: Vec<u8> = crate::gradcheck::fill(seed + 100, 12)
                .into_iter()
                .map(|v| (v > 0.0) as u8)
                .collect();
            let labels = labels_from_fg(&label_data, 3, 4);
            let mut tape = Tape::new();
            let probs = probs_from_fg(&mut tape, &fg, 3, 4);
            let ce = cross_entropy(&mut tape, probs, &labels).unwrap();
            let ja = soft_jaccard_loss(&mut tape, probs, &labels, 1e-7).unwrap();
            let lo = lovasz_softmax(&mut tape, probs, &labels).unwrap();
            for (name, id) in [("ce", ce), ("jaccard", ja), ("lovasz", lo)] {
                let v = tape.value(id)[0];
                assert!(v >= -1e-12, "{name} negative: {v}");
            }
        }
    }
}
