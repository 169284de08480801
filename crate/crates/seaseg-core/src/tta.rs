//! Test-time augmentation over D8 elements and probability-to-instance
//! conversion.
//!
//! Predictions are averaged in a canonical element order (sorted by
//! element index), so any permutation of the configured subset produces
//! bitwise-identical output.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::d8::{transform_chw, D8};
use crate::elem::Elem;
use crate::image::FloatImage;
use crate::mask::{connected_components, BinaryMask, Connectivity, InstanceSet};
use crate::model::{Model, ModelError};
use crate::tensor::{Shape, Tape};
use crate::types::ProbMap;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub enum TtaError {
    Config(String),
    Predict(String),
}

impl core::fmt::Display for TtaError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TtaError::Config(msg) => write!(f, "tta config error: {msg}"),
            TtaError::Predict(msg) => write!(f, "prediction failed: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TtaError {}

/// Anything that maps a (C, H, W) image to a per-pixel probability map.
/// Implemented by [`Model`] and by the stub predictors in the tests.
pub trait Predictor<T: Elem> {
    fn predict(&self, chw: &FloatImage) -> Result<ProbMap<T>, ModelError>;
}

impl<T: Elem> Predictor<T> for Model<T> {
    fn predict(&self, chw: &FloatImage) -> Result<ProbMap<T>, ModelError> {
        let mut tape = Tape::new();
        let shape = Shape::new(1, chw.channels, chw.h, chw.w);
        let data: Vec<T> = chw.data.iter().map(|&v| T::from_f64(v as f64)).collect();
        let x = tape
            .leaf(data, shape, false)
            .map_err(|e| ModelError::Input(format!("{e}")))?;
        let out = self.forward_eval(&mut tape, x)?;
        Ok(ProbMap::from_tape(&tape, out.probs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    Arithmetic,
    Geometric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtaConfig {
    pub elements: Vec<D8>,
    pub mean: MeanKind,
}

impl Default for TtaConfig {
    fn default() -> Self {
        TtaConfig::named_six()
    }
}

impl TtaConfig {
    /// No augmentation: identity only.
    pub fn off() -> Self {
        TtaConfig {
            elements: vec![D8::IDENTITY],
            mean: MeanKind::Arithmetic,
        }
    }

    /// The four rotations.
    pub fn rotations() -> Self {
        TtaConfig {
            elements: vec![D8::IDENTITY, D8::ROT90, D8::ROT180, D8::ROT270],
            mean: MeanKind::Arithmetic,
        }
    }

    /// Rotations in multiples of 90 degrees plus horizontal and vertical
    /// flips; the default validation-time set.
    pub fn named_six() -> Self {
        TtaConfig {
            elements: vec![
                D8::IDENTITY,
                D8::ROT90,
                D8::ROT180,
                D8::ROT270,
                D8::FLIP_H,
                D8::FLIP_V,
            ],
            mean: MeanKind::Arithmetic,
        }
    }

    /// All eight square symmetries.
    pub fn full_d8() -> Self {
        TtaConfig {
            elements: D8::ALL.to_vec(),
            mean: MeanKind::Arithmetic,
        }
    }

    /// Canonical element list: sorted, deduplicated. Errors if the
    /// identity is missing.
    pub fn normalized_elements(&self) -> Result<Vec<D8>, TtaError> {
        let mut elems = self.elements.clone();
        elems.sort();
        elems.dedup();
        if elems.is_empty() || elems[0] != D8::IDENTITY {
            return Err(TtaError::Config(
                "the identity element must be part of every TTA set".into(),
            ));
        }
        Ok(elems)
    }
}

/// Runs the predictor on every configured transform of `image`,
/// inverse-transforms the probability maps, and averages them.
pub fn tta_predict<T: Elem, P: Predictor<T>>(
    predictor: &P,
    image: &FloatImage,
    cfg: &TtaConfig,
) -> Result<ProbMap<T>, TtaError> {
    let elems = cfg.normalized_elements()?;
    if image.h != image.w && elems.iter().any(|e| e.rotation() % 2 == 1) {
        return Err(TtaError::Config(format!(
            "90-degree rotations need square input, got {}x{}",
            image.h, image.w
        )));
    }

    let mut acc: Option<Vec<f64>> = None;
    let mut classes = 0usize;
    let floor = 1e-12f64;
    for &e in &elems {
        let transformed = image.transform_d8(e);
        let probs = predictor
            .predict(&transformed)
            .map_err(|err| TtaError::Predict(format!("{err}")))?;
        if probs.h != transformed.h || probs.w != transformed.w || probs.n != 1 {
            return Err(TtaError::Predict(format!(
                "predictor returned {}x{}x{} for a {}x{} input",
                probs.classes, probs.h, probs.w, transformed.h, transformed.w
            )));
        }
        classes = probs.classes;
        let data_f64: Vec<f64> = probs.data.iter().map(|&v| Elem::to_f64(v)).collect();
        let (restored, rh, rw) =
            transform_chw(&data_f64, probs.classes, probs.h, probs.w, e.inverse());
        debug_assert_eq!((rh, rw), (image.h, image.w));
        let slot = acc.get_or_insert_with(|| vec![0.0; restored.len()]);
        match cfg.mean {
            MeanKind::Arithmetic => {
                for (a, v) in slot.iter_mut().zip(&restored) {
                    *a += v;
                }
            }
            MeanKind::Geometric => {
                for (a, v) in slot.iter_mut().zip(&restored) {
                    *a += v.max(floor).ln();
                }
            }
        }
    }

    let acc = acc.expect("element list is nonempty");
    let n = elems.len() as f64;
    let hw = image.h * image.w;
    let mut out = vec![0.0f64; acc.len()];
    match cfg.mean {
        MeanKind::Arithmetic => {
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = a / n;
            }
        }
        MeanKind::Geometric => {
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = (a / n).exp();
            }
            // renormalize per pixel
            for p in 0..hw {
                let mut total = 0.0;
                for c in 0..classes {
                    total += out[c * hw + p];
                }
                if total > 0.0 {
                    for c in 0..classes {
                        out[c * hw + p] /= total;
                    }
                }
            }
        }
    }
    Ok(ProbMap::new(
        1,
        classes,
        image.h,
        image.w,
        out.into_iter().map(T::from_f64).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessConfig {
    pub prob_threshold: f64,
    pub min_instance_area: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            prob_threshold: 0.5,
            min_instance_area: 4,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<(), TtaError> {
        if !(self.prob_threshold > 0.0 && self.prob_threshold < 1.0) {
            return Err(TtaError::Config(format!(
                "probability threshold must be inside (0, 1), got {}",
                self.prob_threshold
            )));
        }
        Ok(())
    }
}

/// Thresholds the ship class, labels 8-connected components, and drops
/// instances below the minimum area.
pub fn probs_to_instances<T: Elem>(
    probs: &ProbMap<T>,
    cfg: &PostprocessConfig,
) -> Result<InstanceSet, TtaError> {
    cfg.validate()?;
    if probs.n != 1 || probs.classes < 2 {
        return Err(TtaError::Config(format!(
            "expected a single-image 2-class map, got n={} classes={}",
            probs.n, probs.classes
        )));
    }
    let hw = probs.h * probs.w;
    let fg_plane = probs.class_plane(0, 1);
    let mut fg = BinaryMask::empty(probs.h, probs.w);
    let thr = T::from_f64(cfg.prob_threshold);
    for p in 0..hw {
        if fg_plane[p] > thr {
            fg.set(p / probs.w, p % probs.w, true);
        }
    }
    let all = connected_components(&fg, Connectivity::Eight);
    let kept: Vec<BinaryMask> = all
        .iter()
        .filter(|m| m.popcount() >= cfg.min_instance_area)
        .cloned()
        .collect();
    Ok(InstanceSet::new(probs.h, probs.w, kept).expect("components are disjoint and nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Constant two-class output regardless of input.
    struct ConstStub {
        fg: f64,
    }

    impl Predictor<f64> for ConstStub {
        fn predict(&self, chw: &FloatImage) -> Result<ProbMap<f64>, ModelError> {
            let hw = chw.h * chw.w;
            let mut data = vec![1.0 - self.fg; hw];
            data.extend(vec![self.fg; hw]);
            Ok(ProbMap::new(1, 2, chw.h, chw.w, data))
        }
    }

    /// Copies input channel 0 into the foreground probability; the
    /// equivariance probe for the transform/inverse pairing.
    struct ChannelCopyStub;

    impl Predictor<f64> for ChannelCopyStub {
        fn predict(&self, chw: &FloatImage) -> Result<ProbMap<f64>, ModelError> {
            let ch0 = chw.plane(0);
            let mut data: Vec<f64> = ch0.iter().map(|&v| 1.0 - v as f64).collect();
            data.extend(ch0.iter().map(|&v| v as f64));
            Ok(ProbMap::new(1, 2, chw.h, chw.w, data))
        }
    }

    fn gradient_image(h: usize, w: usize) -> FloatImage {
        let mut img = FloatImage::new(3, h, w);
        for r in 0..h {
            for c in 0..w {
                let v = (r * w + c) as f32 / (h * w) as f32;
                img.set(0, r, c, v);
                img.set(1, r, c, 0.5);
                img.set(2, r, c, 1.0 - v);
            }
        }
        img
    }

    #[test]
    fn constant_stub_survives_tta_bookkeeping() {
        let img = gradient_image(8, 8);
        for cfg in [TtaConfig::named_six(), TtaConfig::full_d8()] {
            let out = tta_predict(&ConstStub { fg: 0.3 }, &img, &cfg).unwrap();
            assert!(out.data[..64].iter().all(|&v| (v - 0.7).abs() < 1e-12));
            assert!(out.data[64..].iter().all(|&v| (v - 0.3).abs() < 1e-12));
        }
    }

    #[test]
    fn channel_copy_stub_recovers_input_for_every_element() {
        let img = gradient_image(6, 6);
        for e in D8::ALL {
            let cfg = TtaConfig {
                elements: vec![D8::IDENTITY, e],
                mean: MeanKind::Arithmetic,
            };
            let out = tta_predict(&ChannelCopyStub, &img, &cfg).unwrap();
            let hw = 36;
            for p in 0..hw {
                let expect = img.data[p] as f64;
                let got = out.data[hw + p];
                assert!(
                    (got - expect).abs() < 1e-6,
                    "element {e:?} pixel {p}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn identity_only_equals_plain_prediction() {
        let img = gradient_image(4, 4);
        let direct = ChannelCopyStub.predict(&img).unwrap();
        let tta = tta_predict(&ChannelCopyStub, &img, &TtaConfig::off()).unwrap();
        assert_eq!(tta.data, direct.data);
    }

    #[test]
    fn element_order_does_not_change_output_bits() {
        let img = gradient_image(8, 8);
        let fwd = TtaConfig::named_six();
        let mut rev = TtaConfig::named_six();
        rev.elements.reverse();
        let a = tta_predict(&ChannelCopyStub, &img, &fwd).unwrap();
        let b = tta_predict(&ChannelCopyStub, &img, &rev).unwrap();
        let bits = |m: &ProbMap<f64>| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn probmap_stays_normalized_under_both_means() {
        let img = gradient_image(8, 8);
        for mean in [MeanKind::Arithmetic, MeanKind::Geometric] {
            let cfg = TtaConfig {
                elements: TtaConfig::named_six().elements,
                mean,
            };
            let out = tta_predict(&ChannelCopyStub, &img, &cfg).unwrap();
            let hw = 64;
            for p in 0..hw {
                let total = out.data[p] + out.data[hw + p];
                assert!((total - 1.0).abs() < 1e-6, "{mean:?}: pixel sum {total}");
            }
        }
    }

    #[test]
    fn missing_identity_rejected() {
        let cfg = TtaConfig {
            elements: vec![D8::ROT90],
            mean: MeanKind::Arithmetic,
        };
        let img = gradient_image(4, 4);
        assert!(matches!(
            tta_predict(&ConstStub { fg: 0.5 }, &img, &cfg),
            Err(TtaError::Config(_))
        ));
    }

    #[test]
    fn instances_from_probs() {
        // all background
        let bg = ProbMap::new(1, 2, 4, 4, {
            let mut d = vec![0.9; 16];
            d.extend(vec![0.1; 16]);
            d
        });
        let cfg = PostprocessConfig::default();
        assert_eq!(probs_to_instances(&bg, &cfg).unwrap().len(), 0);

        // one 3x3 blob of high probability
        let mut fg = vec![0.0f64; 36];
        for r in 1..4 {
            for c in 1..4 {
                fg[r * 6 + c] = 0.95;
            }
        }
        let mut data: Vec<f64> = fg.iter().map(|v| 1.0 - v).collect();
        data.extend(fg.iter().copied());
        let probs = ProbMap::new(1, 2, 6, 6, data);
        let set = probs_to_instances(&probs, &cfg).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.instances()[0].popcount(), 9);

        // two blobs separated by a zero-probability gap, one below min area
        let mut fg = vec![0.0f64; 8 * 8];
        for r in 0..2 {
            for c in 0..2 {
                fg[r * 8 + c] = 0.9; // area 4: kept
            }
        }
        fg[7 * 8 + 7] = 0.9; // area 1: dropped
        let mut data: Vec<f64> = fg.iter().map(|v| 1.0 - v).collect();
        data.extend(fg.iter().copied());
        let probs = ProbMap::new(1, 2, 8, 8, data);
        let set = probs_to_instances(&probs, &cfg).unwrap();
        assert_eq!(set.len(), 1);

        let loose = PostprocessConfig {
            min_instance_area: 1,
            ..cfg
        };
        assert_eq!(probs_to_instances(&probs, &loose).unwrap().len(), 2);
    }

    #[test]
    fn postprocess_threshold_validation() {
        let cfg = PostprocessConfig {
            prob_threshold: 1.0,
            ..PostprocessConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
