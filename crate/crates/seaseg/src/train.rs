//! The training loop: two phases (step-decay, then SGDR with stochastic
//! weight averaging), stratified sampling, on-the-fly augmentation,
//! per-epoch validation, CSV logging, and resumable checkpoints.
//!
//! Every random stream is keyed by `(seed, global_step, slot)` or by
//! sampler counters, so a run resumed from `last.ckpt` reproduces the
//! continuation bit-exactly.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seaseg_core::data::{
    augment, normalize_unit_in_place, smart_scale_crop, stream_seed, AugmentConfig,
    AugmentParams, CropConfig, SamplerConfig, SamplerState, StratifiedSampler,
};
use seaseg_core::image::{downscale_2x, resize_nearest_mask, FloatImage};
use seaseg_core::loss::{combined_loss, cross_entropy, IouTerm, LossConfig};
use seaseg_core::mask::{BinaryMask, InstanceSet};
use seaseg_core::metrics::{mean_f2, ThresholdGrid};
use seaseg_core::model::{Model, ModelConfig, DOWNSAMPLE};
use seaseg_core::optim::{AdamW, AdamWConfig, SgdrSchedule, StepSchedule, SwaState};
use seaseg_core::tensor::{Shape, Tape};
use seaseg_core::tta::{probs_to_instances, PostprocessConfig, Predictor};
use seaseg_core::types::LabelMap;

use crate::checkpoint::{self, Progress, TrainState};
use crate::dataset::Dataset;
use crate::error::{as_runtime, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    JaccardCe,
    LovaszCe,
    CeOnly,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "jaccard+ce" => Ok(LossKind::JaccardCe),
            "lovasz+ce" => Ok(LossKind::LovaszCe),
            "ce" => Ok(LossKind::CeOnly),
            other => Err(Error::Validation(format!(
                "unknown loss {other:?}; expected jaccard+ce, lovasz+ce, or ce"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::JaccardCe => "jaccard+ce",
            LossKind::LovaszCe => "lovasz+ce",
            LossKind::CeOnly => "ce",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub model: ModelConfig,
    pub loss_kind: LossKind,
    pub alpha: f64,
    pub batch_size: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub cycle: usize,
    pub lr_initial: f64,
    pub lr_factor: f64,
    pub sgdr: SgdrSchedule,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub crop: Option<usize>,
    pub downscale_2x: bool,
    pub augment: bool,
    /// Fraction of images held out for validation; 0 validates on the
    /// training set itself.
    pub val_frac: f64,
    /// Stop once validation mean-F2 reaches this value.
    pub stop_at_val: Option<f64>,
    /// Process at most this many epochs in one invocation; the schedule
    /// still follows the full phase plan, so a later resume continues it.
    pub limit_epochs: Option<usize>,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            model: ModelConfig::toy(),
            loss_kind: LossKind::LovaszCe,
            alpha: 0.7,
            batch_size: 8,
            phase1_epochs: 20,
            phase2_epochs: 12,
            cycle: 6,
            lr_initial: 1e-3,
            lr_factor: 0.1,
            sgdr: SgdrSchedule::default(),
            weight_decay: 1e-4,
            clip_norm: None,
            crop: None,
            downscale_2x: false,
            augment: true,
            val_frac: 0.2,
            stop_at_val: None,
            limit_epochs: None,
            seed: 42,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Validation(format!(
                "--alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("--batch-size must be at least 1"));
        }
        if self.phase1_epochs + self.phase2_epochs == 0 {
            return Err(Error::validation("at least one training epoch required"));
        }
        if self.cycle == 0 {
            return Err(Error::validation("--cycle must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(Error::Validation(format!(
                "--val-frac must be in [0, 1), got {}",
                self.val_frac
            )));
        }
        if let Some(c) = self.crop {
            if c == 0 || c % DOWNSAMPLE != 0 {
                return Err(Error::Validation(format!(
                    "--crop must be a positive multiple of {DOWNSAMPLE}, got {c}"
                )));
            }
        }
        self.model.validate().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }

    fn step_schedule(&self) -> StepSchedule {
        StepSchedule {
            initial: self.lr_initial,
            factor: self.lr_factor,
            period: self.phase1_epochs.div_ceil(3).max(1),
        }
    }

    fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            iou_term: match self.loss_kind {
                LossKind::JaccardCe => IouTerm::Jaccard,
                _ => IouTerm::Lovasz,
            },
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mean_f2: f64,
}

pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_val: f64,
    pub final_val: f64,
    pub swa_val: Option<f64>,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
    pub swa_path: Option<PathBuf>,
    pub steps_run: u64,
}

/// One preprocessed sample: unit-range float image plus foreground mask
/// and (for validation) the instance set at the processed resolution.
struct Prepared {
    image: FloatImage,
    fg: BinaryMask,
    instances: InstanceSet,
}

fn prepare(dataset: &Dataset, downscale: bool) -> Result<Vec<Prepared>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let mut image = s.image.to_unit_float();
            let mut fg = s.instances.union_mask();
            let mut instances = s.instances.clone();
            if downscale {
                image = downscale_2x(&image);
                fg = resize_nearest_mask(&fg, image.h, image.w);
                let kept: Vec<BinaryMask> = instances
                    .iter()
                    .map(|m| resize_nearest_mask(m, image.h, image.w))
                    .filter(|m| !m.is_empty())
                    .collect();
                instances = InstanceSet::new(image.h, image.w, kept).map_err(as_runtime)?;
            }
            Ok(Prepared {
                image,
                fg,
                instances,
            })
        })
        .collect()
}

/// Deterministic train/validation split: every k-th image (by position)
/// goes to validation.
fn split_indices(n: usize, val_frac: f64) -> (Vec<usize>, Vec<usize>) {
    if val_frac == 0.0 {
        let all: Vec<usize> = (0..n).collect();
        return (all.clone(), all);
    }
    let k = (1.0 / val_frac).round().max(2.0) as usize;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for i in 0..n {
        if i % k == 0 {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    if train.is_empty() {
        train = val.clone();
    }
    (train, val)
}

/// Mean validation F2 of `model` over prepared samples.
fn validate_model(model: &Model<f32>, prepared: &[Prepared], val_idx: &[usize]) -> Result<f64> {
    let grid = ThresholdGrid::default();
    let post = PostprocessConfig::default();
    let mut total = 0.0;
    for &i in val_idx {
        let p = &prepared[i];
        let mut img = p.image.clone();
        normalize_unit_in_place(&mut img);
        let probs = model.predict(&img).map_err(as_runtime)?;
        let pred = probs_to_instances(&probs, &post).map_err(as_runtime)?;
        total += mean_f2(&pred, &p.instances, &grid).map_err(as_runtime)?;
    }
    Ok(total / val_idx.len().max(1) as f64)
}

fn batch_rng(seed: u64, global_step: u64, slot: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(
        stream_seed(seed, global_step, 0x7261),
        slot as u64,
        0x736c,
    ))
}

pub fn train(
    spec: &TrainSpec,
    dataset: &Dataset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;

    let prepared = prepare(dataset, spec.downscale_2x)?;
    let side = match spec.crop {
        Some(c) => {
            for p in &prepared {
                if c > p.image.h || c > p.image.w {
                    return Err(Error::Validation(format!(
                        "crop {c} exceeds an image of {}x{}",
                        p.image.h, p.image.w
                    )));
                }
            }
            c
        }
        None => {
            let (h, w) = (prepared[0].image.h, prepared[0].image.w);
            if h != w || h % DOWNSAMPLE != 0 {
                return Err(Error::Validation(format!(
                    "without --crop, images must be square multiples of {DOWNSAMPLE}, got {h}x{w}"
                )));
            }
            if prepared.iter().any(|p| (p.image.h, p.image.w) != (h, w)) {
                return Err(Error::validation(
                    "without --crop, all images must share dimensions",
                ));
            }
            h
        }
    };
    for p in &prepared {
        if p.image.h % DOWNSAMPLE != 0 || p.image.w % DOWNSAMPLE != 0 {
            return Err(Error::Validation(format!(
                "validation image {}x{} is not a multiple of {DOWNSAMPLE}",
                p.image.h, p.image.w
            )));
        }
    }

    let (train_idx, val_idx) = split_indices(prepared.len(), spec.val_frac);
    let train_counts: Vec<usize> = train_idx.iter().map(|&i| prepared[i].instances.len()).collect();
    let mut sampler = StratifiedSampler::new(SamplerConfig { seed: spec.seed }, &train_counts)
        .map_err(|e| Error::Validation(e.to_string()))?;
    if !sampler.empty_strata().is_empty() {
        eprintln!(
            "warning: strata {:?} are empty and will be skipped",
            sampler.empty_strata()
        );
    }

    let steps_per_epoch = train_idx.len().div_ceil(spec.batch_size).max(1);
    let step_schedule = spec.step_schedule();
    let loss_cfg = spec.loss_config();
    let total_epochs = spec.phase1_epochs + spec.phase2_epochs;

    // fresh or resumed state
    let mut model;
    let mut opt_cfg = AdamWConfig {
        lr: spec.lr_initial,
        weight_decay: spec.weight_decay,
        clip_norm: spec.clip_norm,
        ..AdamWConfig::default()
    };
    let mut start_epoch = 0usize;
    let mut global_step = 0u64;
    let mut best_val = f64::NEG_INFINITY;
    let mut opt;
    let mut swa;
    match resume {
        Some(path) => {
            let loaded = checkpoint::load(path)?;
            if loaded.model.config != spec.model {
                return Err(Error::validation(
                    "checkpoint model config differs from the requested one",
                ));
            }
            model = loaded.model;
            let progress = loaded
                .header
                .progress
                .clone()
                .ok_or_else(|| Error::validation("checkpoint carries no training progress"))?;
            opt = AdamW::new(&model.params, opt_cfg);
            if let (Some(section), Some((m, v))) =
                (&loaded.header.optimizer, loaded.optimizer_moments)
            {
                opt_cfg.lr = section.lr;
                opt.set_lr(section.lr);
                opt.restore(section.step, m, v).map_err(as_runtime)?;
            }
            swa = SwaState::new(&model.params);
            if let (Some(section), Some(avg)) = (&loaded.header.swa, loaded.swa_average) {
                swa.restore(avg, section.count);
            }
            sampler
                .restore_state(SamplerState {
                    cursor: progress.sampler_cursor,
                    draws: progress.sampler_draws.clone(),
                })
                .map_err(as_runtime)?;
            start_epoch = progress.next_epoch;
            global_step = progress.global_step;
            best_val = progress.best_val;
        }
        None => {
            model = Model::build(spec.model.clone(), spec.seed)
                .map_err(|e| Error::Validation(e.to_string()))?;
            opt = AdamW::new(&model.params, opt_cfg);
            swa = SwaState::new(&model.params);
        }
    }

    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");
    let log_path = out_dir.join("train_log.csv");
    let mut log: Vec<EpochLog> = Vec::new();
    let mut final_val = f64::NAN;
    let aug_cfg = AugmentConfig::default();

    let mut batch_buf = vec![0.0f32; spec.batch_size * 3 * side * side];
    let mut label_buf = vec![0u8; spec.batch_size * side * side];

    'epochs: for epoch in start_epoch..total_epochs {
        let phase: u8 = if epoch < spec.phase1_epochs { 1 } else { 2 };
        let epoch_in_phase2 = epoch.saturating_sub(spec.phase1_epochs);
        let mut epoch_loss = 0.0f64;

        for step in 0..steps_per_epoch {
            let lr = match phase {
                1 => step_schedule.value(epoch),
                _ => {
                    let t = epoch_in_phase2 as f64 + step as f64 / steps_per_epoch as f64;
                    spec.sgdr.value(t)
                }
            };
            opt.set_lr(lr);

            // assemble the batch
            for slot in 0..spec.batch_size {
                let pos = sampler.next_index();
                let p = &prepared[train_idx[pos]];
                let mut rng = batch_rng(spec.seed, global_step, slot);
                let (mut img, mask) = match spec.crop {
                    Some(c) => {
                        let cfg = if spec.augment {
                            CropConfig::new(c)
                        } else {
                            CropConfig::without_jitter(c)
                        };
                        smart_scale_crop(&p.image, &p.fg, &cfg, &mut rng)
                            .map_err(as_runtime)?
                    }
                    None => (p.image.clone(), p.fg.clone()),
                };
                let mask = if spec.augment {
                    let params = AugmentParams::sample(&aug_cfg, &mut rng);
                    let (a_img, a_mask) = augment(&img, &mask, &params);
                    img = a_img;
                    a_mask
                } else {
                    mask
                };
                normalize_unit_in_place(&mut img);
                let plane = side * side;
                batch_buf[slot * 3 * plane..(slot + 1) * 3 * plane].copy_from_slice(&img.data);
                for (dst, &b) in label_buf[slot * plane..(slot + 1) * plane]
                    .iter_mut()
                    .zip(mask.bits())
                {
                    *dst = b as u8;
                }
            }

            let mut tape = Tape::new();
            let x = tape
                .leaf(
                    batch_buf.clone(),
                    Shape::new(spec.batch_size, 3, side, side),
                    false,
                )
                .map_err(as_runtime)?;
            let out = model.forward_train(&mut tape, x).map_err(as_runtime)?;
            let labels = LabelMap::new(spec.batch_size, side, side, label_buf.clone());
            let loss_id = match spec.loss_kind {
                LossKind::CeOnly => {
                    cross_entropy(&mut tape, out.probs, &labels).map_err(as_runtime)?
                }
                _ => combined_loss(&mut tape, out.probs, &labels, &loss_cfg)
                    .map_err(as_runtime)?,
            };
            let loss_value = tape.value(loss_id)[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Runtime(format!(
                    "non-finite loss {loss_value} at epoch {epoch} step {step}"
                )));
            }
            epoch_loss += loss_value;
            let grads = tape.backward(loss_id).map_err(as_runtime)?;
            opt.step(&mut model.params, &out.binding, &grads)
                .map_err(|e| Error::Runtime(format!("{e} (epoch {epoch} step {step})")))?;
            global_step += 1;
        }

        // SWA snapshot at the end of each full cycle
        if phase == 2 && (epoch_in_phase2 + 1) % spec.cycle == 0 {
            swa.absorb(&model.params).map_err(as_runtime)?;
        }

        let val = validate_model(&model, &prepared, &val_idx)?;
        final_val = val;
        let row = EpochLog {
            epoch,
            phase,
            lr: match phase {
                1 => step_schedule.value(epoch),
                _ => spec.sgdr.value(epoch_in_phase2 as f64),
            },
            train_loss: epoch_loss / steps_per_epoch as f64,
            val_mean_f2: val,
        };
        log.push(row);

        if val > best_val {
            best_val = val;
            checkpoint::save(&best_path, &model, &TrainState::default())?;
        }
        let (m, v) = opt.moments();
        let state = TrainState {
            optimizer: Some((
                opt.step_count(),
                opt.cfg.lr,
                spec.weight_decay,
                m.to_vec(),
                v.to_vec(),
            )),
            swa: (swa.count() > 0).then(|| (swa.count(), swa.average().to_vec())),
            progress: Some(Progress {
                next_epoch: epoch + 1,
                global_step,
                sampler_cursor: sampler.state().cursor,
                sampler_draws: sampler.state().draws,
                best_val,
            }),
        };
        checkpoint::save(&last_path, &model, &state)?;
        write_log(&log_path, &log)?;

        if let Some(target) = spec.stop_at_val {
            if val >= target {
                break 'epochs;
            }
        }
        if let Some(limit) = spec.limit_epochs {
            if epoch + 1 - start_epoch >= limit {
                break 'epochs;
            }
        }
    }

    // SWA finalization: install the average, recalibrate batchnorm with
    // one full pass over the training data, save and score it
    let mut swa_val = None;
    let mut swa_path = None;
    if swa.count() > 0 {
        swa.install(&mut model.params).map_err(as_runtime)?;
        recalibrate_bn(&mut model, &prepared, &train_idx, spec, side)?;
        let path = out_dir.join("swa.ckpt");
        checkpoint::save(&path, &model, &TrainState::default())?;
        let val = validate_model(&model, &prepared, &val_idx)?;
        swa_val = Some(val);
        swa_path = Some(path);
        if val > best_val {
            best_val = val;
        }
    }

    if log.is_empty() && resume.is_some() {
        // resumed past the end; still report the restored best
        final_val = best_val;
    }

    Ok(TrainOutcome {
        log,
        best_val,
        final_val,
        swa_val,
        best_path,
        last_path,
        swa_path,
        steps_run: global_step,
    })
}

/// Recomputes batchnorm running statistics as the equal-weight average
/// of batch statistics over one deterministic pass.
fn recalibrate_bn(
    model: &mut Model<f32>,
    prepared: &[Prepared],
    train_idx: &[usize],
    spec: &TrainSpec,
    side: usize,
) -> Result<()> {
    let mut acc = model.recalibration_accumulator();
    let mut batches = 0usize;
    for chunk in train_idx.chunks(spec.batch_size) {
        let mut buf = Vec::with_capacity(chunk.len() * 3 * side * side);
        for &i in chunk {
            let p = &prepared[i];
            // center-crop deterministically when training used crops
            let mut img = if p.image.h == side && p.image.w == side {
                p.image.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let (img, _) = smart_scale_crop(
                    &p.image,
                    &p.fg,
                    &CropConfig::without_jitter(side),
                    &mut rng,
                )
                .map_err(as_runtime)?;
                img
            };
            normalize_unit_in_place(&mut img);
            buf.extend_from_slice(&img.data);
        }
        let mut tape = Tape::new();
        let x = tape
            .leaf(buf, Shape::new(chunk.len(), 3, side, side), false)
            .map_err(as_runtime)?;
        model
            .forward_recalibrate(&mut tape, x, &mut acc)
            .map_err(as_runtime)?;
        batches += 1;
    }
    model
        .finish_recalibration(&acc, batches)
        .map_err(as_runtime)?;
    Ok(())
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,phase,lr,train_loss,val_mean_f2\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.phase, row.lr, row.train_loss, row.val_mean_f2
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};
    use crate::dataset::load_dataset;

    fn tiny_spec() -> TrainSpec {
        TrainSpec {
            model: ModelConfig {
                base_channels: 4,
                se_reduction: 2,
                ..ModelConfig::toy()
            },
            batch_size: 2,
            phase1_epochs: 2,
            phase2_epochs: 2,
            cycle: 1,
            augment: false,
            val_frac: 0.0,
            seed: 5,
            ..TrainSpec::default()
        }
    }

    fn tiny_corpus(dir: &Path, n: usize, empty_frac: f64, seed: u64) -> Dataset {
        generate(
            &SynthSpec {
                n,
                empty_frac,
                size: 32,
                max_ships: 3,
                seed,
            },
            dir,
        )
        .unwrap();
        load_dataset(dir).unwrap()
    }

    #[test]
    fn loss_strictly_decreases_on_fixed_batch() {
        // batch == dataset, no augmentation: every step sees the same input
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_corpus(dir.path(), 2, 0.0, 3);
        let out = tempfile::tempdir().unwrap();
        let spec = TrainSpec {
            phase1_epochs: 20,
            phase2_epochs: 0,
            lr_initial: 1e-3,
            ..tiny_spec()
        };
        let outcome = train(&spec, &ds, out.path(), None).unwrap();
        assert_eq!(outcome.steps_run, 20);
        let losses: Vec<f64> = outcome.log.iter().map(|r| r.train_loss).collect();
        for w in losses.windows(2) {
            assert!(
                w[1] < w[0],
                "loss failed to decrease: {:?}",
                losses
            );
        }
    }

    #[test]
    fn training_writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_corpus(dir.path(), 4, 0.5, 7);
        let out = tempfile::tempdir().unwrap();
        let outcome = train(&tiny_spec(), &ds, out.path(), None).unwrap();
        assert!(outcome.best_path.is_file());
        assert!(outcome.last_path.is_file());
        assert!(outcome.swa_path.as_ref().unwrap().is_file());
        assert!(outcome.swa_val.is_some());
        let log = std::fs::read_to_string(out.path().join("train_log.csv")).unwrap();
        let mut lines = log.lines();
        assert_eq!(lines.next().unwrap(), "epoch,phase,lr,train_loss,val_mean_f2");
        assert_eq!(lines.count(), 4, "one row per epoch");
        // phase column switches from 1 to 2
        assert!(log.contains("\n0,1,"));
        assert!(log.contains("\n2,2,"));
    }

    #[test]
    fn resume_reproduces_continuation_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_corpus(dir.path(), 4, 0.25, 11);

        // uninterrupted run: 4 epochs
        let out_full = tempfile::tempdir().unwrap();
        let spec_full = TrainSpec {
            phase1_epochs: 4,
            phase2_epochs: 0,
            ..tiny_spec()
        };
        train(&spec_full, &ds, out_full.path(), None).unwrap();

        // interrupted: same spec, stopped after 2 epochs, then resumed
        let out_part = tempfile::tempdir().unwrap();
        let spec_short = TrainSpec {
            limit_epochs: Some(2),
            ..spec_full.clone()
        };
        train(&spec_short, &ds, out_part.path(), None).unwrap();
        let resume_from = out_part.path().join("last.ckpt");
        train(&spec_full, &ds, out_part.path(), Some(&resume_from)).unwrap();

        let full = checkpoint::load(&out_full.path().join("last.ckpt")).unwrap();
        let part = checkpoint::load(&out_part.path().join("last.ckpt")).unwrap();
        for (a, b) in full.model.params.iter().zip(part.model.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(
                a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "parameter {} diverged after resume",
                a.name
            );
        }
        assert_eq!(full.header.progress, part.header.progress);
    }

    #[test]
    fn rejects_bad_alpha_and_crop() {
        let spec = TrainSpec {
            alpha: 1.5,
            ..tiny_spec()
        };
        assert_eq!(spec.validate().unwrap_err().exit_code(), 2);
        let spec = TrainSpec {
            crop: Some(20),
            ..tiny_spec()
        };
        assert!(spec.validate().is_err());
    }
}
