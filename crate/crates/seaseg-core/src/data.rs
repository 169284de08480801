//! Data pipeline primitives: ImageNet-style normalization, the 10-class
//! stratified round-robin sampler, photometric + D8 augmentation, smart
//! scale-crop, and the synthetic ship-image generator.
//!
//! All randomness is counter-based: each consumer derives a ChaCha stream
//! from the run seed plus stable indices (image id, step, stratum epoch),
//! so sequences replay identically after a resume and generation order
//! never matters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::d8::D8;
use crate::image::{resize_bilinear, resize_nearest_mask, FloatImage, RgbImage};
use crate::mask::{BinaryMask, InstanceSet};
#[allow(unused_imports)]
use num_traits::Float;

/// Per-channel normalization constants shared by ImageNet-trained
/// ResNet-style models.
pub const NORM_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const NORM_STD: [f32; 3] = [0.229, 0.224, 0.225];

pub const NUM_STRATA: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    BadInput(String),
    AllStrataEmpty,
}

impl core::fmt::Display for DataError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DataError::BadInput(msg) => write!(f, "{msg}"),
            DataError::AllStrataEmpty => write!(f, "sampler has no images in any stratum"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DataError {}

/// SplitMix64 step; used to derive independent stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed for a named substream of the run seed.
pub fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(seed ^ 0x5EA5E65EA5E65EA5) ^ mix64(a) ^ mix64(b).rotate_left(17))
}

// ── normalization ────────────────────────────────────────────────────

/// Scales 8-bit RGB to [0, 1], subtracts the per-channel mean, divides
/// by the per-channel std.
pub fn normalize(img: &RgbImage) -> FloatImage {
    let mut out = img.to_unit_float();
    normalize_unit_in_place(&mut out);
    out
}

/// Normalizes a [0, 1] float image in place.
pub fn normalize_unit_in_place(img: &mut FloatImage) {
    debug_assert_eq!(img.channels, 3, "normalization expects 3 channels");
    let hw = img.h * img.w;
    for c in 0..3 {
        let (mean, std) = (NORM_MEAN[c], NORM_STD[c]);
        for v in &mut img.data[c * hw..(c + 1) * hw] {
            *v = (*v - mean) / std;
        }
    }
}

/// Inverse of [`normalize_unit_in_place`]; used for visualization.
pub fn denormalize_in_place(img: &mut FloatImage) {
    debug_assert_eq!(img.channels, 3);
    let hw = img.h * img.w;
    for c in 0..3 {
        let (mean, std) = (NORM_MEAN[c], NORM_STD[c]);
        for v in &mut img.data[c * hw..(c + 1) * hw] {
            *v = *v * std + mean;
        }
    }
}

// ── stratification and sampling ──────────────────────────────────────

/// Stratum for an image with `ship_count` ships: `min(count, 9)`.
pub fn stratum(ship_count: usize) -> usize {
    ship_count.min(NUM_STRATA - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub seed: u64,
}

/// Serializable sampler position: total draws plus per-stratum counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerState {
    pub cursor: u64,
    pub draws: Vec<u64>,
}

/// Round-robin over the ten ship-count strata; within a stratum, uniform
/// without replacement per pass, reshuffled on exhaustion.
pub struct StratifiedSampler {
    strata: Vec<Vec<usize>>,
    nonempty: Vec<usize>,
    draws: Vec<u64>,
    cursor: u64,
    seed: u64,
}

impl StratifiedSampler {
    pub fn new(cfg: SamplerConfig, ship_counts: &[usize]) -> Result<Self, DataError> {
        let mut strata = vec![Vec::new(); NUM_STRATA];
        for (idx, &count) in ship_counts.iter().enumerate() {
            strata[stratum(count)].push(idx);
        }
        let nonempty: Vec<usize> = (0..NUM_STRATA).filter(|&s| !strata[s].is_empty()).collect();
        if nonempty.is_empty() {
            return Err(DataError::AllStrataEmpty);
        }
        Ok(StratifiedSampler {
            strata,
            nonempty,
            draws: vec![0; NUM_STRATA],
            cursor: 0,
            seed: cfg.seed,
        })
    }

    /// Strata with no images; visited strata skip these.
    pub fn empty_strata(&self) -> Vec<usize> {
        (0..NUM_STRATA)
            .filter(|&s| self.strata[s].is_empty())
            .collect()
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            cursor: self.cursor,
            draws: self.draws.clone(),
        }
    }

    pub fn restore_state(&mut self, state: SamplerState) -> Result<(), DataError> {
        if state.draws.len() != NUM_STRATA {
            return Err(DataError::BadInput(format!(
                "sampler state has {} strata, expected {NUM_STRATA}",
                state.draws.len()
            )));
        }
        self.cursor = state.cursor;
        self.draws = state.draws;
        Ok(())
    }

    /// Next image index. Deterministic given the seed and draw count.
    pub fn next_index(&mut self) -> usize {
        let s = self.nonempty[(self.cursor % self.nonempty.len() as u64) as usize];
        self.cursor += 1;
        let items = &self.strata[s];
        let count = self.draws[s];
        self.draws[s] += 1;
        let pass = count / items.len() as u64;
        let pos = (count % items.len() as u64) as usize;
        // per-pass permutation derived from (seed, stratum, pass)
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, s as u64, pass));
        order.shuffle(&mut rng);
        items[order[pos]]
    }
}

// ── augmentation ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub brightness: (f32, f32),
    pub contrast: (f32, f32),
    pub gamma: (f32, f32),
    pub use_d8: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            brightness: (-0.2, 0.2),
            contrast: (0.8, 1.2),
            gamma: (0.8, 1.2),
            use_d8: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub brightness: f32,
    pub contrast: f32,
    pub gamma: f32,
    pub d8: D8,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            brightness: 0.0,
            contrast: 1.0,
            gamma: 1.0,
            d8: D8::IDENTITY,
        }
    }

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let d8 = if cfg.use_d8 {
            D8::new(rng.gen_range(0..8)).expect("range is 0..8")
        } else {
            D8::IDENTITY
        };
        AugmentParams {
            brightness: rng.gen_range(cfg.brightness.0..=cfg.brightness.1),
            contrast: rng.gen_range(cfg.contrast.0..=cfg.contrast.1),
            gamma: rng.gen_range(cfg.gamma.0..=cfg.gamma.1),
            d8,
        }
    }
}

/// Applies the D8 element to both image and mask, then photometric
/// adjustments to the image only: contrast about 0.5, brightness shift,
/// clamp to [0, 1], then `v^gamma`.
pub fn augment(
    img: &FloatImage,
    mask: &BinaryMask,
    params: &AugmentParams,
) -> (FloatImage, BinaryMask) {
    let mut out_img = img.transform_d8(params.d8);
    let out_mask = mask.transform_d8(params.d8);
    let identity_photo =
        params.brightness == 0.0 && params.contrast == 1.0 && params.gamma == 1.0;
    if !identity_photo {
        for v in &mut out_img.data {
            let adjusted = (*v - 0.5) * params.contrast + 0.5 + params.brightness;
            let clamped = adjusted.clamp(0.0, 1.0);
            *v = if params.gamma == 1.0 {
                clamped
            } else {
                clamped.powf(params.gamma)
            };
        }
    }
    (out_img, out_mask)
}

// ── smart scale-crop ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropConfig {
    pub size: usize,
    /// Scale jitter range applied before cropping; (1.0, 1.0) disables it.
    pub scale_jitter: (f64, f64),
}

impl CropConfig {
    pub fn new(size: usize) -> Self {
        CropConfig {
            size,
            scale_jitter: (0.8, 1.25),
        }
    }

    pub fn without_jitter(size: usize) -> Self {
        CropConfig {
            size,
            scale_jitter: (1.0, 1.0),
        }
    }
}

/// Scale-jitters the pair, then crops `size`^2 so that any image with
/// ship pixels keeps at least one in the crop. Empty images crop
/// uniformly at random.
pub fn smart_scale_crop(
    img: &FloatImage,
    mask: &BinaryMask,
    cfg: &CropConfig,
    rng: &mut impl Rng,
) -> Result<(FloatImage, BinaryMask), DataError> {
    if cfg.size == 0 {
        return Err(DataError::BadInput("crop size must be positive".into()));
    }
    if cfg.size > img.h || cfg.size > img.w {
        return Err(DataError::BadInput(format!(
            "crop {0}x{0} larger than image {1}x{2}",
            cfg.size, img.h, img.w
        )));
    }
    if (img.h, img.w) != mask.dims() {
        return Err(DataError::BadInput(format!(
            "image {}x{} and mask {}x{} disagree",
            img.h,
            img.w,
            mask.dims().0,
            mask.dims().1
        )));
    }
    let (lo, hi) = cfg.scale_jitter;
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
        return Err(DataError::BadInput(format!(
            "bad scale jitter range ({lo}, {hi})"
        )));
    }
    let scale = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let sh = ((img.h as f64 * scale).round() as usize).max(cfg.size);
    let sw = ((img.w as f64 * scale).round() as usize).max(cfg.size);
    let (scaled_img, mut scaled_mask) = if sh == img.h && sw == img.w {
        (img.clone(), mask.clone())
    } else {
        (
            resize_bilinear(img, sh, sw),
            resize_nearest_mask(mask, sh, sw),
        )
    };
    // nearest-neighbour downscaling can skip a tiny ship entirely; carry
    // one original ship pixel through the resize so the inclusion
    // guarantee holds
    if scaled_mask.is_empty() && !mask.is_empty() {
        let originals: Vec<(usize, usize)> = (0..img.h)
            .flat_map(|r| (0..img.w).map(move |c| (r, c)))
            .filter(|&(r, c)| mask.get(r, c))
            .collect();
        let &(orig_r, orig_c) = &originals[rng.gen_range(0..originals.len())];
        let sr = (((orig_r as f64 + 0.5) * sh as f64 / img.h as f64 - 0.5).round().max(0.0)
            as usize)
            .min(sh - 1);
        let sc = (((orig_c as f64 + 0.5) * sw as f64 / img.w as f64 - 0.5).round().max(0.0)
            as usize)
            .min(sw - 1);
        scaled_mask.set(sr, sc, true);
    }

    let fg: Vec<(usize, usize)> = (0..sh)
        .flat_map(|r| (0..sw).map(move |c| (r, c)))
        .filter(|&(r, c)| scaled_mask.get(r, c))
        .collect();
    let (r0, c0) = if fg.is_empty() {
        (
            rng.gen_range(0..=sh - cfg.size),
            rng.gen_range(0..=sw - cfg.size),
        )
    } else {
        // anchor on a uniformly chosen ship pixel, then pick uniformly
        // among windows containing it
        let &(ar, ac) = &fg[rng.gen_range(0..fg.len())];
        let r_lo = ar.saturating_sub(cfg.size - 1).min(sh - cfg.size);
        let r_hi = ar.min(sh - cfg.size);
        let c_lo = ac.saturating_sub(cfg.size - 1).min(sw - cfg.size);
        let c_hi = ac.min(sw - cfg.size);
        (
            rng.gen_range(r_lo..=r_hi),
            rng.gen_range(c_lo..=c_hi),
        )
    };

    let mut out_img = FloatImage::new(scaled_img.channels, cfg.size, cfg.size);
    for ch in 0..scaled_img.channels {
        for r in 0..cfg.size {
            for c in 0..cfg.size {
                out_img.set(ch, r, c, scaled_img.get(ch, r0 + r, c0 + c));
            }
        }
    }
    let mut out_mask = BinaryMask::empty(cfg.size, cfg.size);
    for r in 0..cfg.size {
        for c in 0..cfg.size {
            if scaled_mask.get(r0 + r, c0 + c) {
                out_mask.set(r, c, true);
            }
        }
    }
    Ok((out_img, out_mask))
}

// ── synthetic corpus ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub max_ships: usize,
}

impl SynthConfig {
    pub fn new(size: usize) -> Self {
        SynthConfig {
            size,
            max_ships: 15,
        }
    }
}

/// Ship count for a non-empty image: decaying distribution over
/// 1..=max, echoing the real corpus histogram.
pub fn sample_ship_count(max_ships: usize, rng: &mut impl Rng) -> usize {
    let mut count = 1;
    while count < max_ships && rng.gen::<f64>() < 0.45 {
        count += 1;
    }
    count
}

/// One synthetic sea image with `n_ships` bright rotated-rectangle ships
/// on a noisy dark background. Ships are pairwise separated by at least
/// one empty pixel, so connected components reproduce them exactly.
pub fn synth_image(cfg: &SynthConfig, n_ships: usize, rng: &mut impl Rng) -> (RgbImage, InstanceSet) {
    let size = cfg.size;
    let mut img = RgbImage::new(size, size);

    // sea: dark blue-green base with gentle waves and speckle
    let base_r = rng.gen_range(18u8..38);
    let base_g = rng.gen_range(50u8..85);
    let base_b = rng.gen_range(95u8..140);
    let (fy, fx) = (
        rng.gen_range(0.05..0.3),
        rng.gen_range(0.05..0.3),
    );
    let phase: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
    for r in 0..size {
        for c in 0..size {
            let wave = ((r as f64 * fy + c as f64 * fx + phase).sin() * 10.0) as i32;
            let speckle = rng.gen_range(-8i32..=8);
            let px = [
                (base_r as i32 + wave + speckle).clamp(0, 255) as u8,
                (base_g as i32 + wave + speckle).clamp(0, 255) as u8,
                (base_b as i32 + wave / 2 + speckle).clamp(0, 255) as u8,
            ];
            img.set_pixel(r, c, px);
        }
    }

    // occupancy dilated by one pixel keeps ships 8-disconnected
    let mut blocked = BinaryMask::empty(size, size);
    let mut instances = Vec::new();
    for _ in 0..n_ships {
        let mut placed = false;
        for _attempt in 0..50 {
            let max_len = (size as f64 * 0.25).max(3.0);
            let min_len = (size as f64 * 0.04).max(3.0);
            let len = rng.gen_range(min_len..=max_len);
            let width = (len * rng.gen_range(0.25..0.45)).max(2.0);
            let angle: f64 = rng.gen_range(0.0..core::f64::consts::PI);
            let (sin, cos) = angle.sin_cos();
            let half_diag = ((len / 2.0) * (len / 2.0) + (width / 2.0) * (width / 2.0)).sqrt();
            let margin = half_diag.ceil() as usize + 1;
            if 2 * margin + 1 >= size {
                continue;
            }
            let cy = rng.gen_range(margin..size - margin) as f64;
            let cx = rng.gen_range(margin..size - margin) as f64;

            let mut mask = BinaryMask::empty(size, size);
            let r_lo = (cy - half_diag).floor().max(0.0) as usize;
            let r_hi = ((cy + half_diag).ceil() as usize).min(size - 1);
            let c_lo = (cx - half_diag).floor().max(0.0) as usize;
            let c_hi = ((cx + half_diag).ceil() as usize).min(size - 1);
            let mut any = false;
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    let dy = r as f64 - cy;
                    let dx = c as f64 - cx;
                    let along = dx * cos + dy * sin;
                    let across = -dx * sin + dy * cos;
                    if along.abs() <= len / 2.0 && across.abs() <= width / 2.0 {
                        mask.set(r, c, true);
                        any = true;
                    }
                }
            }
            if !any {
                continue;
            }
            // reject if the dilated footprint touches existing ships
            let mut clear = true;
            'scan: for r in r_lo.saturating_sub(1)..=(r_hi + 1).min(size - 1) {
                for c in c_lo.saturating_sub(1)..=(c_hi + 1).min(size - 1) {
                    if blocked.get(r, c) && near_set(&mask, r, c) {
                        clear = false;
                        break 'scan;
                    }
                }
            }
            if !clear {
                continue;
            }
            // paint the ship: bright gray hull with mild noise
            let hull = rng.gen_range(190u8..235);
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    if mask.get(r, c) {
                        let n = rng.gen_range(-12i32..=12);
                        let v = (hull as i32 + n).clamp(175, 255) as u8;
                        img.set_pixel(r, c, [v, v, (v as i32 - 8).max(0) as u8]);
                        blocked.set(r, c, true);
                    }
                }
            }
            instances.push(mask);
            placed = true;
            break;
        }
        if !placed {
            break; // canvas too crowded; keep the ships placed so far
        }
    }
    let set = InstanceSet::new(size, size, instances).expect("generator keeps instances disjoint");
    (img, set)
}

/// True when (r, c) is within one pixel (8-neighbourhood) of a set pixel.
fn near_set(mask: &BinaryMask, r: usize, c: usize) -> bool {
    let (h, w) = mask.dims();
    for dr in -1i32..=1 {
        for dc in -1i32..=1 {
            let (nr, nc) = (r as i32 + dr, c as i32 + dc);
            if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w && mask.get(nr as usize, nc as usize)
            {
                return true;
            }
        }
    }
    false
}
