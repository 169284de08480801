//! Synthetic corpus generation: writes PNG images and the manifest.
//!
//! The empty/non-empty split is an exact allocation (`round(n * frac)`
//! images empty), assigned by a seeded shuffle. Every image draws from
//! its own seeded stream, so corpora are byte-identical across runs and
//! independent of generation order.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seaseg_core::data::{mix64, sample_ship_count, stream_seed, synth_image, SynthConfig};
use seaseg_core::model::DOWNSAMPLE;

use crate::dataset::{image_path, save_png};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, MANIFEST_FILE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub empty_frac: f64,
    pub size: usize,
    pub max_ships: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("--n must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.empty_frac) {
            return Err(Error::Validation(format!(
                "--empty-frac must be in [0, 1], got {}",
                self.empty_frac
            )));
        }
        if self.size == 0 || self.size % DOWNSAMPLE != 0 {
            return Err(Error::Validation(format!(
                "--size must be a positive multiple of {DOWNSAMPLE}, got {}",
                self.size
            )));
        }
        if self.max_ships == 0 || self.max_ships > 15 {
            return Err(Error::Validation(format!(
                "--max-ships must be in 1..=15, got {}",
                self.max_ships
            )));
        }
        Ok(())
    }
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:05}")
}

/// Generates the corpus into `out_dir`, creating it if needed. Returns
/// the written manifest.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| {
        Error::Runtime(format!("cannot create {}: {e}", out_dir.display()))
    })?;

    // exact empty allocation, assignment by seeded shuffle
    let n_empty = (spec.n as f64 * spec.empty_frac).round() as usize;
    let mut indices: Vec<usize> = (0..spec.n).collect();
    let mut assign_rng = ChaCha8Rng::seed_from_u64(mix64(spec.seed ^ 0xA551_6E00));
    indices.shuffle(&mut assign_rng);
    let mut is_empty = vec![false; spec.n];
    for &i in indices.iter().take(n_empty) {
        is_empty[i] = true;
    }

    let cfg = SynthConfig {
        size: spec.size,
        max_ships: spec.max_ships,
    };
    let mut manifest = Manifest::default();
    for i in 0..spec.n {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, i as u64, 1));
        let ships = if is_empty[i] {
            0
        } else {
            sample_ship_count(spec.max_ships, &mut rng)
        };
        let (img, instances) = synth_image(&cfg, ships, &mut rng);
        let id = image_id(i);
        save_png(&image_path(out_dir, &id), &img)?;
        manifest.rows.extend(Manifest::rows_for(&id, &instances));
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
