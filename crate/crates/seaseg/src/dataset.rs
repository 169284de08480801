//! On-disk corpora: PNG image files next to a manifest CSV, loaded fully
//! into memory at desk scale.

use std::path::{Path, PathBuf};

use seaseg_core::image::RgbImage;
use seaseg_core::mask::InstanceSet;

use crate::error::{Error, Result};
use crate::manifest::{Manifest, MANIFEST_FILE};

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub instances: InstanceSet,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn ship_counts(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.instances.len()).collect()
    }
}

pub fn image_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.png"))
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.w as u32, img.h as u32, img.data.clone())
        .ok_or_else(|| Error::runtime("raw buffer does not match image dimensions"))?;
    buf.save(path)
        .map_err(|e| Error::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::Runtime(format!("cannot read {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(RgbImage::from_data(h, w, img.into_raw()))
}

/// Loads a corpus directory: `manifest.csv` plus one PNG per image id.
/// Every referenced file must exist and decode; instances must be
/// disjoint at the image's dimensions.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Validation(format!(
            "no {MANIFEST_FILE} in {}",
            dir.display()
        )));
    }
    let manifest = Manifest::read(&manifest_path)?;
    let mut samples = Vec::new();
    for (id, rles) in manifest.by_image() {
        let path = image_path(dir, &id);
        let image = load_png(&path)?;
        let instances = Manifest::decode_instances(&rles, image.h, image.w)
            .map_err(|e| Error::Runtime(format!("image {id}: {e}")))?;
        samples.push(Sample {
            id,
            image,
            instances,
        });
    }
    if samples.is_empty() {
        return Err(Error::Validation(format!(
            "corpus at {} has no images",
            dir.display()
        )));
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        samples,
    })
}

/// Ground-truth instances keyed by image id, without loading pixels;
/// used by evaluation, which only needs masks.
pub fn decode_manifest_instances(
    manifest: &Manifest,
    h: usize,
    w: usize,
) -> Result<Vec<(String, InstanceSet)>> {
    manifest
        .by_image()
        .into_iter()
        .map(|(id, rles)| {
            let set = Manifest::decode_instances(&rles, h, w)
                .map_err(|e| Error::Runtime(format!("image {id}: {e}")))?;
            Ok((id, set))
        })
        .collect()
}
