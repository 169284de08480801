//! Dataset manifest: one CSV row per instance, header
//! `image_id,encoded_pixels`, with an empty `encoded_pixels` marking an
//! image without ships. Image files live next to the manifest as
//! `<image_id>.png`.

use std::collections::BTreeMap;
use std::path::Path;

use seaseg_core::mask::{rle_decode, rle_encode, BinaryMask, InstanceSet};

use crate::error::{as_runtime, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub image_id: String,
    /// RLE text; empty for an image with no instances.
    pub encoded_pixels: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Runtime(format!("cannot read manifest {}: {e}", path.display())))?;
        {
            let headers = reader.headers().map_err(as_runtime)?;
            if headers.len() != 2 || &headers[0] != "image_id" || &headers[1] != "encoded_pixels" {
                return Err(Error::Runtime(format!(
                    "manifest {} must start with header image_id,encoded_pixels",
                    path.display()
                )));
            }
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(as_runtime)?;
            if record.len() != 2 {
                return Err(Error::Runtime(format!(
                    "manifest row {} has {} fields, expected 2",
                    i + 1,
                    record.len()
                )));
            }
            rows.push(ManifestRow {
                image_id: record[0].to_string(),
                encoded_pixels: record[1].to_string(),
            });
        }
        Ok(Manifest { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::Runtime(format!("cannot write manifest {}: {e}", path.display())))?;
        writer
            .write_record(["image_id", "encoded_pixels"])
            .map_err(as_runtime)?;
        for row in &self.rows {
            writer
                .write_record([&row.image_id, &row.encoded_pixels])
                .map_err(as_runtime)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Image ids in first-appearance order with their non-empty RLE rows.
    pub fn by_image(&self) -> Vec<(String, Vec<&str>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        for row in &self.rows {
            if !groups.contains_key(&row.image_id) {
                order.push(row.image_id.clone());
                groups.insert(row.image_id.clone(), Vec::new());
            }
            if !row.encoded_pixels.trim().is_empty() {
                groups
                    .get_mut(&row.image_id)
                    .expect("inserted above")
                    .push(row.encoded_pixels.as_str());
            }
        }
        order
            .into_iter()
            .map(|id| {
                let rles = groups.remove(&id).expect("grouped");
                (id, rles)
            })
            .collect()
    }

    /// Ship count per image in first-appearance order.
    pub fn ship_counts(&self) -> Vec<(String, usize)> {
        self.by_image()
            .into_iter()
            .map(|(id, rles)| (id, rles.len()))
            .collect()
    }

    /// Decodes one image's instances, validating disjointness.
    pub fn decode_instances(rles: &[&str], h: usize, w: usize) -> Result<InstanceSet> {
        let masks: Vec<BinaryMask> = rles
            .iter()
            .map(|r| rle_decode(r, h, w).map_err(as_runtime))
            .collect::<Result<_>>()?;
        InstanceSet::new(h, w, masks).map_err(as_runtime)
    }

    /// Builds manifest rows for one image from its instance set.
    pub fn rows_for(image_id: &str, instances: &InstanceSet) -> Vec<ManifestRow> {
        if instances.is_empty() {
            return vec![ManifestRow {
                image_id: image_id.to_string(),
                encoded_pixels: String::new(),
            }];
        }
        instances
            .iter()
            .map(|m| ManifestRow {
                image_id: image_id.to_string(),
                encoded_pixels: rle_encode(m),
            })
            .collect()
    }
}
