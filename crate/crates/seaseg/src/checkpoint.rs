//! Checkpoint file format.
//!
//! Layout: the 5-byte magic `SEUN1`, a little-endian u32 header length,
//! a JSON header (model config, parameter manifest with name/shape/dtype/
//! byte offset, batchnorm stats, optional optimizer/SWA/progress
//! sections), then the raw little-endian f32 arrays. Offsets are relative
//! to the start of the payload. The loader rebuilds the model from the
//! config and validates every array's shape against it.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use seaseg_core::model::{Model, ModelConfig};
use seaseg_core::nn::Fusion;
use seaseg_core::tensor::Shape;

use crate::error::{as_runtime, Error, Result};

pub const MAGIC: &[u8; 5] = b"SEUN1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConfigHeader {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub stage_blocks: [usize; 4],
    pub use_se: bool,
    pub decoder_se: bool,
    pub se_reduction: usize,
    pub se_fusion: String,
}

impl ConfigHeader {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        ConfigHeader {
            in_channels: cfg.in_channels,
            num_classes: cfg.num_classes,
            base_channels: cfg.base_channels,
            stage_blocks: cfg.stage_blocks,
            use_se: cfg.use_se,
            decoder_se: cfg.decoder_se,
            se_reduction: cfg.se_reduction,
            se_fusion: match cfg.se_fusion {
                Fusion::Sum => "sum".into(),
                Fusion::Max => "max".into(),
            },
        }
    }

    pub fn to_config(&self) -> Result<ModelConfig> {
        let fusion = match self.se_fusion.as_str() {
            "sum" => Fusion::Sum,
            "max" => Fusion::Max,
            other => {
                return Err(Error::Runtime(format!(
                    "unknown se_fusion {other:?} in checkpoint"
                )))
            }
        };
        Ok(ModelConfig {
            in_channels: self.in_channels,
            num_classes: self.num_classes,
            base_channels: self.base_channels,
            stage_blocks: self.stage_blocks,
            use_se: self.use_se,
            decoder_se: self.decoder_se,
            se_reduction: self.se_reduction,
            se_fusion: fusion,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub dtype: String,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BnEntry {
    pub name: String,
    pub channels: usize,
    pub mean_offset: u64,
    pub var_offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerSection {
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    /// (m, v) array offsets aligned with the params list.
    pub moment_offsets: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwaSection {
    pub count: u64,
    pub avg_offsets: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct Progress {
    pub next_epoch: usize,
    pub global_step: u64,
    pub sampler_cursor: u64,
    pub sampler_draws: Vec<u64>,
    pub best_val: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub config: ConfigHeader,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    pub bn_states: Vec<BnEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub swa: Option<SwaSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub progress: Option<Progress>,
}

/// Everything a checkpoint can carry beyond the model itself.
#[derive(Default)]
pub struct TrainState {
    pub optimizer: Option<(u64, f64, f64, Vec<Vec<f32>>, Vec<Vec<f32>>)>,
    pub swa: Option<(u64, Vec<Vec<f32>>)>,
    pub progress: Option<Progress>,
}

fn push_array(payload: &mut Vec<u8>, data: &[f32]) -> u64 {
    let offset = payload.len() as u64;
    for v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    offset
}

fn read_array(payload: &[u8], offset: u64, len: usize) -> Result<Vec<f32>> {
    let start = offset as usize;
    let end = start + len * 4;
    if end > payload.len() {
        return Err(Error::runtime("checkpoint payload truncated"));
    }
    Ok(payload[start..end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn save(path: &Path, model: &Model<f32>, state: &TrainState) -> Result<()> {
    let mut payload = Vec::new();
    let params: Vec<ParamEntry> = model
        .params
        .iter()
        .map(|p| {
            let offset = push_array(&mut payload, &p.data);
            ParamEntry {
                name: p.name.clone(),
                shape: p.shape.dims(),
                dtype: "f32".into(),
                offset,
                len: p.data.len() as u64,
            }
        })
        .collect();
    let bn_states: Vec<BnEntry> = model
        .bn
        .iter()
        .map(|st| {
            let mean_offset = push_array(&mut payload, &st.mean);
            let var_offset = push_array(&mut payload, &st.var);
            BnEntry {
                name: st.name.clone(),
                channels: st.mean.len(),
                mean_offset,
                var_offset,
            }
        })
        .collect();
    let optimizer = state.optimizer.as_ref().map(|(step, lr, wd, m, v)| {
        let moment_offsets = m
            .iter()
            .zip(v)
            .map(|(mi, vi)| (push_array(&mut payload, mi), push_array(&mut payload, vi)))
            .collect();
        OptimizerSection {
            step: *step,
            lr: *lr,
            weight_decay: *wd,
            moment_offsets,
        }
    });
    let swa = state.swa.as_ref().map(|(count, avg)| SwaSection {
        count: *count,
        avg_offsets: avg.iter().map(|a| push_array(&mut payload, a)).collect(),
    });

    let header = Header {
        config: ConfigHeader::from_config(&model.config),
        seed: model.seed(),
        params,
        bn_states,
        optimizer,
        swa,
        progress: state.progress.clone(),
    };
    let header_json = serde_json::to_vec(&header).map_err(as_runtime)?;

    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::Runtime(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(MAGIC)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    file.write_all(&payload)?;
    Ok(())
}

pub struct Loaded {
    pub model: Model<f32>,
    pub header: Header,
    pub optimizer_moments: Option<(Vec<Vec<f32>>, Vec<Vec<f32>>)>,
    pub swa_average: Option<Vec<Vec<f32>>>,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::Runtime(format!("cannot open {}: {e}", path.display())))?;
    let mut magic = [0u8; 5];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Runtime(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Runtime(format!("bad checkpoint header: {e}")))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;

    let config = header.config.to_config()?;
    let mut model = Model::<f32>::build(config, header.seed)
        .map_err(|e| Error::Runtime(format!("checkpoint config rejected: {e}")))?;

    // overwrite parameters by name, validating shapes against the build
    for entry in &header.params {
        let idx = model.params.by_name(&entry.name).ok_or_else(|| {
            Error::Runtime(format!(
                "checkpoint parameter {} does not exist in the configured model",
                entry.name
            ))
        })?;
        let expect = model.params.get(idx).shape;
        let got = Shape::new(entry.shape[0], entry.shape[1], entry.shape[2], entry.shape[3]);
        if expect != got {
            return Err(Error::Runtime(format!(
                "checkpoint parameter {} has shape {got}, config implies {expect}",
                entry.name
            )));
        }
        if entry.dtype != "f32" {
            return Err(Error::Runtime(format!(
                "unsupported dtype {} for {}",
                entry.dtype, entry.name
            )));
        }
        if entry.len as usize != expect.numel() {
            return Err(Error::Runtime(format!(
                "checkpoint parameter {} length mismatch",
                entry.name
            )));
        }
        let data = read_array(&payload, entry.offset, entry.len as usize)?;
        model.params.get_mut(idx).data = data;
    }
    let expected_params = model.params.len();
    if header.params.len() != expected_params {
        return Err(Error::Runtime(format!(
            "checkpoint has {} parameters, the configured model needs {expected_params}",
            header.params.len()
        )));
    }

    if header.bn_states.len() != model.bn.len() {
        return Err(Error::runtime("checkpoint batchnorm state count mismatch"));
    }
    for (i, entry) in header.bn_states.iter().enumerate() {
        let st = model.bn.get_mut(i);
        if st.name != entry.name || st.mean.len() != entry.channels {
            return Err(Error::Runtime(format!(
                "checkpoint batchnorm entry {} does not match the model ({} vs {})",
                i, entry.name, st.name
            )));
        }
        st.mean = read_array(&payload, entry.mean_offset, entry.channels)?;
        st.var = read_array(&payload, entry.var_offset, entry.channels)?;
    }

    let optimizer_moments = match &header.optimizer {
        Some(opt) => {
            if opt.moment_offsets.len() != expected_params {
                return Err(Error::runtime("optimizer moment count mismatch"));
            }
            let mut m = Vec::with_capacity(expected_params);
            let mut v = Vec::with_capacity(expected_params);
            for (i, (mo, vo)) in opt.moment_offsets.iter().enumerate() {
                let len = model.params.get(i).data.len();
                m.push(read_array(&payload, *mo, len)?);
                v.push(read_array(&payload, *vo, len)?);
            }
            Some((m, v))
        }
        None => None,
    };
    let swa_average = match &header.swa {
        Some(swa) => {
            if swa.avg_offsets.len() != expected_params {
                return Err(Error::runtime("SWA average count mismatch"));
            }
            let mut avg = Vec::with_capacity(expected_params);
            for (i, off) in swa.avg_offsets.iter().enumerate() {
                let len = model.params.get(i).data.len();
                avg.push(read_array(&payload, *off, len)?);
            }
            Some(avg)
        }
        None => None,
    };

    Ok(Loaded {
        model,
        header,
        optimizer_moments,
        swa_average,
    })
}
