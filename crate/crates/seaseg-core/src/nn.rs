//! Composite layers: conv/bn building blocks, squeeze-and-excitation
//! gates, the residual basic block, and the decoder block.
//!
//! Parameters live in a [`ParamStore`] keyed by hierarchical path; a
//! forward pass binds the whole store onto a tape once and layers refer
//! to parameters by index. Initialization is He-Normal, seeded per
//! parameter from `(seed, path)` so that adding or removing a block
//! never shifts the draws of the others.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::elem::Elem;
use crate::tensor::{Shape, Tape, TensorError, TensorId};
#[allow(unused_imports)]
use num_traits::Float;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    Tensor(TensorError),
    BadConfig(String),
    DuplicateParam(String),
}

impl core::fmt::Display for NnError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NnError::Tensor(e) => write!(f, "{e}"),
            NnError::BadConfig(msg) => write!(f, "bad layer config: {msg}"),
            NnError::DuplicateParam(name) => write!(f, "duplicate parameter path: {name}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NnError {}

impl From<TensorError> for NnError {
    fn from(e: TensorError) -> Self {
        NnError::Tensor(e)
    }
}

/// Training vs inference behaviour (batchnorm statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

// ── parameter storage ────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<T>,
}

/// Named weight tensors keyed by a unique hierarchical path.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Elem> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: Shape, data: Vec<T>) -> Result<usize, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        debug_assert_eq!(data.len(), shape.numel());
        let idx = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape,
            data,
        });
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param<T> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Registers every parameter as a grad-requiring leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        let ids = self
            .params
            .iter()
            .map(|p| {
                tape.leaf(p.data.clone(), p.shape, true)
                    .expect("param shapes are validated at build time")
            })
            .collect();
        Binding { ids }
    }
}

/// Tape ids of one bound [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct Binding {
    pub ids: Vec<TensorId>,
}

/// Batchnorm running statistics, one entry per BN layer.
#[derive(Debug, Clone)]
pub struct BnState<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnStates<T> {
    entries: Vec<BnState<T>>,
}

impl<T: Elem> Default for BnStates<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> BnStates<T> {
    pub fn new() -> Self {
        BnStates {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, channels: usize) -> usize {
        let idx = self.entries.len();
        self.entries.push(BnState {
            name: name.to_string(),
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        });
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> &BnState<T> {
        &self.entries[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut BnState<T> {
        &mut self.entries[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &BnState<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut BnState<T>> {
        self.entries.iter_mut()
    }

    /// Same layout with every statistic zeroed; the accumulator shape
    /// for a recalibration pass.
    pub fn zeroed(&self) -> BnStates<T> {
        BnStates {
            entries: self
                .entries
                .iter()
                .map(|e| BnState {
                    name: e.name.clone(),
                    mean: vec![T::zero(); e.mean.len()],
                    var: vec![T::zero(); e.var.len()],
                })
                .collect(),
        }
    }
}

/// Batchnorm context for one forward pass. Train mode updates running
/// statistics in place; eval mode reads them; recalibrate normalizes by
/// batch statistics while accumulating their per-layer sums for a plain
/// average over the pass.
pub enum BnCtx<'a, T> {
    Train(&'a mut BnStates<T>),
    Eval(&'a BnStates<T>),
    Recalibrate(&'a mut BnStates<T>),
}

// ── initialization ───────────────────────────────────────────────────

/// He-Normal draw: `Normal(0, sqrt(2 / fan_in))`, deterministic per seed.
pub fn he_normal_init<T: Elem>(shape: Shape, fan_in: usize, seed: u64) -> Result<Vec<T>, NnError> {
    if fan_in == 0 {
        return Err(NnError::BadConfig("he_normal_init: fan_in must be positive".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..shape.numel())
        .map(|_| T::from_f64(normal.sample(&mut rng)))
        .collect())
}

/// Seed for one parameter, derived from the run seed and its path.
pub fn param_seed(seed: u64, path: &str) -> u64 {
    // FNV-1a over the path, mixed with the run seed
    let mut h: u64 = 0xcbf29ce484222325;
    for b in path.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9E3779B97F4A7C15)
}

// ── primitive layers ─────────────────────────────────────────────────

/// Convolution with He-init weights and optional zero-init bias.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: usize,
    pub bias: Option<usize>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Elem>(
        store: &mut ParamStore<T>,
        path: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        with_bias: bool,
        seed: u64,
    ) -> Result<Self, NnError> {
        let wname = format!("{path}.w");
        let shape = Shape::new(cout, cin, k, k);
        let data = he_normal_init(shape, cin * k * k, param_seed(seed, &wname))?;
        let w = store.add(&wname, shape, data)?;
        let bias = if with_bias {
            let bname = format!("{path}.b");
            let bshape = Shape::new(1, cout, 1, 1);
            Some(store.add(&bname, bshape, vec![T::zero(); cout])?)
        } else {
            None
        };
        Ok(ConvLayer {
            w,
            bias,
            stride,
            padding: k / 2,
        })
    }

    pub fn forward<T: Elem>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: TensorId,
    ) -> Result<TensorId, NnError> {
        Ok(tape.conv2d(
            x,
            bind.ids[self.w],
            self.bias.map(|b| bind.ids[b]),
            self.stride,
            self.padding,
        )?)
    }
}

/// Batch normalization layer: gamma/beta parameters plus running stats.
#[derive(Debug, Clone)]
pub struct BnLayer {
    pub gamma: usize,
    pub beta: usize,
    pub state: usize,
}

impl BnLayer {
    pub fn build<T: Elem>(
        store: &mut ParamStore<T>,
        states: &mut BnStates<T>,
        path: &str,
        channels: usize,
    ) -> Result<Self, NnError> {
        let shape = Shape::new(1, channels, 1, 1);
        let gamma = store.add(&format!("{path}.gamma"), shape, vec![T::one(); channels])?;
        let beta = store.add(&format!("{path}.beta"), shape, vec![T::zero(); channels])?;
        let state = states.add(path, channels);
        Ok(BnLayer { gamma, beta, state })
    }

    pub fn forward<T: Elem>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        bn: &mut BnCtx<'_, T>,
        x: TensorId,
    ) -> Result<TensorId, NnError> {
        let eps = T::from_f64(BN_EPS);
        let out = match bn {
            BnCtx::Train(states) => {
                let st = states.get_mut(self.state);
                tape.batchnorm_train(
                    x,
                    bind.ids[self.gamma],
                    bind.ids[self.beta],
                    &mut st.mean,
                    &mut st.var,
                    T::from_f64(BN_MOMENTUM),
                    eps,
                )?
            }
            BnCtx::Eval(states) => {
                let st = states.get(self.state);
                tape.batchnorm_eval(
                    x,
                    bind.ids[self.gamma],
                    bind.ids[self.beta],
                    &st.mean,
                    &st.var,
                    eps,
                )?
            }
            BnCtx::Recalibrate(acc) => {
                let entry = acc.get_mut(self.state);
                let c = entry.mean.len();
                // momentum 1 on zeroed scratch yields the raw batch stats
                let mut bm = alloc::vec![T::zero(); c];
                let mut bv = alloc::vec![T::zero(); c];
                let out = tape.batchnorm_train(
                    x,
                    bind.ids[self.gamma],
                    bind.ids[self.beta],
                    &mut bm,
                    &mut bv,
                    T::one(),
                    eps,
                )?;
                for i in 0..c {
                    entry.mean[i] = entry.mean[i] + bm[i];
                    entry.var[i] = entry.var[i] + bv[i];
                }
                out
            }
        };
        Ok(out)
    }
}

// ── squeeze and excitation ───────────────────────────────────────────

/// Fusion rule for the concurrent scSE block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    Sum,
    Max,
}

/// SE settings: reduction ratio of the channel branch and scSE fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeConfig {
    pub reduction: usize,
    pub fusion: Fusion,
}

impl Default for SeConfig {
    fn default() -> Self {
        SeConfig {
            reduction: 16,
            fusion: Fusion::Sum,
        }
    }
}

/// Channel squeeze-excitation: global average pool, bottleneck MLP
/// (as 1x1 convs with ELU), sigmoid gate broadcast over H and W.
#[derive(Debug, Clone)]
pub struct ChannelSe {
    pub fc1: ConvLayer,
    pub fc2: ConvLayer,
}

impl ChannelSe {
    pub fn build<T: Elem>(
        store: &mut ParamStore<T>,
        path: &str,
        channels: usize,
        reduction: usize,
        seed: u64,
    ) -> Result<Self, NnError> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(NnError::BadConfig(format!(
                "cSE at {path}: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        let mid = channels / reduction;
        let fc1 = ConvLayer::build(store, &format!("{path}.fc1"), channels, mid, 1, 1, true, seed)?;
        let fc2 = ConvLayer::build(store, &format!("{path}.fc2"), mid, channels, 1, 1, true, seed)?;
        Ok(ChannelSe { fc1, fc2 })
    }

    pub fn forward<T: Elem>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: TensorId,
    ) -> Result<TensorId, NnError> {
        let pooled = tape.global_avg_pool(x)?;
        let h = self.fc1.forward(tape, bind, pooled)?;
        let h = tape.elu(h);
        let h = self.fc2.forward(tape, bind, h)?;
        let gate = tape.sigmoid(h);
        Ok(tape.mul(x, gate)?)
    }
}

/// Spatial squeeze-excitation: 1x1 conv to a single channel, sigmoid
/// gate broadcast over channels.
#[derive(Debug, Clone)]
pub struct SpatialSe {
    pub conv: ConvLayer,
}

impl SpatialSe {
    pub fn build<T: Elem>(
        store: &mut ParamStore<T>,
        path: &str,
        channels: usize,
        seed: u64,
    ) -> Result<Self, NnError> {
        let conv = ConvLayer::build(store, &format!("{path}.conv"), channels, 1, 1, 1, true, seed)?;
        Ok(SpatialSe { conv })
    }

    pub fn forward<T: Elem>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: TensorId,
    ) -> Result<TensorId, NnError> {
        let g = self.conv.forward(tape, bind, x)?;
        let gate = tape.sigmoid(g);
        Ok(tape.mul(x, gate)?)
    }
}

/// Concurrent spatial and channel SE.
#[derive(Debug, Clone)]
pub struct ScSe {
    pub cse: ChannelSe,
    pub sse: SpatialSe,
    pub fusion: Fusion,
}

impl ScSe {
    pub fn build<T: Elem>(
        store: &mut ParamStore<T>,
        path: &str,
        channels: usize,
        cfg: SeConfig,
        seed: u64,
    ) -> Result<Self, NnError> {
        Ok(ScSe {
            cse: ChannelSe::build(store, &format!("{path}.cse"), channels, cfg.reduction, seed)?,
            sse: SpatialSe::build(store, &format!("{path}.sse"), channels, seed)?,
            fusion: cfg.fusion,
        })
    }

    pub fn forward<T: Elem>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: TensorId,
    ) -> Result<TensorId, NnError> {
        let a = self.cse.forward(tape, bind, x)?;
        let b = self.sse.forward(tape, bind, x)?;
        let out = match self.fusion {
            Fusion::Sum => tape.add(a, b)?,
            Fusion::Max => tape.elt_max(a, b)?,
        };
        Ok(out)
    }
}

// ── residual and decoder blocks ──────────────────────────────────────

/// ResNet basic block with ELU activations. A 1x1 projection shortcut
/// is present exactly when the stride is 2 or the channel count changes.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub conv1: ConvLayer,
    pub bn1: BnLayer,
    pub conv2: ConvLayer,
    pub bn2: BnLayer,
    pub proj: Option<(ConvLayer, BnLayer)>,
}

impl BasicBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Elem>(
        store: &mut ParamStore<T>,
        states: &mut BnStates<T>,
        path: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        seed: u64,
    ) -> Result<Self, NnError> {
        if !matches!(stride, 1 | 2) {
            return Err(NnError::BadConfig(format!(
                "basic block at {path}: stride must be 1 or 2, got {stride}"
            )));
        }
        let conv1 = ConvLayer::build(store, &format!("{path}.conv1"), cin, cout, 3, stride, false, seed)?;
        let bn1 = BnLayer::build(store, states, &format!("{path}.bn1"), cout)?;
        let conv2 = ConvLayer::build(store, &format!("{path}.conv2"), cout, cout, 3, 1, false, seed)?;
        let bn2 = BnLayer::build(store, states, &format!("{path}.bn2"), cout)?;
        let proj = if stride != 1 || cin != cout {
            let pc = ConvLayer::build(store, &format!("{path}.proj"), cin, cout, 1, stride, false, seed)?;
            let pb = BnLayer::build(store, states, &format!("{path}.proj_bn"), cout)?;
            Some((pc, pb))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            proj,
        })
    }

    pub fn forward<T: Elem>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        bn: &mut BnCtx<'_, T>,
        x: TensorId,
    ) -> Result<TensorId, NnError> {
        let h = self.conv1.forward(tape, bind, x)?;
        let h = self.bn1.forward(tape, bind, bn, h)?;
        let h = tape.elu(h);
        let h = self.conv2.forward(tape, bind, h)?;
        let h = self.bn2.forward(tape, bind, bn, h)?;
        let shortcut = match &self.proj {
            Some((pc, pb)) => {
                let s = pc.forward(tape, bind, x)?;
                pb.forward(tape, bind, bn, s)?
            }
            None => x,
        };
        let sum = tape.add(h, shortcut)?;
        Ok(tape.elu(sum))
    }
}

/// Decoder stage: bilinear x2 upsample, concat with the skip tensor,
/// two conv-bn-elu stacks, optional scSE.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub conv1: ConvLayer,
    pub bn1: BnLayer,
    pub conv2: ConvLayer,
    pub bn2: BnLayer,
    pub se: Option<ScSe>,
}

impl DecoderBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Elem>(
        store: &mut ParamStore<T>,
        states: &mut BnStates<T>,
        path: &str,
        cin: usize,
        skip_c: usize,
        cout: usize,
        se: Option<SeConfig>,
        seed: u64,
    ) -> Result<Self, NnError> {
        let cat = cin + skip_c;
        let conv1 = ConvLayer::build(store, &format!("{path}.conv1"), cat, cout, 3, 1, false, seed)?;
        let bn1 = BnLayer::build(store, states, &format!("{path}.bn1"), cout)?;
        let conv2 = ConvLayer::build(store, &format!("{path}.conv2"), cout, cout, 3, 1, false, seed)?;
        let bn2 = BnLayer::build(store, states, &format!("{path}.bn2"), cout)?;
        let se = match se {
            Some(cfg) => Some(ScSe::build(store, &format!("{path}.se"), cout, cfg, seed)?),
            None => None,
        };
        Ok(DecoderBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            se,
        })
    }

    pub fn forward<T: Elem>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        bn: &mut BnCtx<'_, T>,
        x: TensorId,
        skip: Option<TensorId>,
    ) -> Result<TensorId, NnError> {
        let up = tape.upsample_bilinear_2x(x)?;
        let cat = match skip {
            Some(s) => tape.concat_channels(up, s)?,
            None => up,
        };
        let h = self.conv1.forward(tape, bind, cat)?;
        let h = self.bn1.forward(tape, bind, bn, h)?;
        let h = tape.elu(h);
        let h = self.conv2.forward(tape, bind, h)?;
        let h = self.bn2.forward(tape, bind, bn, h)?;
        let h = tape.elu(h);
        match &self.se {
            Some(se) => se.forward(tape, bind, h),
            None => Ok(h),
        }
    }
}
