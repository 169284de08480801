//! SE U-Net assembly: stride-1 stem, four stride-2 residual encoder
//! stages with optional scSE after each, mirrored decoder with skip
//! connections, 1x1 softmax head.
//!
//! The stem keeps full resolution (3x3, stride 1, no maxpool), so the
//! network downsamples exactly four times and inputs must have spatial
//! extents divisible by 16. Output is a per-pixel class probability map
//! of the same height and width as the input.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::nn::{
    BasicBlock, Binding, BnCtx, BnLayer, BnStates, ConvLayer, DecoderBlock, Fusion, Mode, NnError,
    ParamStore, ScSe, SeConfig,
};
use crate::tensor::{Shape, Tape, TensorError, TensorId};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Config(String),
    Input(String),
    Nn(NnError),
}

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ModelError::Config(msg) => write!(f, "invalid model config: {msg}"),
            ModelError::Input(msg) => write!(f, "invalid model input: {msg}"),
            ModelError::Nn(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ModelError {}

impl From<NnError> for ModelError {
    fn from(e: NnError) -> Self {
        ModelError::Nn(e)
    }
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Nn(NnError::Tensor(e))
    }
}

/// Downsampling factor between input and bottleneck.
pub const DOWNSAMPLE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    /// Residual blocks per encoder stage; ResNet-34 uses [3, 4, 6, 3].
    pub stage_blocks: [usize; 4],
    pub use_se: bool,
    pub decoder_se: bool,
    pub se_reduction: usize,
    pub se_fusion: Fusion,
}

impl ModelConfig {
    /// Desk-scale configuration: ~115k parameters.
    pub fn toy() -> Self {
        ModelConfig {
            in_channels: 3,
            num_classes: 2,
            base_channels: 8,
            stage_blocks: [1, 1, 1, 1],
            use_se: true,
            decoder_se: true,
            se_reduction: 4,
            se_fusion: Fusion::Sum,
        }
    }

    /// Full-size configuration with a ResNet-34 encoder layout.
    pub fn paper_faithful() -> Self {
        ModelConfig {
            in_channels: 3,
            num_classes: 2,
            base_channels: 64,
            stage_blocks: [3, 4, 6, 3],
            use_se: true,
            decoder_se: true,
            se_reduction: 16,
            se_fusion: Fusion::Sum,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_channels == 0 {
            return Err(ModelError::Config("in_channels must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config("num_classes must be at least 2".into()));
        }
        if self.base_channels == 0 {
            return Err(ModelError::Config("base_channels must be positive".into()));
        }
        if self.stage_blocks.iter().any(|&b| b == 0) {
            return Err(ModelError::Config(
                "every encoder stage needs at least one block".into(),
            ));
        }
        if (self.use_se || self.decoder_se) && self.base_channels % self.se_reduction != 0 {
            return Err(ModelError::Config(format!(
                "base_channels {} must be divisible by se_reduction {}",
                self.base_channels, self.se_reduction
            )));
        }
        Ok(())
    }

    fn se(&self) -> SeConfig {
        SeConfig {
            reduction: self.se_reduction,
            fusion: self.se_fusion,
        }
    }

    /// Encoder stage output channels: base, 2·base, 4·base, 8·base.
    pub fn stage_channels(&self) -> [usize; 4] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b, 8 * b]
    }
}

struct Stage {
    blocks: Vec<BasicBlock>,
    se: Option<ScSe>,
}

struct Architecture {
    stem_conv: ConvLayer,
    stem_bn: BnLayer,
    stages: Vec<Stage>,
    decoders: Vec<DecoderBlock>,
    head: ConvLayer,
}

/// A built SE U-Net: configuration, parameters, and batchnorm state.
pub struct Model<T: Elem> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub bn: BnStates<T>,
    arch: Architecture,
    seed: u64,
}

/// Result of one forward pass: the probability map node and the
/// parameter binding used to look up gradients afterwards.
pub struct ForwardPass {
    pub probs: TensorId,
    pub binding: Binding,
}

impl<T: Elem> Model<T> {
    /// Builds the network with deterministic per-parameter He-Normal
    /// initialization derived from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut bn = BnStates::new();
        let base = config.base_channels;

        let stem_conv = ConvLayer::build(&mut params, "stem.conv", config.in_channels, base, 3, 1, false, seed)?;
        let stem_bn = BnLayer::build(&mut params, &mut bn, "stem.bn", base)?;

        let chans = config.stage_channels();
        let mut stages = Vec::with_capacity(4);
        let mut cin = base;
        for (i, (&cout, &nblocks)) in chans.iter().zip(&config.stage_blocks).enumerate() {
            let mut blocks = Vec::with_capacity(nblocks);
            for b in 0..nblocks {
                let stride = if b == 0 { 2 } else { 1 };
                let block_in = if b == 0 { cin } else { cout };
                blocks.push(BasicBlock::build(
                    &mut params,
                    &mut bn,
                    &format!("enc{i}.block{b}"),
                    block_in,
                    cout,
                    stride,
                    seed,
                )?);
            }
            let se = if config.use_se {
                Some(ScSe::build(&mut params, &format!("enc{i}.se"), cout, config.se(), seed)?)
            } else {
                None
            };
            stages.push(Stage { blocks, se });
            cin = cout;
        }

        // decoder input channels walk back down; every skip is a stage
        // output except the last, which is the stem
        let skip_chans = [chans[2], chans[1], chans[0], base];
        let out_chans = [chans[2], chans[1], chans[0], base];
        let mut decoders = Vec::with_capacity(4);
        let mut dec_in = chans[3];
        for i in 0..4 {
            let se = if config.decoder_se { Some(config.se()) } else { None };
            decoders.push(DecoderBlock::build(
                &mut params,
                &mut bn,
                &format!("dec{i}"),
                dec_in,
                skip_chans[i],
                out_chans[i],
                se,
                seed,
            )?);
            dec_in = out_chans[i];
        }

        let head = ConvLayer::build(&mut params, "head", base, config.num_classes, 1, 1, true, seed)?;

        Ok(Model {
            config,
            params,
            bn,
            arch: Architecture {
                stem_conv,
                stem_bn,
                stages,
                decoders,
                head,
            },
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_input(&self, shape: Shape) -> Result<(), ModelError> {
        if shape.c != self.config.in_channels {
            return Err(ModelError::Input(format!(
                "expected {} input channels, got shape {shape}",
                self.config.in_channels
            )));
        }
        if shape.h == 0 || shape.w == 0 || shape.h % DOWNSAMPLE != 0 || shape.w % DOWNSAMPLE != 0 {
            return Err(ModelError::Input(format!(
                "spatial size must be a positive multiple of {DOWNSAMPLE}, got {shape}"
            )));
        }
        Ok(())
    }

    /// Forward pass in training mode; updates batchnorm running stats.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape<T>,
        x: TensorId,
    ) -> Result<ForwardPass, ModelError> {
        self.check_input(tape.shape(x))?;
        let binding = self.params.bind(tape);
        let mut ctx = BnCtx::Train(&mut self.bn);
        let probs = Self::run(&self.arch, tape, &binding, &mut ctx, x)?;
        Ok(ForwardPass { probs, binding })
    }

    /// Forward pass in eval mode; batchnorm uses running statistics and
    /// the model stays immutable, so it can be shared across workers.
    pub fn forward_eval(&self, tape: &mut Tape<T>, x: TensorId) -> Result<ForwardPass, ModelError> {
        self.check_input(tape.shape(x))?;
        let binding = self.params.bind(tape);
        let mut ctx = BnCtx::Eval(&self.bn);
        let probs = Self::run(&self.arch, tape, &binding, &mut ctx, x)?;
        Ok(ForwardPass { probs, binding })
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        x: TensorId,
        mode: Mode,
    ) -> Result<ForwardPass, ModelError> {
        match mode {
            Mode::Train => self.forward_train(tape, x),
            Mode::Eval => self.forward_eval(tape, x),
        }
    }

    /// Zeroed per-layer accumulator for a recalibration pass.
    pub fn recalibration_accumulator(&self) -> BnStates<T> {
        self.bn.zeroed()
    }

    /// Forward pass that normalizes by batch statistics and adds them to
    /// `acc` without touching the stored running stats.
    pub fn forward_recalibrate(
        &self,
        tape: &mut Tape<T>,
        x: TensorId,
        acc: &mut BnStates<T>,
    ) -> Result<ForwardPass, ModelError> {
        self.check_input(tape.shape(x))?;
        let binding = self.params.bind(tape);
        let mut ctx = BnCtx::Recalibrate(acc);
        let probs = Self::run(&self.arch, tape, &binding, &mut ctx, x)?;
        Ok(ForwardPass { probs, binding })
    }

    /// Installs the averaged statistics from `batches` accumulated
    /// forward passes as the new running stats.
    pub fn finish_recalibration(
        &mut self,
        acc: &BnStates<T>,
        batches: usize,
    ) -> Result<(), ModelError> {
        if batches == 0 {
            return Err(ModelError::Input(
                "recalibration needs at least one batch".into(),
            ));
        }
        if acc.len() != self.bn.len() {
            return Err(ModelError::Input(
                "recalibration accumulator does not match this model".into(),
            ));
        }
        let inv = T::from_f64(1.0 / batches as f64);
        for (dst, src) in self.bn.iter_mut().zip(acc.iter()) {
            for (d, &s) in dst.mean.iter_mut().zip(&src.mean) {
                *d = s * inv;
            }
            for (d, &s) in dst.var.iter_mut().zip(&src.var) {
                *d = s * inv;
            }
        }
        Ok(())
    }

    fn run(
        arch: &Architecture,
        tape: &mut Tape<T>,
        bind: &Binding,
        ctx: &mut BnCtx<'_, T>,
        x: TensorId,
    ) -> Result<TensorId, ModelError> {
        let h = arch.stem_conv.forward(tape, bind, x)?;
        let h = arch.stem_bn.forward(tape, bind, ctx, h)?;
        let stem = tape.elu(h);

        let mut skips = Vec::with_capacity(4);
        skips.push(stem);
        let mut h = stem;
        for stage in &arch.stages {
            for block in &stage.blocks {
                h = block.forward(tape, bind, ctx, h)?;
            }
            if let Some(se) = &stage.se {
                h = se.forward(tape, bind, h)?;
            }
            skips.push(h);
        }
        // skips: [stem, s0, s1, s2, s3]; the bottleneck is s3
        let mut h = skips[4];
        for (i, dec) in arch.decoders.iter().enumerate() {
            let skip = skips[3 - i];
            h = dec.forward(tape, bind, ctx, h, Some(skip))?;
        }
        let logits = arch.head.forward(tape, bind, h)?;
        Ok(tape.softmax_channels(logits)?)
    }
}

/// Two models with identical configs and shared non-SE initialization,
/// differing only in `use_se`/`decoder_se`.
pub fn ablation_pair<T: Elem>(seed: u64) -> Result<(Model<T>, Model<T>), ModelError> {
    let with_se = Model::build(ModelConfig::toy(), seed)?;
    let mut cfg = ModelConfig::toy();
    cfg.use_se = false;
    cfg.decoder_se = false;
    let without_se = Model::build(cfg, seed)?;
    Ok((with_se, without_se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use alloc::vec::Vec;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            base_channels: 4,
            se_reduction: 2,
            ..ModelConfig::toy()
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = Model::<f32>::build(ModelConfig::toy(), 3).unwrap();
        let b = Model::<f32>::build(ModelConfig::toy(), 3).unwrap();
        for (pa, pb) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.name, pb.name);
            let bits_a: Vec<u32> = pa.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = pb.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "parameter {} differs", pa.name);
        }
    }

    #[test]
    fn toy_param_count_under_500k() {
        let m = Model::<f32>::build(ModelConfig::toy(), 0).unwrap();
        assert!(
            m.param_count() < 500_000,
            "toy model has {} parameters",
            m.param_count()
        );
    }

    #[test]
    fn paper_faithful_param_count() {
        let m = Model::<f32>::build(ModelConfig::paper_faithful(), 0).unwrap();
        let count = m.param_count() as f64;
        let target = 23.2e6;
        assert!(
            (count - target).abs() / target < 0.15,
            "parameter count {count} not within 15% of {target}"
        );
    }

    #[test]
    fn forward_shape_and_softmax_sums() {
        let mut m = Model::<f32>::build(tiny_config(), 1).unwrap();
        let mut tape = Tape::new();
        let shape = Shape::new(2, 3, 32, 32);
        let data: Vec<f32> = gradcheck::fill(77, shape.numel())
            .into_iter()
            .map(|v| v as f32)
            .collect();
        let x = tape.leaf(data, shape, false).unwrap();
        let out = m.forward_train(&mut tape, x).unwrap();
        assert_eq!(tape.shape(out.probs), Shape::new(2, 2, 32, 32));
        let v = tape.value(out.probs);
        let hw = 32 * 32;
        for n in 0..2 {
            for p in 0..hw {
                let sum = v[(n * 2) * hw + p] + v[(n * 2 + 1) * hw + p];
                assert!((sum - 1.0).abs() < 1e-6, "pixel sum {sum}");
            }
        }
    }

    #[test]
    fn forward_rejects_bad_spatial_or_channels() {
        let mut m = Model::<f32>::build(tiny_config(), 1).unwrap();
        let mut tape = Tape::new();
        let x = tape
            .leaf(vec![0.0; 3 * 24 * 24], Shape::new(1, 3, 24, 24), false)
            .unwrap();
        assert!(matches!(
            m.forward_train(&mut tape, x),
            Err(ModelError::Input(_))
        ));
        let x = tape
            .leaf(vec![0.0; 4 * 32 * 32], Shape::new(1, 4, 32, 32), false)
            .unwrap();
        assert!(matches!(
            m.forward_train(&mut tape, x),
            Err(ModelError::Input(_))
        ));
    }

    #[test]
    fn no_se_config_builds_se_free_graph() {
        let mut cfg = tiny_config();
        cfg.use_se = false;
        cfg.decoder_se = false;
        let mut plain = Model::<f32>::build(cfg, 1).unwrap();
        assert!(
            plain.params.iter().all(|p| !p.name.contains(".se.")),
            "SE parameters present in a no-SE build"
        );

        let mut with = Model::<f32>::build(tiny_config(), 1).unwrap();
        let run = |m: &mut Model<f32>| {
            let mut tape = Tape::new();
            let shape = Shape::new(1, 3, 16, 16);
            let x = tape.leaf(vec![0.1; shape.numel()], shape, false).unwrap();
            m.forward_train(&mut tape, x).unwrap();
            tape.len()
        };
        assert!(run(&mut plain) < run(&mut with), "no-SE graph should be smaller");
    }

    #[test]
    fn divisibility_validation() {
        let mut cfg = ModelConfig::toy();
        cfg.se_reduction = 16; // 8 % 16 != 0
        assert!(matches!(
            Model::<f32>::build(cfg, 0),
            Err(ModelError::Config(_))
        ));
    }

    #[test]
    fn ablation_pair_shares_non_se_weights() {
        let (with_se, without_se) = ablation_pair::<f32>(9).unwrap();
        assert!(with_se.param_count() > without_se.param_count());
        for p in without_se.params.iter() {
            let idx = with_se
                .params
                .by_name(&p.name)
                .unwrap_or_else(|| panic!("missing {} in SE model", p.name));
            let q = with_se.params.get(idx);
            assert_eq!(
                p.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                q.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "weights differ for {}",
                p.name
            );
        }
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        let mut m = Model::<f64>::build(tiny_config(), 5).unwrap();
        let mut tape = Tape::new();
        // batch of 2: with a single sample the bottleneck batchnorm
        // normalizes one value per channel and its input gradient is
        // genuinely zero
        let shape = Shape::new(2, 3, 16, 16);
        let x = tape
            .leaf(gradcheck::fill(123, shape.numel()), shape, false)
            .unwrap();
        let out = m.forward_train(&mut tape, x).unwrap();
        let loss = gradcheck::weighted_sum(&mut tape, out.probs, 55);
        let grads = tape.backward(loss).unwrap();
        for (i, p) in m.params.iter().enumerate() {
            let g = grads
                .get(out.binding.ids[i])
                .unwrap_or_else(|| panic!("no gradient for {}", p.name));
            assert!(
                g.iter().any(|&v| v != 0.0),
                "gradient identically zero for {}",
                p.name
            );
        }
    }

    #[test]
    fn fully_convolutional_across_sizes() {
        let mut m = Model::<f32>::build(tiny_config(), 2).unwrap();
        for size in [16usize, 32] {
            let mut tape = Tape::new();
            let shape = Shape::new(1, 3, size, size);
            let x = tape.leaf(vec![0.5; shape.numel()], shape, false).unwrap();
            let out = m.forward_train(&mut tape, x).unwrap();
            assert_eq!(tape.shape(out.probs), Shape::new(1, 2, size, size));
        }
    }
}
