//! The dual-stream network.
//!
//! One parameter store backs both streams: each encoder, residual-block and
//! decoder parameter exists exactly once and is bound to a single graph leaf
//! per forward pass, so the two streams read the same storage and their
//! gradients accumulate on the same leaf.
//!
//! ```text
//! x1 -> encoder -> f0..f4 ----------------------------+ skips
//!                    f4 \                              v
//!                        + -> residual block -> decoder -> logits1
//!                    f4 /                   \-> decoder -> logits2
//! x2 -> encoder -> f0..f4 ---------------------------^ skips
//! ```

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::rng::rng_for;
use crate::tensor_core::{
    xavier_init, BatchNormStats, BatchStats, Graph, Mode, Real, Tensor, TensorArchive, TensorError, Var,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Background plus the segmented structures.
    pub num_classes: usize,
    /// Channels of the full-resolution feature maps; doubles per level.
    pub base_width: usize,
    /// Number of downsampling blocks.
    pub levels: usize,
    /// Nominal `(height, width)` of training images.
    pub input_size: (usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { in_channels: 1, num_classes: 6, base_width: 32, levels: 4, input_size: (176, 176) }
    }
}

impl ModelConfig {
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_channels == 0 || self.base_width == 0 || self.levels == 0 {
            return Err(ModelError::Config("in_channels, base_width and levels must be positive".into()));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(ModelError::Config(format!("num_classes must be in 2..=256, got {}", self.num_classes)));
        }
        let (h, w) = self.input_size;
        let d = self.divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(ModelError::Config(format!("input size {h}x{w} must be a positive multiple of {d}")));
        }
        Ok(())
    }

    /// Channels of the level-`k` feature map.
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// `key = value` lines, embedded in checkpoints.
    pub fn to_text(&self) -> String {
        format!(
            "in_channels = {}\nnum_classes = {}\nbase_width = {}\nlevels = {}\ninput_height = {}\ninput_width = {}\n",
            self.in_channels, self.num_classes, self.base_width, self.levels, self.input_size.0, self.input_size.1
        )
    }

    /// Parses the keys written by [`ModelConfig::to_text`]; other keys are ignored.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let kv = parse_key_values(text).map_err(ModelError::Config)?;
        let get = |k: &str| -> Result<usize, ModelError> {
            kv.get(k)
                .ok_or_else(|| ModelError::Config(format!("missing key {k}")))?
                .parse()
                .map_err(|e| ModelError::Config(format!("{k}: {e}")))
        };
        let cfg = Self {
            in_channels: get("in_channels")?,
            num_classes: get("num_classes")?,
            base_width: get("base_width")?,
            levels: get("levels")?,
            input_size: (get("input_height")?, get("input_width")?),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<HashMap<String, String>, String> {
    let mut out = HashMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`, got {line:?}", no + 1))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

/// Parameter count of [`ModelConfig::default`].
pub const DEFAULT_PARAMETER_COUNT: usize = 14_848_070;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct BnLayer {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    conv: ConvLayer,
    bn: BnLayer,
}

#[derive(Debug, Clone, Copy)]
struct DoubleConv {
    first: ConvBn,
    second: ConvBn,
}

#[derive(Debug, Clone)]
struct EncoderLayout {
    input: DoubleConv,
    down: Vec<DoubleConv>,
}

#[derive(Debug, Clone, Copy)]
struct ResidualLayout {
    main1: ConvBn,
    main2: ConvBn,
    shortcut: ConvBn,
}

#[derive(Debug, Clone, Copy)]
struct UpLayout {
    up: ConvLayer,
    convs: DoubleConv,
}

#[derive(Debug, Clone)]
struct DecoderLayout {
    /// Ordered from the bottleneck outwards.
    up: Vec<UpLayout>,
    head: ConvLayer,
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
}

/// Running statistics of a named batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedStats<T> {
    pub name: String,
    pub stats: BatchNormStats<T>,
}

/// The single shared parameter set of the network.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Real = f32> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    bn: Vec<NamedStats<T>>,
    encoder: EncoderLayout,
    residual: ResidualLayout,
    decoder: DecoderLayout,
}

struct Builder<T: Real> {
    rng: crate::rng::StdRng,
    params: Vec<Param<T>>,
    bn: Vec<NamedStats<T>>,
}

impl<T: Real> Builder<T> {
    fn add(&mut self, name: String, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name, value: Arc::new(value) });
        ParamId(self.params.len() - 1)
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> ConvLayer {
        let w = xavier_init(&[c_out, c_in, k, k], c_in * k * k, c_out * k * k, &mut self.rng);
        ConvLayer {
            weight: self.add(format!("{name}.weight"), w),
            bias: self.add(format!("{name}.bias"), Tensor::zeros(&[c_out])),
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> BnLayer {
        let gamma = self.add(format!("{name}.gamma"), Tensor::ones(&[c]));
        let beta = self.add(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.bn.push(NamedStats { name: name.to_owned(), stats: BatchNormStats::new(c) });
        BnLayer { gamma, beta, stats: self.bn.len() - 1 }
    }

    fn conv_bn(&mut self, name: &str, conv: &str, bn: &str, c_in: usize, c_out: usize) -> ConvBn {
        ConvBn {
            conv: self.conv(&format!("{name}.{conv}"), c_in, c_out, 3),
            bn: self.bn(&format!("{name}.{bn}"), c_out),
        }
    }

    fn double(&mut self, name: &str, c_in: usize, c_out: usize) -> DoubleConv {
        DoubleConv {
            first: self.conv_bn(name, "conv1", "bn1", c_in, c_out),
            second: self.conv_bn(name, "conv2", "bn2", c_out, c_out),
        }
    }
}

/// Per-scale encoder outputs; `maps[k]` is at `1 / 2^k` resolution with
/// `base_width * 2^k` channels. The last entry is the bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFeatures {
    pub maps: Vec<Var>,
}

impl EncoderFeatures {
    pub fn bottleneck(&self) -> Var {
        *self.maps.last().expect("at least one level")
    }
}

/// Graph handles produced by a dual-stream forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOutput {
    pub logits1: Var,
    pub logits2: Var,
    pub prob1: Var,
    pub prob2: Var,
}

impl<T: Real> ModelParams<T> {
    /// Xavier-initialized weights, zero biases, unit/zero batch-norm affine.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut b = Builder { rng: rng_for(seed, &[0x6d6f_64656c]), params: Vec::new(), bn: Vec::new() };
        let input = b.double("encoder.input", config.in_channels, config.width(0));
        let down = (1..=config.levels)
            .map(|k| b.double(&format!("encoder.down{k}"), config.width(k - 1), config.width(k)))
            .collect();
        let c = config.width(config.levels);
        let residual = ResidualLayout {
            main1: b.conv_bn("residual.main", "conv1", "bn1", c, c),
            main2: b.conv_bn("residual.main", "conv2", "bn2", c, c),
            shortcut: b.conv_bn("residual.shortcut", "conv", "bn", c, c),
        };
        let up = (0..config.levels)
            .rev()
            .enumerate()
            .map(|(i, k)| {
                let name = format!("decoder.up{}", i + 1);
                UpLayout {
                    up: b.conv(&format!("{name}.transpose"), config.width(k + 1), config.width(k), 2),
                    convs: b.double(&name, 2 * config.width(k), config.width(k)),
                }
            })
            .collect();
        let head = b.conv("decoder.head", config.width(0), config.num_classes, 1);
        Ok(Self {
            config,
            params: b.params,
            bn: b.bn,
            encoder: EncoderLayout { input, down },
            residual,
            decoder: DecoderLayout { up, head },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn batch_norms(&self) -> &[NamedStats<T>] {
        &self.bn
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Folds training-mode batch statistics into the running statistics, in
    /// the order they were produced.
    pub fn absorb_batch_stats(&mut self, updates: &[(usize, BatchStats<T>)]) {
        for (slot, stats) in updates {
            self.bn[*slot].stats.absorb(stats);
        }
    }

    /// Parameters and running statistics as `f32` named tensors.
    pub fn to_archive(&self) -> TensorArchive {
        let mut tensors: Vec<_> = self.params.iter().map(|p| (p.name.clone(), p.value.cast::<f32>())).collect();
        for b in &self.bn {
            tensors.push((format!("{}.running_mean", b.name), b.stats.running_mean.cast()));
            tensors.push((format!("{}.running_var", b.name), b.stats.running_var.cast()));
        }
        TensorArchive { tensors, metadata: self.config.to_text() }
    }

    /// Overwrites parameters and running statistics from an archive written
    /// by [`ModelParams::to_archive`] for the same configuration.
    pub fn load_archive(&mut self, archive: &TensorArchive) -> Result<(), ModelError> {
        let stored = ModelConfig::from_text(&archive.metadata)
            .map_err(|e| ModelError::Mismatch(format!("config block: {e}")))?;
        let ours = &self.config;
        if (stored.in_channels, stored.num_classes, stored.base_width, stored.levels)
            != (ours.in_channels, ours.num_classes, ours.base_width, ours.levels)
        {
            return Err(ModelError::Mismatch(format!(
                "checkpoint config\n{}differs from model config\n{}",
                stored.to_text(),
                ours.to_text()
            )));
        }
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor<T>, ModelError> {
            let t = archive.get(name).ok_or_else(|| ModelError::Mismatch(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(ModelError::Mismatch(format!(
                    "{name}: checkpoint shape {:?}, model shape {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.cast())
        };
        let mut params = Vec::with_capacity(self.params.len());
        for p in &self.params {
            params.push(fetch(&p.name, p.value.shape())?);
        }
        let mut stats = Vec::with_capacity(self.bn.len());
        for b in &self.bn {
            let c = [b.stats.channels()];
            stats.push((
                fetch(&format!("{}.running_mean", b.name), &c)?,
                fetch(&format!("{}.running_var", b.name), &c)?,
            ));
        }
        for (p, v) in self.params.iter_mut().zip(params) {
            p.value = Arc::new(v);
        }
        for (b, (m, v)) in self.bn.iter_mut().zip(stats) {
            b.stats.running_mean = m;
            b.stats.running_var = v;
        }
        Ok(())
    }

    /// Eval-mode probabilities for both streams.
    pub fn predict(&self, x1: &Tensor<T>, x2: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
        let mut g = Graph::new();
        let (a, b) = (g.input(x1.clone()), g.input(x2.clone()));
        let mut fwd = Forward::new(&mut g, self, Mode::Eval);
        let out = fwd.dual(a, b)?;
        drop(fwd);
        Ok((g.value(out.prob1).clone(), g.value(out.prob2).clone()))
    }
}

impl<T: Real> fmt::Display for ModelParams<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ST-DSNN(base_width={}, levels={}, classes={}, params={})",
            self.config.base_width,
            self.config.levels,
            self.config.num_classes,
            self.num_parameters()
        )
    }
}

/// Records forward computations of one [`ModelParams`] onto a graph.
///
/// Every parameter is bound to one graph leaf when the context is created;
/// all subsequent calls, whichever stream they serve, reuse those leaves.
pub struct Forward<'g, 'p, T: Real> {
    graph: &'g mut Graph<T>,
    params: &'p ModelParams<T>,
    vars: Vec<Var>,
    mode: Mode,
    batch_stats: Vec<(usize, BatchStats<T>)>,
}

impl<'g, 'p, T: Real> Forward<'g, 'p, T> {
    pub fn new(graph: &'g mut Graph<T>, params: &'p ModelParams<T>, mode: Mode) -> Self {
        let vars = params.params.iter().map(|p| graph.param(p.value.clone())).collect();
        Self { graph, params, vars, mode, batch_stats: Vec::new() }
    }

    /// Leaf bound to the `i`-th parameter of [`ModelParams::params`].
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn graph(&mut self) -> &mut Graph<T> {
        self.graph
    }

    /// Batch statistics recorded so far (train mode), in invocation order.
    pub fn into_batch_stats(self) -> Vec<(usize, BatchStats<T>)> {
        self.batch_stats
    }

    fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    fn conv(&mut self, x: Var, layer: ConvLayer, pad: usize) -> Result<Var, TensorError> {
        let (w, b) = (self.var(layer.weight), self.var(layer.bias));
        self.graph.conv2d(x, w, b, 1, pad)
    }

    fn conv_bn(&mut self, x: Var, layer: ConvBn) -> Result<Var, TensorError> {
        let y = self.conv(x, layer.conv, 1)?;
        let (gamma, beta) = (self.var(layer.bn.gamma), self.var(layer.bn.beta));
        let stats = &self.params.bn[layer.bn.stats].stats;
        let (out, batch) = self.graph.batchnorm2d(y, gamma, beta, stats, self.mode)?;
        if let Some(batch) = batch {
            self.batch_stats.push((layer.bn.stats, batch));
        }
        Ok(out)
    }

    fn double(&mut self, x: Var, layer: DoubleConv) -> Result<Var, TensorError> {
        let a = self.conv_bn(x, layer.first)?;
        let a = self.graph.relu(a);
        let b = self.conv_bn(a, layer.second)?;
        Ok(self.graph.relu(b))
    }

    fn check_input(&self, x: Var) -> Result<(), ModelError> {
        let cfg = &self.params.config;
        let shape = self.graph.value(x).shape();
        let ok = matches!(shape, [_, c, h, w]
            if *c == cfg.in_channels && *h > 0 && *w > 0 && h % cfg.divisor() == 0 && w % cfg.divisor() == 0);
        if !ok {
            return Err(ModelError::Tensor(TensorError::Shape {
                op: "encode",
                detail: format!(
                    "input {shape:?} must be [n, {}, h, w] with h, w multiples of {}",
                    cfg.in_channels,
                    cfg.divisor()
                ),
            }));
        }
        Ok(())
    }

    /// Input block plus the downsampling blocks (maxpool, two conv-BN-ReLU).
    pub fn encode(&mut self, x: Var) -> Result<EncoderFeatures, ModelError> {
        self.check_input(x)?;
        let enc = &self.params.encoder;
        let mut cur = self.double(x, enc.input)?;
        let mut maps = vec![cur];
        for k in 0..enc.down.len() {
            let block = self.params.encoder.down[k];
            let pooled = self.graph.maxpool2x2(cur)?;
            cur = self.double(pooled, block)?;
            maps.push(cur);
        }
        Ok(EncoderFeatures { maps })
    }

    /// Elementwise sum of the two streams' bottleneck features.
    pub fn fuse(&mut self, f1: Var, f2: Var) -> Result<Var, ModelError> {
        Ok(self.graph.add(f1, f2)?)
    }

    /// `relu(main(x) + shortcut(x))` with `main = conv-BN-ReLU-conv-BN` and
    /// `shortcut = conv-BN`.
    pub fn residual_generate(&mut self, fused: Var) -> Result<Var, ModelError> {
        let r = self.params.residual;
        let m = self.conv_bn(fused, r.main1)?;
        let m = self.graph.relu(m);
        let m = self.conv_bn(m, r.main2)?;
        let s = self.conv_bn(fused, r.shortcut)?;
        let sum = self.graph.add(m, s)?;
        Ok(self.graph.relu(sum))
    }

    /// Decoder output before the 1x1 head (`base_width` channels, input resolution).
    pub fn decode_features(&mut self, fused: Var, skips: &EncoderFeatures) -> Result<Var, ModelError> {
        let levels = self.params.config.levels;
        if skips.maps.len() != levels + 1 {
            return Err(ModelError::Tensor(TensorError::Shape {
                op: "decode",
                detail: format!("expected {} skip maps, got {}", levels + 1, skips.maps.len()),
            }));
        }
        let mut cur = fused;
        for i in 0..levels {
            let block = self.params.decoder.up[i];
            let (w, b) = (self.var(block.up.weight), self.var(block.up.bias));
            let up = self.graph.conv_transpose2d(cur, w, b)?;
            let merged = self.graph.concat_channels(up, skips.maps[levels - 1 - i])?;
            cur = self.double(merged, block.convs)?;
        }
        Ok(cur)
    }

    /// Logits `[n, num_classes, h, w]`.
    pub fn decode(&mut self, fused: Var, skips: &EncoderFeatures) -> Result<Var, ModelError> {
        let feats = self.decode_features(fused, skips)?;
        let head = self.params.decoder.head;
        Ok(self.conv(feats, head, 0)?)
    }

    /// Both streams. The residual block is evaluated once on the fused
    /// features and feeds both decoders; each decoder takes skips from its
    /// own stream's encoder.
    pub fn dual(&mut self, x1: Var, x2: Var) -> Result<DualOutput, ModelError> {
        let (s1, s2) = (self.graph.value(x1).shape(), self.graph.value(x2).shape());
        if s1 != s2 {
            return Err(ModelError::Tensor(TensorError::Shape {
                op: "forward",
                detail: format!("stream inputs differ: {s1:?} vs {s2:?}"),
            }));
        }
        let e1 = self.encode(x1)?;
        let e2 = self.encode(x2)?;
        let fused = self.fuse(e1.bottleneck(), e2.bottleneck())?;
        let shared = self.residual_generate(fused)?;
        let logits1 = self.decode(shared, &e1)?;
        let logits2 = self.decode(shared, &e2)?;
        let prob1 = self.graph.softmax_channels(logits1)?;
        let prob2 = self.graph.softmax_channels(logits2)?;
        Ok(DualOutput { logits1, logits2, prob1, prob2 })
    }

    /// Single-time-point use: the same image in both streams, evaluated once.
    /// Returns `(logits, prob)`.
    pub fn single(&mut self, x: Var) -> Result<(Var, Var), ModelError> {
        let e = self.encode(x)?;
        let fused = self.fuse(e.bottleneck(), e.bottleneck())?;
        let shared = self.residual_generate(fused)?;
        let logits = self.decode(shared, &e)?;
        let prob = self.graph.softmax_channels(logits)?;
        Ok((logits, prob))
    }
}

/// Dual-stream forward pass. In train mode the running batch-norm statistics
/// of `params` are updated (stream 1 before stream 2).
pub fn forward<T: Real>(
    graph: &mut Graph<T>,
    params: &mut ModelParams<T>,
    x1: Var,
    x2: Var,
    mode: Mode,
) -> Result<DualOutput, ModelError> {
    let mut fwd = Forward::new(graph, params, mode);
    let out = fwd.dual(x1, x2)?;
    let stats = fwd.into_batch_stats();
    params.absorb_batch_stats(&stats);
    Ok(out)
}

/// Eval-mode probabilities for a single image.
pub fn single_stream_forward<T: Real>(params: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let mut fwd = Forward::new(&mut g, params, Mode::Eval);
    let (_, prob) = fwd.single(xv)?;
    drop(fwd);
    Ok(g.value(prob).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { in_channels: 1, num_classes: 3, base_width: 4, levels: 4, input_size: (16, 16) }
    }

    /// Parameter count from the layer list, independent of the builder.
    fn expected_count(cfg: &ModelConfig) -> usize {
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let conv_bn = |ci: usize, co: usize| conv(ci, co, 3) + 2 * co;
        let double = |ci: usize, co: usize| conv_bn(ci, co) + conv_bn(co, co);
        let w = |k: usize| cfg.width(k);
        let mut n = double(cfg.in_channels, w(0));
        for k in 1..=cfg.levels {
            n += double(w(k - 1), w(k));
        }
        n += 3 * conv_bn(w(cfg.levels), w(cfg.levels));
        for k in (0..cfg.levels).rev() {
            n += conv(w(k + 1), w(k), 2) + double(2 * w(k), w(k));
        }
        n + conv(w(0), cfg.num_classes, 1)
    }

    #[test]
    fn parameter_count_matches_layer_formula() {
        let m = ModelParams::<f32>::build(ModelConfig::default(), 0).unwrap();
        assert_eq!(m.num_parameters(), expected_count(m.config()));
        assert_eq!(m.num_parameters(), DEFAULT_PARAMETER_COUNT);
        let t = ModelParams::<f32>::build(tiny(), 0).unwrap();
        assert_eq!(t.num_parameters(), expected_count(t.config()));
    }

    #[test]
    fn head_projects_to_classes() {
        let m = ModelParams::<f32>::build(ModelConfig::default(), 1).unwrap();
        assert_eq!(m.param("decoder.head.weight").unwrap().value.shape(), &[6, 32, 1, 1]);
    }

    #[test]
    fn build_rejects_indivisible_size() {
        let cfg = ModelConfig { input_size: (170, 170), ..ModelConfig::default() };
        assert!(matches!(ModelParams::<f32>::build(cfg, 0), Err(ModelError::Config(_))));
    }

    #[test]
    fn build_is_deterministic() {
        let a = ModelParams::<f32>::build(tiny(), 9).unwrap();
        let b = ModelParams::<f32>::build(tiny(), 9).unwrap();
        assert_eq!(a.params(), b.params());
        let c = ModelParams::<f32>::build(tiny(), 10).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn biases_zero_and_bn_identity_at_init() {
        let m = ModelParams::<f32>::build(tiny(), 3).unwrap();
        for p in m.params() {
            if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
            }
            if p.name.ends_with(".gamma") {
                assert!(p.value.data().iter().all(|&v| v == 1.0), "{}", p.name);
            }
        }
    }

    #[test]
    fn encoder_feature_schedule() {
        let cfg = ModelConfig { input_size: (64, 64), ..ModelConfig::default() };
        let m = ModelParams::<f32>::build(cfg, 0).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 64, 64]));
        let mut fwd = Forward::new(&mut g, &m, Mode::Eval);
        let feats = fwd.encode(x).unwrap();
        let shapes: Vec<Vec<usize>> = feats.maps.iter().map(|&v| fwd.graph().value(v).shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![1, 32, 64, 64],
                vec![1, 64, 32, 32],
                vec![1, 128, 16, 16],
                vec![1, 256, 8, 8],
                vec![1, 512, 4, 4]
            ]
        );
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = tiny();
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert!(ModelConfig::from_text("levels = 4").is_err());
    }

    #[test]
    fn encode_rejects_wrong_input() {
        let m = ModelParams::<f32>::build(tiny(), 0).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 20, 16]));
        let mut fwd = Forward::new(&mut g, &m, Mode::Eval);
        assert!(fwd.encode(x).is_err());
    }
}
