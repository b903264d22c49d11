//! Training loop: paired random crops, the dual-stream cross-entropy
//! objective, Adam with a step learning-rate schedule, and checkpoints.
//!
//! Every random draw comes from a generator derived from the run seed and
//! the draw's position (epoch, batch, sample), so a run resumed from a
//! checkpoint continues exactly as an uninterrupted one would.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::format::FormatError;
use crate::model::{parse_key_values, ModelConfig, ModelError, ModelParams};
use crate::phantom::ScanPair;
use crate::rng::{rng_for, StdRng};
use crate::tensor_core::{step_lr, AdamConfig, AdamState, Graph, Mode, Tensor, TensorArchive, TensorError, Var};

/// Crops are multiples of this many pixels so every pooling level divides evenly.
pub const CROP_MULTIPLE: usize = 16;

const STREAM_SHUFFLE: u64 = 1;
const STREAM_CROP_SIZE: u64 = 2;
const STREAM_CROP_OFFSET: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training samples")]
    Empty,
    #[error("crop of {height}x{width} is smaller than {min}x{min}")]
    CropTooSmall { height: usize, width: usize, min: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (samples {samples:?})")]
    NonFinite { epoch: usize, batch: usize, loss: f64, samples: Vec<(String, usize)> },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Slice samples per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Epochs between learning-rate decays; also the checkpoint cadence.
    pub step_size: usize,
    pub gamma: f64,
    pub epochs: usize,
    /// Crop side length as a fraction of the image side, sampled uniformly.
    pub crop_fraction_range: (f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 6,
            learning_rate: 5e-5,
            weight_decay: 1e-5,
            step_size: 50,
            gamma: 0.5,
            epochs: 200,
            crop_fraction_range: (0.8, 1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.step_size == 0 {
            return bad("batch_size and step_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        let (lo, hi) = self.crop_fraction_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("crop fractions must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// Learning rate used during `epoch` (1-based).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    step_lr(cfg.learning_rate, cfg.gamma, cfg.step_size, epoch)
}

/// A crop rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropWindow {
    pub fn full(height: usize, width: usize) -> Self {
        Self { top: 0, left: 0, height, width }
    }
}

fn round_down(fraction: f64, side: usize) -> usize {
    ((fraction * side as f64 + 1e-9).floor() as usize) / CROP_MULTIPLE * CROP_MULTIPLE
}

/// Crop side lengths for an `h x w` image: one fraction from `range`, each
/// side rounded down to a multiple of 16.
pub fn sample_crop_size<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    range: (f64, f64),
    rng: &mut R,
) -> Result<(usize, usize), TrainError> {
    let f = if range.0 < range.1 { rng.random_range(range.0..=range.1) } else { range.0 };
    let (ch, cw) = (round_down(f, h), round_down(f, w));
    if ch < CROP_MULTIPLE || cw < CROP_MULTIPLE {
        return Err(TrainError::CropTooSmall { height: ch, width: cw, min: CROP_MULTIPLE });
    }
    Ok((ch, cw))
}

/// A window of the given size at a uniformly random valid offset.
pub fn sample_crop_offset<R: Rng + ?Sized>(h: usize, w: usize, size: (usize, usize), rng: &mut R) -> CropWindow {
    CropWindow {
        top: rng.random_range(0..=h - size.0),
        left: rng.random_range(0..=w - size.1),
        height: size.0,
        width: size.1,
    }
}

/// Crops the two trailing axes of `t`.
pub fn crop_trailing<T: Copy>(t: &Tensor<T>, win: CropWindow) -> Result<Tensor<T>, TensorError> {
    let shape = t.shape();
    if shape.len() < 2 {
        return Err(TensorError::Rank { op: "crop", expected: 2, shape: shape.to_vec() });
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if win.height == 0 || win.width == 0 || win.top + win.height > h || win.left + win.width > w {
        return Err(TensorError::Shape { op: "crop", detail: format!("window {win:?} outside {h}x{w}") });
    }
    let planes = t.len() / (h * w);
    let mut data = Vec::with_capacity(planes * win.height * win.width);
    for p in 0..planes {
        for y in win.top..win.top + win.height {
            let row = p * h * w + y * w;
            data.extend_from_slice(&t.data()[row + win.left..row + win.left + win.width]);
        }
    }
    let mut out_shape = shape.to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = win.height;
    out_shape[r - 1] = win.width;
    Tensor::new(&out_shape, data)
}

/// Images `[c, h, w]` and labels `[h, w]` of both streams.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppedPair {
    pub x1: Tensor<f32>,
    pub x2: Tensor<f32>,
    pub y1: Tensor<u8>,
    pub y2: Tensor<u8>,
    /// Window applied to each stream.
    pub windows: [CropWindow; 2],
}

fn spatial(t_shape: &[usize]) -> Option<(usize, usize)> {
    let r = t_shape.len();
    (r >= 2).then(|| (t_shape[r - 2], t_shape[r - 1]))
}

/// Applies one window to both images and both label maps.
pub fn crop_pair_at(
    x1: &Tensor<f32>,
    x2: &Tensor<f32>,
    y1: &Tensor<u8>,
    y2: &Tensor<u8>,
    win: CropWindow,
) -> Result<CroppedPair, TrainError> {
    let dims = [x1.shape(), x2.shape(), y1.shape(), y2.shape()].map(spatial);
    if dims.iter().any(|d| d.is_none() || *d != dims[0]) {
        return Err(TensorError::Shape {
            op: "random_crop_pair",
            detail: format!("spatial dims differ: {:?} {:?} {:?} {:?}", x1.shape(), x2.shape(), y1.shape(), y2.shape()),
        }
        .into());
    }
    Ok(CroppedPair {
        x1: crop_trailing(x1, win)?,
        x2: crop_trailing(x2, win)?,
        y1: crop_trailing(y1, win)?,
        y2: crop_trailing(y2, win)?,
        windows: [win, win],
    })
}

/// Samples one crop window and applies it to both streams.
pub fn random_crop_pair<R: Rng + ?Sized>(
    x1: &Tensor<f32>,
    x2: &Tensor<f32>,
    y1: &Tensor<u8>,
    y2: &Tensor<u8>,
    rng: &mut R,
    cfg: &TrainConfig,
) -> Result<CroppedPair, TrainError> {
    let (h, w) = spatial(x1.shape()).ok_or_else(|| TrainError::Config("image needs two spatial axes".into()))?;
    let size = sample_crop_size(h, w, cfg.crop_fraction_range, rng)?;
    let win = sample_crop_offset(h, w, size, rng);
    crop_pair_at(x1, x2, y1, y2, win)
}

/// Mean of the two streams' cross-entropies.
pub fn pair_loss(
    graph: &mut Graph<f32>,
    logits1: Var,
    logits2: Var,
    y1: Arc<Tensor<u8>>,
    y2: Arc<Tensor<u8>>,
) -> Result<Var, TensorError> {
    let a = graph.cross_entropy(logits1, y1)?;
    let b = graph.cross_entropy(logits2, y2)?;
    let s = graph.add(a, b)?;
    Ok(graph.scale(s, 0.5))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropRecord {
    pub epoch: usize,
    /// Index into the training pair list and slice within the pair.
    pub pair: usize,
    pub slice: usize,
    pub windows: [CropWindow; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<(usize, PathBuf)>,
    pub crops: Vec<CropRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// `epoch,mean_loss,lr,seconds`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,lr,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{:.3}", e.epoch, e.mean_loss, e.lr, e.seconds);
        }
        out
    }
}

/// Model, optimizer moments and the number of completed epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: ModelParams<f32>, cfg: &TrainConfig) -> Self {
        let adam = AdamState::new(cfg.adam(), model.params().iter().map(|p| p.value.shape()));
        Self { model, adam, epoch: 0 }
    }
}

/// Where and how often to write checkpoints during [`run`].
#[derive(Debug, Clone, Default)]
pub struct CheckpointPolicy {
    pub dir: Option<PathBuf>,
}

impl CheckpointPolicy {
    pub fn path_for(dir: &Path, epoch: usize) -> PathBuf {
        dir.join(format!("epoch_{epoch:04}.stdw"))
    }
}

fn sample_list(pairs: &[ScanPair]) -> Vec<(usize, usize)> {
    pairs.iter().enumerate().flat_map(|(i, p)| (0..p.slices()).map(move |s| (i, s))).collect()
}

struct Batch {
    x1: Tensor<f32>,
    x2: Tensor<f32>,
    y1: Arc<Tensor<u8>>,
    y2: Arc<Tensor<u8>>,
}

fn assemble(
    pairs: &[ScanPair],
    chosen: &[(usize, usize)],
    cfg: &TrainConfig,
    epoch: usize,
    batch_index: usize,
    first_position: usize,
    crops: &mut Vec<CropRecord>,
) -> Result<Batch, TrainError> {
    let (_, h, w) = pairs[chosen[0].0].scan1.dims();
    let mut size_rng: StdRng = rng_for(cfg.seed, &[STREAM_CROP_SIZE, epoch as u64, batch_index as u64]);
    let size = sample_crop_size(h, w, cfg.crop_fraction_range, &mut size_rng)?;
    let (mut x1s, mut x2s, mut y1s, mut y2s) = (vec![], vec![], vec![], vec![]);
    for (k, &(pi, slice)) in chosen.iter().enumerate() {
        let sample = pairs[pi].sample(slice);
        let mut rng: StdRng = rng_for(cfg.seed, &[STREAM_CROP_OFFSET, epoch as u64, (first_position + k) as u64]);
        let (sh, sw) = (sample.x1.shape()[1], sample.x1.shape()[2]);
        if (sh, sw) != (h, w) {
            return Err(TrainError::Config(format!(
                "all training scans must share slice dims; found {sh}x{sw} and {h}x{w}"
            )));
        }
        let win = sample_crop_offset(h, w, size, &mut rng);
        let c = crop_pair_at(&sample.x1, &sample.x2, &sample.y1, &sample.y2, win)?;
        crops.push(CropRecord { epoch, pair: pi, slice, windows: c.windows });
        x1s.push(c.x1);
        x2s.push(c.x2);
        y1s.push(c.y1);
        y2s.push(c.y2);
    }
    let stack = |v: &[Tensor<f32>]| Tensor::stack(&v.iter().collect::<Vec<_>>());
    let stack_u8 = |v: &[Tensor<u8>]| Tensor::stack(&v.iter().collect::<Vec<_>>());
    Ok(Batch { x1: stack(&x1s)?, x2: stack(&x2s)?, y1: Arc::new(stack_u8(&y1s)?), y2: Arc::new(stack_u8(&y2s)?) })
}

/// One optimizer step; returns the batch loss.
fn step(state: &mut TrainState, batch: Batch, lr: f64) -> Result<f64, TrainError> {
    let mut g = Graph::new();
    let (a, b) = (g.input(batch.x1), g.input(batch.x2));
    let mut fwd = crate::model::Forward::new(&mut g, &state.model, Mode::Train);
    let out = fwd.dual(a, b)?;
    let vars = fwd.param_vars().to_vec();
    let stats = fwd.into_batch_stats();
    let loss = pair_loss(&mut g, out.logits1, out.logits2, batch.y1, batch.y2)?;
    let value = g.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    let grads: Vec<Tensor<f32>> = vars.iter().map(|&v| g.take_grad(v).unwrap_or_else(|| g.grad_or_zeros(v))).collect();
    drop(g);
    state.model.absorb_batch_stats(&stats);
    state.adam.config.learning_rate = lr;
    let mut params: Vec<&mut Tensor<f32>> =
        state.model.params_mut().iter_mut().map(|p| Arc::make_mut(&mut p.value)).collect();
    state.adam.step(&mut params, &grads.iter().collect::<Vec<_>>())?;
    Ok(value)
}

/// Trains from `state.epoch + 1` through `cfg.epochs`. Pairs are expanded
/// into per-slice samples, shuffled each epoch and split into batches; all
/// samples of a batch share a crop size, each gets its own offset.
pub fn run(
    state: &mut TrainState,
    pairs: &[ScanPair],
    cfg: &TrainConfig,
    checkpoints: &CheckpointPolicy,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    if state.epoch >= cfg.epochs {
        return Ok(history);
    }
    let samples = sample_list(pairs);
    if samples.is_empty() {
        return Err(TrainError::Empty);
    }
    if let Some(dir) = &checkpoints.dir {
        fs::create_dir_all(dir)?;
    }
    for epoch in state.epoch + 1..=cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        let mut order = samples.clone();
        order.shuffle(&mut rng_for(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = assemble(pairs, chunk, cfg, epoch, bi, bi * cfg.batch_size, &mut history.crops)?;
            let loss = step(state, batch, lr)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    loss,
                    samples: chunk
                        .iter()
                        .map(|&(p, s)| (format!("{} / {}", pairs[p].first, pairs[p].second), s))
                        .collect(),
                });
            }
            total += loss * chunk.len() as f64;
            count += chunk.len();
        }
        state.epoch = epoch;
        let record =
            EpochRecord { epoch, mean_loss: total / count as f64, lr, seconds: started.elapsed().as_secs_f64() };
        on_epoch(&record);
        history.epochs.push(record);
        if let Some(dir) = &checkpoints.dir {
            if epoch % cfg.step_size == 0 || epoch == cfg.epochs {
                let path = CheckpointPolicy::path_for(dir, epoch);
                save_checkpoint(&path, state)?;
                history.checkpoints.push((epoch, path));
            }
        }
    }
    Ok(history)
}

/// Trains a fresh optimizer state for `cfg.epochs` epochs without checkpoints.
pub fn train(
    model: ModelParams<f32>,
    pairs: &[ScanPair],
    cfg: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainHistory), TrainError> {
    let mut state = TrainState::new(model, cfg);
    let history = run(&mut state, pairs, cfg, &CheckpointPolicy::default(), |_| {})?;
    Ok((state.model, history))
}

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

pub fn checkpoint_archive(state: &TrainState) -> TensorArchive {
    let mut archive = state.model.to_archive();
    for (p, (m, v)) in state.model.params().iter().zip(state.adam.m.iter().zip(&state.adam.v)) {
        archive.tensors.push((format!("{ADAM_M}{}", p.name), m.clone()));
        archive.tensors.push((format!("{ADAM_V}{}", p.name), v.clone()));
    }
    let _ = write!(
        archive.metadata,
        "epoch = {}\nadam_step = {}\nlearning_rate = {}\nweight_decay = {}\n",
        state.epoch, state.adam.step_count, state.adam.config.learning_rate, state.adam.config.weight_decay
    );
    archive
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<(), TrainError> {
    checkpoint_archive(state).write(path)?;
    Ok(())
}

/// Restores a checkpoint. When `expected` is given, the stored model
/// configuration must match it.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<TrainState, TrainError> {
    let archive = TensorArchive::read(path)
        .map_err(|e| TrainError::Checkpoint { path: path.display().to_string(), detail: e.to_string() })?;
    state_from_archive(&archive, expected).map_err(|e| match e {
        TrainError::Checkpoint { detail, .. } => TrainError::Checkpoint { path: path.display().to_string(), detail },
        other => TrainError::Checkpoint { path: path.display().to_string(), detail: other.to_string() },
    })
}

pub fn state_from_archive(archive: &TensorArchive, expected: Option<&ModelConfig>) -> Result<TrainState, TrainError> {
    let fail = |detail: String| TrainError::Checkpoint { path: String::new(), detail };
    let config = ModelConfig::from_text(&archive.metadata)?;
    if let Some(exp) = expected {
        if (exp.in_channels, exp.num_classes, exp.base_width, exp.levels)
            != (config.in_channels, config.num_classes, config.base_width, config.levels)
        {
            return Err(fail(format!(
                "checkpoint model\n{}does not match the requested model\n{}",
                config.to_text(),
                exp.to_text()
            )));
        }
    }
    let kv = parse_key_values(&archive.metadata).map_err(fail)?;
    let number = |k: &str| -> Result<f64, TrainError> {
        kv.get(k)
            .ok_or_else(|| fail(format!("missing metadata key {k}")))?
            .parse::<f64>()
            .map_err(|e| fail(format!("{k}: {e}")))
    };
    let mut model = ModelParams::build(config, 0)?;
    model.load_archive(archive)?;
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: number("learning_rate")?,
            weight_decay: number("weight_decay")?,
            ..AdamConfig::default()
        },
        model.params().iter().map(|p| p.value.shape()),
    );
    for (i, p) in model.params().iter().enumerate() {
        for (prefix, dst) in [(ADAM_M, &mut adam.m[i]), (ADAM_V, &mut adam.v[i])] {
            let name = format!("{prefix}{}", p.name);
            let t = archive.get(&name).ok_or_else(|| fail(format!("missing tensor {name}")))?;
            if t.shape() != p.value.shape() {
                return Err(fail(format!(
                    "{name}: stored shape {:?}, parameter shape {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            *dst = t.clone();
        }
    }
    adam.step_count = number("adam_step")? as u64;
    let epoch = number("epoch")? as usize;
    Ok(TrainState { model, adam, epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{enumerate_pairs, generate_patient, PhantomOptions};
    use rand::SeedableRng;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(1, &cfg), 5e-5);
        assert_eq!(lr_at(50, &cfg), 5e-5);
        assert!((lr_at(51, &cfg) - 2.5e-5).abs() < 1e-18);
        assert!((lr_at(200, &cfg) - 6.25e-6).abs() < 1e-18);
    }

    #[test]
    fn crop_rounds_to_sixteen_and_rejects_tiny() {
        let mut rng = StdRng::seed_from_u64(0);
        assert_eq!(sample_crop_size(64, 64, (1.0, 1.0), &mut rng).unwrap(), (64, 64));
        assert_eq!(sample_crop_size(64, 64, (0.8, 0.8), &mut rng).unwrap(), (48, 48));
        assert!(matches!(sample_crop_size(16, 16, (0.8, 0.9), &mut rng), Err(TrainError::CropTooSmall { .. })));
    }

    #[test]
    fn shared_window_and_identity_crop() {
        let x1 = Tensor::from_fn(&[1, 32, 32], |i| i as f32);
        let x2 = x1.map(|v| -v);
        let y1 = Tensor::from_fn(&[32, 32], |i| (i % 3) as u8);
        let y2 = y1.map(|v| 2 - v);
        let mut rng = StdRng::seed_from_u64(3);
        let full = TrainConfig { crop_fraction_range: (1.0, 1.0), ..TrainConfig::default() };
        let c = random_crop_pair(&x1, &x2, &y1, &y2, &mut rng, &full).unwrap();
        assert_eq!((c.x1, c.y2), (x1.clone(), y2.clone()));
        let cfg = TrainConfig { crop_fraction_range: (0.5, 0.6), ..TrainConfig::default() };
        let c = random_crop_pair(&x1, &x2, &y1, &y2, &mut rng, &cfg).unwrap();
        assert_eq!(c.windows[0], c.windows[1]);
        assert_eq!(c.x1.shape(), [1, 16, 16]);
        assert_eq!(c.x2, c.x1.map(|v| -v));
        assert_eq!(c.y2, c.y1.map(|v| 2 - v));
        let w = c.windows[0];
        assert_eq!(c.x1.data()[0], (w.top * 32 + w.left) as f32);
    }

    #[test]
    fn crop_rejects_mismatched_streams() {
        let x1 = Tensor::<f32>::zeros(&[1, 32, 32]);
        let x2 = Tensor::<f32>::zeros(&[1, 32, 16]);
        let y = Tensor::full(&[32, 32], 0u8);
        let mut rng = StdRng::seed_from_u64(0);
        assert!(random_crop_pair(&x1, &x2, &y, &y, &mut rng, &TrainConfig::default()).is_err());
    }

    fn tiny_setup() -> (ModelParams<f32>, Vec<ScanPair>) {
        let cfg = ModelConfig { in_channels: 1, num_classes: 6, base_width: 2, levels: 4, input_size: (32, 32) };
        let p = generate_patient(1, 2, (1, 32, 32), &PhantomOptions::default()).unwrap();
        (ModelParams::build(cfg, 5).unwrap(), enumerate_pairs(&p))
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (model, pairs) = tiny_setup();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let (after, history) = train(model.clone(), &pairs, &cfg).unwrap();
        assert!(history.epochs.is_empty());
        assert_eq!(after.to_archive(), model.to_archive());
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let (model, pairs) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 3,
            step_size: 2,
            batch_size: 2,
            learning_rate: 1e-3,
            crop_fraction_range: (1.0, 1.0),
            ..TrainConfig::default()
        };
        let mut straight = TrainState::new(model.clone(), &cfg);
        let h = run(&mut straight, &pairs, &cfg, &CheckpointPolicy::default(), |_| {}).unwrap();
        assert_eq!(h.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), [1, 2, 3]);

        let mut first = TrainState::new(model, &cfg);
        run(&mut first, &pairs, &TrainConfig { epochs: 2, ..cfg.clone() }, &CheckpointPolicy::default(), |_| {})
            .unwrap();
        let restored = state_from_archive(&checkpoint_archive(&first), None).unwrap();
        assert_eq!(restored.epoch, 2);
        assert_eq!(restored.adam, first.adam);
        let mut resumed = restored;
        let h2 = run(&mut resumed, &pairs, &cfg, &CheckpointPolicy::default(), |_| {}).unwrap();
        assert_eq!(h2.epochs[0].epoch, 3);
        assert_eq!(h2.epochs[0].lr, lr_at(3, &cfg));
        assert_eq!(resumed.model.to_archive(), straight.model.to_archive());
    }

    #[test]
    fn checkpoint_rejects_other_configs() {
        let (model, _) = tiny_setup();
        let state = TrainState::new(model, &TrainConfig::default());
        let archive = checkpoint_archive(&state);
        let other = ModelConfig { base_width: 4, ..state.model.config().clone() };
        assert!(matches!(state_from_archive(&archive, Some(&other)), Err(TrainError::Checkpoint { .. })));
        let mut missing = archive.clone();
        missing.tensors.retain(|(n, _)| !n.starts_with(ADAM_V));
        assert!(state_from_archive(&missing, None).is_err());
    }
}
