//! Central finite-difference checks of every differentiable primitive and
//! of the full dual-stream model, in `f64`.

use std::fmt;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{Forward, ModelConfig, ModelError, ModelParams};
use crate::rng::{rng_for, StdRng};
use crate::tensor_core::{BatchNormStats, Graph, Mode, Tensor, TensorError, Var};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    /// `(input index, flat index)` of the worst entry.
    pub worst: (usize, usize),
    /// Probes rejected because the perturbation switched a ReLU or max-pool
    /// branch, where a finite difference does not estimate the derivative.
    pub skipped: usize,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self { name: name.to_owned(), entries: 0, max_rel_error: 0.0, worst: (0, 0), skipped: 0 }
    }

    fn record(&mut self, input: usize, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.entries += 1;
        if err.is_nan() || err > self.max_rel_error {
            self.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = (input, index);
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {:>5} entries ({} kink-skipped)  max rel err {:.2e}  {}",
            self.name,
            self.entries,
            self.skipped,
            self.max_rel_error,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError> + 'a;

/// Loss value and branch pattern of one evaluation.
fn scalar_of(build: &Build<'_>, inputs: &[Tensor<f64>]) -> Result<(f64, Vec<usize>), TensorError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok((g.value(out).data()[0], g.piecewise_pattern()))
}

/// Central difference at one entry, or `None` when either probe lands on a
/// different smooth piece than the base point.
fn central_difference<E>(
    base_pattern: &[usize],
    mut eval: impl FnMut(f64) -> Result<(f64, Vec<usize>), E>,
) -> Result<Option<f64>, E> {
    let (up, pu) = eval(FD_STEP)?;
    let (down, pd) = eval(-FD_STEP)?;
    Ok((pu == base_pattern && pd == base_pattern).then(|| (up - down) / (2.0 * FD_STEP)))
}

/// Probes up to `want` entries of a `len`-element tensor in random order,
/// drawing replacements for kink-skipped probes. Returns the number probed.
fn probe_entries<E>(
    len: usize,
    want: usize,
    rng: &mut StdRng,
    result: &mut CheckResult,
    mut probe: impl FnMut(usize) -> Result<Option<(f64, f64)>, E>,
    input: usize,
) -> Result<(), E> {
    let mut accepted = 0;
    for j in sample(rng, len, len).into_iter() {
        if accepted == want {
            break;
        }
        match probe(j)? {
            Some((analytic, numeric)) => {
                result.record(input, j, analytic, numeric);
                accepted += 1;
            }
            None => result.skipped += 1,
        }
    }
    Ok(())
}

/// Compares backprop against central differences on `per_input` randomly
/// chosen entries of each input (all entries when smaller).
pub fn check_function(
    name: &str,
    inputs: &[Tensor<f64>],
    per_input: usize,
    rng: &mut StdRng,
    build: &Build<'_>,
) -> Result<CheckResult, TensorError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(Arc::new(t.clone()))).collect();
    let out = build(&mut g, &vars)?;
    let pattern = g.piecewise_pattern();
    g.backward(out)?;
    let grads: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
    let mut result = CheckResult::new(name);
    for (i, input) in inputs.iter().enumerate() {
        probe_entries(
            input.len(),
            per_input,
            rng,
            &mut result,
            |j| {
                let mut probe = inputs.to_vec();
                let fd = central_difference(&pattern, |delta| {
                    probe[i].data_mut()[j] = input.data()[j] + delta;
                    scalar_of(build, &probe)
                })?;
                Ok::<_, TensorError>(fd.map(|fd| (grads[i].data()[j], fd)))
            },
            i,
        )?;
    }
    Ok(result)
}

fn normal(shape: &[usize], rng: &mut StdRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Values bounded away from zero, so a finite-difference step never crosses
/// the kink of ReLU.
fn away_from_zero(shape: &[usize], rng: &mut StdRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// A shuffled grid with gaps far larger than the step, so pooling windows
/// never tie under perturbation.
fn distinct(shape: &[usize], rng: &mut StdRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.005 * n as f64).collect();
    rand::seq::SliceRandom::shuffle(vals.as_mut_slice(), rng);
    Tensor::new(shape, vals).expect("matching length")
}

/// `sum(out * r)` for a fixed random `r`: a scalar whose gradient exercises
/// every output element.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = g.value(out).shape().to_vec();
    let r = normal(&shape, &mut rng_for(seed, &[0x70726f6a]));
    let rv = g.input(r);
    let m = g.mul(out, rv)?;
    Ok(g.sum(m))
}

/// Checks every primitive op on small random inputs.
pub fn check_primitives(seed: u64) -> Result<Vec<CheckResult>, TensorError> {
    let mut rng = rng_for(seed, &[0x7072696d]);
    let rng = &mut rng;
    let mut out = Vec::new();
    let per = 12;

    for (stride, pad, k) in [(1, 1, 3), (1, 0, 1), (2, 1, 3), (1, 0, 2)] {
        let inputs = [normal(&[2, 3, 6, 6], rng), normal(&[4, 3, k, k], rng), normal(&[4], rng)];
        out.push(check_function(&format!("conv2d s{stride} p{pad} k{k}"), &inputs, per, rng, &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            project(g, y, 1)
        })?);
    }
    let inputs = [normal(&[2, 3, 3, 4], rng), normal(&[2, 3, 2, 2], rng), normal(&[2], rng)];
    out.push(check_function("conv_transpose2d", &inputs, per, rng, &|g, v| {
        let y = g.conv_transpose2d(v[0], v[1], v[2])?;
        project(g, y, 2)
    })?);
    out.push(check_function("maxpool2x2", &[distinct(&[2, 2, 4, 6], rng)], per, rng, &|g, v| {
        let y = g.maxpool2x2(v[0])?;
        project(g, y, 3)
    })?);
    for mode in [Mode::Train, Mode::Eval] {
        let mut stats = BatchNormStats::new(3);
        stats.running_mean = normal(&[3], rng);
        stats.running_var = Tensor::from_fn(&[3], |_| rng.random_range(0.5..2.0));
        let inputs = [normal(&[2, 3, 3, 3], rng), normal(&[3], rng), normal(&[3], rng)];
        let name = format!("batchnorm2d {}", if mode == Mode::Train { "train" } else { "eval" });
        out.push(check_function(&name, &inputs, per, rng, &|g, v| {
            let (y, _) = g.batchnorm2d(v[0], v[1], v[2], &stats, mode)?;
            project(g, y, 4)
        })?);
    }
    out.push(check_function("relu", &[away_from_zero(&[2, 3, 4, 4], rng)], per, rng, &|g, v| {
        let y = g.relu(v[0]);
        project(g, y, 5)
    })?);
    let pair = [normal(&[2, 3, 2, 2], rng), normal(&[2, 3, 2, 2], rng)];
    out.push(check_function("add", &pair, per, rng, &|g, v| {
        let y = g.add(v[0], v[1])?;
        project(g, y, 6)
    })?);
    out.push(check_function("mul", &pair, per, rng, &|g, v| {
        let y = g.mul(v[0], v[1])?;
        project(g, y, 7)
    })?);
    out.push(check_function("scale", &[normal(&[2, 3], rng)], per, rng, &|g, v| {
        let y = g.scale(v[0], -1.7);
        project(g, y, 8)
    })?);
    out.push(check_function("sum", &[normal(&[3, 4], rng)], per, rng, &|g, v| {
        let y = g.sum(v[0]);
        Ok(g.scale(y, 0.3))
    })?);
    let cat = [normal(&[2, 2, 3, 3], rng), normal(&[2, 3, 3, 3], rng)];
    out.push(check_function("concat_channels", &cat, per, rng, &|g, v| {
        let y = g.concat_channels(v[0], v[1])?;
        project(g, y, 9)
    })?);
    out.push(check_function("softmax_channels", &[normal(&[2, 4, 3, 3], rng)], per, rng, &|g, v| {
        let y = g.softmax_channels(v[0])?;
        project(g, y, 10)
    })?);
    let labels = Arc::new(Tensor::from_fn(&[2, 3, 3], |_| rng.random_range(0..4u8)));
    out.push(check_function("cross_entropy", &[normal(&[2, 4, 3, 3], rng)], per, rng, &|g, v| {
        g.cross_entropy(v[0], labels.clone())
    })?);
    Ok(out)
}

/// The configuration used for the end-to-end model check.
pub fn tiny_config() -> ModelConfig {
    ModelConfig { in_channels: 1, num_classes: 3, base_width: 4, levels: 4, input_size: (16, 16) }
}

struct ModelProbe {
    params: ModelParams<f64>,
    x: [Tensor<f64>; 2],
    y: [Arc<Tensor<u8>>; 2],
    mode: Mode,
}

struct ModelEval {
    loss: f64,
    pattern: Vec<usize>,
    grads: Vec<Tensor<f64>>,
    input_grads: Vec<Tensor<f64>>,
}

impl ModelProbe {
    /// Mean of both streams' cross-entropy.
    fn eval(&self, params: &ModelParams<f64>, x: [&Tensor<f64>; 2], with_grads: bool) -> Result<ModelEval, ModelError> {
        let mut g = Graph::new();
        let (a, b) = (g.param(Arc::new(x[0].clone())), g.param(Arc::new(x[1].clone())));
        let mut fwd = Forward::new(&mut g, params, self.mode);
        let out = fwd.dual(a, b)?;
        let vars = fwd.param_vars().to_vec();
        drop(fwd);
        let l1 = g.cross_entropy(out.logits1, self.y[0].clone())?;
        let l2 = g.cross_entropy(out.logits2, self.y[1].clone())?;
        let s = g.add(l1, l2)?;
        let loss = g.scale(s, 0.5);
        let mut e = ModelEval {
            loss: g.value(loss).data()[0],
            pattern: g.piecewise_pattern(),
            grads: Vec::new(),
            input_grads: Vec::new(),
        };
        if with_grads {
            g.backward(loss)?;
            e.grads = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
            e.input_grads = vec![g.grad_or_zeros(a), g.grad_or_zeros(b)];
        }
        Ok(e)
    }
}

/// End-to-end check of the dual-stream model on `batch` random `16x16`
/// image pairs: `per_tensor` entries of every parameter tensor and of both
/// inputs are probed.
pub fn check_model(seed: u64, per_tensor: usize, batch: usize, mode: Mode) -> Result<CheckResult, ModelError> {
    let cfg = tiny_config();
    let mut rng = rng_for(seed, &[0x6d6f64656c]);
    let (h, w) = cfg.input_size;
    let classes = cfg.num_classes as u8;
    let mut image = || Tensor::from_fn(&[batch, 1, h, w], |_| rng.random_range(0.0..1.0));
    let x = [image(), image()];
    let mut labels = || Arc::new(Tensor::from_fn(&[batch, h, w], |_| rng.random_range(0..classes)));
    let y = [labels(), labels()];
    let m = ModelProbe { params: ModelParams::build(cfg, seed)?, x, y, mode };
    let base = m.eval(&m.params, [&m.x[0], &m.x[1]], true)?;
    let mut result =
        CheckResult::new(&format!("dual-stream model ({})", if mode == Mode::Train { "train" } else { "eval" }));
    let n_params = m.params.params().len();
    for i in 0..n_params {
        let len = m.params.params()[i].value.len();
        probe_entries(
            len,
            per_tensor,
            &mut rng,
            &mut result,
            |j| {
                let mut probe = m.params.clone();
                let v0 = m.params.params()[i].value.data()[j];
                let fd = central_difference(&base.pattern, |delta| {
                    Arc::make_mut(&mut probe.params_mut()[i].value).data_mut()[j] = v0 + delta;
                    let e = m.eval(&probe, [&m.x[0], &m.x[1]], false)?;
                    Ok::<_, ModelError>((e.loss, e.pattern))
                })?;
                Ok::<_, ModelError>(fd.map(|fd| (base.grads[i].data()[j], fd)))
            },
            i,
        )?;
    }
    for s in 0..2 {
        probe_entries(
            m.x[s].len(),
            per_tensor,
            &mut rng,
            &mut result,
            |j| {
                let mut probe = m.x[s].clone();
                let fd = central_difference(&base.pattern, |delta| {
                    probe.data_mut()[j] = m.x[s].data()[j] + delta;
                    let xs = if s == 0 { [&probe, &m.x[1]] } else { [&m.x[0], &probe] };
                    let e = m.eval(&m.params, xs, false)?;
                    Ok::<_, ModelError>((e.loss, e.pattern))
                })?;
                Ok::<_, ModelError>(fd.map(|fd| (base.input_grads[s].data()[j], fd)))
            },
            n_params + s,
        )?;
    }
    Ok(result)
}

/// All primitive checks followed by the model in training mode (batch 4, so
/// the `1x1` bottleneck normalizes over four values) and in eval mode.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>, ModelError> {
    let mut out = check_primitives(seed)?;
    out.push(check_model(seed, 4, 4, Mode::Train)?);
    out.push(check_model(seed, 4, 2, Mode::Eval)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.5, 1.0), 0.5);
        assert_eq!(relative_error(0.0, 1e-9), 1e-9);
        assert!((relative_error(110.0, 100.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // The first build (used for backprop) differs from the later ones
        // (used for differences), so the gradients disagree by a factor 2.
        let calls = std::cell::Cell::new(0);
        let mut rng = rng_for(0, &[]);
        let x = normal(&[4], &mut rng);
        let r = check_function("mismatch", &[x], 4, &mut rng, &|g, v| {
            calls.set(calls.get() + 1);
            let s = g.sum(v[0]);
            Ok(g.scale(s, if calls.get() == 1 { 1.0 } else { 2.0 }))
        })
        .unwrap();
        assert!(!r.passed());
        assert_eq!(r.skipped, 0);
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn primitives_pass() {
        for r in check_primitives(7).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }
}
