//! Batch normalization, channel softmax and the fused cross-entropy loss.

use super::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of one batch-norm layer. The affine `gamma`/`beta`
/// are trainable parameters and live with the other parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
}

/// Per-channel statistics of one training-mode batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance, as used for normalization.
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Real> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: T::from_f64_lossy(BN_MOMENTUM),
            epsilon: T::from_f64_lossy(BN_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Exponential moving update; the running variance uses the unbiased
    /// batch estimate.
    pub fn absorb(&mut self, batch: &BatchStats<T>) {
        let m = self.momentum;
        let keep = T::one() - m;
        let n = T::from_usize(batch.count).expect("count");
        let unbias = if batch.count > 1 { n / (n - T::one()) } else { T::one() };
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&batch.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&batch.var) {
            *r = keep * *r + m * b * unbias;
        }
    }
}

pub(crate) struct BnForward<T> {
    pub output: Tensor<T>,
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch: Option<BatchStats<T>>,
}

pub(crate) fn forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &BatchNormStats<T>,
    mode: Mode,
) -> Result<BnForward<T>, TensorError> {
    let [n, c, h, w] = x.dims4("batchnorm2d")?;
    if gamma.shape() != [c] || beta.shape() != [c] || stats.channels() != c {
        return Err(TensorError::Shape {
            op: "batchnorm2d",
            detail: format!(
                "{c} input channels but gamma {:?}, beta {:?}, running stats [{}]",
                gamma.shape(),
                beta.shape(),
                stats.channels()
            ),
        });
    }
    let plane = h * w;
    let count = n * plane;
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(TensorError::Param {
                    op: "batchnorm2d",
                    detail: format!("training mode needs at least 2 values per channel, got {count}"),
                });
            }
            let inv_count = T::one() / T::from_usize(count).expect("count");
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = T::zero();
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    acc += x.data()[base..base + plane].iter().fold(T::zero(), |a, &v| a + v);
                }
                let mu = acc * inv_count;
                let mut sq = T::zero();
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    sq += x.data()[base..base + plane].iter().fold(T::zero(), |a, &v| a + (v - mu) * (v - mu));
                }
                mean[ch] = mu;
                var[ch] = sq * inv_count;
            }
            (mean, var)
        }
        Mode::Eval => (stats.running_mean.data().to_vec(), stats.running_var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + stats.epsilon).sqrt()).collect();
    let mut normalized = vec![T::zero(); x.len()];
    let mut output = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let (mu, is, ga, be) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + plane {
                let xh = (x.data()[i] - mu) * is;
                normalized[i] = xh;
                output[i] = ga * xh + be;
            }
        }
    }
    Ok(BnForward {
        output: Tensor::new(x.shape(), output)?,
        normalized: Tensor::new(x.shape(), normalized)?,
        inv_std,
        batch: (mode == Mode::Train).then_some(BatchStats { mean, var, count }),
    })
}

pub(crate) struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub(crate) fn backward<T: Real>(
    normalized: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    batch_stats: bool,
) -> BnGrads<T> {
    let [n, c, h, w] = normalized.dims4("batchnorm2d").expect("rank 4");
    let plane = h * w;
    let count = T::from_usize(n * plane).expect("count");
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                dgamma[ch] += dy.data()[i] * normalized.data()[i];
                dbeta[ch] += dy.data()[i];
            }
        }
    }
    let mut dx = vec![T::zero(); normalized.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let scale = gamma.data()[ch] * inv_std[ch];
            if batch_stats {
                // d xhat = dy * gamma; sums over the channel reduce to dbeta/dgamma.
                let mean_d = dbeta[ch] / count;
                let mean_dx = dgamma[ch] / count;
                let span = base..base + plane;
                for ((d, &g), &n) in
                    dx[span.clone()].iter_mut().zip(&dy.data()[span.clone()]).zip(&normalized.data()[span])
                {
                    *d = scale * (g - mean_d - n * mean_dx);
                }
            } else {
                for (d, &g) in dx[base..base + plane].iter_mut().zip(&dy.data()[base..base + plane]) {
                    *d = scale * g;
                }
            }
        }
    }
    BnGrads {
        input: Tensor::new(normalized.shape(), dx).expect("bn dx"),
        gamma: Tensor::new(&[c], dgamma).expect("bn dgamma"),
        beta: Tensor::new(&[c], dbeta).expect("bn dbeta"),
    }
}

pub(crate) fn softmax_channels<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let [n, c, h, w] = x.dims4("softmax_channels")?;
    let plane = h * w;
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        let base = s * c * plane;
        for p in 0..plane {
            let mut m = T::neg_infinity();
            for ch in 0..c {
                m = m.max(x.data()[base + ch * plane + p]);
            }
            let mut z = T::zero();
            for ch in 0..c {
                let e = (x.data()[base + ch * plane + p] - m).exp();
                out[base + ch * plane + p] = e;
                z += e;
            }
            for ch in 0..c {
                out[base + ch * plane + p] /= z;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_channels_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = y.dims4("softmax_channels").expect("rank 4");
    let plane = h * w;
    let mut dx = vec![T::zero(); y.len()];
    for s in 0..n {
        let base = s * c * plane;
        for p in 0..plane {
            let mut dot = T::zero();
            for ch in 0..c {
                let i = base + ch * plane + p;
                dot += y.data()[i] * dy.data()[i];
            }
            for ch in 0..c {
                let i = base + ch * plane + p;
                dx[i] = y.data()[i] * (dy.data()[i] - dot);
            }
        }
    }
    Tensor::new(y.shape(), dx).expect("softmax grad")
}

/// Returns the mean loss and the softmax probabilities (kept for backward).
pub(crate) fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &Tensor<u8>) -> Result<(T, Tensor<T>), TensorError> {
    let [n, c, h, w] = logits.dims4("cross_entropy")?;
    if labels.shape() != [n, h, w] {
        return Err(TensorError::Shape {
            op: "cross_entropy",
            detail: format!("labels {:?} do not match logits {:?}", labels.shape(), logits.shape()),
        });
    }
    let plane = h * w;
    if let Some(pos) = labels.data().iter().position(|&l| l as usize >= c) {
        return Err(TensorError::Label {
            sample: pos / plane,
            row: (pos % plane) / w,
            col: pos % w,
            label: labels.data()[pos],
            classes: c,
        });
    }
    let mut probs = vec![T::zero(); logits.len()];
    let mut total = T::zero();
    for s in 0..n {
        let base = s * c * plane;
        for p in 0..plane {
            let mut m = T::neg_infinity();
            for ch in 0..c {
                m = m.max(logits.data()[base + ch * plane + p]);
            }
            let mut z = T::zero();
            for ch in 0..c {
                let e = (logits.data()[base + ch * plane + p] - m).exp();
                probs[base + ch * plane + p] = e;
                z += e;
            }
            let label = labels.data()[s * plane + p] as usize;
            let log_z = z.ln() + m;
            total += log_z - logits.data()[base + label * plane + p];
            for ch in 0..c {
                probs[base + ch * plane + p] /= z;
            }
        }
    }
    let count = T::from_usize(n * plane).expect("count");
    Ok((total / count, Tensor::new(logits.shape(), probs)?))
}

pub(crate) fn cross_entropy_backward<T: Real>(probs: &Tensor<T>, labels: &Tensor<u8>, upstream: T) -> Tensor<T> {
    let [n, c, h, w] = probs.dims4("cross_entropy").expect("rank 4");
    let plane = h * w;
    let scale = upstream / T::from_usize(n * plane).expect("count");
    let mut dx: Vec<T> = probs.data().iter().map(|&p| p * scale).collect();
    for s in 0..n {
        for p in 0..plane {
            let label = labels.data()[s * plane + p] as usize;
            dx[s * c * plane + label * plane + p] -= scale;
        }
    }
    Tensor::new(probs.shape(), dx).expect("ce grad")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn_train(x: Tensor<f64>) -> Tensor<f64> {
        let c = x.shape()[1];
        let mut stats = BatchNormStats::new(c);
        stats.epsilon = 1e-12;
        forward(&x, &Tensor::ones(&[c]), &Tensor::zeros(&[c]), &stats, Mode::Train).unwrap().output
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let y = bn_train(Tensor::full(&[2, 1, 2, 2], 3.5));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plus_minus_one_is_a_fixed_point() {
        let y = bn_train(Tensor::new(&[1, 1, 1, 2], vec![-1.0, 1.0]).unwrap());
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eval_with_identity_stats_is_near_identity() {
        let x = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64 * 0.1 - 1.0);
        let stats = BatchNormStats::new(3);
        let y = forward(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), &stats, Mode::Eval).unwrap();
        assert!(y.output.max_abs_diff(&x) < 1e-4);
        assert!(y.batch.is_none());
    }

    #[test]
    fn single_value_per_channel_is_rejected_in_train_mode() {
        let x = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let stats = BatchNormStats::new(2);
        assert!(forward(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), &stats, Mode::Train).is_err());
        assert!(forward(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), &stats, Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut stats = BatchNormStats::<f64>::new(1);
        stats.absorb(&BatchStats { mean: vec![2.0], var: vec![3.0], count: 4 });
        assert!((stats.running_mean.data()[0] - 0.2).abs() < 1e-12);
        // 0.9 * 1 + 0.1 * 3 * 4/3
        assert!((stats.running_var.data()[0] - 1.3).abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_channels(&Tensor::<f64>::zeros(&[1, 2, 1, 1])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let x = Tensor::new(&[1, 3, 1, 1], vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        let y = softmax_channels(&x).unwrap();
        for (got, want) in y.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor::<f64>::zeros(&[2, 6, 3, 3]);
        let labels = Tensor::from_fn(&[2, 3, 3], |i| (i % 6) as u8);
        let (loss, _) = cross_entropy(&logits, &labels).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.791759).abs() < 1e-6);
    }

    #[test]
    fn confident_logits_drive_loss_to_zero() {
        let labels = Tensor::from_fn(&[1, 2, 2], |i| (i % 3) as u8);
        let logits = Tensor::from_fn(&[1, 3, 2, 2], |i| {
            let (ch, p) = (i / 4, i % 4);
            if ch == p % 3 {
                80.0
            } else {
                0.0
            }
        });
        let (loss, _) = cross_entropy(&logits, &labels).unwrap();
        assert!(loss < 1e-30);
    }

    #[test]
    fn out_of_range_label_names_the_pixel() {
        let logits = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        let labels = Tensor::new(&[1, 2, 2], vec![0, 1, 2, 7]).unwrap();
        let err = cross_entropy(&logits, &labels).unwrap_err().to_string();
        assert!(err.contains("(0, 1, 1)") && err.contains('7'), "{err}");
    }
}
