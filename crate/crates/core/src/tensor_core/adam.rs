use super::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2 penalty: `weight_decay * param` is added to the gradient
    /// before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 5e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 1e-5 }
    }
}

/// Adam moments for an ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step_count: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (m, v) = shapes.into_iter().map(|s| (Tensor::zeros(s), Tensor::zeros(s))).unzip();
        Self { config, m, v, step_count: 0 }
    }

    /// One bias-corrected Adam update of every parameter, in order.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::Param {
                op: "adam_step",
                detail: format!(
                    "state tracks {} parameters, got {} params and {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    detail: format!(
                        "parameter {i}: param {:?}, grad {:?}, moment {:?}",
                        p.shape(),
                        g.shape(),
                        self.m[i].shape()
                    ),
                });
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.epsilon);
        let wd = T::from_f64_lossy(c.weight_decay);
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (w, &gr)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gr = gr + wd * *w;
                m[j] = b1 * m[j] + (T::one() - b1) * gr;
                v[j] = b2 * v[j] + (T::one() - b2) * gr * gr;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step learning-rate schedule: `base * gamma^floor((epoch - 1) / step_size)`,
/// epochs counted from 1.
pub fn step_lr(base: f64, gamma: f64, step_size: usize, epoch: usize) -> f64 {
    assert!(epoch >= 1 && step_size >= 1, "epochs start at 1, step size positive");
    base * gamma.powi(((epoch - 1) / step_size) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grad: f64, weight_decay: f64, steps: usize) -> f64 {
        let cfg = AdamConfig { learning_rate: 1e-3, weight_decay, ..AdamConfig::default() };
        let mut p = Tensor::<f64>::full(&[1], 0.5);
        let g = Tensor::full(&[1], grad);
        let mut st = AdamState::new(cfg, [p.shape()]);
        for _ in 0..steps {
            st.step(&mut [&mut p], &[&g]).unwrap();
        }
        p.data()[0]
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        assert_eq!(run(0.0, 0.0, 5), 0.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        for g in [3.0, -0.01, 1e4] {
            let moved = run(g, 0.0, 1) - 0.5;
            assert!((moved + 1e-3 * g.signum()).abs() < 1e-9, "g={g} moved={moved}");
        }
    }

    #[test]
    fn decay_pulls_towards_zero() {
        assert!(run(0.0, 1e-2, 3) < 0.5);
    }

    #[test]
    fn mismatched_lists_are_rejected() {
        let mut st = AdamState::<f32>::new(AdamConfig::default(), [&[2usize][..]]);
        let mut p = Tensor::zeros(&[3]);
        let g = Tensor::zeros(&[3]);
        assert!(st.step(&mut [&mut p], &[&g]).is_err());
    }

    #[test]
    fn schedule_halves_every_step_size() {
        assert_eq!(step_lr(5e-5, 0.5, 50, 1), 5e-5);
        assert_eq!(step_lr(5e-5, 0.5, 50, 50), 5e-5);
        assert_eq!(step_lr(5e-5, 0.5, 50, 51), 2.5e-5);
        assert_eq!(step_lr(5e-5, 0.5, 50, 200), 6.25e-6);
    }
}
