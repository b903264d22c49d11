use rand::distr::{Distribution, Uniform};
use rand::Rng;

use super::{Real, Tensor};

/// Half-width of the Xavier/Glorot uniform range, `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// I.i.d. samples from `U(-b, b)` with `b = xavier_bound(fan_in, fan_out)`.
pub fn xavier_init<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    assert!(fan_in > 0 && fan_out > 0, "fans must be positive");
    let bound = xavier_bound(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn bound_for_three_three_is_one() {
        assert_eq!(xavier_bound(3, 3), 1.0);
    }

    #[test]
    fn samples_stay_in_bound_and_are_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t: Tensor<f32> = xavier_init(&[16, 8, 3, 3], 72, 144, &mut rng);
        let b = xavier_bound(72, 144) as f32;
        assert!(t.data().iter().all(|v| v.abs() <= b));
        let again: Tensor<f32> = xavier_init(&[16, 8, 3, 3], 72, 144, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(t, again);
        let other: Tensor<f32> = xavier_init(&[16, 8, 3, 3], 72, 144, &mut ChaCha8Rng::seed_from_u64(8));
        assert_ne!(t, other);
    }
}
