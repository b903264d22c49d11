use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stdsnn::evaluation::{confusion, dsc, jaccard, ppv, welch_t_test, ConfusionCounts};
use stdsnn::model::{Forward, ModelConfig, ModelParams};
use stdsnn::phantom::{labels_from_bytes, labels_to_bytes, volume_from_bytes, volume_to_bytes};
use stdsnn::training::{lr_at, random_crop_pair, TrainConfig, CROP_MULTIPLE};
use stdsnn::{Graph, Mode, Tensor};

fn tiny_model() -> ModelParams<f32> {
    ModelParams::build(
        ModelConfig { base_width: 2, levels: 1, num_classes: 2, input_size: (16, 16), ..ModelConfig::default() },
        0,
    )
    .unwrap()
}

fn tensor(shape: &[usize], values: &[f32]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| values[i % values.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_commutes_and_enhances(
        a in prop::collection::vec(-1e3f32..1e3, 1..40),
        b in prop::collection::vec(-1e3f32..1e3, 1..40),
    ) {
        let n = a.len().min(b.len());
        let (ta, tb) = (tensor(&[1, n, 1, 1], &a[..n]), tensor(&[1, n, 1, 1], &b[..n]));
        let model = tiny_model();
        let mut g = Graph::new();
        let (va, vb) = (g.input(ta.clone()), g.input(tb.clone()));
        let mut fwd = Forward::new(&mut g, &model, Mode::Eval);
        let ab = fwd.fuse(va, vb).unwrap();
        let ba = fwd.fuse(vb, va).unwrap();
        drop(fwd);
        prop_assert_eq!(g.value(ab).data(), g.value(ba).data());
        for ((&x, &y), &f) in ta.data().iter().zip(tb.data()).zip(g.value(ab).data()) {
            if x.signum() == y.signum() {
                prop_assert!(f.abs() >= x.abs().max(y.abs()));
            }
        }
    }

    #[test]
    fn crop_windows_stay_in_sync(
        hm in 1usize..6, wm in 1usize..6, lo in 0.05f64..1.0, span in 0.0f64..1.0, seed in any::<u64>(),
    ) {
        let (h, w) = (16 * hm, 16 * wm);
        let hi = (lo + span).min(1.0);
        let cfg = TrainConfig { crop_fraction_range: (lo, hi), ..TrainConfig::default() };
        let x1 = Tensor::from_fn(&[1, h, w], |i| i as f32);
        let x2 = Tensor::from_fn(&[1, h, w], |i| -(i as f32));
        let y1 = Tensor::<u8>::from_fn(&[h, w], |i| (i % 6) as u8);
        let y2 = Tensor::<u8>::from_fn(&[h, w], |i| (i % 5) as u8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match random_crop_pair(&x1, &x2, &y1, &y2, &mut rng, &cfg) {
            Ok(c) => {
                prop_assert_eq!(c.windows[0], c.windows[1]);
                let win = c.windows[0];
                prop_assert!(win.height % CROP_MULTIPLE == 0 && win.width % CROP_MULTIPLE == 0);
                prop_assert!(win.top + win.height <= h && win.left + win.width <= w);
                for r in 0..win.height {
                    for col in 0..win.width {
                        let src = (win.top + r) * w + win.left + col;
                        let dst = r * win.width + col;
                        prop_assert_eq!(c.x1.data()[dst], src as f32);
                        prop_assert_eq!(c.x2.data()[dst], -(src as f32));
                        prop_assert_eq!(c.y1.data()[dst], (src % 6) as u8);
                        prop_assert_eq!(c.y2.data()[dst], (src % 5) as u8);
                    }
                }
            }
            // Refusal is only possible when the range reaches below 16 pixels.
            Err(_) => prop_assert!(((h as f64 * lo) as usize) < 16 || ((w as f64 * lo) as usize) < 16),
        }
    }

    #[test]
    fn metrics_bounded_and_ordered(tp in 0u64..10_000, fp in 0u64..10_000, fn_ in 0u64..10_000) {
        let c = ConfusionCounts { tp, fp, fn_ };
        match (dsc(c), jaccard(c)) {
            (Some(d), Some(j)) => {
                prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
                prop_assert!(j <= d);
                prop_assert!((j - d / (2.0 - d)).abs() <= 4.0 * f64::EPSILON);
            }
            (None, None) => prop_assert_eq!(tp + fp + fn_, 0),
            _ => prop_assert!(false, "dsc and jaccard disagree on definedness"),
        }
        if let Some(p) = ppv(c) {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn confusion_is_permutation_invariant(
        pixels in prop::collection::vec((0u8..4, 0u8..4), 1..200), seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut shuffled = pixels.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = pixels.len();
        let split = |v: &[(u8, u8)]| {
            (
                Tensor::<u8>::from_fn(&[n], |i| v[i].0),
                Tensor::<u8>::from_fn(&[n], |i| v[i].1),
            )
        };
        let (p, g) = split(&pixels);
        let (ps, gs) = split(&shuffled);
        for class in 0..4 {
            prop_assert_eq!(confusion(&p, &g, class).unwrap(), confusion(&ps, &gs, class).unwrap());
        }
    }

    #[test]
    fn t_test_symmetry_and_range(
        a in prop::collection::vec(-100.0f64..100.0, 2..12),
        b in prop::collection::vec(-100.0f64..100.0, 2..12),
    ) {
        let (r, s) = (welch_t_test(&a, &b).unwrap(), welch_t_test(&b, &a).unwrap());
        prop_assert_eq!(r.t, -s.t);
        prop_assert_eq!(r.p, s.p);
        prop_assert!((0.0..=1.0).contains(&r.p));
    }

    #[test]
    fn learning_rate_never_increases(step in 1usize..60, gamma in 0.01f64..1.0, epochs in 1usize..300) {
        let cfg = TrainConfig { step_size: step, gamma, ..TrainConfig::default() };
        prop_assert_eq!(lr_at(1, &cfg), cfg.learning_rate);
        for e in 1..epochs {
            prop_assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        }
    }

    #[test]
    fn volume_and_label_files_round_trip(
        dims in (1usize..3, 1usize..4, 1usize..9, 1usize..9),
        values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..64),
        labels in prop::collection::vec(0u8..6, 1..64),
    ) {
        let shape = [dims.0, dims.1, dims.2, dims.3];
        let vol = tensor(&shape, &values);
        prop_assert_eq!(volume_from_bytes(&volume_to_bytes(&vol).unwrap()).unwrap(), vol);
        let lab = Tensor::<u8>::from_fn(&shape[1..], |i| labels[i % labels.len()]);
        prop_assert_eq!(labels_from_bytes(&labels_to_bytes(&lab).unwrap()).unwrap(), lab);
    }
}
