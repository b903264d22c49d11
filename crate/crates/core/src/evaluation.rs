//! Overlap metrics, micro-aggregated reports, cross-validation, Welch's
//! t-test and label overlays.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::phantom::{make_folds, sample_stream_inputs, PatientSeries, PhantomError, ScanPair, StreamVariant};
use crate::rng::{derive_seed, rng_for};
use crate::tensor_core::{Real, Tensor, TensorError};
use crate::training::{self, CheckpointPolicy, TrainConfig, TrainError, TrainHistory, TrainState};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

fn check_same_shape(pred: &Tensor<u8>, gt: &Tensor<u8>) -> Result<(), EvalError> {
    if pred.shape() != gt.shape() {
        return Err(EvalError::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    Ok(())
}

pub fn confusion(pred: &Tensor<u8>, gt: &Tensor<u8>, class: u8) -> Result<ConfusionCounts, EvalError> {
    check_same_shape(pred, gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == class, g == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok(c)
}

/// Counts for every class `0..num_classes` in one pass.
pub fn confusion_all(
    pred: &Tensor<u8>,
    gt: &Tensor<u8>,
    num_classes: usize,
) -> Result<Vec<ConfusionCounts>, EvalError> {
    check_same_shape(pred, gt)?;
    let mut out = vec![ConfusionCounts::default(); num_classes];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p as usize, g as usize);
        if p >= num_classes || g >= num_classes {
            return Err(EvalError::Invalid(format!("label {} outside 0..{num_classes}", p.max(g))));
        }
        if p == g {
            out[p].tp += 1;
        } else {
            out[p].fp += 1;
            out[g].fn_ += 1;
        }
    }
    Ok(out)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `2TP / (2TP + FP + FN)`; `None` when the class is neither present nor predicted.
pub fn dsc(c: ConfusionCounts) -> Option<f64> {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// `TP / (TP + FP + FN)`.
pub fn jaccard(c: ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp + c.fn_)
}

/// `TP / (TP + FP)`.
pub fn ppv(c: ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp)
}

/// Per-pixel argmax over the channel axis of `[n, c, h, w]`; ties go to the
/// lowest class index.
pub fn argmax_channels<T: Real>(prob: &Tensor<T>) -> Result<Tensor<u8>, EvalError> {
    let [n, c, h, w] = prob.dims4("argmax")?;
    if c > 256 {
        return Err(EvalError::Invalid(format!("{c} classes do not fit in u8 labels")));
    }
    let plane = h * w;
    let d = prob.data();
    let mut out = Vec::with_capacity(n * plane);
    for s in 0..n {
        for p in 0..plane {
            let mut best = 0;
            for ch in 1..c {
                if d[(s * c + ch) * plane + p] > d[(s * c + best) * plane + p] {
                    best = ch;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(Tensor::new(&[n, h, w], out)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub dsc: Option<f64>,
    pub jaccard: Option<f64>,
    pub ppv: Option<f64>,
}

impl ClassMetrics {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        Self { dsc: dsc(c), jaccard: jaccard(c), ppv: ppv(c) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Dsc,
    Jaccard,
    Ppv,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dsc, Metric::Jaccard, Metric::Ppv];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Dsc => "DSC",
            Metric::Jaccard => "Jaccard",
            Metric::Ppv => "PPV",
        }
    }

    pub fn of(self, m: &ClassMetrics) -> Option<f64> {
        match self {
            Metric::Dsc => m.dsc,
            Metric::Jaccard => m.jaccard,
            Metric::Ppv => m.ppv,
        }
    }
}

fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.into_iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Metrics for the foreground classes. Index 0 of `classes` is class 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    /// Pooled counts for every class including background.
    pub counts: Vec<ConfusionCounts>,
    pub classes: Vec<ClassMetrics>,
    /// Mean over the classes where the metric is defined.
    pub mean: ClassMetrics,
    /// Number of scored 2D outputs.
    pub samples: usize,
    pub variant: Option<StreamVariant>,
    pub fold: Option<usize>,
    pub seed: Option<u64>,
}

impl MetricsReport {
    pub fn from_counts(counts: Vec<ConfusionCounts>, samples: usize) -> Self {
        let classes: Vec<ClassMetrics> = counts.iter().skip(1).map(|&c| ClassMetrics::from_counts(c)).collect();
        let mean = ClassMetrics {
            dsc: mean_present(classes.iter().map(|m| m.dsc)),
            jaccard: mean_present(classes.iter().map(|m| m.jaccard)),
            ppv: mean_present(classes.iter().map(|m| m.ppv)),
        };
        Self { counts, classes, mean, samples, variant: None, fold: None, seed: None }
    }

    /// Class `c` (1-based foreground id).
    pub fn class(&self, c: usize) -> Option<&ClassMetrics> {
        c.checked_sub(1).and_then(|i| self.classes.get(i))
    }

    /// Per-class and mean values averaged over reports (each over the
    /// reports where it is defined). Counts are pooled.
    pub fn average(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let first = reports.first()?;
        let nc = first.counts.len();
        let mut counts = vec![ConfusionCounts::default(); nc];
        for r in reports {
            for (acc, &c) in counts.iter_mut().zip(&r.counts) {
                *acc += c;
            }
        }
        let avg = |f: &dyn Fn(&MetricsReport) -> Option<f64>| mean_present(reports.iter().map(f));
        let classes = (0..first.classes.len())
            .map(|i| ClassMetrics {
                dsc: avg(&|r| r.classes[i].dsc),
                jaccard: avg(&|r| r.classes[i].jaccard),
                ppv: avg(&|r| r.classes[i].ppv),
            })
            .collect();
        Some(MetricsReport {
            counts,
            classes,
            mean: ClassMetrics {
                dsc: avg(&|r| r.mean.dsc),
                jaccard: avg(&|r| r.mean.jaccard),
                ppv: avg(&|r| r.mean.ppv),
            },
            samples: reports.iter().map(|r| r.samples).sum(),
            variant: first.variant,
            fold: None,
            seed: first.seed,
        })
    }
}

/// Accumulates pooled confusion counts over predictions.
#[derive(Debug, Clone)]
pub struct Accumulator {
    counts: Vec<ConfusionCounts>,
    samples: usize,
}

impl Accumulator {
    pub fn new(num_classes: usize) -> Self {
        Self { counts: vec![ConfusionCounts::default(); num_classes], samples: 0 }
    }

    /// Adds `[n, h, w]` (or `[h, w]`) predictions against ground truth.
    pub fn add(&mut self, pred: &Tensor<u8>, gt: &Tensor<u8>) -> Result<(), EvalError> {
        let c = confusion_all(pred, gt, self.counts.len())?;
        for (acc, c) in self.counts.iter_mut().zip(c) {
            *acc += c;
        }
        self.samples += if pred.rank() == 3 { pred.shape()[0] } else { 1 };
        Ok(())
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport::from_counts(self.counts.clone(), self.samples)
    }
}

/// Slices predicted per forward pass during evaluation.
const EVAL_CHUNK: usize = 8;

/// Eval-mode scoring of both stream outputs of every slice of every pair.
pub fn evaluate_pairs(model: &ModelParams<f32>, pairs: &[ScanPair]) -> Result<MetricsReport, EvalError> {
    let mut acc = Accumulator::new(model.config().num_classes);
    for pair in pairs {
        let (s, _, _) = pair.scan1.dims();
        let mut start = 0;
        while start < s {
            let end = (start + EVAL_CHUNK).min(s);
            let samples: Vec<_> = (start..end).map(|k| pair.sample(k)).collect();
            let stack = |f: &dyn Fn(&crate::phantom::SliceSample) -> &Tensor<f32>| {
                Tensor::stack(&samples.iter().map(f).collect::<Vec<_>>())
            };
            let stack_u8 = |f: &dyn Fn(&crate::phantom::SliceSample) -> &Tensor<u8>| {
                Tensor::stack(&samples.iter().map(f).collect::<Vec<_>>())
            };
            let (x1, x2) = (stack(&|s| &s.x1)?, stack(&|s| &s.x2)?);
            let (p1, p2) = model.predict(&x1, &x2)?;
            acc.add(&argmax_channels(&p1)?, &stack_u8(&|s| &s.y1)?)?;
            acc.add(&argmax_channels(&p2)?, &stack_u8(&|s| &s.y2)?)?;
            start = end;
        }
    }
    Ok(acc.report())
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub train_patients: Vec<String>,
    pub test_patients: Vec<String>,
    pub report: MetricsReport,
    pub history: TrainHistory,
}

#[derive(Debug, Clone)]
pub struct CrossvalResult {
    pub variant: StreamVariant,
    pub folds: Vec<FoldResult>,
    pub aggregate: MetricsReport,
}

impl CrossvalResult {
    /// Per-fold mean DSC, the sample used for significance tests.
    pub fn fold_mean_dsc(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.report.mean.dsc).collect()
    }
}

fn subset(dataset: &[PatientSeries], ids: &[&str]) -> Vec<PatientSeries> {
    dataset.iter().filter(|p| ids.contains(&p.patient_id.as_str())).cloned().collect()
}

/// Patient-wise k-fold cross-validation of one stream variant. Folds, model
/// initialisation and training seeds depend only on `cfg.seed` and the fold
/// index, so all variants see identical splits and initial weights. Test
/// pairs are built from the test patients with the same variant.
pub fn crossval(
    dataset: &[PatientSeries],
    variant: StreamVariant,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    k: usize,
    mut progress: impl FnMut(usize, &training::EpochRecord),
) -> Result<CrossvalResult, EvalError> {
    let ids: Vec<String> = dataset.iter().map(|p| p.patient_id.clone()).collect();
    let folds = make_folds(&ids, k, cfg.seed)?;
    let mut results = Vec::with_capacity(k);
    for fold in 0..k {
        let train_ids = folds.train_patients(fold);
        let test_ids = folds.test_patients(fold);
        let train_set = subset(dataset, &train_ids);
        let test_set = subset(dataset, &test_ids);
        let train_pairs = sample_stream_inputs(variant, &train_set, &mut rng_for(cfg.seed, &[0x7472, fold as u64]))?;
        let test_pairs = sample_stream_inputs(variant, &test_set, &mut rng_for(cfg.seed, &[0x7465, fold as u64]))?;
        let model = ModelParams::build(model_cfg.clone(), derive_seed(cfg.seed, &[0x696e6974, fold as u64]))?;
        let fold_cfg = TrainConfig { seed: derive_seed(cfg.seed, &[0x7472616e, fold as u64]), ..cfg.clone() };
        let mut state = TrainState::new(model, &fold_cfg);
        let history =
            training::run(&mut state, &train_pairs, &fold_cfg, &CheckpointPolicy::default(), |e| progress(fold, e))?;
        let mut report = evaluate_pairs(&state.model, &test_pairs)?;
        report.variant = Some(variant);
        report.fold = Some(fold);
        report.seed = Some(cfg.seed);
        results.push(FoldResult {
            fold,
            train_patients: train_ids.iter().map(|s| s.to_string()).collect(),
            test_patients: test_ids.iter().map(|s| s.to_string()).collect(),
            report,
            history,
        });
    }
    let mut aggregate =
        MetricsReport::average(&results.iter().map(|f| f.report.clone()).collect::<Vec<_>>()).expect("k >= 1");
    aggregate.variant = Some(variant);
    Ok(CrossvalResult { variant, folds: results, aggregate })
}

/// Column order of the comparison tables: `(header, class id)`.
pub const TABLE_COLUMNS: [(&str, usize); 5] =
    [("brain", 1), ("bladder", 5), ("heart", 2), ("r_kidney", 4), ("l_kidney", 3)];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

/// `metric,variant,brain,bladder,heart,r_kidney,l_kidney,mean`, one row per
/// metric and labelled report.
pub fn comparison_csv(rows: &[(String, &MetricsReport)]) -> String {
    let mut out = String::from("metric,variant");
    for (name, _) in TABLE_COLUMNS {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",mean\n");
    for metric in Metric::ALL {
        for (label, report) in rows {
            let _ = write!(out, "{},{}", metric.as_str(), label);
            for (_, class) in TABLE_COLUMNS {
                out.push(',');
                out.push_str(&cell(report.class(class).and_then(|m| metric.of(m))));
            }
            let _ = writeln!(out, ",{}", cell(metric.of(&report.mean)));
        }
    }
    out
}

/// Per-fold metrics: `variant,fold,test_patients,metric,` then the table columns.
pub fn fold_csv(results: &[CrossvalResult]) -> String {
    let mut out = String::from("variant,fold,test_patients,metric");
    for (name, _) in TABLE_COLUMNS {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",mean,first_epoch_loss,final_loss\n");
    for r in results {
        for f in &r.folds {
            let losses = f.history.losses();
            for metric in Metric::ALL {
                let _ = write!(out, "{},{},{},{}", r.variant, f.fold + 1, f.test_patients.join(" "), metric.as_str());
                for (_, class) in TABLE_COLUMNS {
                    out.push(',');
                    out.push_str(&cell(f.report.class(class).and_then(|m| metric.of(m))));
                }
                let _ = writeln!(
                    out,
                    ",{},{},{}",
                    cell(metric.of(&f.report.mean)),
                    losses.first().map_or("NA".into(), |l| format!("{l:.6}")),
                    losses.last().map_or("NA".into(), |l| format!("{l:.6}"))
                );
            }
        }
    }
    out
}

/// Welch's t-test of per-fold mean DSC between every pair of variants.
pub fn significance_summary(results: &[CrossvalResult]) -> Result<String, EvalError> {
    let mut out = String::from("# Welch two-sample t-test on per-fold mean DSC\n");
    for (i, a) in results.iter().enumerate() {
        for b in &results[i + 1..] {
            let (xa, xb) = (a.fold_mean_dsc(), b.fold_mean_dsc());
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            match welch_t_test(&xa, &xb) {
                Ok(t) => {
                    let _ = writeln!(
                        out,
                        "{} vs {}: mean DSC {:.4} vs {:.4} (diff {:+.4}), t = {:.4}, df = {:.2}, p = {:.4}",
                        a.variant,
                        b.variant,
                        mean(&xa),
                        mean(&xb),
                        mean(&xa) - mean(&xb),
                        t.t,
                        t.df,
                        t.p
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{} vs {}: {e}", a.variant, b.variant);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom. With zero variance in both samples the statistic is undefined:
/// equal means give `t = 0, p = 1`; different means give `t = ±inf, p = 0`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::Invalid(format!(
            "t-test needs at least two values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::Invalid("t-test samples must be finite".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    let (na1, nb1) = (a.len() as f64 - 1.0, b.len() as f64 - 1.0);
    if se2 == 0.0 {
        let df = na1 + nb1;
        return Ok(if ma == mb {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest { t: f64::INFINITY.copysign(ma - mb), df, p: 0.0 }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / na1 + sb * sb / nb1);
    Ok(TTest { t, df, p: student_t_two_sided(t, df) })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

#[allow(clippy::excessive_precision)]
fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `I_x(a, b)` by the continued fraction, using the symmetry relation where
/// it converges faster.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Overlay colours for classes 1..=5.
pub const OVERLAY_COLORS: [[u8; 3]; 5] = [
    [255, 0, 0],   // brain
    [0, 255, 0],   // heart
    [0, 0, 255],   // left kidney
    [0, 0, 0],     // right kidney
    [255, 255, 0], // bladder
];

/// Grayscale image (scaled by its maximum) with labelled pixels replaced by
/// their class colour, as binary PPM bytes.
pub fn overlay_ppm(image: &Tensor<f32>, labels: &Tensor<u8>) -> Result<Vec<u8>, EvalError> {
    let (h, w) = match labels.shape() {
        &[h, w] => (h, w),
        s => return Err(EvalError::Shape(format!("labels must be [h, w], got {s:?}"))),
    };
    if image.len() != h * w || image.shape().last() != Some(&w) {
        return Err(EvalError::Shape(format!("image {:?} vs labels {:?}", image.shape(), labels.shape())));
    }
    let max = image.data().iter().copied().fold(0.0f32, f32::max);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for (&v, &l) in image.data().iter().zip(labels.data()) {
        let rgb = match l {
            0 => {
                let g = if max > 0.0 { (v.max(0.0) / max * 255.0).round() as u8 } else { 0 };
                [g, g, g]
            }
            l if (l as usize) <= OVERLAY_COLORS.len() => OVERLAY_COLORS[l as usize - 1],
            l => return Err(EvalError::Invalid(format!("no overlay colour for label {l}"))),
        };
        out.extend_from_slice(&rgb);
    }
    Ok(out)
}

pub fn render_overlay(image: &Tensor<f32>, labels: &Tensor<u8>, path: &Path) -> Result<(), EvalError> {
    fs::write(path, overlay_ppm(image, labels)?)?;
    Ok(())
}
