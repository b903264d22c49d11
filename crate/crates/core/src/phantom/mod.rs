//! Synthetic sequential scans, their on-disk formats, time-point pairing and
//! patient-wise fold assignment.

mod generate;
mod io;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::format::FormatError;
use crate::rng::{derive_seed, rng_for};
use crate::tensor_core::{LabelTensor, Tensor, TensorError};

pub use generate::{
    generate_patient, generate_patient_detailed, GeneratedPatient, PhantomOptions, CLASS_NAMES, MAX_LESION_DSC,
    MIN_STRUCTURE_DSC, NUM_CLASSES,
};
pub use io::{
    labels_from_bytes, labels_to_bytes, parse_manifest, read_dataset, read_labels, read_volume, volume_from_bytes,
    volume_to_bytes, write_dataset, write_labels, write_volume, ManifestRecord, MANIFEST_NAME, STPH_MAGIC,
    STPH_VERSION, STPL_MAGIC,
};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid dims {0:?}: slices must be positive and h, w positive multiples of 16")]
    Dims((usize, usize, usize)),
    #[error("invalid cohort spec {spec:?}: {detail}")]
    CohortSpec { spec: String, detail: String },
    #[error("{0}")]
    Sampling(String),
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("{path}: {source}")]
    File { path: String, source: FormatError },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One time-point: a volume of slices and its label map.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    /// `[slices, 1, h, w]`, nonnegative.
    pub volume: Tensor<f32>,
    /// `[slices, h, w]`, values in `0..NUM_CLASSES`.
    pub labels: LabelTensor,
}

impl Scan {
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.labels.shape();
        (s[0], s[1], s[2])
    }

    /// Slice `k` scaled to `[0, 1]` by its own maximum, as `[1, h, w]`.
    pub fn normalized_slice(&self, k: usize) -> Tensor<f32> {
        let (_, h, w) = self.dims();
        let plane = &self.volume.data()[k * h * w..(k + 1) * h * w];
        let max = plane.iter().copied().fold(0.0f32, f32::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        Tensor::new(&[1, h, w], plane.iter().map(|&v| v * scale).collect()).expect("slice shape")
    }

    pub fn label_slice(&self, k: usize) -> LabelTensor {
        let (_, h, w) = self.dims();
        Tensor::new(&[h, w], self.labels.data()[k * h * w..(k + 1) * h * w].to_vec()).expect("slice shape")
    }
}

/// All time-points of one patient, in acquisition order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientSeries {
    pub patient_id: String,
    pub scans: Vec<Arc<Scan>>,
}

/// Identifies one scan of one patient (`scan_index` is 0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScanRef {
    pub patient_id: String,
    pub scan_index: usize,
}

impl fmt::Display for ScanRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/scan{}", self.patient_id, self.scan_index + 1)
    }
}

/// Two co-registered scans fed to the two streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPair {
    pub first: ScanRef,
    pub second: ScanRef,
    pub scan1: Arc<Scan>,
    pub scan2: Arc<Scan>,
}

impl ScanPair {
    pub fn slices(&self) -> usize {
        self.scan1.dims().0
    }

    /// `(tp1, tp2)` as 1-based scan numbers, the way pairs are tabulated.
    pub fn scan_numbers(&self) -> (usize, usize) {
        (self.first.scan_index + 1, self.second.scan_index + 1)
    }

    pub fn sample(&self, slice: usize) -> SliceSample {
        SliceSample {
            x1: self.scan1.normalized_slice(slice),
            x2: self.scan2.normalized_slice(slice),
            y1: self.scan1.label_slice(slice),
            y2: self.scan2.label_slice(slice),
        }
    }
}

/// One slice position of a [`ScanPair`]: images `[1, h, w]`, labels `[h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub x1: Tensor<f32>,
    pub x2: Tensor<f32>,
    pub y1: LabelTensor,
    pub y2: LabelTensor,
}

/// All time-point pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn enumerate_pairs(series: &PatientSeries) -> Vec<ScanPair> {
    let n = series.scans.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(pair(series, i, series, j));
        }
    }
    out
}

fn pair(a: &PatientSeries, i: usize, b: &PatientSeries, j: usize) -> ScanPair {
    ScanPair {
        first: ScanRef { patient_id: a.patient_id.clone(), scan_index: i },
        second: ScanRef { patient_id: b.patient_id.clone(), scan_index: j },
        scan1: a.scans[i].clone(),
        scan2: b.scans[j].clone(),
    }
}

/// How the two streams are fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamVariant {
    /// Each scan in both streams.
    Same,
    /// Each scan with a random scan of a different patient.
    Unpaired,
    /// All time-point pairs within each patient.
    Sequential,
}

impl StreamVariant {
    pub const ALL: [StreamVariant; 3] = [StreamVariant::Same, StreamVariant::Unpaired, StreamVariant::Sequential];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamVariant::Same => "same",
            StreamVariant::Unpaired => "unpaired",
            StreamVariant::Sequential => "sequential",
        }
    }
}

impl fmt::Display for StreamVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StreamVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "same" => Ok(Self::Same),
            "unpaired" => Ok(Self::Unpaired),
            "sequential" => Ok(Self::Sequential),
            other => Err(format!("unknown variant {other:?} (expected same|unpaired|sequential)")),
        }
    }
}

pub fn sample_stream_inputs<R: Rng + ?Sized>(
    variant: StreamVariant,
    dataset: &[PatientSeries],
    rng: &mut R,
) -> Result<Vec<ScanPair>, PhantomError> {
    if dataset.iter().all(|p| p.scans.is_empty()) {
        return Err(PhantomError::Sampling("dataset has no scans".into()));
    }
    let out = match variant {
        StreamVariant::Sequential => dataset.iter().flat_map(enumerate_pairs).collect(),
        StreamVariant::Same => dataset.iter().flat_map(|p| (0..p.scans.len()).map(move |i| pair(p, i, p, i))).collect(),
        StreamVariant::Unpaired => {
            let with_scans: Vec<&PatientSeries> = dataset.iter().filter(|p| !p.scans.is_empty()).collect();
            if with_scans.len() < 2 {
                return Err(PhantomError::Sampling("unpaired sampling needs scans from at least two patients".into()));
            }
            let mut out = Vec::new();
            for (pi, p) in with_scans.iter().enumerate() {
                for i in 0..p.scans.len() {
                    let others: Vec<(usize, usize)> = with_scans
                        .iter()
                        .enumerate()
                        .filter(|&(qi, _)| qi != pi)
                        .flat_map(|(qi, q)| (0..q.scans.len()).map(move |j| (qi, j)))
                        .collect();
                    let (qi, j) = others[rng.random_range(0..others.len())];
                    out.push(pair(p, i, with_scans[qi], j));
                }
            }
            out
        }
    };
    Ok(out)
}

/// `"NxM[,NxM...]"`: M patients with N scans each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortSpec {
    pub groups: Vec<(usize, usize)>,
}

impl CohortSpec {
    pub fn scan_counts(&self) -> Vec<usize> {
        self.groups.iter().flat_map(|&(scans, patients)| std::iter::repeat_n(scans, patients)).collect()
    }

    pub fn num_patients(&self) -> usize {
        self.groups.iter().map(|g| g.1).sum()
    }

    /// Number of within-patient time-point pairs.
    pub fn num_pairs(&self) -> usize {
        self.scan_counts().iter().map(|&n| n * n.saturating_sub(1) / 2).sum()
    }
}

impl FromStr for CohortSpec {
    type Err = PhantomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |detail: String| PhantomError::CohortSpec { spec: s.to_owned(), detail };
        let mut groups = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            let (n, m) = part.split_once(['x', 'X']).ok_or_else(|| err(format!("{part:?} is not of the form NxM")))?;
            let n: usize = n.trim().parse().map_err(|e| err(format!("{part:?}: {e}")))?;
            let m: usize = m.trim().parse().map_err(|e| err(format!("{part:?}: {e}")))?;
            if n == 0 || m == 0 {
                return Err(err(format!("{part:?}: counts must be positive")));
            }
            groups.push((n, m));
        }
        Ok(Self { groups })
    }
}

impl fmt::Display for CohortSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.groups.iter().map(|(n, m)| format!("{n}x{m}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Patients `P01, P02, ...` with scan counts from `spec`, each generated from
/// its own derived seed.
pub fn generate_cohort(
    spec: &CohortSpec,
    dims: (usize, usize, usize),
    seed: u64,
    options: &PhantomOptions,
) -> Result<Vec<PatientSeries>, PhantomError> {
    spec.scan_counts()
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let mut p = generate_patient(derive_seed(seed, &[i as u64]), n, dims, options)?;
            p.patient_id = format!("P{:02}", i + 1);
            Ok(p)
        })
        .collect()
}

/// Patient-wise assignment to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    pub k: usize,
    /// `(patient_id, fold)` in the input order of the patients.
    pub assignment: Vec<(String, usize)>,
}

impl FoldSpec {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.assignment.iter().find(|(p, _)| p == patient_id).map(|(_, f)| *f)
    }

    pub fn test_patients(&self, fold: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, f)| *f == fold).map(|(p, _)| p.as_str()).collect()
    }

    pub fn train_patients(&self, fold: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, f)| *f != fold).map(|(p, _)| p.as_str()).collect()
    }
}

/// Shuffles the patients with `seed` and deals them round-robin into `k` folds.
pub fn make_folds(patient_ids: &[String], k: usize, seed: u64) -> Result<FoldSpec, PhantomError> {
    if k == 0 || patient_ids.len() < k {
        return Err(PhantomError::Sampling(format!("cannot split {} patients into {k} folds", patient_ids.len())));
    }
    let mut order: Vec<usize> = (0..patient_ids.len()).collect();
    order.shuffle(&mut rng_for(seed, &[0x666f6c64]));
    let mut fold = vec![0; patient_ids.len()];
    for (pos, &idx) in order.iter().enumerate() {
        fold[idx] = pos % k;
    }
    Ok(FoldSpec { k, assignment: patient_ids.iter().cloned().zip(fold).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_series(id: &str, n: usize) -> PatientSeries {
        let scan = Arc::new(Scan { volume: Tensor::zeros(&[1, 1, 16, 16]), labels: Tensor::full(&[1, 16, 16], 0) });
        PatientSeries { patient_id: id.into(), scans: vec![scan; n] }
    }

    #[test]
    fn pairs_follow_table_order() {
        let got: Vec<_> = enumerate_pairs(&dummy_series("a", 4)).iter().map(|p| p.scan_numbers()).collect();
        assert_eq!(got, vec![(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]);
        assert_eq!(enumerate_pairs(&dummy_series("a", 2)).len(), 1);
        assert!(enumerate_pairs(&dummy_series("a", 1)).is_empty());
    }

    #[test]
    fn cohort_spec_parsing() {
        let spec: CohortSpec = "2x6,3x3,4x1".parse().unwrap();
        assert_eq!(spec.num_patients(), 10);
        assert_eq!(spec.num_pairs(), 21);
        assert_eq!(spec.to_string(), "2x6,3x3,4x1");
        assert_eq!("2x1".parse::<CohortSpec>().unwrap().num_pairs(), 1);
        assert_eq!("1x3".parse::<CohortSpec>().unwrap().num_pairs(), 0);
        for bad in ["", "2", "2x", "x3", "0x2", "2x0", "2x3,", "ax2"] {
            assert!(bad.parse::<CohortSpec>().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn folds_of_ten_patients() {
        let ids: Vec<String> = (1..=10).map(|i| format!("P{i:02}")).collect();
        let f = make_folds(&ids, 5, 3).unwrap();
        for fold in 0..5 {
            assert_eq!(f.test_patients(fold).len(), 2);
            assert_eq!(f.train_patients(fold).len(), 8);
        }
        assert_eq!(f, make_folds(&ids, 5, 3).unwrap());
        assert!(make_folds(&ids[..4], 5, 0).is_err());
    }

    #[test]
    fn variants() {
        let data = vec![dummy_series("a", 2), dummy_series("b", 3)];
        let mut rng = rng_for(0, &[]);
        let same = sample_stream_inputs(StreamVariant::Same, &data, &mut rng).unwrap();
        assert_eq!(same.len(), 5);
        assert!(same.iter().all(|p| p.first == p.second));
        let seq = sample_stream_inputs(StreamVariant::Sequential, &data, &mut rng).unwrap();
        assert_eq!(seq.len(), 4);
        let unp = sample_stream_inputs(StreamVariant::Unpaired, &data, &mut rng).unwrap();
        assert_eq!(unp.len(), 5);
        assert!(unp.iter().all(|p| p.first.patient_id != p.second.patient_id));
        assert!(sample_stream_inputs(StreamVariant::Unpaired, &data[..1], &mut rng).is_err());
    }
}
