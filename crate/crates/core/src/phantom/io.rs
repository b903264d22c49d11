//! `STPH` volumes, `STPL` label maps and the dataset manifest.
//!
//! ```text
//! STPH: "STPH" | version: u32 | dims: u64 * 4 (slices, 1, h, w) | f32 * prod(dims)
//! STPL: "STPL" | dims: u64 * 3 (slices, h, w) | u8 * prod(dims)
//! manifest: one `patient_id,scan_index,volume_path,label_path` record per line,
//!           scan_index 1-based, paths relative to the manifest's directory
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{PatientSeries, PhantomError, Scan, NUM_CLASSES};
use crate::format::{put_f32s, put_u32, put_u64, ByteReader, FormatError};
use crate::tensor_core::{LabelTensor, Tensor};

pub const STPH_MAGIC: [u8; 4] = *b"STPH";
pub const STPH_VERSION: u32 = 1;
pub const STPL_MAGIC: [u8; 4] = *b"STPL";
pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn volume_to_bytes(volume: &Tensor<f32>) -> Result<Vec<u8>, FormatError> {
    if volume.rank() != 4 {
        return Err(FormatError::Invalid {
            what: "volume",
            detail: format!("expected rank 4, got {:?}", volume.shape()),
        });
    }
    let mut out = Vec::with_capacity(24 + 4 * 8 + volume.len() * 4);
    out.extend_from_slice(&STPH_MAGIC);
    put_u32(&mut out, STPH_VERSION);
    for &d in volume.shape() {
        put_u64(&mut out, d as u64);
    }
    put_f32s(&mut out, volume.data());
    Ok(out)
}

pub fn volume_from_bytes(bytes: &[u8]) -> Result<Tensor<f32>, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(STPH_MAGIC)?;
    let version = r.u32("version")?;
    if version != STPH_VERSION {
        return Err(FormatError::UnsupportedVersion { found: version, supported: STPH_VERSION });
    }
    let (dims, len) = r.dims(4, "dims")?;
    let data = r.f32s(len, "voxels")?;
    r.finish()?;
    Tensor::new(&dims, data).map_err(|e| FormatError::Invalid { what: "volume", detail: e.to_string() })
}

pub fn labels_to_bytes(labels: &LabelTensor) -> Result<Vec<u8>, FormatError> {
    if labels.rank() != 3 {
        return Err(FormatError::Invalid {
            what: "labels",
            detail: format!("expected rank 3, got {:?}", labels.shape()),
        });
    }
    let mut out = Vec::with_capacity(4 + 3 * 8 + labels.len());
    out.extend_from_slice(&STPL_MAGIC);
    for &d in labels.shape() {
        put_u64(&mut out, d as u64);
    }
    out.extend_from_slice(labels.data());
    Ok(out)
}

pub fn labels_from_bytes(bytes: &[u8]) -> Result<LabelTensor, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(STPL_MAGIC)?;
    let (dims, len) = r.dims(3, "dims")?;
    let data = r.take(len, "labels")?.to_vec();
    r.finish()?;
    Tensor::new(&dims, data).map_err(|e| FormatError::Invalid { what: "labels", detail: e.to_string() })
}

pub fn write_volume(path: &Path, volume: &Tensor<f32>) -> Result<(), FormatError> {
    fs::write(path, volume_to_bytes(volume)?)?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Tensor<f32>, FormatError> {
    volume_from_bytes(&fs::read(path)?)
}

pub fn write_labels(path: &Path, labels: &LabelTensor) -> Result<(), FormatError> {
    fs::write(path, labels_to_bytes(labels)?)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<LabelTensor, FormatError> {
    labels_from_bytes(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub patient_id: String,
    /// 1-based time-point number.
    pub scan_index: usize,
    pub volume_path: String,
    pub label_path: String,
}

impl ManifestRecord {
    fn line(&self) -> String {
        format!("{},{},{},{}", self.patient_id, self.scan_index, self.volume_path, self.label_path)
    }
}

fn file_err(path: &Path, source: FormatError) -> PhantomError {
    PhantomError::File { path: path.display().to_string(), source }
}

/// Writes every scan of every patient into `dir` and returns the manifest path.
pub fn write_dataset(dir: &Path, dataset: &[PatientSeries]) -> Result<PathBuf, PhantomError> {
    fs::create_dir_all(dir).map_err(|e| file_err(dir, e.into()))?;
    let mut manifest = String::from("# patient_id,scan_index,volume_path,label_path\n");
    for p in dataset {
        if p.patient_id.is_empty() || p.patient_id.contains([',', '\n', '/', '\\']) {
            return Err(PhantomError::Sampling(format!("unusable patient id {:?}", p.patient_id)));
        }
        for (i, scan) in p.scans.iter().enumerate() {
            let rec = ManifestRecord {
                patient_id: p.patient_id.clone(),
                scan_index: i + 1,
                volume_path: format!("{}_scan{}.stph", p.patient_id, i + 1),
                label_path: format!("{}_scan{}.stpl", p.patient_id, i + 1),
            };
            let vp = dir.join(&rec.volume_path);
            write_volume(&vp, &scan.volume).map_err(|e| file_err(&vp, e))?;
            let lp = dir.join(&rec.label_path);
            write_labels(&lp, &scan.labels).map_err(|e| file_err(&lp, e))?;
            manifest.push_str(&rec.line());
            manifest.push('\n');
        }
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| file_err(&path, e.into()))?;
    Ok(path)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>, PhantomError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: String| PhantomError::Manifest { line: no + 1, detail };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [patient_id, scan_index, volume_path, label_path] = fields[..] else {
            return Err(bad(format!("expected 4 comma-separated fields, got {}", fields.len())));
        };
        let scan_index: usize = scan_index.parse().map_err(|e| bad(format!("scan_index: {e}")))?;
        if scan_index == 0 {
            return Err(bad("scan_index is 1-based".into()));
        }
        out.push(ManifestRecord {
            patient_id: patient_id.to_owned(),
            scan_index,
            volume_path: volume_path.to_owned(),
            label_path: label_path.to_owned(),
        });
    }
    Ok(out)
}

/// Loads all series listed in a manifest, patients in first-appearance order.
pub fn read_dataset(manifest: &Path) -> Result<Vec<PatientSeries>, PhantomError> {
    let text = fs::read_to_string(manifest).map_err(|e| file_err(manifest, e.into()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut out: Vec<PatientSeries> = Vec::new();
    for (pos, rec) in parse_manifest(&text)?.into_iter().enumerate() {
        let vp = base.join(&rec.volume_path);
        let volume = read_volume(&vp).map_err(|e| file_err(&vp, e))?;
        let lp = base.join(&rec.label_path);
        let labels = read_labels(&lp).map_err(|e| file_err(&lp, e))?;
        let vs = volume.shape();
        if vs[1] != 1 || vs[0] != labels.shape()[0] || vs[2..] != labels.shape()[1..] {
            return Err(PhantomError::Sampling(format!(
                "{}: volume {:?} does not match labels {:?}",
                rec.volume_path,
                vs,
                labels.shape()
            )));
        }
        if let Some(&bad) = labels.data().iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(PhantomError::Sampling(format!("{}: label value {bad} out of range", rec.label_path)));
        }
        let scan = Arc::new(Scan { volume, labels });
        let series = match out.iter_mut().find(|p| p.patient_id == rec.patient_id) {
            Some(p) => p,
            None => {
                out.push(PatientSeries { patient_id: rec.patient_id.clone(), scans: Vec::new() });
                out.last_mut().expect("just pushed")
            }
        };
        if rec.scan_index != series.scans.len() + 1 {
            return Err(PhantomError::Manifest {
                line: pos + 1,
                detail: format!(
                    "{} scan {} listed out of time order (expected {})",
                    rec.patient_id,
                    rec.scan_index,
                    series.scans.len() + 1
                ),
            });
        }
        if let Some(first) = series.scans.first() {
            if first.dims() != scan.dims() {
                return Err(PhantomError::Sampling(format!(
                    "{}: scans of one patient must share dims",
                    rec.patient_id
                )));
            }
        }
        series.scans.push(scan);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stph_header_layout() {
        let v = Tensor::from_fn(&[2, 1, 16, 16], |i| i as f32);
        let b = volume_to_bytes(&v).unwrap();
        assert_eq!(&b[..4], b"STPH");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        let dims: Vec<u64> = (0..4).map(|i| u64::from_le_bytes(b[8 + 8 * i..16 + 8 * i].try_into().unwrap())).collect();
        assert_eq!(dims, vec![2, 1, 16, 16]);
        assert_eq!(b.len(), 40 + 4 * 512);
        assert_eq!(f32::from_le_bytes(b[44..48].try_into().unwrap()), 1.0);
    }

    #[test]
    fn stpl_header_layout() {
        let l = Tensor::from_fn(&[1, 16, 16], |i| (i % 6) as u8);
        let b = labels_to_bytes(&l).unwrap();
        assert_eq!(&b[..4], b"STPL");
        assert_eq!(u64::from_le_bytes(b[4..12].try_into().unwrap()), 1);
        assert_eq!(b.len(), 28 + 256);
        assert_eq!(b[29], 1);
    }

    #[test]
    fn corrupt_inputs_map_to_distinct_errors() {
        let v = volume_to_bytes(&Tensor::zeros(&[1, 1, 16, 16])).unwrap();
        let mut bad = v.clone();
        bad[1] = b'Q';
        assert!(matches!(volume_from_bytes(&bad), Err(FormatError::BadMagic { .. })));
        assert!(matches!(volume_from_bytes(&v[..v.len() - 1]), Err(FormatError::Truncated { .. })));
        let mut huge = v.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(volume_from_bytes(&huge), Err(FormatError::DimOverflow { .. })));
        let l = labels_to_bytes(&Tensor::full(&[1, 16, 16], 0u8)).unwrap();
        assert!(matches!(volume_from_bytes(&l), Err(FormatError::BadMagic { .. })));
        assert!(matches!(labels_from_bytes(&l[..20]), Err(FormatError::Truncated { .. })));
    }

    #[test]
    fn manifest_parsing_rejects_malformed_lines() {
        assert!(parse_manifest("P01,1,a.stph\n").is_err());
        assert!(parse_manifest("P01,zero,a.stph,a.stpl\n").is_err());
        assert!(parse_manifest("P01,0,a.stph,a.stpl\n").is_err());
        let ok = parse_manifest("# header\n\nP01,1,a.stph,a.stpl\n").unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].scan_index, 1);
    }
}
