use stdsnn::phantom::{generate_patient_detailed, PhantomOptions, MAX_LESION_DSC, MIN_STRUCTURE_DSC, NUM_CLASSES};

fn dice(a: &[bool], b: &[bool]) -> Option<f64> {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    (total > 0).then(|| 2.0 * inter as f64 / total as f64)
}

#[test]
fn temporal_consistency_across_seeds() {
    let dims = (3, 64, 64);
    let mut lesions_seen = 0;
    for seed in 0..24u64 {
        let p = generate_patient_detailed(seed, 4, dims, &PhantomOptions::default()).unwrap();
        let labels: Vec<&[u8]> = p.series.scans.iter().map(|s| s.labels.data()).collect();
        for (t, l) in labels.iter().enumerate() {
            assert!(l.iter().all(|&c| (c as usize) < NUM_CLASSES));
            for z in 0..dims.0 {
                let slice = &l[z * 64 * 64..(z + 1) * 64 * 64];
                for class in 1..NUM_CLASSES as u8 {
                    assert!(slice.contains(&class), "seed {seed} scan {t} slice {z} lacks class {class}");
                }
            }
        }
        for t in 1..labels.len() {
            for class in 1..NUM_CLASSES as u8 {
                let a: Vec<bool> = labels[t - 1].iter().map(|&c| c == class).collect();
                let b: Vec<bool> = labels[t].iter().map(|&c| c == class).collect();
                let d = dice(&a, &b).unwrap();
                assert!(d >= MIN_STRUCTURE_DSC, "seed {seed} class {class} t{t}: dsc {d}");
            }
            let a: Vec<bool> = p.lesion_masks[t - 1].data().iter().map(|&v| v > 0).collect();
            let b: Vec<bool> = p.lesion_masks[t].data().iter().map(|&v| v > 0).collect();
            if let Some(d) = dice(&a, &b) {
                assert!(d <= MAX_LESION_DSC, "seed {seed} lesions t{t}: dsc {d}");
            }
        }
        lesions_seen += p.lesion_masks.iter().filter(|m| m.data().iter().any(|&v| v > 0)).count();
    }
    assert!(lesions_seen > 0, "no lesions generated");
}

#[test]
fn lesions_are_background() {
    for seed in 0..8u64 {
        let p = generate_patient_detailed(seed, 3, (2, 64, 64), &PhantomOptions::default()).unwrap();
        for (scan, mask) in p.series.scans.iter().zip(&p.lesion_masks) {
            for (&l, &m) in scan.labels.data().iter().zip(mask.data()) {
                if m > 0 {
                    assert_eq!(l, 0);
                }
            }
        }
    }
}

#[test]
fn generation_is_seeded() {
    let opts = PhantomOptions::default();
    let a = generate_patient_detailed(9, 2, (2, 32, 32), &opts).unwrap();
    let b = generate_patient_detailed(9, 2, (2, 32, 32), &opts).unwrap();
    let c = generate_patient_detailed(10, 2, (2, 32, 32), &opts).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.series.scans[0].volume, c.series.scans[0].volume);
}
