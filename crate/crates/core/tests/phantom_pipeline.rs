//! Phantom cohorts through the preprocessing pipeline, and an easy cohort
//! that training must fit.

use aidnet_core::dataset::{prepare_subject, Sample};
use aidnet_core::eval::binary_accuracy;
use aidnet_core::model::{evaluate, train, TrainConfig};
use aidnet_core::phantom::{agatston_score, build_cohort, class_for_score, DEFAULT_SPACING_MM};
use aidnet_core::preproc::{preprocess, PreprocConfig, DESK_SHAPE};

#[test]
fn lesions_survive_preprocessing() {
    let cohort = build_cohort([2, 10, 10], 40, DESK_SHAPE, DEFAULT_SPACING_MM).unwrap();
    let cfg = PreprocConfig::default();
    for s in &cohort.subjects {
        assert_eq!(
            class_for_score(agatston_score(&s.scan, &s.lesion_mask).unwrap()),
            s.class_label
        );
        let out = preprocess(&s.scan, &s.lung_mask, &cfg).unwrap();
        let [d, h, w] = s.scan.shape();
        let (o, c) = (out.crop.offset, out.crop.shape);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if s.lesion_mask.get(z, y, x) == 0.0 {
                        continue;
                    }
                    let inside = (z >= o[0] && z < o[0] + c[0])
                        && (y >= o[1] && y < o[1] + c[1])
                        && (x >= o[2] && x < o[2] + c[2]);
                    assert!(inside, "{} lesion voxel ({z},{y},{x}) cropped away", s.subject_id);
                    assert!(out.cropped_hu.get(z - o[0], y - o[1], x - o[2]) > 130.0);
                }
            }
        }
        let sample = prepare_subject(s, &cfg).unwrap();
        let lesion = sample.lesion.as_ref().unwrap();
        let n = lesion.len();
        for (i, &m) in lesion.values().iter().enumerate() {
            if m != 0.0 {
                assert_eq!(sample.scan[n + i], 1.0, "{} lesion not in mask channel", s.subject_id);
            }
        }
        assert_eq!(lesion.count_nonzero() > 0, s.class_label > 0);
    }
}

#[test]
fn easy_cohort_is_fit_in_thirty_epochs() {
    let shape = [16, 16, 8];
    let cohort = build_cohort([100, 50, 50], 7, shape, DEFAULT_SPACING_MM).unwrap();
    let cfg = PreprocConfig {
        target_shape: shape,
        ..Default::default()
    };
    let samples: Vec<Sample> = cohort
        .subjects
        .iter()
        .map(|s| prepare_subject(s, &cfg).unwrap())
        .collect();
    let tc = TrainConfig {
        max_epochs: 30,
        seed: 7,
        ..Default::default()
    };
    let out = train(&samples, &[], &tc, |_| {}).unwrap();
    let preds = evaluate(&out.last, &samples, 8).unwrap();
    let truth: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let pred: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let acc = binary_accuracy(&truth, &pred).unwrap();
    assert!(acc >= 0.95, "training binary accuracy {acc}");
}
