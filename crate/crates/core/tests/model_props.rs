//! Structural properties of the dual network and its autodiff.

mod common;

use aidnet_core::dataset::Sample;
use aidnet_core::model::{
    backbone, forward_pair, forward_single, total_loss, train, AidNetParams, LossConfig, NetMode, PairBatch,
    TrainConfig, SAG_CHANNELS,
};
use aidnet_core::volgrid::Tensor;
use aidnet_core::Error;
use common::input;

const SHAPE: [usize; 5] = [2, 2, 12, 8, 8];

fn pair(scan_seed: u64, rescan_seed: u64) -> PairBatch {
    PairBatch::new(
        input(&SHAPE, scan_seed),
        input(&SHAPE, rescan_seed),
        vec![0, 2],
        vec![0, 2],
    )
    .unwrap()
}

#[test]
fn swapping_pairs_exchanges_logits_bit_identically() {
    let p = AidNetParams::init(true, 5).unwrap();
    let bound = p.bind_frozen().unwrap();
    let ab = forward_pair(&bound, &pair(1, 2)).unwrap();
    let ba = forward_pair(&bound, &pair(2, 1)).unwrap();
    assert_eq!(ab.first.logits.data(), ba.second.logits.data());
    assert_eq!(ab.second.logits.data(), ba.first.logits.data());
    assert_eq!(ab.distance.data(), ba.distance.data());
}

#[test]
fn identical_inputs_have_zero_distance_and_no_contrastive_term() {
    let p = AidNetParams::init(true, 6).unwrap();
    let b = pair(3, 3);
    let out = forward_pair(&p.bind_frozen().unwrap(), &b).unwrap();
    assert!(out.distance.data().iter().all(|&d| d == 0.0));
    let terms = total_loss(&out, &b, &LossConfig::default()).unwrap();
    assert_eq!(terms.contrastive, 0.0);
    assert_eq!(terms.total.item().unwrap(), terms.ce1 + terms.ce2);
}

#[test]
fn both_paths_read_the_same_weights() {
    let mut p = AidNetParams::init(true, 7).unwrap();
    let b = pair(4, 4);
    let before = forward_pair(&p.bind_frozen().unwrap(), &b).unwrap();
    p.set("head.bias", vec![1.0, -2.0, 0.5]).unwrap();
    let after = forward_pair(&p.bind_frozen().unwrap(), &b).unwrap();
    let shift = |o: &Tensor, n: &Tensor| o.data().iter().zip(n.data()).map(|(a, b)| b - a).collect::<Vec<_>>();
    assert_eq!(
        shift(&before.first.logits, &after.first.logits),
        shift(&before.second.logits, &after.second.logits)
    );
    assert_ne!(before.first.logits.data(), after.first.logits.data());
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let p = AidNetParams::init(true, 8).unwrap();
        let bound = p.bind().unwrap();
        let b = pair(5, 6);
        let out = forward_pair(&bound, &b).unwrap();
        let loss = total_loss(&out, &b, &LossConfig::default()).unwrap().total;
        loss.backward().unwrap();
        (loss.item().unwrap(), bound.grads())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1, g2);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let p = AidNetParams::init(true, 9).unwrap();
    let b = pair(7, 8);
    let grads = |a: f64, c: f64| {
        let bound = p.bind().unwrap();
        let out = forward_pair(&bound, &b).unwrap();
        let ce1 = out.first.logits.cross_entropy(&b.label_scan, None).unwrap();
        let ce2 = out.second.logits.cross_entropy(&b.label_rescan, None).unwrap();
        ce1.scale(a)
            .unwrap()
            .add(&ce2.scale(c).unwrap())
            .unwrap()
            .backward()
            .unwrap();
        bound.grads()
    };
    let (a, c) = (0.7, -1.3);
    let g1 = grads(1.0, 0.0);
    let g2 = grads(0.0, 1.0);
    let mix = grads(a, c);
    for ((x, y), m) in g1.iter().flatten().zip(g2.iter().flatten()).zip(mix.iter().flatten()) {
        assert!((a * x + c * y - m).abs() <= 1e-12, "{m} vs {}", a * x + c * y);
    }
}

#[test]
fn attention_coefficients_are_open_unit_interval() {
    for seed in 0..4 {
        let p = AidNetParams::init(true, seed).unwrap();
        let out = forward_single(&p.bind_frozen().unwrap(), &input(&SHAPE, seed + 20)).unwrap();
        let alpha = out.sag.unwrap().alpha;
        assert!(alpha.data().iter().all(|&a| a > 0.0 && a < 1.0));
    }
}

#[test]
fn saturated_gate_passes_features_through() {
    let mut p = AidNetParams::init(true, 10).unwrap();
    p.set("sag.psi.weight", vec![0.0; SAG_CHANNELS]).unwrap();
    p.set("sag.psi.bias", vec![50.0]).unwrap();
    let bound = p.bind_frozen().unwrap();
    let x = input(&SHAPE, 30);
    let out = forward_single(&bound, &x).unwrap();
    let sag = out.sag.unwrap();
    let ungated = backbone(&bound, &x).unwrap().gated_input;
    for (a, u) in sag.attended.data().iter().zip(ungated.data()) {
        assert!((a - u).abs() <= 1e-12);
    }
}

#[test]
fn id_mode_drops_the_gate_and_still_trains() {
    let p = AidNetParams::init(false, 0).unwrap();
    let out = forward_single(&p.bind_frozen().unwrap(), &input(&SHAPE, 1)).unwrap();
    assert_eq!(out.embedding.shape(), &[2, 64]);
    assert!(out.sag.is_none());

    let samples: Vec<Sample> = (0..4)
        .map(|i| {
            let x = input(&[2, 12, 8, 8], i);
            Sample {
                id: i.to_string(),
                class: (i % 3) as usize,
                agatston: 0.0,
                shape: [12, 8, 8],
                scan: x.to_vec(),
                rescan: x.to_vec(),
                lesion: None,
            }
        })
        .collect();
    for (mode, lambda) in [
        (NetMode::Id, 0.0),
        (NetMode::Id, 0.001),
        (NetMode::Aid, 0.0),
        (NetMode::Aid, 0.001),
    ] {
        let cfg = TrainConfig {
            mode,
            max_epochs: 2,
            loss: LossConfig {
                lambda,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = train(&samples, &samples[..2], &cfg, |_| {}).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.best.has_sag(), mode == NetMode::Aid);
    }
}

#[test]
fn non_finite_input_is_reported() {
    let p = AidNetParams::init(true, 0).unwrap();
    let mut data = input(&SHAPE, 1).to_vec();
    data[17] = f64::NAN;
    let bad = Tensor::constant(&SHAPE, data);
    let err = match bad {
        Err(e) => e,
        Ok(t) => forward_single(&p.bind_frozen().unwrap(), &t).unwrap_err(),
    };
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
}

#[test]
fn nan_sample_aborts_training_with_its_batch() {
    let good = input(&[2, 12, 8, 8], 2).to_vec();
    let mut bad = good.clone();
    bad[5] = f64::NAN;
    let mk = |id: &str, v: &Vec<f64>| Sample {
        id: id.into(),
        class: 0,
        agatston: 0.0,
        shape: [12, 8, 8],
        scan: v.clone(),
        rescan: v.clone(),
        lesion: None,
    };
    let samples = vec![mk("a", &good), mk("b", &bad), mk("c", &good)];
    let cfg = TrainConfig {
        batch_size: 1,
        max_epochs: 3,
        ..Default::default()
    };
    match train(&samples, &[], &cfg, |_| {}) {
        Err(Error::NumericFailure { epoch: 1, batch }) => assert!((1..=3).contains(&batch)),
        other => panic!("expected a numeric failure, got {other:?}"),
    }
}
