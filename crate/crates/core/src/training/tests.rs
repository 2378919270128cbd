use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::layers::{build_network, BranchKind, FeatureShape, LayerPlan};
use crate::math;
use crate::parallel::Sequential;
use crate::priors::PriorPlacement;

fn linear(kinds: &[BranchKind], c: usize, hw: usize, k: usize) -> Network {
    let plan = LayerPlan { out_channels: k, filter: 1, menu: kinds.to_vec(), pool: false, relu: false };
    build_network(FeatureShape::new(c, 1, hw, hw), &[plan], k).unwrap()
}

/// Two Gaussian blobs at `+-mu` in a 1 x 2 x 2 image.
fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = [1.0, -0.5, 0.25, 0.8];
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2;
        let s = if y == 0 { 1.0 } else { -1.0 };
        for m in mu {
            let z: f64 = rng.sample(StandardNormal);
            data.push(s * m + 0.1 * z);
        }
        labels.push(y);
    }
    Dataset::new(Tensor::new(vec![n, 1, 2, 2], data).unwrap(), labels, 2).unwrap()
}

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        burn_in: 2,
        hyper_every: 2,
        hyper_steps: 3,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn map_separates_toy_set() {
    let net = linear(&[BranchKind::Fc], 1, 2, 2);
    let data = separable(64, 1);
    let prior = PriorConfig::uniform(&net, PriorPlacement::OnWeights, 0.0).unwrap();
    let cfg = TrainConfig { epochs: 50, batch_size: 16, ..TrainConfig::default() };
    let state = train(&net, &data, None, &prior, &cfg, Mode::Map, &Sequential).unwrap();
    let m = evaluate(&net, &state.params, &data, 32, &Sequential).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert!(state.history.iter().all(|h| h.rhos == prior.rhos() && h.marglik.is_none()));
}

#[test]
fn runs_are_reproducible_and_resumable() {
    let net = linear(&[BranchKind::Fc, BranchKind::Conv], 1, 2, 2);
    let data = separable(40, 2);
    let test = separable(10, 3);
    let prior = PriorConfig::uniform(&net, PriorPlacement::OnWeights, 0.0).unwrap();
    let cfg = small_cfg(7);
    let a = train(&net, &data, Some(&test), &prior, &cfg, Mode::Laplace, &Sequential).unwrap();
    let b = train(&net, &data, Some(&test), &prior, &cfg, Mode::Laplace, &Sequential).unwrap();
    assert_eq!(a, b);

    let mut t = Trainer::new(&net, &data, Some(&test), &prior, &cfg, Mode::Laplace, &Sequential).unwrap();
    let mut s = TrainState::new(&net, &prior, &cfg);
    for _ in 0..3 {
        t.step_epoch(&mut s).unwrap();
    }
    let saved = s.clone();
    let mut t2 = Trainer::new(&net, &data, Some(&test), &prior, &cfg, Mode::Laplace, &Sequential).unwrap();
    let mut resumed = saved;
    t2.run(&mut resumed).unwrap();
    assert_eq!(resumed, a);

    let names = prior.names();
    assert_eq!(metrics_csv(&a.history, &names), metrics_csv(&b.history, &names));
}

#[test]
fn hyper_steps_run_on_schedule_and_move_rho() {
    let net = linear(&[BranchKind::Fc, BranchKind::Conv], 1, 2, 2);
    let data = separable(40, 4);
    let prior = PriorConfig::uniform(&net, PriorPlacement::OnWeights, 0.0).unwrap();
    let cfg = small_cfg(6);
    let s = train(&net, &data, None, &prior, &cfg, Mode::Laplace, &Sequential).unwrap();
    let due: Vec<usize> = s.history.iter().filter(|h| h.marglik.is_some()).map(|h| h.epoch).collect();
    assert_eq!(due, vec![2, 4, 6]);
    assert_ne!(s.rhos, prior.rhos());
    assert!(s.rhos.iter().all(|r| r.abs() <= crate::priors::RHO_CLAMP));
}

#[test]
fn schedule_predicate() {
    let cfg = TrainConfig::default();
    let due: Vec<usize> = (1..=30).filter(|&e| cfg.hyper_due(e)).collect();
    assert_eq!(due, vec![10, 15, 20, 25, 30]);
    let cfg = TrainConfig { burn_in: 0, hyper_every: 3, ..TrainConfig::default() };
    let due: Vec<usize> = (1..=9).filter(|&e| cfg.hyper_due(e)).collect();
    assert_eq!(due, vec![3, 6, 9]);
    assert!(TrainConfig { hyper_every: 0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn evaluate_reference_cases() {
    // One-hot inputs through a scaled identity: a near-perfect predictor.
    let net = linear(&[BranchKind::Fc], 3, 1, 3);
    let eye = |s: f64| vec![Tensor::from_fn(&[3, 3, 1, 1, 1, 1], |i| if i[0] == i[1] { s } else { 0.0 })];
    let x = Tensor::from_fn(&[3, 3, 1, 1], |i| if i[0] == i[1] { 1.0 } else { 0.0 });
    let data = Dataset::new(x, vec![0, 1, 2], 3).unwrap();
    let m = evaluate(&net, &eye(60.0), &data, 2, &Sequential).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert!(m.nll < 1e-20);

    // Hand case: logits equal the inputs.
    let rows = [[2.0, 0.0, 0.0], [0.5, 1.5, 0.0], [0.0, 3.0, 1.0]];
    let labels = vec![0, 2, 1];
    let x = Tensor::from_fn(&[3, 3, 1, 1], |i| rows[i[0]][i[1]]);
    let data = Dataset::new(x, labels.clone(), 3).unwrap();
    let m = evaluate(&net, &eye(1.0), &data, 2, &Sequential).unwrap();
    let lse = |r: &[f64; 3]| math::ln(r.iter().map(|v| math::exp(*v)).sum::<f64>());
    let expect = rows.iter().zip(&labels).map(|(r, &y)| lse(r) - r[y]).sum::<f64>() / 3.0;
    assert!((m.nll - expect).abs() < 1e-14);
    assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);

    // Uniform predictor over ten classes.
    let net = linear(&[BranchKind::Fc], 1, 1, 10);
    let zeros: Vec<Tensor> = net.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
    let data = Dataset::new(Tensor::full(&[4, 1, 1, 1], 1.0), vec![0, 3, 5, 9], 10).unwrap();
    let m = evaluate(&net, &zeros, &data, 3, &Sequential).unwrap();
    assert!((m.nll - math::ln(10.0)).abs() < 1e-14);
}

#[test]
fn empty_split_is_rejected() {
    let net = linear(&[BranchKind::Fc], 1, 1, 2);
    let data = Dataset::new(Tensor::zeros(&[0, 1, 1, 1]), vec![], 2).unwrap();
    assert!(evaluate(&net, &net.init(0), &data, 4, &Sequential).is_err());
}

#[test]
fn csv_layout() {
    let h = vec![
        EpochMetrics { epoch: 1, train_nll: 0.5, test_nll: None, test_acc: None, marglik: None, rhos: vec![0.0, 1.5] },
        EpochMetrics {
            epoch: 2,
            train_nll: 0.25,
            test_nll: Some(0.75),
            test_acc: Some(1.0),
            marglik: Some(-3.0),
            rhos: vec![0.0, 2.0],
        },
    ];
    let csv = metrics_csv(&h, &["l0.fc".into(), "l0.conv".into()]);
    let expect = "epoch,train_nll,test_nll,test_acc,marglik,rho:l0.fc,rho:l0.conv\n\
                  1,5e-1,,,,0e0,1.5e0\n\
                  2,2.5e-1,7.5e-1,1e0,-3e0,0e0,2e0\n";
    assert_eq!(csv, expect);
}
