use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::curvature::collect_kfac;
use crate::layers::{build_network, FeatureShape, LayerPlan};
use crate::oracle;
use crate::parallel::Sequential;
use crate::priors::PriorPlacement;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn single(menu: &[BranchKind], hw: usize) -> Network {
    let plan = LayerPlan { out_channels: 2, filter: 3, menu: menu.to_vec(), pool: false, relu: false };
    build_network(FeatureShape::new(1, 1, hw, hw), &[plan], 2).unwrap()
}

fn manual_state(lambda: Vec<f64>, mu: Vec<f64>, size: usize, sq_norm: f64) -> MarglikState {
    let covered = lambda.len() * mu.len();
    MarglikState {
        nll: 0.0,
        spectra: vec![BlockSpectrum { param: 0, lambda, mu, scale: 1.0 }],
        spectrum_block: vec![0],
        sq_norms: vec![sq_norm],
        sizes: vec![size],
        flat: vec![size - covered],
    }
}

/// Dense curvature of each prior block, ordered by governed tensors.
fn dense_blocks(params: &[Tensor], prior: &PriorConfig, blocks: &[CurvatureBlock]) -> Vec<Tensor> {
    prior
        .blocks
        .iter()
        .map(|pb| {
            let n = pb.size(params);
            let mut h = Tensor::zeros(&[n, n]);
            let mut off = 0;
            for &t in &pb.tensors {
                if let Some(blk) = blocks.iter().find(|b| b.site.param == t) {
                    let d = blk.kron.dense_storage(blk.site.layout).unwrap();
                    let m = d.shape()[0];
                    for i in 0..m {
                        for j in 0..m {
                            h.set(&[off + i, off + j], d.get(&[i, j]));
                        }
                    }
                }
                off += params[t].len();
            }
            h
        })
        .collect()
}

#[test]
fn occam_terms_cancel_for_one_flat_parameter() {
    let plan = LayerPlan { out_channels: 1, filter: 1, menu: vec![BranchKind::Conv], pool: false, relu: false };
    let net = build_network(FeatureShape::new(1, 1, 1, 1), &[plan], 1).unwrap();
    let prior = PriorConfig::uniform(&net, PriorPlacement::OnWeights, 0.0).unwrap();
    let params = vec![Tensor::zeros(&[1, 1])];
    let state = MarglikState::new(1.234, &[], &params, &prior).unwrap();
    let est = state.estimate(&[0.0]).unwrap();
    assert!((est.total - 1.234).abs() < 1e-15);
    assert!(state.hypergrad(&[0.0]).unwrap()[0].abs() < 1e-15);
}

#[test]
fn kronecker_terms_match_dense_oracles() {
    let cases: Vec<(Vec<BranchKind>, usize)> = vec![
        (vec![BranchKind::Fc], 3),
        (vec![BranchKind::Conv, BranchKind::Sconv], 4),
        (vec![BranchKind::Ffc], 4),
        (vec![BranchKind::Sfc], 3),
        (vec![BranchKind::Gconv], 4),
    ];
    for (menu, hw) in cases {
        let net = single(&menu, hw);
        let params = net.init(4);
        let xs = rand_t(&[6, 1, hw, hw], 5);
        let ys = labels(6, 2, 6);
        let mut prior = PriorConfig::uniform(&net, PriorPlacement::OnWeights, 0.0).unwrap();
        let rhos: Vec<f64> = (0..prior.len()).map(|i| -1.0 + 0.7 * i as f64).collect();
        prior.set_rhos(&rhos).unwrap();
        let blocks = collect_kfac(&net, &params, &xs, 4, &Sequential).unwrap();
        let (_, state) = marglik(&net, &params, &xs, &ys, &prior, &blocks, 4, &Sequential).unwrap();
        let sums = state.block_sums(&rhos);
        for (b, h) in dense_blocks(&params, &prior, &blocks).iter().enumerate() {
            assert!(h.shape()[0] <= 200, "{menu:?}: block of {}", h.shape()[0]);
            let alpha = math::exp(rhos[b]);
            let dense = oracle::dense_half_logdet(h, alpha);
            let kron = 0.5 * sums[b].0;
            assert!((dense - kron).abs() <= 1e-8 * dense.abs().max(1.0), "{menu:?}: {dense} vs {kron}");
            let g_dense = oracle::dense_gamma(h, alpha);
            let g = state.gammas(&rhos)[b];
            assert!((g_dense - g).abs() <= 1e-8 * g_dense.abs().max(1.0), "{menu:?}: {g_dense} vs {g}");
        }
    }
}

#[test]
fn hypergrad_matches_finite_differences() {
    for placement in [PriorPlacement::OnWeights, PriorPlacement::OnLengthscales] {
        let net = single(&[BranchKind::Fc, BranchKind::Conv, BranchKind::Sconv], 3);
        let params = net.init(7);
        let xs = rand_t(&[5, 1, 3, 3], 8);
        let ys = labels(5, 2, 9);
        let prior = PriorConfig::uniform(&net, placement, 0.5).unwrap();
        let blocks = collect_kfac(&net, &params, &xs, 2, &Sequential).unwrap();
        let (_, state) = marglik(&net, &params, &xs, &ys, &prior, &blocks, 2, &Sequential).unwrap();
        let rhos: Vec<f64> = (0..prior.len()).map(|i| 0.3 * i as f64 - 0.4).collect();
        let g = state.hypergrad(&rhos).unwrap();
        let h = 1e-5;
        for b in 0..rhos.len() {
            let mut up = rhos.clone();
            up[b] += h;
            let mut down = rhos.clone();
            down[b] -= h;
            let fd = (state.estimate(&up).unwrap().total - state.estimate(&down).unwrap().total) / (2.0 * h);
            assert!((fd - g[b]).abs() <= 1e-5 * g[b].abs().max(1e-3), "block {b}: {fd} vs {}", g[b]);
        }
    }
}

#[test]
fn gamma_formula_and_limits() {
    let s = manual_state(vec![1.0, 3.0], vec![2.0], 2, 0.0);
    let g = s.gammas(&[math::ln(2.0)])[0];
    assert!((g - 1.25).abs() < 1e-15);
    assert!((s.gammas(&[-60.0])[0] - 2.0).abs() < 1e-12);
    assert!(s.gammas(&[60.0])[0] < 1e-12);
    let mut last = f64::INFINITY;
    for i in -20..20 {
        let g = s.gammas(&[i as f64 * 0.5])[0];
        assert!(g <= last);
        last = g;
    }
}

#[test]
fn large_norm_pushes_precision_down() {
    let s = manual_state(vec![1.0], vec![1.0], 3, 100.0);
    assert!(s.hypergrad(&[0.0]).unwrap()[0] > 0.0);
    let step = hyper_step(&s, &[0.0], 0.1, 30).unwrap();
    assert!(step.rhos[0] < 0.0);
}

#[test]
fn hyper_step_never_increases_objective() {
    let s = manual_state(vec![0.5, 4.0], vec![1.0, 2.0], 6, 0.3);
    let mut rhos = vec![3.0];
    for lr in [10.0, 1.0, 0.1, 100.0] {
        let step = hyper_step(&s, &rhos, lr, 40).unwrap();
        assert!(step.after <= step.before);
        assert!(step.rhos[0].abs() <= RHO_CLAMP);
        rhos = step.rhos;
    }
}

#[test]
fn map_loss_of_zero_network_is_log_k() {
    let net = single(&[BranchKind::Conv], 4);
    let params: Vec<Tensor> = net.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
    let prior = PriorConfig::uniform(&net, PriorPlacement::OnWeights, 0.0).unwrap();
    let xs = rand_t(&[3, 1, 4, 4], 1);
    let (loss, _) = map_loss(&net, &params, &xs, &[0, 1, 1], &prior, 30).unwrap();
    let (lp0, _) = log_prior(&params, &prior).unwrap();
    assert!((loss - (30.0 * math::ln(2.0) - lp0)).abs() < 1e-10);
}

#[test]
fn map_loss_gradient_matches_finite_differences() {
    let net = single(&[BranchKind::Ffc, BranchKind::Sconv], 4);
    let params = net.init(3);
    let prior = PriorConfig::uniform(&net, PriorPlacement::OnWeights, 1.0).unwrap();
    let xs = rand_t(&[3, 1, 4, 4], 2);
    let ys = [1, 0, 1];
    let (_, g) = map_loss(&net, &params, &xs, &ys, &prior, 12).unwrap();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let t = rng.random_range(0..params.len());
        let i = rng.random_range(0..params[t].len());
        let mut p = params.clone();
        p[t].data_mut()[i] += h;
        let up = map_loss(&net, &p, &xs, &ys, &prior, 12).unwrap().0;
        p[t].data_mut()[i] -= 2.0 * h;
        let down = map_loss(&net, &p, &xs, &ys, &prior, 12).unwrap().0;
        let fd = (up - down) / (2.0 * h);
        let a = g[t].data()[i];
        assert!((fd - a).abs() <= 1e-5 * a.abs().max(1e-2), "{t}/{i}: {fd} vs {a}");
    }
}

#[test]
fn larger_precision_raises_map_loss() {
    let net = single(&[BranchKind::Conv], 4);
    let params = net.init(5);
    let xs = rand_t(&[2, 1, 4, 4], 2);
    let mut prior = PriorConfig::uniform(&net, PriorPlacement::OnWeights, 0.0).unwrap();
    let a = map_loss(&net, &params, &xs, &[0, 1], &prior, 2).unwrap().0;
    prior.set_rhos(&[1.0]).unwrap();
    let b = map_loss(&net, &params, &xs, &[0, 1], &prior, 2).unwrap().0;
    // The quadratic term grows with rho; the normaliser shifts by -P/2 per unit of rho.
    let quad = |rho: f64| 0.5 * math::exp(rho) * params[0].sq_norm();
    assert!(quad(1.0) > quad(0.0));
    assert!((b - a - (quad(1.0) - quad(0.0)) + 0.5 * params[0].len() as f64).abs() < 1e-9);
}

#[test]
fn effective_shares_sum_to_one() {
    let net = single(&[BranchKind::Fc, BranchKind::Conv], 3);
    let params = net.init(1);
    let xs = rand_t(&[8, 1, 3, 3], 2);
    let ys = labels(8, 2, 3);
    let mut prior = PriorConfig::uniform(&net, PriorPlacement::OnWeights, 0.0).unwrap();
    prior.set_rhos(&[14.0, 0.0]).unwrap();
    let blocks = collect_kfac(&net, &params, &xs, 8, &Sequential).unwrap();
    let (_, state) = marglik(&net, &params, &xs, &ys, &prior, &blocks, 8, &Sequential).unwrap();
    let rep = effective_params(&state, &prior, &net);
    let layer = &rep.layers[0];
    let total: f64 = layer.branches.iter().map(|b| b.share).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(layer.inferred, BranchKind::Conv);
    for b in &layer.branches {
        assert!(b.gamma >= 0.0 && b.gamma <= b.params as f64);
    }
}
