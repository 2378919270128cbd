//! Oracle check suites: gradients, Kronecker factors, equivariance and the
//! marginal-likelihood terms, each reported as measured error against a
//! threshold.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::curvature::{collect_kfac, exact_ggn, loglik_hessian, sample_factors, CurvatureBlock};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_grad, frobenius_rel_err};
use crate::groups::{act, GridAction, GroupFeatureMap};
use crate::laplace::marglik;
use crate::layers::{build_network, selection_margin, BranchKind, FeatureShape, LayerPlan, Network, PoolKind};
use crate::math;
use crate::oracle;
use crate::parallel::Sequential;
use crate::priors::{PriorConfig, PriorPlacement};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Suite {
    Gradcheck,
    Kfac,
    Equivariance,
    Marglik,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradcheck, Suite::Kfac, Suite::Equivariance, Suite::Marglik];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::Kfac => "kfac",
            Suite::Equivariance => "equivariance",
            Suite::Marglik => "marglik",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn run(self) -> Result<Vec<CheckResult>> {
        match self {
            Suite::Gradcheck => {
                let mut out = branch_gradients(20)?;
                out.extend(anchor_chain_rule()?);
                Ok(out)
            }
            Suite::Kfac => {
                let mut out = kfac_exactness()?;
                out.extend(kfac_definition()?);
                Ok(out)
            }
            Suite::Equivariance => equivariance(),
            Suite::Marglik => {
                let mut out = logdet_and_gamma()?;
                out.extend(gamma_limits()?);
                out.extend(hypergrad()?);
                Ok(out)
            }
        }
    }
}

/// Family a check belongs to, used to group rows per property.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Property {
    BranchGradient,
    AnchorChainRule,
    KfacExact,
    KfacDefinition,
    Equivariance,
    Logdet,
    Gamma,
    GammaLimit,
    Hypergrad,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckResult {
    pub property: Property,
    pub name: String,
    pub error: f64,
    pub threshold: f64,
}

impl CheckResult {
    fn new(property: Property, name: String, error: f64, threshold: f64) -> Self {
        CheckResult { property, name, error, threshold }
    }

    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error < self.threshold
    }
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn sample(x: &Tensor, n: usize) -> Tensor {
    let per = x.len() / x.shape()[0];
    let mut shape = x.shape().to_vec();
    shape[0] = 1;
    Tensor::new(shape, x.data()[n * per..(n + 1) * per].to_vec()).expect("slice of a batch")
}

fn plan(out: usize, filter: usize, menu: &[BranchKind], pool: bool, relu: bool) -> LayerPlan {
    LayerPlan { out_channels: out, filter, menu: menu.to_vec(), pool, relu }
}

fn nll(net: &Network, params: &[Tensor], x: &Tensor, y: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let tr = net.forward(&mut tape, params, x)?;
    let l = tape.softmax_nll(tr.logits, y)?;
    Ok(tape.value(l).data()[0])
}

/// Input fibres exercised per kind: group kinds see both a planar and a
/// fibred input.
fn gradient_cases() -> Vec<(BranchKind, usize)> {
    BranchKind::ALL
        .iter()
        .flat_map(|&k| match k {
            BranchKind::Gconv => vec![(k, 1), (k, 4)],
            BranchKind::Pgconv => vec![(k, 4)],
            _ => vec![(k, 1)],
        })
        .collect()
}

/// Tape gradients of the NLL against central differences for a
/// single-layer network per kind, over `instances` random draws of
/// parameters, inputs and labels. Error is the worst Frobenius relative
/// error over tensors and instances.
pub fn branch_gradients(instances: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (ci, (kind, fibre)) in gradient_cases().into_iter().enumerate() {
        let net = build_network(FeatureShape::new(2, fibre, 4, 4), &[plan(3, 3, &[kind], false, false)], 3)?;
        let mut worst: f64 = 0.0;
        for inst in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(((ci as u64) << 32) | inst as u64);
            let params = net.init(rng.random());
            let x = rand_t(&net.input.batch_shape(2), &mut rng);
            let y: Vec<usize> = (0..2).map(|_| rng.random_range(0..3)).collect();
            let (_, grads) = crate::laplace::nll_grad(&net, &params, &x, &y, 2, &Sequential)?;
            for (i, g) in grads.iter().enumerate() {
                let mut p = params.clone();
                let fd = finite_diff_grad(
                    |t| {
                        p[i] = t.clone();
                        nll(&net, &p, &x, &y).unwrap_or(f64::NAN)
                    },
                    &params[i],
                    1e-5,
                )?;
                worst = worst.max(frobenius_rel_err(g, &fd));
            }
        }
        out.push(CheckResult::new(Property::BranchGradient, format!("{kind} fibre {fibre} x{instances}"), worst, 1e-4));
    }
    Ok(out)
}

/// Logit Jacobians with respect to anchor values, built from the basis
/// projection of the per-sample factors, against central differences.
pub fn anchor_chain_rule() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (ki, kind) in [BranchKind::Sconv, BranchKind::Sfc].into_iter().enumerate() {
        let net = build_network(FeatureShape::new(2, 1, 4, 4), &[plan(3, 3, &[kind], false, false)], 3)?;
        let mut worst: f64 = 0.0;
        for inst in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + 10 * ki as u64 + inst);
            let params = net.init(rng.random());
            let x = rand_t(&net.input.batch_shape(1), &mut rng);
            for f in sample_factors(&net, &params, &x)? {
                let j = f.jacobian();
                let pi = f.site.param;
                let mut fd = Tensor::zeros(j.shape());
                for k in 0..net.classes {
                    let mut p = params.clone();
                    let col = finite_diff_grad(
                        |t| {
                            p[pi] = t.clone();
                            net.logits(&p, &x).map(|l| l.data()[k]).unwrap_or(f64::NAN)
                        },
                        &params[pi],
                        1e-5,
                    )?;
                    fd.data_mut()[k * col.len()..(k + 1) * col.len()].copy_from_slice(col.data());
                }
                worst = worst.max(frobenius_rel_err(&j, &fd));
            }
        }
        out.push(CheckResult::new(Property::AnchorChainRule, format!("{kind} anchor values"), worst, 1e-4));
    }
    Ok(out)
}

fn dense_block(blocks: &[CurvatureBlock], param: usize) -> Result<Tensor> {
    let b = blocks
        .iter()
        .find(|b| b.site.param == param)
        .ok_or_else(|| Error::InvalidArgument(format!("no curvature block for tensor {param}")))?;
    b.kron.dense_storage(b.site.layout)
}

/// Single-sample KFAC against the exact GGN where no weight sharing makes
/// the two coincide: dense FC, and CONV on a 1x1 grid, which must also
/// reproduce the FC factors for the same weights.
pub fn kfac_exactness() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let fc = build_network(FeatureShape::new(2, 1, 3, 3), &[plan(3, 1, &[BranchKind::Fc], false, false)], 3)?;
    let params = fc.init(2);
    let x = rand_t(&[1, 2, 3, 3], &mut rng);
    let k = dense_block(&collect_kfac(&fc, &params, &x, 32, &Sequential)?, 0)?;
    let exact = exact_ggn(&fc, &params, &x, &[0])?;
    let mut out =
        vec![CheckResult::new(Property::KfacExact, "FC single sample".into(), frobenius_rel_err(&k, &exact), 1e-8)];

    let grid = FeatureShape::new(3, 1, 1, 1);
    let conv = build_network(grid, &[plan(4, 1, &[BranchKind::Conv], false, false)], 4)?;
    let fc1 = build_network(grid, &[plan(4, 1, &[BranchKind::Fc], false, false)], 4)?;
    let w = conv.init(5);
    let wf = vec![w[0].reshape(fc1.param_shapes()[0].as_slice())?];
    let x = rand_t(&[1, 3, 1, 1], &mut rng);
    let kc = dense_block(&collect_kfac(&conv, &w, &x, 32, &Sequential)?, 0)?;
    let exact = exact_ggn(&conv, &w, &x, &[0])?;
    out.push(CheckResult::new(
        Property::KfacExact,
        "1x1 CONV single sample".into(),
        frobenius_rel_err(&kc, &exact),
        1e-8,
    ));
    let kf = dense_block(&collect_kfac(&fc1, &wf, &x, 32, &Sequential)?, 0)?;
    out.push(CheckResult::new(Property::KfacExact, "1x1 CONV equals FC".into(), frobenius_rel_err(&kc, &kf), 1e-12));
    Ok(out)
}

/// Every Kronecker block against its defining double sums, evaluated with
/// naive loops: `A = sum_n sum_t a a^T`, `B = sum_n sum_t g^T Lambda g`,
/// scale `1 / (N T)`. Each sample's factors are first checked to reproduce
/// that sample's exact GGN block, and CONV activations are checked against
/// explicitly extracted patches.
pub fn kfac_definition() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (ki, &kind) in BranchKind::ALL.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + ki as u64);
        let layers = [plan(4, 3, &[kind], true, true), plan(3, 1, &[kind], false, false)];

        let small = build_network(FeatureShape::new(2, 1, 4, 4), &layers, 3)?;
        let params = small.init(rng.random());
        let x = rand_t(&[1, 2, 4, 4], &mut rng);
        let mut worst: f64 = 0.0;
        let logits = small.logits(&params, &x)?;
        let lam = loglik_hessian(logits.data());
        for f in sample_factors(&small, &params, &x)? {
            let j = f.jacobian();
            let approx = j.t().matmul(&lam)?.matmul(&j)?;
            let exact = exact_ggn(&small, &params, &x, &[f.site.param])?;
            worst = worst.max(frobenius_rel_err(&approx, &exact));
        }
        out.push(CheckResult::new(Property::KfacDefinition, format!("{kind} per-sample Jacobian"), worst, 1e-10));

        let net = build_network(FeatureShape::new(2, 1, 8, 8), &layers, 3)?;
        let params = net.init(rng.random());
        let n = 3;
        let xs = rand_t(&[n, 2, 8, 8], &mut rng);
        let blocks = collect_kfac(&net, &params, &xs, 2, &Sequential)?;
        let mut acts: Vec<Vec<Vec<f64>>> = vec![Vec::new(); blocks.len()];
        let mut jacs: Vec<Vec<(Tensor, Tensor)>> = vec![Vec::new(); blocks.len()];
        let mut patch_err: f64 = 0.0;
        for s in 0..n {
            let x = sample(&xs, s);
            let lam = oracle::softmax_hessian(net.logits(&params, &x)?.data());
            for f in sample_factors(&net, &params, &x)? {
                let bi = blocks.iter().position(|b| b.site == f.site).expect("same sites");
                let (t, na) = (f.a.shape()[0], f.a.shape()[1]);
                let (k, ng) = (f.g.shape()[0], f.g.shape()[2]);
                for tt in 0..t {
                    let a: Vec<f64> = (0..na).map(|i| f.a.get(&[tt, i])).collect();
                    if kind == BranchKind::Conv && f.site.layer == 0 {
                        let p = oracle::conv_patch(&xs, s, 3, tt / 8, tt % 8);
                        let d = a.iter().zip(&p).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
                        patch_err = patch_err.max(d);
                    }
                    acts[bi].push(a);
                    jacs[bi].push((Tensor::from_fn(&[k, ng], |i| f.g.get(&[i[0], tt, i[1]])), lam.clone()));
                }
            }
        }
        let mut worst: f64 = 0.0;
        for (bi, blk) in blocks.iter().enumerate() {
            let (a, b) = oracle::kfac_factors(&acts[bi], &jacs[bi]);
            let scale = 1.0 / acts[bi].len() as f64;
            worst = worst
                .max(frobenius_rel_err(&blk.kron.a, &a))
                .max(frobenius_rel_err(&blk.kron.b, &b))
                .max((blk.kron.scale - scale).abs() / scale);
        }
        out.push(CheckResult::new(Property::KfacDefinition, format!("{kind} factor sums"), worst, 1e-10));
        if kind == BranchKind::Conv {
            out.push(CheckResult::new(Property::KfacDefinition, "CONV patches".into(), patch_err, 1e-15));
        }
    }
    Ok(out)
}

/// Strict networks mixing branch kinds, with the group acting on inputs.
fn equivariance_cases() -> Vec<(&'static str, Vec<Vec<BranchKind>>, bool)> {
    use BranchKind::*;
    vec![
        ("CONV", vec![vec![Conv]], false),
        ("S-CONV", vec![vec![Sconv]], false),
        ("CONV+S-CONV", vec![vec![Conv, Sconv]], false),
        ("GCONV", vec![vec![Gconv]], true),
        ("GCONV+PGCONV", vec![vec![Gconv], vec![Gconv, Pgconv], vec![Pgconv]], true),
    ]
}

/// `min_h max |a - h . b|` over the elements `h` of the action on `b`'s
/// grid.
fn orbit_distance(a: &Tensor, b: &Tensor, rotations: bool) -> Result<f64> {
    let (h, w) = (b.shape()[3], b.shape()[4]);
    let action = if rotations { GridAction::p4(h, w)? } else { GridAction::translations(h, w)? };
    let fb = GroupFeatureMap::new(b.clone())?;
    let mut best = f64::INFINITY;
    for g in 0..action.group().order() {
        best = best.min(a.max_abs_diff(act(&action, g, &fb)?.tensor()));
        if best == 0.0 {
            break;
        }
    }
    Ok(best)
}

/// Pooled layer outputs of one forward pass: every hidden feature map and
/// the logits.
fn features(net: &Network, params: &[Tensor], x: &Tensor) -> Result<(Vec<Tensor>, Tensor, f64)> {
    let mut tape = Tape::new();
    let tr = net.forward(&mut tape, params, x)?;
    let hidden = tr.layers[1..].iter().map(|l| tape.value(l.input).clone()).collect();
    let mut margin = f64::INFINITY;
    for (l, layer) in net.layers.iter().enumerate() {
        if layer.pool == PoolKind::Polyphase {
            margin = margin.min(selection_margin(tape.value(tr.layers[l].output))?);
        }
    }
    Ok((hidden, tape.value(tr.logits).clone(), margin))
}

/// For every group element `g` acting on the input, each hidden feature
/// map of `g . x` must equal some transformed copy of the same map for `x`,
/// and the logits must be unchanged. Inputs are redrawn until every pooling
/// layer has a unique winning component.
pub fn equivariance() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (ci, (name, menus, rotations)) in equivariance_cases().into_iter().enumerate() {
        let menu = |i: usize| menus[i.min(menus.len() - 1)].clone();
        let layers = [
            LayerPlan { out_channels: 3, filter: 3, menu: menu(0), pool: true, relu: true },
            LayerPlan { out_channels: 4, filter: 3, menu: menu(1), pool: true, relu: true },
            LayerPlan { out_channels: 3, filter: 1, menu: menu(2), pool: false, relu: false },
        ];
        let net = build_network(FeatureShape::new(2, 1, 8, 8), &layers, 3)?;
        let mut rng = ChaCha8Rng::seed_from_u64(300 + ci as u64);
        let params = net.init(rng.random());
        let (x, base, logits) = loop {
            let x = rand_t(&[1, 2, 8, 8], &mut rng);
            let (hidden, logits, margin) = features(&net, &params, &x)?;
            if margin > 1e-6 {
                break (x, hidden, logits);
            }
        };
        let action = if rotations { GridAction::p4(8, 8)? } else { GridAction::translations(8, 8)? };
        let x5 = GroupFeatureMap::new(x.reshape(&[1, 2, 1, 8, 8])?)?;
        let mut worst: f64 = 0.0;
        for g in 0..action.group().order() {
            let gx = act(&action, g, &x5)?.into_tensor().reshape(&[1, 2, 8, 8])?;
            let (hidden, lg, _) = features(&net, &params, &gx)?;
            for (a, b) in hidden.iter().zip(&base) {
                worst = worst.max(orbit_distance(a, b, rotations)?);
            }
            worst = worst.max(lg.max_abs_diff(&logits));
        }
        let group = if rotations { "p4" } else { "translations" };
        out.push(CheckResult::new(Property::Equivariance, format!("{name} under {group}"), worst, 1e-10));
    }
    Ok(out)
}

/// Dense curvature of each prior block, tensors stacked in block order.
fn dense_prior_blocks(params: &[Tensor], prior: &PriorConfig, blocks: &[CurvatureBlock]) -> Result<Vec<Tensor>> {
    prior
        .blocks
        .iter()
        .map(|pb| {
            let n = pb.size(params);
            let mut h = Tensor::zeros(&[n, n]);
            let mut off = 0;
            for &t in &pb.tensors {
                if blocks.iter().any(|b| b.site.param == t) {
                    let d = dense_block(blocks, t)?;
                    let m = d.shape()[0];
                    for i in 0..m {
                        for j in 0..m {
                            h.set(&[off + i, off + j], d.get(&[i, j]));
                        }
                    }
                }
                off += params[t].len();
            }
            Ok(h)
        })
        .collect()
}

struct MarglikCase {
    name: String,
    params: Vec<Tensor>,
    prior: PriorConfig,
    blocks: Vec<CurvatureBlock>,
    state: crate::laplace::MarglikState,
}

fn marglik_cases(placement: PriorPlacement) -> Result<Vec<MarglikCase>> {
    use BranchKind::*;
    let menus: [(&[BranchKind], usize); 7] = [
        (&[Fc], 3),
        (&[Conv, Sconv], 4),
        (&[Ffc], 4),
        (&[Sfc], 3),
        (&[Gconv], 4),
        (&[Fc, Conv], 3),
        (&[Gconv, Pgconv], 3),
    ];
    build_cases(&menus, placement, 6)
}

fn build_cases(menus: &[(&[BranchKind], usize)], placement: PriorPlacement, n: usize) -> Result<Vec<MarglikCase>> {
    let mut out = Vec::new();
    for (ci, &(menu, hw)) in menus.iter().enumerate() {
        let net = build_network(FeatureShape::new(1, 1, hw, hw), &[plan(2, 3, menu, false, false)], 2)?;
        let mut rng = ChaCha8Rng::seed_from_u64(400 + ci as u64);
        let params = net.init(rng.random());
        let xs = rand_t(&[n, 1, hw, hw], &mut rng);
        let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let prior = PriorConfig::uniform(&net, placement, 0.0)?;
        let blocks = collect_kfac(&net, &params, &xs, 4, &Sequential)?;
        let (_, state) = marglik(&net, &params, &xs, &ys, &prior, &blocks, 4, &Sequential)?;
        let name = menu.iter().map(|k| k.name()).collect::<Vec<_>>().join("+");
        out.push(MarglikCase { name, params, prior, blocks, state });
    }
    Ok(out)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Kronecker-eigenvalue log-determinant and effective parameter count
/// against Cholesky and explicit inverses on blocks of at most 200
/// parameters.
pub fn logdet_and_gamma() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for case in marglik_cases(PriorPlacement::OnWeights)? {
        let rhos: Vec<f64> = (0..case.prior.len()).map(|i| -1.0 + 0.7 * i as f64).collect();
        let sums = case.state.block_sums(&rhos);
        let gammas = case.state.gammas(&rhos);
        let (mut ld, mut gm): (f64, f64) = (0.0, 0.0);
        for (b, h) in dense_prior_blocks(&case.params, &case.prior, &case.blocks)?.iter().enumerate() {
            if h.shape()[0] > 200 {
                return Err(Error::SizeGuard { what: "dense marglik oracle", size: h.shape()[0], limit: 200 });
            }
            let alpha = math::exp(rhos[b]);
            ld = ld.max(rel(oracle::dense_half_logdet(h, alpha), 0.5 * sums[b].0));
            gm = gm.max(rel(oracle::dense_gamma(h, alpha), gammas[b]));
        }
        out.push(CheckResult::new(Property::Logdet, format!("{} half log-det", case.name), ld, 1e-8));
        out.push(CheckResult::new(Property::Gamma, format!("{} effective parameters", case.name), gm, 1e-8));
    }
    Ok(out)
}

/// `gamma -> 0` as the precision diverges, and `gamma -> rank(H)` as it
/// vanishes. The softmax GGN is singular (shifting every logit equally
/// costs nothing), so `gamma -> P` is checked on a positive definite
/// spectrum built by hand.
pub fn gamma_limits() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for case in marglik_cases(PriorPlacement::OnWeights)? {
        let n = case.prior.len();
        let sizes: Vec<f64> = case.prior.blocks.iter().map(|b| b.size(&case.params) as f64).collect();
        let mut ranks = Vec::with_capacity(n);
        for h in dense_prior_blocks(&case.params, &case.prior, &case.blocks)? {
            let ev = crate::linalg::sym_eigenvalues(&h)?;
            let top = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            ranks.push(ev.iter().filter(|&&v| v > 1e-9 * top).count() as f64);
        }
        let low = case.state.gammas(&vec![-40.0; n]);
        let high = case.state.gammas(&vec![40.0; n]);
        let to_rank = (0..n).fold(0.0f64, |m, b| m.max((low[b] - ranks[b]).abs() / sizes[b]));
        let to_0 = high.iter().zip(&sizes).fold(0.0f64, |m, (g, p)| m.max(g.abs() / p));
        out.push(CheckResult::new(Property::GammaLimit, format!("{} alpha -> 0 gives rank", case.name), to_rank, 1e-8));
        out.push(CheckResult::new(Property::GammaLimit, format!("{} alpha -> inf", case.name), to_0, 1e-8));
    }
    let state = crate::laplace::MarglikState {
        nll: 0.0,
        spectra: vec![crate::laplace::BlockSpectrum {
            param: 0,
            lambda: vec![0.5, 1.0, 3.0],
            mu: vec![0.1, 2.0],
            scale: 0.25,
        }],
        spectrum_block: vec![0],
        sq_norms: vec![1.0],
        sizes: vec![6],
        flat: vec![0],
    };
    let low = state.gammas(&[-40.0])[0];
    let high = state.gammas(&[40.0])[0];
    out.push(CheckResult::new(
        Property::GammaLimit,
        "positive definite alpha -> 0 gives P".into(),
        (low - 6.0).abs() / 6.0,
        1e-8,
    ));
    out.push(CheckResult::new(Property::GammaLimit, "positive definite alpha -> inf".into(), high / 6.0, 1e-8));
    Ok(out)
}

/// Analytic gradient of the marginal likelihood in log-precision against
/// central differences, per block.
pub fn hypergrad() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for placement in [PriorPlacement::OnWeights, PriorPlacement::OnLengthscales] {
        for case in marglik_cases(placement)? {
            let rhos: Vec<f64> = (0..case.prior.len()).map(|i| 0.3 * i as f64 - 0.4).collect();
            let g = case.state.hypergrad(&rhos)?;
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for b in 0..rhos.len() {
                let mut up = rhos.clone();
                up[b] += h;
                let mut down = rhos.clone();
                down[b] -= h;
                let fd = (case.state.estimate(&up)?.total - case.state.estimate(&down)?.total) / (2.0 * h);
                worst = worst.max((fd - g[b]).abs() / g[b].abs().max(1e-3));
            }
            let tag = match placement {
                PriorPlacement::OnWeights => "weights",
                _ => "lengthscales",
            };
            out.push(CheckResult::new(Property::Hypergrad, format!("{} prior on {tag}", case.name), worst, 1e-5));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()), Some(s));
        }
        assert_eq!(Suite::parse("nope"), None);
    }

    #[test]
    fn failed_check_is_reported() {
        assert!(!CheckResult::new(Property::Logdet, "x".into(), f64::NAN, 1.0).passed());
        assert!(!CheckResult::new(Property::Logdet, "x".into(), 2.0, 1.0).passed());
        assert!(CheckResult::new(Property::Logdet, "x".into(), 0.5, 1.0).passed());
    }

    #[test]
    fn orbit_distance_finds_the_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = rand_t(&[1, 2, 1, 4, 4], &mut rng);
        let t = GridAction::translations(4, 4).unwrap();
        let a = act(&t, 5, &GroupFeatureMap::new(b.clone()).unwrap()).unwrap().into_tensor();
        assert_eq!(orbit_distance(&a, &b, false).unwrap(), 0.0);
    }
}
