//! Laplace-approximated marginal likelihood with Kronecker-factored
//! curvature, its gradient in the log-precisions, and effective-parameter
//! diagnostics.
//!
//! With `H = KFAC + diag(alpha)` the objective (a loss to minimise) is
//! `L = NLL - log p(theta) - (P/2) log 2pi + 1/2 log|H|`. Every Kronecker
//! block contributes `log(s lambda_i mu_j + alpha)` per eigen pair; governed
//! scalars without curvature (anchor locations, lengthscales) contribute
//! `log alpha`.

use alloc::vec::Vec;

use crate::autodiff::Tape;
use crate::curvature::CurvatureBlock;
use crate::error::{Error, Result};
use crate::layers::{BranchKind, Network};
use crate::linalg::sym_eigenvalues;
use crate::math;
use crate::parallel::{chunks, Parallel};
use crate::priors::{grad_log_prior, log_prior, PriorConfig, RHO_CLAMP};
use crate::tensor::Tensor;

/// Eigenvalues below this are treated as zero.
pub const EIG_FLOOR: f64 = 1e-10;

/// Decomposition of the Laplace objective.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarglikEstimate {
    pub nll: f64,
    pub log_prior: f64,
    pub half_logdet: f64,
    pub const_term: f64,
    pub total: f64,
}

impl MarglikEstimate {
    fn assemble(nll: f64, log_prior: f64, half_logdet: f64, params: usize) -> Self {
        let const_term = -0.5 * params as f64 * math::ln(2.0 * core::f64::consts::PI);
        MarglikEstimate { nll, log_prior, half_logdet, const_term, total: nll - log_prior + half_logdet + const_term }
    }
}

/// Eigenvalues of one Kronecker block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpectrum {
    /// Parameter tensor the block belongs to.
    pub param: usize,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub scale: f64,
}

impl BlockSpectrum {
    pub fn from_block(block: &CurvatureBlock) -> Result<Self> {
        Ok(BlockSpectrum {
            param: block.site.param,
            lambda: clamp_spectrum(sym_eigenvalues(&block.kron.a)?)?,
            mu: clamp_spectrum(sym_eigenvalues(&block.kron.b)?)?,
            scale: block.kron.scale,
        })
    }

    pub fn len(&self) -> usize {
        self.lambda.len() * self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Eigenvalues `s lambda_i mu_j` of the scaled Kronecker product.
    pub fn products(&self) -> impl Iterator<Item = f64> + '_ {
        self.lambda.iter().flat_map(move |&l| self.mu.iter().map(move |&m| self.scale * l * m))
    }
}

/// Reject clearly negative eigenvalues and floor the rest at zero.
pub fn clamp_spectrum(mut ev: Vec<f64>) -> Result<Vec<f64>> {
    let top = ev.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for v in ev.iter_mut() {
        if *v < -EIG_FLOOR * top {
            return Err(Error::InvalidArgument(alloc::format!("curvature factor has negative eigenvalue {v}")));
        }
        if *v < EIG_FLOOR {
            *v = 0.0;
        }
    }
    Ok(ev)
}

/// Everything the objective and its gradient in `rho` need, with `theta`
/// and the curvature factors held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct MarglikState {
    /// Full-sweep NLL at `theta`.
    pub nll: f64,
    pub spectra: Vec<BlockSpectrum>,
    /// Prior block of each spectrum.
    pub spectrum_block: Vec<usize>,
    /// Per prior block: `||v||^2`, `P_b`, and the number of governed
    /// scalars without curvature.
    pub sq_norms: Vec<f64>,
    pub sizes: Vec<usize>,
    pub flat: Vec<usize>,
}

impl MarglikState {
    pub fn new(nll: f64, blocks: &[CurvatureBlock], params: &[Tensor], prior: &PriorConfig) -> Result<Self> {
        let (_, sq_norms) = log_prior(params, prior)?;
        let sizes: Vec<usize> = prior.blocks.iter().map(|b| b.size(params)).collect();
        let mut flat = sizes.clone();
        let mut spectra = Vec::with_capacity(blocks.len());
        let mut spectrum_block = Vec::with_capacity(blocks.len());
        for blk in blocks {
            let s = BlockSpectrum::from_block(blk)?;
            let b = prior.owner(s.param);
            flat[b] -= s.len();
            spectrum_block.push(b);
            spectra.push(s);
        }
        Ok(MarglikState { nll, spectra, spectrum_block, sq_norms, sizes, flat })
    }

    pub fn blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn check(&self, rhos: &[f64]) -> Result<()> {
        if rhos.len() != self.blocks() {
            return Err(Error::InvalidArgument(alloc::format!("expected {} rho values", self.blocks())));
        }
        Ok(())
    }

    /// Per prior block: `sum log(h + alpha)`, `sum 1/(h + alpha)` and
    /// `gamma = sum h/(h + alpha)` over the block's curvature eigenvalues,
    /// including the flat directions.
    pub fn block_sums(&self, rhos: &[f64]) -> Vec<(f64, f64, f64)> {
        let alphas: Vec<f64> = rhos.iter().map(|&r| math::exp(r)).collect();
        let mut out: Vec<(f64, f64, f64)> =
            alphas.iter().zip(&self.flat).map(|(&a, &f)| (f as f64 * math::ln(a), f as f64 / a, 0.0)).collect();
        for (s, &b) in self.spectra.iter().zip(&self.spectrum_block) {
            let a = alphas[b];
            let o = &mut out[b];
            for h in s.products() {
                o.0 += math::ln(h + a);
                o.1 += 1.0 / (h + a);
                o.2 += h / (h + a);
            }
        }
        out
    }

    /// Objective at the given log-precisions.
    pub fn estimate(&self, rhos: &[f64]) -> Result<MarglikEstimate> {
        self.check(rhos)?;
        let two_pi = 2.0 * core::f64::consts::PI;
        let sums = self.block_sums(rhos);
        let mut lp = 0.0;
        let mut half_logdet = 0.0;
        for b in 0..self.blocks() {
            let alpha = math::exp(rhos[b]);
            lp += -0.5 * alpha * self.sq_norms[b] - 0.5 * self.sizes[b] as f64 * (math::ln(two_pi) - rhos[b]);
            half_logdet += 0.5 * sums[b].0;
        }
        Ok(MarglikEstimate::assemble(self.nll, lp, half_logdet, self.param_count()))
    }

    /// `dL/drho` per prior block.
    pub fn hypergrad(&self, rhos: &[f64]) -> Result<Vec<f64>> {
        self.check(rhos)?;
        let sums = self.block_sums(rhos);
        Ok((0..self.blocks())
            .map(|b| {
                let alpha = math::exp(rhos[b]);
                let p = self.sizes[b] as f64;
                alpha * (0.5 * self.sq_norms[b] - 0.5 * p / alpha + 0.5 * sums[b].1)
            })
            .collect())
    }

    /// Effective parameter count per prior block.
    pub fn gammas(&self, rhos: &[f64]) -> Vec<f64> {
        self.block_sums(rhos).into_iter().map(|s| s.2).collect()
    }
}

/// Summed NLL and number of correct argmax predictions over a dataset, in
/// fixed chunks reduced in order.
pub fn predict_stats<P: Parallel + ?Sized>(
    net: &Network,
    params: &[Tensor],
    xs: &Tensor,
    labels: &[usize],
    chunk: usize,
    par: &P,
) -> Result<(f64, usize)> {
    let n = xs.shape()[0];
    if n == 0 || labels.len() != n {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let per = xs.len() / n;
    let ranges = chunks(n, chunk);
    let parts = par.map(ranges.len(), |i| -> Result<(f64, usize)> {
        let r = ranges[i].clone();
        let mut shape = xs.shape().to_vec();
        shape[0] = r.len();
        let x = Tensor::new(shape, xs.data()[r.start * per..r.end * per].to_vec())?;
        let logits = net.logits(params, &x)?;
        let k = logits.shape()[1];
        let mut nll = 0.0;
        let mut correct = 0;
        for (row, &y) in logits.data().chunks(k).zip(&labels[r]) {
            nll += math::log_sum_exp(row) - row[y];
            let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            correct += usize::from(best == y);
        }
        Ok((nll, correct))
    });
    let mut total = (0.0, 0);
    for p in parts {
        let (a, b) = p?;
        total.0 += a;
        total.1 += b;
    }
    if !total.0.is_finite() {
        return Err(Error::NonFinite("dataset NLL".into()));
    }
    Ok(total)
}

/// Summed NLL of a batch and its gradient in parameter order, computed in
/// fixed chunks reduced in order.
pub fn nll_grad<P: Parallel + ?Sized>(
    net: &Network,
    params: &[Tensor],
    x: &Tensor,
    labels: &[usize],
    chunk: usize,
    par: &P,
) -> Result<(f64, Vec<Tensor>)> {
    let n = labels.len();
    if n == 0 || x.shape()[0] != n {
        return Err(Error::EmptyInput("mini-batch"));
    }
    let per = x.len() / n;
    let ranges = chunks(n, chunk);
    let parts = par.map(ranges.len(), |i| -> Result<(f64, Vec<Tensor>)> {
        let r = ranges[i].clone();
        let mut shape = x.shape().to_vec();
        shape[0] = r.len();
        let xb = Tensor::new(shape, x.data()[r.start * per..r.end * per].to_vec())?;
        let mut tape = Tape::new();
        let trace = net.forward(&mut tape, params, &xb)?;
        let nll = tape.softmax_nll(trace.logits, &labels[r])?;
        let grads = tape.backward(nll, &Tensor::full(&[1], 1.0), &trace.params)?;
        let g = trace
            .params
            .iter()
            .zip(params)
            .map(|(node, p)| grads.get(*node).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((tape.value(nll).data()[0], g))
    });
    let mut iter = parts.into_iter();
    let (mut total, mut grads) = iter.next().expect("at least one chunk")?;
    for p in iter {
        let (v, g) = p?;
        total += v;
        for (a, b) in grads.iter_mut().zip(&g) {
            a.add_assign(b)?;
        }
    }
    Ok((total, grads))
}

/// MAP loss on a mini-batch, `(N/B) NLL_batch - log p(theta)`, and its
/// gradient in parameter order.
pub fn map_loss(
    net: &Network,
    params: &[Tensor],
    x: &Tensor,
    labels: &[usize],
    prior: &PriorConfig,
    dataset_size: usize,
) -> Result<(f64, Vec<Tensor>)> {
    map_loss_with(net, params, x, labels, prior, dataset_size, labels.len().max(1), &crate::parallel::Sequential)
}

/// [`map_loss`] with chunked evaluation of the data term.
#[allow(clippy::too_many_arguments)]
pub fn map_loss_with<P: Parallel + ?Sized>(
    net: &Network,
    params: &[Tensor],
    x: &Tensor,
    labels: &[usize],
    prior: &PriorConfig,
    dataset_size: usize,
    chunk: usize,
    par: &P,
) -> Result<(f64, Vec<Tensor>)> {
    let (nll, mut grads) = nll_grad(net, params, x, labels, chunk, par)?;
    let w = dataset_size as f64 / labels.len() as f64;
    let (lp, _) = log_prior(params, prior)?;
    let loss = w * nll - lp;
    if !loss.is_finite() {
        return Err(Error::NonFinite("MAP loss".into()));
    }
    let gp = grad_log_prior(params, prior)?;
    for (g, p) in grads.iter_mut().zip(&gp) {
        *g = g.scale(w).sub(p)?;
    }
    Ok((loss, grads))
}

/// Objective at `theta` from precomputed curvature blocks and a full-sweep
/// NLL.
#[allow(clippy::too_many_arguments)]
pub fn marglik<P: Parallel + ?Sized>(
    net: &Network,
    params: &[Tensor],
    xs: &Tensor,
    labels: &[usize],
    prior: &PriorConfig,
    blocks: &[CurvatureBlock],
    chunk: usize,
    par: &P,
) -> Result<(MarglikEstimate, MarglikState)> {
    let (nll, _) = predict_stats(net, params, xs, labels, chunk, par)?;
    let state = MarglikState::new(nll, blocks, params, prior)?;
    let est = state.estimate(&prior.rhos())?;
    Ok((est, state))
}

/// Outcome of one line-searched hyperparameter step.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperStep {
    pub rhos: Vec<f64>,
    pub before: f64,
    pub after: f64,
    /// Fraction of the proposed step actually taken (0 if no decrease was
    /// found).
    pub step: f64,
}

/// Gradient step on `rho` with backtracking: the step is halved until the
/// objective does not increase; `rho` stays in `[-16, 16]`.
pub fn hyper_step(state: &MarglikState, rhos: &[f64], lr: f64, max_halvings: usize) -> Result<HyperStep> {
    let g = state.hypergrad(rhos)?;
    let dir: Vec<f64> = g.iter().map(|d| -lr * d).collect();
    line_search(state, rhos, &dir, max_halvings)
}

/// Try `rho + t * direction` for `t = 1, 1/2, ...` and take the first
/// candidate that does not increase the objective.
pub fn line_search(state: &MarglikState, rhos: &[f64], direction: &[f64], max_halvings: usize) -> Result<HyperStep> {
    let before = state.estimate(rhos)?.total;
    let mut step = 1.0;
    for _ in 0..=max_halvings {
        let cand: Vec<f64> =
            rhos.iter().zip(direction).map(|(r, d)| (r + step * d).clamp(-RHO_CLAMP, RHO_CLAMP)).collect();
        let after = state.estimate(&cand)?.total;
        if after <= before {
            return Ok(HyperStep { rhos: cand, before, after, step });
        }
        step *= 0.5;
    }
    Ok(HyperStep { rhos: rhos.to_vec(), before, after: before, step: 0.0 })
}

/// Effective parameters of one branch.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BranchEffective {
    pub kind: BranchKind,
    pub gamma: f64,
    pub params: usize,
    /// `gamma / P`.
    pub normalised: f64,
    /// Normalised value divided by the layer's sum of normalised values.
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerEffective {
    pub layer: usize,
    pub branches: Vec<BranchEffective>,
    /// Branch with the largest share.
    pub inferred: BranchKind,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EffectiveParamsReport {
    pub layers: Vec<LayerEffective>,
}

/// Effective parameter counts aggregated per branch. A layer where no
/// branch is determined by the data splits its share evenly.
pub fn effective_params(state: &MarglikState, prior: &PriorConfig, net: &Network) -> EffectiveParamsReport {
    let gammas = state.gammas(&prior.rhos());
    let mut layers = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let mut branches: Vec<BranchEffective> = layer
            .branches
            .iter()
            .map(|br| BranchEffective { kind: br.spec.kind, gamma: 0.0, params: 0, normalised: 0.0, share: 0.0 })
            .collect();
        for (b, blk) in prior.blocks.iter().enumerate().filter(|(_, b)| b.layer == l) {
            branches[blk.branch].gamma += gammas[b];
            branches[blk.branch].params += state.sizes[b];
        }
        for br in branches.iter_mut() {
            br.normalised = if br.params == 0 { 0.0 } else { br.gamma / br.params as f64 };
        }
        let total: f64 = branches.iter().map(|b| b.normalised).sum();
        let even = 1.0 / branches.len() as f64;
        for br in branches.iter_mut() {
            br.share = if total > 0.0 { br.normalised / total } else { even };
        }
        let best = (0..branches.len()).fold(0, |b, j| if branches[j].share > branches[b].share { j } else { b });
        let inferred = branches[best].kind;
        layers.push(LayerEffective { layer: l, branches, inferred });
    }
    EffectiveParamsReport { layers }
}

#[cfg(test)]
mod tests;
