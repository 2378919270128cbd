//! Alternating optimisation: Adam on the parameters against the MAP loss,
//! and in Laplace mode a hyperparameter update on the marginal likelihood
//! every few epochs after a burn-in.
//!
//! The mini-batch order of epoch `e` comes from a stream keyed by
//! `(seed, e)`, so the state needed to resume is the parameters, the
//! optimiser moments, the log-precisions and the epoch counter.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curvature::collect_kfac;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::laplace::{line_search, nll_grad, predict_stats, MarglikState};
use crate::layers::Network;
use crate::optim::{cosine_lr, Adam};
use crate::parallel::Parallel;
use crate::priors::{grad_log_prior, PriorConfig};
use crate::tensor::Tensor;

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    /// MAP with fixed prior precisions.
    Map,
    /// MAP steps alternated with marginal-likelihood steps on the precisions.
    Laplace,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub param_lr: f64,
    pub hyper_lr: f64,
    pub epochs: usize,
    pub hyper_every: usize,
    pub burn_in: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    /// Line-searched updates per hyperparameter step.
    pub hyper_steps: usize,
    /// Samples per deterministic reduction chunk.
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            param_lr: 0.01,
            hyper_lr: 0.1,
            epochs: 200,
            hyper_every: 5,
            burn_in: 10,
            batch_size: 128,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            hyper_steps: 1,
            chunk: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.hyper_every == 0 {
            return bad("hyper_every must be at least 1");
        }
        if self.batch_size == 0 || self.chunk == 0 {
            return bad("batch_size and chunk must be positive");
        }
        if !(self.param_lr > 0.0 && self.hyper_lr > 0.0) || !self.param_lr.is_finite() || !self.hyper_lr.is_finite() {
            return bad("learning rates must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment coefficients must lie in [0, 1)");
        }
        Ok(())
    }

    /// Whether a hyper step follows epoch `epoch` (counted from 1).
    pub fn hyper_due(&self, epoch: usize) -> bool {
        epoch >= self.burn_in.max(1) && (epoch - self.burn_in).is_multiple_of(self.hyper_every)
    }
}

/// Metrics of one epoch.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean mini-batch NLL seen during the epoch.
    pub train_nll: f64,
    pub test_nll: Option<f64>,
    pub test_acc: Option<f64>,
    /// Objective after the hyper step, when one ran.
    pub marglik: Option<f64>,
    pub rhos: Vec<f64>,
}

/// Mean NLL and accuracy of a split.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub nll: f64,
    pub accuracy: f64,
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Vec<Tensor>,
    pub rhos: Vec<f64>,
    pub opt: Adam,
    pub hyper_opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl TrainState {
    pub fn new(net: &Network, prior: &PriorConfig, cfg: &TrainConfig) -> Self {
        let params = net.init(cfg.seed);
        let rhos = prior.rhos();
        let opt = Adam::new(&params, cfg.beta1, cfg.beta2);
        let hyper_opt = Adam::new(&[Tensor::from_vec(rhos.clone())], cfg.beta1, cfg.beta2);
        TrainState { params, rhos, opt, hyper_opt, epoch: 0, history: Vec::new() }
    }
}

/// Mean NLL and accuracy over a split in fixed chunks.
pub fn evaluate<P: Parallel + ?Sized>(
    net: &Network,
    params: &[Tensor],
    data: &Dataset,
    chunk: usize,
    par: &P,
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let (nll, correct) = predict_stats(net, params, &data.images, &data.labels, chunk, par)?;
    let n = data.len() as f64;
    Ok(Metrics { nll: nll / n, accuracy: correct as f64 / n })
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Inputs shared by every epoch.
pub struct Trainer<'a, P: Parallel + ?Sized> {
    pub net: &'a Network,
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
    pub prior: PriorConfig,
    pub cfg: &'a TrainConfig,
    pub mode: Mode,
    pub par: &'a P,
}

impl<'a, P: Parallel + ?Sized> Trainer<'a, P> {
    pub fn new(
        net: &'a Network,
        train: &'a Dataset,
        test: Option<&'a Dataset>,
        prior: &PriorConfig,
        cfg: &'a TrainConfig,
        mode: Mode,
        par: &'a P,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        Ok(Trainer { net, train, test, prior: prior.clone(), cfg, mode, par })
    }

    /// Run one epoch (and a hyper step if due) and append its metrics.
    pub fn step_epoch(&mut self, state: &mut TrainState) -> Result<()> {
        let (cfg, n) = (self.cfg, self.train.len());
        let epoch = state.epoch + 1;
        self.prior.set_rhos(&state.rhos)?;
        let order = epoch_order(cfg.seed, epoch, n);
        let per_epoch = n.div_ceil(cfg.batch_size);
        let total = cfg.epochs * per_epoch;
        let mut nll_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = self.train.batch(idx);
            let (nll, mut grads) = nll_grad(self.net, &state.params, &x, &y, cfg.chunk, self.par)?;
            if !nll.is_finite() {
                return Err(Error::Diverged { epoch, detail: "non-finite mini-batch loss".into() });
            }
            nll_sum += nll;
            let w = n as f64 / idx.len() as f64;
            for (g, p) in grads.iter_mut().zip(grad_log_prior(&state.params, &self.prior)?) {
                *g = g.scale(w).sub(&p)?;
            }
            let lr = cosine_lr(cfg.param_lr, state.epoch * per_epoch + b, total);
            state.opt.update(&mut state.params, &grads, lr)?;
        }
        if state.params.iter().any(|p| !p.all_finite()) {
            return Err(Error::Diverged { epoch, detail: "non-finite parameters".into() });
        }
        let mut marglik = None;
        if self.mode == Mode::Laplace && cfg.hyper_due(epoch) {
            marglik = Some(self.hyper_update(state, epoch)?);
        }
        let test = match self.test {
            Some(t) => Some(evaluate(self.net, &state.params, t, cfg.chunk, self.par)?),
            None => None,
        };
        state.epoch = epoch;
        state.history.push(EpochMetrics {
            epoch,
            train_nll: nll_sum / n as f64,
            test_nll: test.map(|m| m.nll),
            test_acc: test.map(|m| m.accuracy),
            marglik,
            rhos: state.rhos.clone(),
        });
        Ok(())
    }

    /// KFAC sweep, objective, then `hyper_steps` Adam proposals on `rho`,
    /// each accepted only after a backtracking line search. Returns the
    /// final objective.
    fn hyper_update(&mut self, state: &mut TrainState, epoch: usize) -> Result<f64> {
        let cfg = self.cfg;
        let (net, data) = (self.net, self.train);
        let blocks = collect_kfac(net, &state.params, &data.images, cfg.chunk, self.par)?;
        let (nll, _) = predict_stats(net, &state.params, &data.images, &data.labels, cfg.chunk, self.par)?;
        let ml = MarglikState::new(nll, &blocks, &state.params, &self.prior)?;
        let lr = cosine_lr(cfg.hyper_lr, epoch, cfg.epochs);
        let mut value = ml.estimate(&state.rhos)?.total;
        for _ in 0..cfg.hyper_steps {
            let g = Tensor::from_vec(ml.hypergrad(&state.rhos)?);
            let mut proposal = [Tensor::from_vec(state.rhos.clone())];
            state.hyper_opt.update(&mut proposal, &[g], lr)?;
            let dir: Vec<f64> = proposal[0].data().iter().zip(&state.rhos).map(|(p, r)| p - r).collect();
            let step = line_search(&ml, &state.rhos, &dir, 30)?;
            if step.after > step.before {
                return Err(Error::InvalidArgument("hyper step increased the objective".into()));
            }
            state.rhos = step.rhos;
            value = step.after;
        }
        self.prior.set_rhos(&state.rhos)?;
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, detail: "non-finite marginal likelihood".into() });
        }
        Ok(value)
    }

    /// Run until `cfg.epochs` epochs are complete.
    pub fn run(&mut self, state: &mut TrainState) -> Result<()> {
        while state.epoch < self.cfg.epochs {
            self.step_epoch(state)?;
        }
        Ok(())
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }
}

/// Train from scratch.
pub fn train<P: Parallel + ?Sized>(
    net: &Network,
    train: &Dataset,
    test: Option<&Dataset>,
    prior: &PriorConfig,
    cfg: &TrainConfig,
    mode: Mode,
    par: &P,
) -> Result<TrainState> {
    let mut t = Trainer::new(net, train, test, prior, cfg, mode, par)?;
    let mut state = TrainState::new(net, prior, cfg);
    t.run(&mut state)?;
    Ok(state)
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

/// Metrics CSV: `epoch,train_nll,test_nll,test_acc,marglik` then one
/// `rho:<block>` column per prior block. Missing values are empty.
pub fn metrics_csv(history: &[EpochMetrics], blocks: &[String]) -> String {
    let mut out = String::from("epoch,train_nll,test_nll,test_acc,marglik");
    for b in blocks {
        let _ = write!(out, ",rho:{b}");
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for m in history {
        let _ =
            write!(out, "{},{},{},{},{}", m.epoch, num(m.train_nll), opt(m.test_nll), opt(m.test_acc), opt(m.marglik));
        for r in &m.rhos {
            let _ = write!(out, ",{}", num(*r));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests;
