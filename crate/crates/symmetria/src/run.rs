//! Experiments end to end: data, network, training, symmetry report and
//! the run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symmetria_core::curvature::collect_kfac;
use symmetria_core::data::{apply_transform, gen_glyph_quadrant, standardise, standardise_with, Dataset, TaskSpec};
use symmetria_core::laplace::{effective_params, marglik};
use symmetria_core::layers::Network;
use symmetria_core::parallel::Parallel;
use symmetria_core::priors::PriorConfig;
use symmetria_core::report::SymmetryReport;
use symmetria_core::tensor::Tensor;
use symmetria_core::training::{evaluate, metrics_csv, EpochMetrics, Metrics, Mode, TrainState, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::io::{atomic_write, load_idx};

/// Package version and the `git describe` of the build tree.
pub fn version_string() -> String {
    format!("symmetria {} ({})", env!("CARGO_PKG_VERSION"), env!("SYMMETRIA_GIT_DESCRIBE"))
}

/// Standardised splits, network and initial prior of a config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
    pub net: Network,
    pub prior: PriorConfig,
}

fn splits(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let task = &cfg.task;
    let test_seed = cfg.data.test_seed.unwrap_or(task.seed.wrapping_add(1_000_000));
    match &cfg.data.idx {
        Some(f) => {
            let train = apply_transform(&load_idx(&f.train_images, &f.train_labels)?, task.transform, task.seed)?;
            let test = apply_transform(&load_idx(&f.test_images, &f.test_labels)?, task.transform, test_seed)?;
            Ok((train, test))
        }
        None => {
            let train = gen_glyph_quadrant(task, cfg.data.train_size)?;
            let test = gen_glyph_quadrant(&TaskSpec { seed: test_seed, ..task.clone() }, cfg.data.test_size)?;
            Ok((train, test))
        }
    }
}

impl Experiment {
    /// Build everything a run needs. The test split is standardised with
    /// the training statistics.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (mut train, mut test) = splits(config)?;
        let [c, h, w] = train.image_shape();
        if test.image_shape() != [c, h, w] {
            return Err(CliError::Config(format!(
                "train images are {:?} but test images are {:?}",
                train.image_shape(),
                test.image_shape()
            )));
        }
        if h != w {
            return Err(CliError::Config(format!("images must be square, got {h}x{w}")));
        }
        let (mean, std) = standardise(&mut train);
        standardise_with(&mut test, mean, std);
        let classes = train.classes.max(test.classes);
        let net = config.build_network(h, c, classes)?;
        let prior = config.build_prior(&net)?;
        Ok(Experiment { config: config.clone(), train, test, net, prior })
    }

    /// Symmetry report at `params` with the prior at `rhos`, using curvature
    /// and likelihood over the full training set.
    pub fn report<P: Parallel>(&self, params: &[Tensor], rhos: &[f64], par: &P) -> Result<SymmetryReport> {
        let chunk = self.config.train.chunk;
        let mut prior = self.prior.clone();
        prior.set_rhos(rhos)?;
        let blocks = collect_kfac(&self.net, params, &self.train.images, chunk, par)?;
        let (_, state) =
            marglik(&self.net, params, &self.train.images, &self.train.labels, &prior, &blocks, chunk, par)?;
        let eff = effective_params(&state, &prior, &self.net);
        Ok(SymmetryReport::build(&self.net, params, &prior, &eff))
    }

    pub fn restore(&self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.check_network(&self.net)?;
        if ckpt.state.rhos.len() != self.prior.len() {
            return Err(CliError::Format(format!(
                "checkpoint has {} prior blocks, config builds {}",
                ckpt.state.rhos.len(),
                self.prior.len()
            )));
        }
        Ok(())
    }
}

/// Everything `report.json` records about a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub mode: Mode,
    pub epochs: usize,
    pub params: usize,
    pub train: Metrics,
    pub test: Metrics,
    pub marglik: Option<f64>,
    pub prior_blocks: Vec<String>,
    pub rhos: Vec<f64>,
    pub symmetry: SymmetryReport,
}

pub struct RunOutput {
    pub experiment: Experiment,
    pub state: TrainState,
    pub report: RunReport,
    pub csv: String,
}

/// Train from scratch, calling `on_epoch` after every epoch.
pub fn train_run<P: Parallel>(
    config: &ExperimentConfig,
    par: &P,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunOutput> {
    let exp = Experiment::prepare(config)?;
    let cfg = &exp.config;
    let mut trainer = Trainer::new(&exp.net, &exp.train, Some(&exp.test), &exp.prior, &cfg.train, cfg.mode, par)?;
    let mut state = TrainState::new(&exp.net, &exp.prior, &cfg.train);
    while state.epoch < cfg.train.epochs {
        trainer.step_epoch(&mut state)?;
        on_epoch(state.history.last().expect("epoch recorded"));
    }
    let report = run_report(&exp, &state, par)?;
    let csv = metrics_csv(&state.history, &exp.prior.names());
    Ok(RunOutput { experiment: exp, state, report, csv })
}

pub fn run_report<P: Parallel>(exp: &Experiment, state: &TrainState, par: &P) -> Result<RunReport> {
    let chunk = exp.config.train.chunk;
    Ok(RunReport {
        version: version_string(),
        seed: exp.config.train.seed,
        mode: exp.config.mode,
        epochs: state.epoch,
        params: exp.net.param_count(),
        train: evaluate(&exp.net, &state.params, &exp.train, chunk, par)?,
        test: evaluate(&exp.net, &state.params, &exp.test, chunk, par)?,
        marglik: state.history.iter().rev().find_map(|m| m.marglik),
        prior_blocks: exp.prior.names(),
        rhos: state.rhos.clone(),
        symmetry: exp.report(&state.params, &state.rhos, par)?,
    })
}

/// Files of a run directory.
pub const RUN_FILES: [&str; 7] =
    ["config.json", "version.txt", "seed.txt", "metrics.csv", "report.json", "report.txt", "checkpoint.bin"];

/// Write the run directory; each file is replaced atomically.
pub fn write_run_dir(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let cfg = &out.experiment.config;
    let ckpt =
        Checkpoint { config: cfg.clone(), names: out.experiment.net.param_names().to_vec(), state: out.state.clone() };
    let report = serde_json::to_string_pretty(&out.report).expect("report serialises");
    let files: [(&str, Vec<u8>); 7] = [
        ("config.json", (cfg.to_json() + "\n").into_bytes()),
        ("version.txt", (version_string() + "\n").into_bytes()),
        ("seed.txt", format!("{}\n", cfg.train.seed).into_bytes()),
        ("metrics.csv", out.csv.clone().into_bytes()),
        ("report.json", (report + "\n").into_bytes()),
        ("report.txt", out.report.symmetry.table().into_bytes()),
        ("checkpoint.bin", ckpt.encode()),
    ];
    for (name, bytes) in files {
        atomic_write(&dir.join(name), &bytes)?;
    }
    Ok(())
}

/// Run directory: `out` when given, else the config's output dir.
pub fn run_dir(config: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map_or_else(|| config.output_dir.clone(), Path::to_path_buf)
}
