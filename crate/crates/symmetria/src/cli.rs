//! Command-line surface. Every command returns its process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use symmetria_core::checks::{CheckResult, Suite};
use symmetria_core::training::evaluate;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::io::atomic_write;
use crate::parallel::Threaded;
use crate::run::{run_dir, train_run, write_run_dir, Experiment};

#[derive(Debug, Parser)]
#[command(name = "symmetria", version, about = "Layer-wise symmetry selection by Laplace marginal likelihood")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a config and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training seed, replacing `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory, replacing `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on both splits of its config.
    Eval {
        checkpoint: PathBuf,
        /// Use this config's data instead of the stored one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the symmetry report of a checkpoint.
    Inspect {
        checkpoint: PathBuf,
        /// Write the report JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run oracle check suites.
    Check {
        /// gradcheck, kfac, equivariance, marglik or all.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Write the results as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Train { config, seed, out, quiet } => cmd_train(&config, seed, out.as_deref(), quiet),
        Command::Eval { checkpoint, config, out } => cmd_eval(&checkpoint, config.as_deref(), out.as_deref()),
        Command::Inspect { checkpoint, out } => cmd_inspect(&checkpoint, out.as_deref()),
        Command::Check { suite, out } => cmd_check(&suite, out.as_deref()),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn emit(out: Option<&Path>, json: String) -> Result<()> {
    match out {
        Some(p) => atomic_write(p, (json + "\n").as_bytes()),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

pub fn cmd_train(config: &Path, seed: Option<u64>, out: Option<&Path>, quiet: bool) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let dir = run_dir(&cfg, out);
    let par = Threaded::from_env();
    let run = train_run(&cfg, &par, |m| {
        if !quiet {
            let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            eprintln!(
                "epoch {:>4}  train_nll {:.4}  test_nll {}  test_acc {}  marglik {}",
                m.epoch,
                m.train_nll,
                opt(m.test_nll),
                opt(m.test_acc),
                opt(m.marglik)
            );
        }
    })?;
    write_run_dir(&dir, &run)?;
    print!("{}", run.report.symmetry.table());
    println!(
        "test_acc {:.4}  test_nll {:.4}  run dir {}",
        run.report.test.accuracy,
        run.report.test.nll,
        dir.display()
    );
    Ok(0)
}

fn load_experiment(checkpoint: &Path, config: Option<&Path>) -> Result<(Checkpoint, Experiment)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ckpt.config.clone(),
    };
    let exp = Experiment::prepare(&cfg)?;
    exp.restore(&ckpt)?;
    Ok((ckpt, exp))
}

pub fn cmd_eval(checkpoint: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<i32> {
    let (ckpt, exp) = load_experiment(checkpoint, config)?;
    let par = Threaded::from_env();
    let chunk = exp.config.train.chunk;
    let train = evaluate(&exp.net, &ckpt.state.params, &exp.train, chunk, &par)?;
    let test = evaluate(&exp.net, &ckpt.state.params, &exp.test, chunk, &par)?;
    let json = serde_json::json!({ "epoch": ckpt.state.epoch, "train": train, "test": test });
    emit(out, serde_json::to_string_pretty(&json).expect("metrics serialise"))?;
    Ok(0)
}

pub fn cmd_inspect(checkpoint: &Path, out: Option<&Path>) -> Result<i32> {
    let (ckpt, exp) = load_experiment(checkpoint, None)?;
    let report = exp.report(&ckpt.state.params, &ckpt.state.rhos, &Threaded::from_env())?;
    report.validate()?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    if out.is_some() {
        print!("{}", report.table());
    } else {
        eprint!("{}", report.table());
    }
    emit(out, json)?;
    Ok(0)
}

/// Fixed-width result table, one row per check.
pub fn check_table(rows: &[(Suite, CheckResult)]) -> String {
    let mut s = format!("{:<13} {:<44} {:>11} {:>9}  verdict\n", "suite", "check", "error", "threshold");
    for (suite, r) in rows {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        s += &format!("{:<13} {:<44} {:>11.3e} {:>9.0e}  {verdict}\n", suite.name(), r.name, r.error, r.threshold);
    }
    s
}

pub fn cmd_check(suite: &str, out: Option<&Path>) -> Result<i32> {
    let suites: Vec<Suite> = match suite {
        "all" => Suite::ALL.to_vec(),
        s => vec![Suite::parse(s).ok_or_else(|| {
            CliError::Config(format!("unknown suite {s}; expected gradcheck, kfac, equivariance, marglik or all"))
        })?],
    };
    let mut rows = Vec::new();
    for s in suites {
        rows.extend(s.run()?.into_iter().map(|r| (s, r)));
    }
    let table = check_table(&rows);
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(table.as_bytes());
    if let Some(p) = out {
        let json: Vec<_> =
            rows.iter().map(|(s, r)| serde_json::json!({ "suite": s, "check": r, "passed": r.passed() })).collect();
        atomic_write(p, (serde_json::to_string_pretty(&json).expect("results serialise") + "\n").as_bytes())?;
    }
    Ok(if rows.iter().all(|(_, r)| r.passed()) { 0 } else { 1 })
}
