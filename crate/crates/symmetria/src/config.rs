//! Experiment configuration: one JSON document with every setting a run
//! needs. Unknown keys are rejected and values are checked before any
//! compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use symmetria_core::data::TaskSpec;
use symmetria_core::layers::{build_architecture, build_compact, BranchKind, Network};
use symmetria_core::math;
use symmetria_core::priors::{PriorConfig, PriorPlacement, PriorSpec};
use symmetria_core::training::{Mode, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub data: DataConfig,
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub train: TrainConfig,
    pub mode: Mode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Split sizes for generated data, or IDX files to load instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_size: usize,
    pub test_size: usize,
    /// Seed of the generated test split; defaults to the task seed plus
    /// one million.
    pub test_seed: Option<u64>,
    pub idx: Option<IdxFiles>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train_size: 4000, test_size: 1000, test_seed: None, idx: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// Two pooled 3x3 layers of widths `a, 2a` and a 1x1 classifier.
    Compact,
    /// Ten layers: eight 3x3 layers up to width `16a`, then 1x1 layers.
    Deep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    #[serde(default = "default_template")]
    pub template: Template,
    pub width: usize,
    /// Input grid side; must match the data when given.
    #[serde(default)]
    pub spatial: Option<usize>,
    /// One branch menu for every layer, or one menu per layer.
    pub menus: Vec<Vec<BranchKind>>,
}

fn default_template() -> Template {
    Template::Compact
}

/// Initial prior: a standard deviation per branch, with optional
/// overrides by branch kind. Placement only applies to sparse branches;
/// dense branches always place the prior on their weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub placement: PriorPlacement,
    pub sigma: f64,
    pub branches: Vec<BranchPrior>,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection { placement: PriorPlacement::OnWeights, sigma: 1.0, branches: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchPrior {
    pub kind: BranchKind,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub placement: Option<PriorPlacement>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Pretty JSON of every field, defaults included.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(bytes).into()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        if self.task.base_classes == 0 {
            return bad("task.base_classes must be positive".into());
        }
        if self.data.idx.is_none() && (self.data.train_size == 0 || self.data.test_size == 0) {
            return bad("data.train_size and data.test_size must be positive".into());
        }
        let a = &self.architecture;
        if a.width == 0 {
            return bad("architecture.width must be positive".into());
        }
        let layers = match a.template {
            Template::Compact => 3,
            Template::Deep => 10,
        };
        if a.menus.len() != 1 && a.menus.len() != layers {
            return bad(format!("architecture.menus: expected 1 or {layers} menus, got {}", a.menus.len()));
        }
        if a.menus.iter().any(|m| m.is_empty()) {
            return bad("architecture.menus: empty menu".into());
        }
        if self.data.idx.is_none() {
            let [h, w] = self.task.canvas;
            if h != w {
                return bad(format!("task.canvas must be square, got {h}x{w}"));
            }
            if let Some(s) = a.spatial {
                if s != h {
                    return bad(format!("architecture.spatial {s} does not match canvas {h}"));
                }
            }
        }
        let sigmas = std::iter::once(self.prior.sigma).chain(self.prior.branches.iter().filter_map(|b| b.sigma));
        for s in sigmas {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("prior sigma must be positive and finite, got {s}"));
            }
        }
        for (i, b) in self.prior.branches.iter().enumerate() {
            if self.prior.branches[..i].iter().any(|o| o.kind == b.kind) {
                return bad(format!("prior.branches lists {} twice", b.kind));
            }
        }
        Ok(())
    }

    pub fn build_network(&self, spatial: usize, in_channels: usize, classes: usize) -> Result<Network> {
        let a = &self.architecture;
        if let Some(s) = a.spatial {
            if s != spatial {
                return Err(CliError::Config(format!("architecture.spatial {s} does not match data {spatial}")));
            }
        }
        let net = match a.template {
            Template::Compact => build_compact(a.width, spatial, in_channels, classes, &a.menus),
            Template::Deep => build_architecture(a.width, spatial, in_channels, classes, &a.menus),
        };
        net.map_err(|e| CliError::Config(format!("architecture: {e}")))
    }

    /// Prior blocks at their initial log-precisions `-2 ln sigma`.
    pub fn build_prior(&self, net: &Network) -> Result<PriorConfig> {
        let p = &self.prior;
        let prior = PriorConfig::build(net, |_, kind| {
            let o = p.branches.iter().find(|b| b.kind == kind);
            let sigma = o.and_then(|b| b.sigma).unwrap_or(p.sigma);
            let placement = o.and_then(|b| b.placement).unwrap_or(p.placement);
            PriorSpec {
                placement: if kind.is_sparse() { placement } else { PriorPlacement::OnWeights },
                rho: -2.0 * math::ln(sigma),
            }
        });
        prior.map_err(|e| CliError::Config(format!("prior: {e}")))
    }
}
