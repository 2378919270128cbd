//! Per-layer symmetry report: learned precisions, weight norms and
//! effective parameter shares, with the layer type inferred as the branch
//! holding the largest relative share.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::laplace::EffectiveParamsReport;
use crate::layers::{BranchKind, Network};
use crate::math;
use crate::priors::{BlockTarget, PriorConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BranchReport {
    pub kind: BranchKind,
    /// Precision of the block on the weights or anchor values.
    pub precision: f64,
    /// Precision of the lengthscale block, when there is one.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub lengthscale_precision: Option<f64>,
    /// Squared norm of all of the branch's parameters.
    pub sq_norm: f64,
    pub gamma: f64,
    pub params: usize,
    /// `gamma / P`.
    pub normalised: f64,
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerReport {
    pub layer: usize,
    pub branches: Vec<BranchReport>,
    pub inferred: BranchKind,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SymmetryReport {
    pub layers: Vec<LayerReport>,
}

/// Branch with the largest share; ties go to the first listed.
pub fn infer_type(branches: &[BranchReport]) -> Option<BranchKind> {
    let best = (0..branches.len()).reduce(|b, j| if branches[j].share > branches[b].share { j } else { b })?;
    Some(branches[best].kind)
}

impl SymmetryReport {
    pub fn build(net: &Network, params: &[Tensor], prior: &PriorConfig, eff: &EffectiveParamsReport) -> Self {
        let layers = net
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let branches: Vec<BranchReport> = layer
                    .branches
                    .iter()
                    .enumerate()
                    .map(|(bi, br)| {
                        let e = &eff.layers[l].branches[bi];
                        let mut precision = f64::NAN;
                        let mut lengthscale_precision = None;
                        for blk in prior.blocks.iter().filter(|b| b.layer == l && b.branch == bi) {
                            if blk.target == BlockTarget::Lengthscales {
                                lengthscale_precision = Some(blk.alpha());
                            } else {
                                precision = blk.alpha();
                            }
                        }
                        BranchReport {
                            kind: br.spec.kind,
                            precision,
                            lengthscale_precision,
                            sq_norm: br.slots.clone().map(|i| params[i].sq_norm()).sum(),
                            gamma: e.gamma,
                            params: e.params,
                            normalised: e.normalised,
                            share: e.share,
                        }
                    })
                    .collect();
                let inferred = infer_type(&branches).expect("layers have branches");
                LayerReport { layer: l, branches, inferred }
            })
            .collect();
        SymmetryReport { layers }
    }

    /// Inferred type per layer.
    pub fn types(&self) -> Vec<BranchKind> {
        self.layers.iter().map(|l| l.inferred).collect()
    }

    /// Check that each layer's shares sum to one and its inferred type is
    /// the argmax.
    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            let total: f64 = l.branches.iter().map(|b| b.share).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("layer {}: shares sum to {total}", l.layer)));
            }
            if infer_type(&l.branches) != Some(l.inferred) {
                return Err(Error::InvalidArgument(format!("layer {}: inferred type is not the argmax", l.layer)));
            }
        }
        Ok(())
    }

    /// Fixed-width text table, one row per branch.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>5} {:>6} {:>12} {:>12} {:>12} {:>10} {:>10} {:>10}  type",
            "layer", "branch", "precision", "log10 prec", "sq_norm", "gamma", "gamma/P", "share"
        );
        for l in &self.layers {
            for (i, b) in l.branches.iter().enumerate() {
                let ty = if i == 0 { l.inferred.name() } else { "" };
                let _ = writeln!(
                    out,
                    "{:>5} {:>6} {:>12.4e} {:>12.3} {:>12.4e} {:>10.3} {:>10.2e} {:>10.6}  {}",
                    l.layer,
                    b.kind.name(),
                    b.precision,
                    math::ln(b.precision) / core::f64::consts::LN_10,
                    b.sq_norm,
                    b.gamma,
                    b.normalised,
                    b.share,
                    ty
                );
            }
        }
        out
    }
}

/// Reference FC+CONV report of a CIFAR-10 run: precisions,
/// weight norms, `gamma/P` and shares per layer. Parameter counts were not
/// reported, so `params` is 1 and `gamma` holds `gamma/P`.
pub fn cifar_reference_report() -> SymmetryReport {
    #[rustfmt::skip]
    const ROWS: [[f64; 8]; 8] = [
        [3588348.5, 0.07513507, 0.0, 10.74257360, 0.00000002, 0.80731778, 0.00000003, 0.99999997],
        [2750749.5, 1.26366782, 0.0, 0.55490241, 0.00000007, 0.70107951, 0.00000010, 0.99999990],
        [5898884.5, 14.50690365, 0.0, 0.04562404, 0.00000014, 0.66181451, 0.00000021, 0.99999979],
        [22690960.0, 230.75096130, 0.0, 0.00216724, 0.00000089, 0.50004517, 0.00000178, 0.99999822],
        [29633508.0, 5438.10449219, 0.0, 0.00007521, 0.00000772, 0.40905216, 0.00001888, 0.99998112],
        [35631228.0, 3797.48779297, 0.0, 0.00003772, 0.00000379, 0.14326709, 0.00002643, 0.99997357],
        [635.57513428, 31321916.0, 0.00001135, 0.0, 0.00721232, 0.00000522, 0.99927627, 0.00072373],
        [35582056.0, 1.75766361, 0.0, 0.00259477, 0.00000009, 0.00456014, 0.00001874, 0.99998126],
    ];
    let layers = ROWS
        .iter()
        .enumerate()
        .map(|(l, r)| {
            let branch = |kind, precision, sq_norm, normalised, share| BranchReport {
                kind,
                precision,
                lengthscale_precision: None,
                sq_norm,
                gamma: normalised,
                params: 1,
                normalised,
                share,
            };
            let branches = alloc::vec![
                branch(BranchKind::Fc, r[0], r[2], r[4], r[6]),
                branch(BranchKind::Conv, r[1], r[3], r[5], r[7]),
            ];
            let inferred = infer_type(&branches).expect("two branches");
            LayerReport { layer: l, branches, inferred }
        })
        .collect();
    SymmetryReport { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::collect_kfac;
    use crate::laplace::{effective_params, marglik};
    use crate::layers::{build_network, FeatureShape, LayerPlan};
    use crate::parallel::Sequential;
    use crate::priors::PriorPlacement;
    use alloc::vec;

    #[test]
    fn cifar_reference_types() {
        let r = cifar_reference_report();
        r.validate().unwrap();
        let c = BranchKind::Conv;
        assert_eq!(r.types(), vec![c, c, c, c, c, c, BranchKind::Fc, c]);
    }

    #[test]
    fn high_fc_precision_reads_as_conv() {
        let plan = LayerPlan {
            out_channels: 2,
            filter: 3,
            menu: vec![BranchKind::Fc, BranchKind::Conv, BranchKind::Sconv],
            pool: false,
            relu: false,
        };
        let net = build_network(FeatureShape::new(1, 1, 3, 3), &[plan], 2).unwrap();
        let params = net.init(1);
        let mut prior = PriorConfig::uniform(&net, PriorPlacement::OnLengthscales, 0.0).unwrap();
        let rhos: Vec<f64> = prior
            .blocks
            .iter()
            .map(|b| if b.kind == BranchKind::Fc { math::ln(1e7) } else { math::ln(10.0) })
            .collect();
        prior.set_rhos(&rhos).unwrap();
        let xs = Tensor::from_fn(&[6, 1, 3, 3], |i| ((i[0] * 7 + i[2] * 3 + i[3]) % 5) as f64 - 2.0);
        let ys = vec![0, 1, 0, 1, 1, 0];
        let blocks = collect_kfac(&net, &params, &xs, 4, &Sequential).unwrap();
        let (_, state) = marglik(&net, &params, &xs, &ys, &prior, &blocks, 4, &Sequential).unwrap();
        let report = SymmetryReport::build(&net, &params, &prior, &effective_params(&state, &prior, &net));
        report.validate().unwrap();
        assert_ne!(report.layers[0].inferred, BranchKind::Fc);
        let s = &report.layers[0].branches[2];
        assert_eq!(s.lengthscale_precision.map(|p| (p - 10.0).abs() < 1e-9), Some(true));
        assert!(report.table().lines().count() == 4);
    }
}
