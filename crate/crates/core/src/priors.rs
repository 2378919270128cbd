//! Gaussian symmetry priors. Each prior block governs a set of parameter
//! tensors with a shared precision `alpha = exp(rho)`; the hyperparameter
//! vector is the list of block `rho` values.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{BranchKind, Network, ParamRole};
use crate::math;
use crate::tensor::Tensor;

/// Range `rho` is clamped to during hyperparameter updates.
pub const RHO_CLAMP: f64 = 16.0;

/// Where a branch's prior sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PriorPlacement {
    /// On the weights. For S branches the weights are the anchor values.
    OnWeights,
    /// On the anchor values of an S branch.
    OnAnchorValues,
    /// On the lengthscales of an S branch.
    OnLengthscales,
}

/// What a block's vector `v` consists of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockTarget {
    Weights,
    AnchorValues,
    Lengthscales,
}

/// One Gaussian prior block `N(v | 0, exp(-rho) I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorBlock {
    /// `l{layer}.{tag}`, with an `.omega` suffix for lengthscale blocks.
    pub name: String,
    pub layer: usize,
    pub branch: usize,
    pub kind: BranchKind,
    pub target: BlockTarget,
    /// Governed parameter tensors, by index into the network's list.
    pub tensors: Vec<usize>,
    pub rho: f64,
}

impl PriorBlock {
    pub fn alpha(&self) -> f64 {
        math::exp(self.rho)
    }

    /// Number of governed scalars `P_b`.
    pub fn size(&self, params: &[Tensor]) -> usize {
        self.tensors.iter().map(|&i| params[i].len()).sum()
    }

    /// Squared norm of the governed vector.
    pub fn sq_norm(&self, params: &[Tensor]) -> f64 {
        self.tensors.iter().map(|&i| params[i].sq_norm()).sum()
    }
}

/// Placement and initial `rho` for one branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorSpec {
    pub placement: PriorPlacement,
    pub rho: f64,
}

/// All prior blocks of a network plus the reverse map from parameter
/// tensor to block.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig {
    pub blocks: Vec<PriorBlock>,
    owner: Vec<usize>,
}

impl PriorConfig {
    /// Build blocks from a per-branch choice. Errors if a placement does
    /// not fit its branch or if any tensor ends up ungoverned.
    pub fn build(net: &Network, mut spec: impl FnMut(usize, BranchKind) -> PriorSpec) -> Result<Self> {
        let roles = net.param_roles();
        let mut blocks = Vec::new();
        for (l, layer) in net.layers.iter().enumerate() {
            for (bi, br) in layer.branches.iter().enumerate() {
                let kind = br.spec.kind;
                let s = spec(l, kind);
                if !s.rho.is_finite() {
                    return Err(Error::InvalidArgument(format!("l{l}.{}: non-finite prior rho", kind.tag())));
                }
                if s.placement != PriorPlacement::OnWeights && !kind.is_sparse() {
                    return Err(Error::InvalidArgument(format!(
                        "l{l}.{}: {:?} needs an S branch",
                        kind.tag(),
                        s.placement
                    )));
                }
                let slots: Vec<usize> = br.slots.clone().collect();
                let name = format!("l{l}.{}", kind.tag());
                let block = |name: String, target, tensors| PriorBlock {
                    name,
                    layer: l,
                    branch: bi,
                    kind,
                    target,
                    tensors,
                    rho: s.rho,
                };
                if !kind.is_sparse() {
                    blocks.push(block(name, BlockTarget::Weights, slots));
                } else if s.placement == PriorPlacement::OnLengthscales {
                    let (omega, rest): (Vec<usize>, Vec<usize>) =
                        slots.into_iter().partition(|&i| roles[i] == ParamRole::Lengthscale);
                    blocks.push(block(name.clone(), BlockTarget::AnchorValues, rest));
                    blocks.push(block(format!("{name}.omega"), BlockTarget::Lengthscales, omega));
                } else {
                    blocks.push(block(name, BlockTarget::AnchorValues, slots));
                }
            }
        }
        let mut owner = vec![usize::MAX; net.param_names().len()];
        for (b, block) in blocks.iter().enumerate() {
            for &t in &block.tensors {
                if owner[t] != usize::MAX {
                    return Err(Error::Ungoverned(format!("{} governed twice", net.param_names()[t])));
                }
                owner[t] = b;
            }
        }
        if let Some(t) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::Ungoverned(format!("{} has no prior block", net.param_names()[t])));
        }
        Ok(PriorConfig { blocks, owner })
    }

    /// The same placement and `rho` on every branch. S-only placements fall
    /// back to weights on branches that have no anchors.
    pub fn uniform(net: &Network, placement: PriorPlacement, rho: f64) -> Result<Self> {
        PriorConfig::build(net, |_, kind| PriorSpec {
            placement: if kind.is_sparse() { placement } else { PriorPlacement::OnWeights },
            rho,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block governing parameter tensor `param`.
    pub fn owner(&self, param: usize) -> usize {
        self.owner[param]
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.rho).collect()
    }

    pub fn set_rhos(&mut self, rhos: &[f64]) -> Result<()> {
        if rhos.len() != self.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} rho values, got {}",
                self.blocks.len(),
                rhos.len()
            )));
        }
        if rhos.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("prior rho".into()));
        }
        for (b, &r) in self.blocks.iter_mut().zip(rhos) {
            b.rho = r;
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name.clone()).collect()
    }

    /// Check that the blocks cover exactly the parameter list of `params`.
    pub fn check_coverage(&self, params: &[Tensor]) -> Result<()> {
        if self.owner.len() != params.len() {
            return Err(Error::Ungoverned(format!(
                "prior covers {} tensors but the network has {}",
                self.owner.len(),
                params.len()
            )));
        }
        Ok(())
    }
}

/// `log p(theta)` and the per-block squared norms.
pub fn log_prior(params: &[Tensor], prior: &PriorConfig) -> Result<(f64, Vec<f64>)> {
    prior.check_coverage(params)?;
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut total = 0.0;
    let mut norms = Vec::with_capacity(prior.len());
    for b in &prior.blocks {
        let v2 = b.sq_norm(params);
        let p = b.size(params) as f64;
        total += -0.5 * b.alpha() * v2 - 0.5 * p * (math::ln(two_pi) - b.rho);
        norms.push(v2);
    }
    Ok((total, norms))
}

/// Gradient of `log p(theta)`: `-alpha v` on governed tensors, in
/// parameter order.
pub fn grad_log_prior(params: &[Tensor], prior: &PriorConfig) -> Result<Vec<Tensor>> {
    prior.check_coverage(params)?;
    Ok(params.iter().enumerate().map(|(i, p)| p.scale(-prior.blocks[prior.owner(i)].alpha())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{build_network, FeatureShape, LayerPlan};

    fn net(menu: &[BranchKind]) -> Network {
        let plan = LayerPlan { out_channels: 2, filter: 3, menu: menu.to_vec(), pool: false, relu: false };
        build_network(FeatureShape::new(1, 1, 4, 4), &[plan], 2).unwrap()
    }

    fn one_param(v: f64) -> (Vec<Tensor>, PriorConfig) {
        let plan = LayerPlan { out_channels: 1, filter: 1, menu: vec![BranchKind::Conv], pool: false, relu: false };
        let n = build_network(FeatureShape::new(1, 1, 1, 1), &[plan], 1).unwrap();
        let cfg = PriorConfig::uniform(&n, PriorPlacement::OnWeights, 0.0).unwrap();
        let p = vec![Tensor::full(&[1, 1], v)];
        (p, cfg)
    }

    #[test]
    fn standard_normal_values() {
        let half_log_2pi = 0.5 * math::ln(2.0 * core::f64::consts::PI);
        let (p, cfg) = one_param(0.0);
        assert!((log_prior(&p, &cfg).unwrap().0 + half_log_2pi).abs() < 1e-15);
        let (p, cfg) = one_param(2.0);
        let (lp, norms) = log_prior(&p, &cfg).unwrap();
        assert!((lp - (-2.0 - half_log_2pi)).abs() < 1e-15);
        assert_eq!(norms, vec![4.0]);
    }

    #[test]
    fn derivative_in_rho_matches_finite_difference() {
        let n = net(&[BranchKind::Fc, BranchKind::Conv]);
        let params = n.init(1);
        let mut cfg = PriorConfig::uniform(&n, PriorPlacement::OnWeights, 0.3).unwrap();
        let (_, norms) = log_prior(&params, &cfg).unwrap();
        let b = &cfg.blocks[0];
        let analytic = -0.5 * b.alpha() * norms[0] + 0.5 * b.size(&params) as f64;
        let h = 1e-5;
        let mut eval = |r: f64| {
            let mut rhos = cfg.rhos();
            rhos[0] = r;
            cfg.set_rhos(&rhos).unwrap();
            log_prior(&params, &cfg).unwrap().0
        };
        let fd = (eval(0.3 + h) - eval(0.3 - h)) / (2.0 * h);
        assert!((fd - analytic).abs() < 1e-6 * analytic.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let n = net(&[BranchKind::Ffc, BranchKind::Sconv]);
        let params = n.init(2);
        let mut cfg = PriorConfig::uniform(&n, PriorPlacement::OnWeights, 0.0).unwrap();
        cfg.set_rhos(&[0.5, -1.0]).unwrap();
        let g = grad_log_prior(&params, &cfg).unwrap();
        let h = 1e-6;
        for t in 0..params.len() {
            for i in 0..params[t].len() {
                let mut p = params.clone();
                p[t].data_mut()[i] += h;
                let up = log_prior(&p, &cfg).unwrap().0;
                p[t].data_mut()[i] -= 2.0 * h;
                let down = log_prior(&p, &cfg).unwrap().0;
                let fd = (up - down) / (2.0 * h);
                let a = g[t].data()[i];
                assert!((fd - a).abs() <= 1e-8 * a.abs().max(1.0), "{t}/{i}: {fd} vs {a}");
            }
        }
    }

    #[test]
    fn zero_vector_zero_precision() {
        let n = net(&[BranchKind::Conv]);
        let params: Vec<Tensor> = n.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        let cfg = PriorConfig::uniform(&n, PriorPlacement::OnWeights, 0.0).unwrap();
        assert_eq!(grad_log_prior(&params, &cfg).unwrap()[0].max_abs(), 0.0);
        let params = n.init(3);
        let cfg = PriorConfig::uniform(&n, PriorPlacement::OnWeights, -RHO_CLAMP * 50.0).unwrap();
        assert!(grad_log_prior(&params, &cfg).unwrap()[0].max_abs() < 1e-100);
    }

    #[test]
    fn placements_cover_every_tensor() {
        let n = net(&[BranchKind::Conv, BranchKind::Sfc, BranchKind::Sconv]);
        for placement in [PriorPlacement::OnWeights, PriorPlacement::OnAnchorValues, PriorPlacement::OnLengthscales] {
            let cfg = PriorConfig::uniform(&n, placement, 0.0).unwrap();
            let mut seen = vec![0; n.param_names().len()];
            for b in &cfg.blocks {
                for &t in &b.tensors {
                    seen[t] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
            let expect = if placement == PriorPlacement::OnLengthscales { 5 } else { 3 };
            assert_eq!(cfg.len(), expect);
        }
        let cfg = PriorConfig::uniform(&n, PriorPlacement::OnLengthscales, 0.0).unwrap();
        let omega = cfg.blocks.iter().find(|b| b.name == "l0.sfc.omega").unwrap();
        assert_eq!(omega.target, BlockTarget::Lengthscales);
        assert_eq!(omega.tensors.len(), 2);
    }

    #[test]
    fn anchor_placement_on_dense_branch_is_rejected() {
        let n = net(&[BranchKind::Fc]);
        let r = PriorConfig::build(&n, |_, _| PriorSpec { placement: PriorPlacement::OnAnchorValues, rho: 0.0 });
        assert!(r.is_err());
    }

    #[test]
    fn mismatched_parameter_list_is_ungoverned() {
        let n = net(&[BranchKind::Conv]);
        let cfg = PriorConfig::uniform(&n, PriorPlacement::OnWeights, 0.0).unwrap();
        let mut params = n.init(0);
        params.push(Tensor::zeros(&[1]));
        assert!(matches!(log_prior(&params, &cfg), Err(Error::Ungoverned(_))));
    }
}
