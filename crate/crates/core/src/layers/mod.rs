//! The pathway layer zoo: FC, F-FC, S-FC, CONV, S-CONV, GCONV and PGCONV
//! branches summed into pathway layers, polyphase pooling, and the
//! architecture builder.
//!
//! Feature maps are `B x C x O x H x W` where `O` is the rotation fibre
//! (1 for planar features, 4 on p4). Planar branches fold the fibre into
//! channels; group branches keep it.

pub mod basis;
mod index;
mod network;
mod ops;
mod pool;
mod residual;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{GatherIndex, NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use basis::materialize_filter;
pub use basis::BasisConfig;
pub use network::{
    build_architecture, build_compact, build_network, BranchTrace, Layer, LayerPlan, LayerTrace, Network, PoolKind,
    Trace,
};
pub use ops::{conv_forward, fc_forward, ffc_forward, gconv_forward, pgconv_forward, sconv_forward, sfc_forward};
pub use pool::{polyphase_index, polyphase_pool, select_components, selection_margin};
pub use residual::{decompose_residual, residue_filter_to_conv, stationary_embedding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BranchKind {
    #[cfg_attr(feature = "serde", serde(rename = "FC"))]
    Fc,
    #[cfg_attr(feature = "serde", serde(rename = "FFC"))]
    Ffc,
    #[cfg_attr(feature = "serde", serde(rename = "SFC"))]
    Sfc,
    #[cfg_attr(feature = "serde", serde(rename = "CONV"))]
    Conv,
    #[cfg_attr(feature = "serde", serde(rename = "SCONV"))]
    Sconv,
    #[cfg_attr(feature = "serde", serde(rename = "GCONV"))]
    Gconv,
    #[cfg_attr(feature = "serde", serde(rename = "PGCONV"))]
    Pgconv,
}

impl BranchKind {
    pub const ALL: [BranchKind; 7] = [
        BranchKind::Fc,
        BranchKind::Ffc,
        BranchKind::Sfc,
        BranchKind::Conv,
        BranchKind::Sconv,
        BranchKind::Gconv,
        BranchKind::Pgconv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BranchKind::Fc => "FC",
            BranchKind::Ffc => "FFC",
            BranchKind::Sfc => "SFC",
            BranchKind::Conv => "CONV",
            BranchKind::Sconv => "SCONV",
            BranchKind::Gconv => "GCONV",
            BranchKind::Pgconv => "PGCONV",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    pub fn tag(self) -> &'static str {
        match self {
            BranchKind::Fc => "fc",
            BranchKind::Ffc => "ffc",
            BranchKind::Sfc => "sfc",
            BranchKind::Conv => "conv",
            BranchKind::Sconv => "sconv",
            BranchKind::Gconv => "gconv",
            BranchKind::Pgconv => "pgconv",
        }
    }

    /// Translation-equivariant (or p4-equivariant) by construction.
    pub fn is_equivariant(self) -> bool {
        matches!(self, BranchKind::Conv | BranchKind::Sconv | BranchKind::Gconv | BranchKind::Pgconv)
    }

    /// Parameterised through anchor points.
    pub fn is_sparse(self) -> bool {
        matches!(self, BranchKind::Sfc | BranchKind::Sconv)
    }

    /// Acts on the p4 rotation fibre.
    pub fn is_group(self) -> bool {
        matches!(self, BranchKind::Gconv | BranchKind::Pgconv)
    }

    /// Uses a local filter of size `S`.
    pub fn has_filter(self) -> bool {
        matches!(self, BranchKind::Conv | BranchKind::Sconv | BranchKind::Gconv | BranchKind::Pgconv)
    }
}

impl core::fmt::Display for BranchKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape of one sample's feature map: `C x O x H x W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureShape {
    pub channels: usize,
    pub fibre: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub fn new(channels: usize, fibre: usize, height: usize, width: usize) -> Self {
        Self { channels, fibre, height, width }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.fibre * self.height * self.width
    }

    pub fn hw(&self) -> usize {
        self.height * self.width
    }

    /// Channels with the fibre folded in.
    pub fn folded(&self) -> usize {
        self.channels * self.fibre
    }

    pub fn batch_shape(&self, b: usize) -> [usize; 5] {
        [b, self.channels, self.fibre, self.height, self.width]
    }
}

/// Role of one parameter tensor inside its branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    /// Dense or filter weights (`w`, `w1`, `w2`).
    Weights,
    /// Anchor values `u`, `u1`, `u2`.
    AnchorValues,
    /// Anchor locations `z`, `z1`, `z2`.
    AnchorLocations,
    /// Lengthscales `omega`, `omega1`, `omega2`.
    Lengthscale,
}

/// One branch of a pathway layer: kind plus input/output shapes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchSpec {
    pub kind: BranchKind,
    pub input: FeatureShape,
    pub output: FeatureShape,
    /// Filter size `S` (odd) for filter kinds; ignored otherwise.
    pub filter: usize,
    /// Anchor counts: `[M]` for S-CONV, `[M1, M2]` (output side, input side)
    /// for S-FC; empty otherwise.
    pub anchors: Vec<usize>,
}

fn ceil_half(n: usize) -> usize {
    n.div_ceil(2)
}

impl BranchSpec {
    /// Validated spec with default anchor counts (half the dense count per
    /// channel pair, rounded up) when `anchors` is `None`.
    pub fn new(
        kind: BranchKind,
        input: FeatureShape,
        out_channels: usize,
        out_fibre: usize,
        filter: usize,
        anchors: Option<Vec<usize>>,
    ) -> Result<Self> {
        let bad = |reason: String| Error::InvalidShape {
            op: "BranchSpec",
            shape: vec![input.channels, input.fibre, input.height, input.width],
            reason,
        };
        if input.numel() == 0 || out_channels == 0 {
            return Err(bad("empty feature shape".into()));
        }
        if input.fibre != 1 && input.fibre != 4 {
            return Err(bad(alloc::format!("fibre must be 1 or 4, got {}", input.fibre)));
        }
        if out_fibre != 1 && out_fibre != 4 {
            return Err(bad(alloc::format!("output fibre must be 1 or 4, got {out_fibre}")));
        }
        // filters wider than the grid wrap around the torus (aliased offsets
        // sum); bounded so every offset aliases at most twice per axis
        let extent = input.height.min(input.width);
        if kind.has_filter() && (filter.is_multiple_of(2) || filter > 2 * extent + 1) {
            return Err(bad(alloc::format!("filter size {filter} must be odd and at most {}", 2 * extent + 1)));
        }
        if kind.is_group() {
            if input.height != input.width {
                return Err(bad("group branches need a square grid".into()));
            }
            if out_fibre != 4 {
                return Err(bad("group branches output a fibre of 4".into()));
            }
        }
        let anchors = match kind {
            BranchKind::Sconv => anchors.unwrap_or_else(|| vec![ceil_half(filter * filter)]),
            BranchKind::Sfc => anchors.unwrap_or_else(|| vec![ceil_half(input.hw()); 2]),
            _ => Vec::new(),
        };
        let want = match kind {
            BranchKind::Sconv => 1,
            BranchKind::Sfc => 2,
            _ => 0,
        };
        if anchors.len() != want || anchors.contains(&0) {
            return Err(bad(alloc::format!("{kind} needs {want} positive anchor counts")));
        }
        let output = FeatureShape::new(out_channels, out_fibre, input.height, input.width);
        Ok(Self { kind, input, output, filter: if kind.has_filter() { filter } else { 1 }, anchors })
    }

    /// Flattened im2col column count for filter kinds.
    pub fn patch_dim(&self) -> usize {
        let s2 = self.filter * self.filter;
        match self.kind {
            BranchKind::Conv | BranchKind::Sconv => self.input.folded() * s2,
            BranchKind::Gconv => self.input.channels * self.input.fibre * s2,
            BranchKind::Pgconv => self.input.channels * s2,
            _ => 0,
        }
    }

    /// Number of output positions per sample for filter kinds.
    pub fn positions(&self) -> usize {
        match self.kind {
            BranchKind::Gconv | BranchKind::Pgconv => 4 * self.output.hw(),
            _ => self.output.hw(),
        }
    }

    /// Output channels seen by the filter: folded for planar kinds.
    pub fn filter_out(&self) -> usize {
        if self.kind.is_group() {
            self.output.channels
        } else {
            self.output.folded()
        }
    }

    /// Named parameter tensors with their shapes and roles.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>, ParamRole)> {
        let (df, cf) = (self.output.folded(), self.input.folded());
        let (h, w, s) = (self.input.height, self.input.width, self.filter);
        use ParamRole::*;
        match self.kind {
            BranchKind::Fc => vec![("w", vec![df, cf, h, w, h, w], Weights)],
            BranchKind::Ffc => vec![("w1", vec![df, cf, h, w], Weights), ("w2", vec![df, cf, h, w], Weights)],
            BranchKind::Sfc => {
                let (m1, m2) = (self.anchors[0], self.anchors[1]);
                vec![
                    ("u1", vec![df, cf, m1], AnchorValues),
                    ("z1", vec![m1, 2], AnchorLocations),
                    ("omega1", vec![1], Lengthscale),
                    ("u2", vec![df, cf, m2], AnchorValues),
                    ("z2", vec![m2, 2], AnchorLocations),
                    ("omega2", vec![1], Lengthscale),
                ]
            }
            BranchKind::Conv => vec![("w", vec![df, cf, s, s], Weights)],
            BranchKind::Sconv => {
                let m = self.anchors[0];
                vec![
                    ("u", vec![df, cf, m], AnchorValues),
                    ("z", vec![m, 2], AnchorLocations),
                    ("omega", vec![1], Lengthscale),
                ]
            }
            BranchKind::Gconv => {
                vec![("w", vec![self.output.channels, self.input.channels, self.input.fibre, s, s], Weights)]
            }
            BranchKind::Pgconv => vec![("w", vec![self.output.channels, self.input.channels, s, s], Weights)],
        }
    }

    /// Total trainable scalars, lengthscales included.
    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }

    /// Parameter count in closed form: `C'C H^2 W^2` (FC), `2 C'C H W`
    /// (F-FC), `C'C M + 2M` per basis (S-variants, lengthscales excluded),
    /// `C'C S^2` (CONV), `C'C O S^2` (GCONV), `C'C S^2` (PGCONV).
    pub fn closed_form_count(&self) -> usize {
        let (df, cf) = (self.output.folded(), self.input.folded());
        let (hw, s2) = (self.input.hw(), self.filter * self.filter);
        match self.kind {
            BranchKind::Fc => df * cf * hw * hw,
            BranchKind::Ffc => 2 * df * cf * hw,
            BranchKind::Sfc | BranchKind::Sconv => self.anchors.iter().map(|&m| df * cf * m + 2 * m).sum(),
            BranchKind::Conv => df * cf * s2,
            BranchKind::Gconv => self.output.channels * self.input.channels * self.input.fibre * s2,
            BranchKind::Pgconv => self.output.channels * self.input.channels * s2,
        }
    }

    /// Fan-in of the (induced) dense weights.
    fn fan_in(&self) -> usize {
        match self.kind {
            BranchKind::Fc | BranchKind::Ffc | BranchKind::Sfc => self.input.folded() * self.input.hw(),
            _ => self.patch_dim(),
        }
    }

    /// Coordinates of the basis domain(s): filter offsets for S-CONV,
    /// the output grid then the input grid for S-FC.
    pub fn domains(&self) -> Vec<Tensor> {
        match self.kind {
            BranchKind::Sconv => vec![basis::offset_domain(self.filter)],
            BranchKind::Sfc => {
                let g = basis::grid_domain(self.input.height, self.input.width);
                vec![g.clone(), g]
            }
            _ => Vec::new(),
        }
    }

    /// Initial parameter values. Weights are `N(0, 1/fan_in)`; factored
    /// kinds split the variance as `1/C` (output side) and `1/HW` (input
    /// side); anchors start on an even subgrid with jitter; lengthscales
    /// start at 1.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor> {
        let domains = self.domains();
        let cf = self.input.folded() as f64;
        let hw = self.input.hw() as f64;
        let fan_in = self.fan_in() as f64;
        let mut basis_ix = 0;
        let mut out = Vec::new();
        for (name, shape, role) in self.param_shapes() {
            let t = match (self.kind, role) {
                (BranchKind::Ffc, ParamRole::Weights) | (BranchKind::Sfc, ParamRole::AnchorValues) => {
                    gaussian(rng, &shape, if name.ends_with('1') { 1.0 / cf } else { 1.0 / hw })
                }
                (_, ParamRole::Weights) | (_, ParamRole::AnchorValues) => gaussian(rng, &shape, 1.0 / fan_in),
                (_, ParamRole::AnchorLocations) => {
                    let z = basis::init_anchor_locations(&domains[basis_ix], shape[0], || {
                        (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))
                    });
                    basis_ix += 1;
                    z
                }
                (_, ParamRole::Lengthscale) => Tensor::full(&shape, 1.0),
            };
            out.push(t);
        }
        out
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], var: f64) -> Tensor {
    let sd = crate::math::sqrt(var);
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

/// A branch with its precomputed index maps.
#[derive(Clone, Debug)]
pub struct Branch {
    pub spec: BranchSpec,
    patches: Option<GatherIndex>,
    domains: Vec<Tensor>,
    /// Range of this branch's tensors in the network parameter list.
    pub slots: core::ops::Range<usize>,
}

impl Branch {
    pub fn new(spec: BranchSpec, first_slot: usize) -> Self {
        let i = spec.input;
        let patches = match spec.kind {
            BranchKind::Conv | BranchKind::Sconv => {
                Some(index::conv_patches(i.folded(), i.height, i.width, spec.filter))
            }
            BranchKind::Gconv => Some(index::group_patches(i.channels, i.fibre, i.height, spec.filter, false)),
            BranchKind::Pgconv => Some(index::group_patches(i.channels, i.fibre, i.height, spec.filter, true)),
            _ => None,
        };
        let domains = spec.domains();
        let n = spec.param_shapes().len();
        Self { spec, patches, domains, slots: first_slot..first_slot + n }
    }

    pub fn domains(&self) -> &[Tensor] {
        &self.domains
    }

    pub fn patch_index(&self) -> Option<&GatherIndex> {
        self.patches.as_ref()
    }

    /// Record the branch on the tape. `x` is `B x C x O x H x W`; `p` holds
    /// this branch's parameter nodes in `param_shapes` order.
    pub fn forward(&self, tape: &mut Tape, x: NodeId, p: &[NodeId]) -> Result<BranchTrace> {
        let spec = &self.spec;
        let xs = tape.value(x).shape().to_vec();
        let want = spec.input.batch_shape(xs[0]);
        if xs != want {
            return Err(Error::ShapeMismatch { op: spec.kind.name(), left: xs, right: want.to_vec() });
        }
        let b = xs[0];
        let (cf, df, hw) = (spec.input.folded(), spec.output.folded(), spec.input.hw());
        let out_shape = spec.output.batch_shape(b);
        let mut trace = BranchTrace { kind: spec.kind, output: x, patches: None, x1: None, phi: Vec::new() };
        let y = match spec.kind {
            BranchKind::Fc => {
                let xr = tape.reshape(x, &[b, cf, hw])?;
                let w = tape.reshape(p[0], &[df, cf, hw, hw])?;
                tape.einsum(xr, b"bcp", w, b"dcqp", b"bdq")?
            }
            BranchKind::Ffc | BranchKind::Sfc => {
                let (w1, w2) = if spec.kind == BranchKind::Ffc {
                    (tape.reshape(p[0], &[df, cf, hw])?, tape.reshape(p[1], &[df, cf, hw])?)
                } else {
                    let (phi1, s1) = basis::materialize_on_tape(tape, p[0], p[1], p[2], &self.domains[0])?;
                    let (phi2, s2) = basis::materialize_on_tape(tape, p[3], p[4], p[5], &self.domains[1])?;
                    trace.phi = vec![phi1, phi2];
                    (s1, s2)
                };
                let xr = tape.reshape(x, &[b, cf, hw])?;
                let x1 = tape.einsum(xr, b"bcp", w2, b"dcp", b"bdc")?;
                trace.x1 = Some(x1);
                tape.einsum(x1, b"bdc", w1, b"dcq", b"bdq")?
            }
            BranchKind::Conv | BranchKind::Sconv | BranchKind::Gconv | BranchKind::Pgconv => {
                let (t, d) = (spec.positions(), spec.patch_dim());
                let idx = self.patches.clone().expect("filter branch has patches");
                let patches = tape.gather_rows(x, idx, &[t, d])?;
                trace.patches = Some(patches);
                let w = if spec.kind == BranchKind::Sconv {
                    let (phi, s) = basis::materialize_on_tape(tape, p[0], p[1], p[2], &self.domains[0])?;
                    trace.phi = vec![phi];
                    s
                } else {
                    p[0]
                };
                let w = tape.reshape(w, &[spec.filter_out(), d])?;
                tape.einsum(patches, b"btk", w, b"dk", b"bdt")?
            }
        };
        trace.output = tape.reshape(y, &out_shape)?;
        Ok(trace)
    }
}

/// Full parameter name: `l{layer}.{kind}.{tensor}`.
pub fn param_name(layer: usize, kind: BranchKind, tensor: &str) -> String {
    alloc::format!("l{layer}.{}.{tensor}", kind.tag())
}

#[cfg(test)]
mod tests;
