//! Stacks of pathway layers with ReLU and pooling, and the architecture
//! templates.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{param_name, pool, Branch, BranchKind, BranchSpec, FeatureShape, ParamRole};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RNG stream offset for parameter initialisation.
const INIT_STREAM: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    None,
    Polyphase,
    /// Mean over the grid, used when an odd grid larger than 1x1 is pooled.
    GlobalMean,
}

/// Declarative description of one layer for the builder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub out_channels: usize,
    pub filter: usize,
    pub menu: Vec<BranchKind>,
    pub pool: bool,
    pub relu: bool,
}

/// One pathway layer: the output is the sum of its branch outputs,
/// followed by optional pooling and then ReLU.
#[derive(Clone, Debug)]
pub struct Layer {
    pub branches: Vec<Branch>,
    pub input: FeatureShape,
    pub output: FeatureShape,
    pub pool: PoolKind,
    pub relu: bool,
}

impl Layer {
    /// Shape after pooling.
    pub fn pooled(&self) -> FeatureShape {
        let o = self.output;
        match self.pool {
            PoolKind::None => o,
            PoolKind::Polyphase => FeatureShape::new(o.channels, o.fibre, o.height / 2, o.width / 2),
            PoolKind::GlobalMean => FeatureShape::new(o.channels, o.fibre, 1, 1),
        }
    }

    pub fn branch(&self, kind: BranchKind) -> Option<&Branch> {
        self.branches.iter().find(|b| b.spec.kind == kind)
    }
}

/// Recorded nodes of one branch, kept for curvature.
#[derive(Clone, Debug)]
pub struct BranchTrace {
    pub kind: BranchKind,
    /// Branch output `B x C' x O' x H x W`.
    pub output: NodeId,
    /// im2col patches `B x T x D` for filter kinds.
    pub patches: Option<NodeId>,
    /// Factored intermediate `B x C' x C` for F-FC and S-FC.
    pub x1: Option<NodeId>,
    /// Basis matrices (`n x M`) for S-variants: one for S-CONV, output side
    /// then input side for S-FC.
    pub phi: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub input: NodeId,
    /// Sum of branch outputs, before pooling and ReLU.
    pub output: NodeId,
    pub branches: Vec<BranchTrace>,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub params: Vec<NodeId>,
    pub logits: NodeId,
    pub layers: Vec<LayerTrace>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub input: FeatureShape,
    pub classes: usize,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    roles: Vec<ParamRole>,
    owners: Vec<(usize, usize)>,
}

impl Network {
    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn param_roles(&self) -> &[ParamRole] {
        &self.roles
    }

    /// `(layer, branch)` owning each parameter tensor.
    pub fn param_owners(&self) -> &[(usize, usize)] {
        &self.owners
    }

    pub fn param_count(&self) -> usize {
        self.shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Seeded initial parameters; each branch draws from its own stream so
    /// adding a branch leaves the others unchanged.
    pub fn init(&self, seed: u64) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.names.len());
        for (l, layer) in self.layers.iter().enumerate() {
            for br in &layer.branches {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(INIT_STREAM + (l as u64) * 16 + br.spec.kind as u64);
                out.extend(br.spec.init(&mut rng));
            }
        }
        out
    }

    /// Check a parameter list against the layout.
    pub fn check_params(&self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.shapes.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "expected {} parameter tensors, got {}",
                self.shapes.len(),
                params.len()
            )));
        }
        for (i, (p, s)) in params.iter().zip(&self.shapes).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(Error::ShapeMismatch { op: "parameter", left: p.shape().to_vec(), right: s.clone() }
                    .with_context(&self.names[i]));
            }
        }
        Ok(())
    }

    /// Register parameters and input on the tape and record the forward
    /// pass. `x` is `B x C x H x W` or `B x C x O x H x W`.
    pub fn forward(&self, tape: &mut Tape, params: &[Tensor], x: &Tensor) -> Result<Trace> {
        self.check_params(params)?;
        let nodes: Vec<NodeId> =
            self.names.iter().zip(params).map(|(n, p)| tape.parameter(n.clone(), p.clone())).collect();
        let b = x.shape()[0];
        let x5 = x.reshape(&self.input.batch_shape(b)).map_err(|_| Error::ShapeMismatch {
            op: "network input",
            left: x.shape().to_vec(),
            right: self.input.batch_shape(b).to_vec(),
        })?;
        let xn = tape.constant(x5);
        self.forward_nodes(tape, nodes, xn)
    }

    /// Record the forward pass from already-registered nodes.
    pub fn forward_nodes(&self, tape: &mut Tape, params: Vec<NodeId>, x: NodeId) -> Result<Trace> {
        let b = tape.value(x).shape()[0];
        let mut cur = x;
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = cur;
            let mut traces = Vec::with_capacity(layer.branches.len());
            let mut sum: Option<NodeId> = None;
            for br in &layer.branches {
                let tr = br.forward(tape, input, &params[br.slots.clone()])?;
                sum = Some(match sum {
                    None => tr.output,
                    Some(s) => tape.add(s, tr.output)?,
                });
                traces.push(tr);
            }
            let output = sum.expect("layer has branches");
            cur = match layer.pool {
                PoolKind::None => output,
                PoolKind::Polyphase => {
                    let (idx, shape) = pool::polyphase_index(tape.value(output))?;
                    tape.gather(output, idx, &shape)?
                }
                PoolKind::GlobalMean => {
                    let o = layer.output;
                    let r = tape.reshape(output, &[b, o.folded(), o.hw()])?;
                    let ones = tape.constant(Tensor::full(&[o.hw()], 1.0 / o.hw() as f64));
                    let m = tape.einsum(r, b"bcp", ones, b"p", b"bc")?;
                    tape.reshape(m, &layer.pooled().batch_shape(b))?
                }
            };
            if layer.relu {
                cur = tape.relu(cur);
            }
            layers.push(LayerTrace { input, output, branches: traces });
        }
        let last = self.layers.last().expect("network has layers").pooled();
        let t = last.fibre * last.hw();
        let r = tape.reshape(cur, &[b, self.classes, t])?;
        let ones = tape.constant(Tensor::full(&[t], 1.0 / t as f64));
        let logits = tape.einsum(r, b"bkt", ones, b"t", b"bk")?;
        Ok(Trace { params, logits, layers })
    }

    /// Logits `B x K` without keeping the tape.
    pub fn logits(&self, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let tr = self.forward(&mut tape, params, x)?;
        Ok(tape.value(tr.logits).clone())
    }
}

/// Build a network from per-layer plans. The final layer must output
/// `classes` channels; logits average it over fibre and grid.
pub fn build_network(input: FeatureShape, plans: &[LayerPlan], classes: usize) -> Result<Network> {
    if plans.is_empty() {
        return Err(Error::InvalidArgument("network needs at least one layer".into()));
    }
    if plans.last().map(|p| p.out_channels) != Some(classes) {
        return Err(Error::InvalidArgument(alloc::format!(
            "inconsistent widths: last layer must output {classes} classes"
        )));
    }
    let mut cur = input;
    let mut layers = Vec::new();
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut roles = Vec::new();
    let mut owners = Vec::new();
    for (l, plan) in plans.iter().enumerate() {
        if plan.menu.is_empty() {
            return Err(Error::InvalidArgument(alloc::format!("layer {l} has an empty branch menu")));
        }
        for (i, k) in plan.menu.iter().enumerate() {
            if plan.menu[..i].contains(k) {
                return Err(Error::InvalidArgument(alloc::format!("layer {l} lists {k} twice")));
            }
        }
        let out_fibre = if plan.menu.iter().any(|k| k.is_group()) { 4 } else { 1 };
        let mut branches = Vec::new();
        for (bi, &kind) in plan.menu.iter().enumerate() {
            let spec = BranchSpec::new(kind, cur, plan.out_channels, out_fibre, plan.filter, None)
                .map_err(|e| e.with_context(&alloc::format!("layer {l}")))?;
            let first = names.len();
            for (name, shape, role) in spec.param_shapes() {
                names.push(param_name(l, kind, name));
                shapes.push(shape);
                roles.push(role);
                owners.push((l, bi));
            }
            branches.push(Branch::new(spec, first));
        }
        let output = branches[0].spec.output;
        let pool = if !plan.pool || (output.height == 1 && output.width == 1) {
            PoolKind::None
        } else if output.height % 2 == 0 && output.width % 2 == 0 {
            PoolKind::Polyphase
        } else {
            PoolKind::GlobalMean
        };
        let layer = Layer { branches, input: cur, output, pool, relu: plan.relu };
        cur = layer.pooled();
        layers.push(layer);
    }
    Ok(Network { layers, input, classes, names, shapes, roles, owners })
}

fn expand_menus(menus: &[Vec<BranchKind>], n: usize) -> Result<Vec<Vec<BranchKind>>> {
    match menus.len() {
        1 => Ok(vec![menus[0].clone(); n]),
        m if m == n => Ok(menus.to_vec()),
        m => Err(Error::InvalidArgument(alloc::format!("expected 1 or {n} branch menus, got {m}"))),
    }
}

/// The ten-layer template: eight 3x3 layers with widths
/// `a, 2a, 2a, 4a, 4a, 8a, 8a, 16a` (pooling after the 2nd, 4th, 6th, 7th
/// and 8th), then 1x1 layers to `64a` and to the class count.
pub fn build_architecture(
    width: usize,
    spatial: usize,
    in_channels: usize,
    classes: usize,
    menus: &[Vec<BranchKind>],
) -> Result<Network> {
    let a = width;
    let widths = [a, 2 * a, 2 * a, 4 * a, 4 * a, 8 * a, 8 * a, 16 * a, 64 * a, classes];
    let pools = [false, true, false, true, false, true, true, true, false, false];
    let menus = expand_menus(menus, widths.len())?;
    let plans: Vec<LayerPlan> = (0..widths.len())
        .map(|i| LayerPlan {
            out_channels: widths[i],
            filter: if i < 8 { 3 } else { 1 },
            menu: menus[i].clone(),
            pool: pools[i],
            relu: i + 1 < widths.len(),
        })
        .collect();
    build_network(FeatureShape::new(in_channels, 1, spatial, spatial), &plans, classes)
}

/// Desk-scale stack: 3x3 layers of widths `a, 2a` each followed by pooling,
/// then a 1x1 layer to the class count.
pub fn build_compact(
    width: usize,
    spatial: usize,
    in_channels: usize,
    classes: usize,
    menus: &[Vec<BranchKind>],
) -> Result<Network> {
    let widths = [width, 2 * width, classes];
    let menus = expand_menus(menus, widths.len())?;
    let plans: Vec<LayerPlan> = (0..widths.len())
        .map(|i| LayerPlan {
            out_channels: widths[i],
            filter: if i < 2 { 3 } else { 1 },
            menu: menus[i].clone(),
            pool: i < 2,
            relu: i < 2,
        })
        .collect();
    build_network(FeatureShape::new(in_channels, 1, spatial, spatial), &plans, classes)
}
