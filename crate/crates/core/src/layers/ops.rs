//! Tensor-in, tensor-out forms of every branch forward pass.

use alloc::vec;
use alloc::vec::Vec;

use super::{BasisConfig, Branch, BranchKind, BranchSpec, FeatureShape};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::groups::GroupFeatureMap;
use crate::tensor::Tensor;

fn planar(x: &Tensor, op: &'static str) -> Result<(usize, FeatureShape, Tensor)> {
    match *x.shape() {
        [b, c, h, w] => Ok((b, FeatureShape::new(c, 1, h, w), x.reshape(&[b, c, 1, h, w])?)),
        _ => Err(Error::InvalidShape { op, shape: x.shape().to_vec(), reason: "expected B x C x H x W".into() }),
    }
}

fn run(spec: BranchSpec, params: &[Tensor], x5: Tensor) -> Result<Tensor> {
    let want = spec.param_shapes();
    if want.len() != params.len() {
        return Err(Error::InvalidArgument(alloc::format!("{} expects {} parameter tensors", spec.kind, want.len())));
    }
    for ((_, shape, _), p) in want.iter().zip(params) {
        if p.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch { op: spec.kind.name(), left: p.shape().to_vec(), right: shape.clone() });
        }
    }
    let branch = Branch::new(spec, 0);
    let mut tape = Tape::new();
    let nodes: Vec<NodeId> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let xn = tape.constant(x5);
    let tr = branch.forward(&mut tape, xn, &nodes)?;
    Ok(tape.value(tr.output).clone())
}

fn dims(t: &Tensor, rank: usize, op: &'static str) -> Result<Vec<usize>> {
    if t.rank() != rank {
        return Err(Error::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            reason: alloc::format!("expected rank {rank}"),
        });
    }
    Ok(t.shape().to_vec())
}

/// `y(c', x', y') = sum_{c,x,y} x(c, x, y) theta(c', c, x', y', x, y)`.
pub fn fc_forward(theta: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (b, inp, x5) = planar(x, "fc_forward")?;
    let d = dims(theta, 6, "fc_forward")?;
    let spec = BranchSpec::new(BranchKind::Fc, inp, d[0], 1, 1, None)?;
    let y = run(spec, core::slice::from_ref(theta), x5)?;
    y.into_reshaped(&[b, d[0], inp.height, inp.width])
}

/// Circular convolution with centred `S x S` offsets.
pub fn conv_forward(theta: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (b, inp, x5) = planar(x, "conv_forward")?;
    let d = dims(theta, 4, "conv_forward")?;
    if d[2] != d[3] {
        return Err(Error::InvalidShape { op: "conv_forward", shape: d, reason: "filter must be square".into() });
    }
    let spec = BranchSpec::new(BranchKind::Conv, inp, d[0], 1, d[2], None)?;
    let y = run(spec, core::slice::from_ref(theta), x5)?;
    y.into_reshaped(&[b, d[0], inp.height, inp.width])
}

/// Factored map `y(c', q) = sum_c theta1(c', c, q) sum_p x(c, p) theta2(c', c, p)`.
pub fn ffc_forward(theta1: &Tensor, theta2: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (b, inp, x5) = planar(x, "ffc_forward")?;
    let d = dims(theta1, 4, "ffc_forward")?;
    let spec = BranchSpec::new(BranchKind::Ffc, inp, d[0], 1, 1, None)?;
    let y = run(spec, &[theta1.clone(), theta2.clone()], x5)?;
    y.into_reshaped(&[b, d[0], inp.height, inp.width])
}

/// Convolution with the filter induced by anchors over the `S x S` offsets.
pub fn sconv_forward(basis: &BasisConfig, filter: usize, x: &Tensor) -> Result<Tensor> {
    let (b, inp, x5) = planar(x, "sconv_forward")?;
    let d = dims(&basis.u, 3, "sconv_forward")?;
    let spec = BranchSpec::new(BranchKind::Sconv, inp, d[0], 1, filter, Some(vec![basis.anchors()]))?;
    let params = [basis.u.clone(), basis.z.clone(), Tensor::scalar(basis.omega)];
    let y = run(spec, &params, x5)?;
    y.into_reshaped(&[b, d[0], inp.height, inp.width])
}

/// Factored map with both factors induced by anchors over the full grid;
/// `basis1` is the output side, `basis2` the input side.
pub fn sfc_forward(basis1: &BasisConfig, basis2: &BasisConfig, x: &Tensor) -> Result<Tensor> {
    let (b, inp, x5) = planar(x, "sfc_forward")?;
    let d = dims(&basis1.u, 3, "sfc_forward")?;
    let spec = BranchSpec::new(BranchKind::Sfc, inp, d[0], 1, 1, Some(vec![basis1.anchors(), basis2.anchors()]))?;
    let params = [
        basis1.u.clone(),
        basis1.z.clone(),
        Tensor::scalar(basis1.omega),
        basis2.u.clone(),
        basis2.z.clone(),
        Tensor::scalar(basis2.omega),
    ];
    let y = run(spec, &params, x5)?;
    y.into_reshaped(&[b, d[0], inp.height, inp.width])
}

fn group_input(x: &GroupFeatureMap) -> FeatureShape {
    let s = x.tensor().shape();
    FeatureShape::new(s[1], s[2], s[3], s[4])
}

/// p4 group convolution with filter `C' x C x O_in x S x S` (`O_in = 1`
/// lifts planar input).
pub fn gconv_forward(theta: &Tensor, x: &GroupFeatureMap) -> Result<GroupFeatureMap> {
    let inp = group_input(x);
    let d = dims(theta, 5, "gconv_forward")?;
    if d[2] != inp.fibre {
        return Err(Error::ShapeMismatch { op: "gconv_forward", left: d, right: x.tensor().shape().to_vec() });
    }
    let spec = BranchSpec::new(BranchKind::Gconv, inp, d[0], 4, d[3], None)?;
    GroupFeatureMap::new(run(spec, core::slice::from_ref(theta), x.tensor().clone())?)
}

/// Pointwise p4 convolution: the spatial filter `C' x C x S x S` is rotated
/// per fibre component, with no mixing across the fibre.
pub fn pgconv_forward(theta: &Tensor, x: &GroupFeatureMap) -> Result<GroupFeatureMap> {
    let inp = group_input(x);
    let d = dims(theta, 4, "pgconv_forward")?;
    let spec = BranchSpec::new(BranchKind::Pgconv, inp, d[0], 4, d[2], None)?;
    GroupFeatureMap::new(run(spec, core::slice::from_ref(theta), x.tensor().clone())?)
}
