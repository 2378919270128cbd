//! Reverse-mode differentiation over a recorded DAG of primitive ops.
//!
//! A [`Tape`] (the computation record) owns every intermediate value. Leaves
//! are either named parameter slots or constants. `backward` seeds the
//! gradient of one output node and propagates it to the requested targets,
//! skipping every branch of the graph that cannot reach a target.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{einsum, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index map for [`Tape::gather`]: `out[i] = in[index[i]]`.
pub type GatherIndex = Arc<[u32]>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Einsum {
        a: NodeId,
        b: NodeId,
        la: Vec<u8>,
        lb: Vec<u8>,
        lo: Vec<u8>,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Gather(NodeId, GatherIndex),
    /// Per-sample gather: `out[b, i] = in[b, index[i]]`.
    GatherRows(NodeId, GatherIndex),
    Reshape(NodeId),
    /// Summed softmax cross-entropy over rows of a `B x K` logit matrix.
    SoftmaxNll {
        logits: NodeId,
        labels: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    slot: Option<String>,
}

/// Computation record: DAG of primitive ops with named parameter slots.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient per named parameter slot.
pub type GradientMap = BTreeMap<String, Tensor>;

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op, slot: None });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// A trainable leaf registered under `name`.
    pub fn parameter(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.nodes[id.0].slot = Some(name.into());
        id
    }

    /// Parameter slots in creation order.
    pub fn slots(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.slot.as_deref().map(|s| (s, NodeId(i))))
    }

    pub fn einsum(&mut self, a: NodeId, la: &[u8], b: NodeId, lb: &[u8], lo: &[u8]) -> Result<NodeId> {
        let v = einsum(self.value(a), la, self.value(b), lb, lo)?;
        Ok(self.push(v, Op::Einsum { a, b, la: la.to_vec(), lb: lb.to_vec(), lo: lo.to_vec() }))
    }

    /// Generalised contraction over paired axes (see [`Tensor::contract`]).
    pub fn contract(&mut self, a: NodeId, b: NodeId, pairs: &[(usize, usize)]) -> Result<NodeId> {
        let ra = self.value(a).rank();
        let rb = self.value(b).rank();
        let mut la: Vec<u8> = (0..ra).map(|i| b'A' + i as u8).collect();
        let mut lb: Vec<u8> = (0..rb).map(|i| b'a' + i as u8).collect();
        for &(i, j) in pairs {
            if i >= ra || j >= rb {
                return Err(Error::InvalidArgument(alloc::format!("contract: axis pair ({i}, {j}) out of range")));
            }
            lb[j] = la[i];
        }
        let mut lo: Vec<u8> = la.iter().copied().filter(|l| !lb.contains(l)).collect();
        lo.extend(lb.iter().copied().filter(|l| !la.contains(l)));
        la.shrink_to_fit();
        self.einsum(a, &la, b, &lb, &lo).map_err(|e| match e {
            Error::ShapeMismatch { .. } => Error::ShapeMismatch {
                op: "contract",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            },
            e => e,
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Elementwise product of equal-shape operands.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(math::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// `out[i] = a[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: NodeId, index: GatherIndex, shape: &[usize]) -> Result<NodeId> {
        let src = self.value(a);
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(Error::InvalidShape {
                op: "gather",
                shape: shape.to_vec(),
                reason: alloc::format!("index map has {} entries", index.len()),
            });
        }
        let len = src.len();
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= len) {
            return Err(Error::IndexOutOfRange { what: "gather", index: bad as usize, len });
        }
        let d = src.data();
        let data: Vec<f64> = index.iter().map(|&i| d[i as usize]).collect();
        let v = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(v, Op::Gather(a, index)))
    }

    /// Gather applied independently to every sample of a batch: `a` has
    /// leading batch axis `B`, the output has shape `[B] ++ tail` with
    /// `out[b, i] = a[b, index[i]]` over the flattened sample.
    pub fn gather_rows(&mut self, a: NodeId, index: GatherIndex, tail: &[usize]) -> Result<NodeId> {
        let src = self.value(a);
        let b = src.shape()[0];
        let row = src.len() / b;
        let n: usize = tail.iter().product();
        if n != index.len() {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                shape: tail.to_vec(),
                reason: alloc::format!("index map has {} entries", index.len()),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= row) {
            return Err(Error::IndexOutOfRange { what: "gather_rows", index: bad as usize, len: row });
        }
        let d = src.data();
        let mut data = Vec::with_capacity(b * n);
        for r in d.chunks(row) {
            data.extend(index.iter().map(|&i| r[i as usize]));
        }
        let mut shape = vec![b];
        shape.extend_from_slice(tail);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::GatherRows(a, index)))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Sum over rows of `-log softmax(logits)[label]`; output shape `[1]`.
    pub fn softmax_nll(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let l = self.value(logits);
        if l.rank() != 2 || l.shape()[0] != labels.len() {
            return Err(Error::InvalidShape {
                op: "softmax_nll",
                shape: l.shape().to_vec(),
                reason: alloc::format!("expected B x K logits for {} labels", labels.len()),
            });
        }
        let k = l.shape()[1];
        let mut total = 0.0;
        for (row, &y) in l.data().chunks(k).zip(labels) {
            if y >= k {
                return Err(Error::IndexOutOfRange { what: "label", index: y, len: k });
            }
            total += math::log_sum_exp(row) - row[y];
        }
        Ok(self.push(Tensor::scalar(total), Op::SoftmaxNll { logits, labels: labels.to_vec() }))
    }

    fn inputs(op: &Op) -> [Option<NodeId>; 2] {
        match *op {
            Op::Leaf => [None, None],
            Op::Einsum { a, b, .. } | Op::Add(a, b) | Op::Mul(a, b) => [Some(a), Some(b)],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Gather(a, _)
            | Op::GatherRows(a, _)
            | Op::Reshape(a)
            | Op::SoftmaxNll { logits: a, .. } => [Some(a), None],
        }
    }

    /// Propagate `seed` (shaped like `output`) back to every node in
    /// `targets`. Gradients are kept only for nodes on a path between a
    /// target and the output.
    pub fn backward(&self, output: NodeId, seed: &Tensor, targets: &[NodeId]) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(Error::ShapeMismatch {
                op: "backward seed",
                left: seed.shape().to_vec(),
                right: out_shape.to_vec(),
            });
        }
        let n = output.0 + 1;
        // live[i]: node i is a target or depends on one
        let mut live = vec![false; n];
        for &t in targets {
            if t.0 < n {
                live[t.0] = true;
            }
        }
        for i in 0..n {
            if !live[i] {
                live[i] = Self::inputs(&self.nodes[i].op).iter().flatten().any(|j| live[j.0]);
            }
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        if !live[output.0] {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(seed.clone());
        for i in (0..n).rev() {
            if !live[i] {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &live, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of `seed . output` for every parameter slot.
    pub fn param_gradients(&self, output: NodeId, seed: &Tensor) -> Result<GradientMap> {
        let slots: Vec<(String, NodeId)> = self.slots().map(|(s, id)| (String::from(s), id)).collect();
        let ids: Vec<NodeId> = slots.iter().map(|(_, id)| *id).collect();
        let mut g = self.backward(output, seed, &ids)?;
        let mut map = GradientMap::new();
        for (name, id) in slots {
            let grad = g.take(id).unwrap_or_else(|| Tensor::zeros(self.value(id).shape()));
            map.insert(name, grad);
        }
        Ok(map)
    }

    fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, live: &[bool], grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Einsum { a, b, la, lb, lo } => {
                if live[a.0] {
                    let ga = einsum(g, lo, self.value(*b), lb, la)?;
                    Self::accumulate(grads, *a, ga)?;
                }
                if live[b.0] {
                    let gb = einsum(self.value(*a), la, g, lo, lb)?;
                    Self::accumulate(grads, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                if live[a.0] {
                    Self::accumulate(grads, *a, g.clone())?;
                }
                if live[b.0] {
                    Self::accumulate(grads, *b, g.clone())?;
                }
            }
            Op::Mul(a, b) => {
                if live[a.0] {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                    Self::accumulate(grads, *a, ga)?;
                }
                if live[b.0] {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                    Self::accumulate(grads, *b, gb)?;
                }
            }
            Op::Scale(a, s) => {
                if live[a.0] {
                    Self::accumulate(grads, *a, g.scale(*s))?;
                }
            }
            Op::Relu(a) => {
                if live[a.0] {
                    let ga = g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 })?;
                    Self::accumulate(grads, *a, ga)?;
                }
            }
            Op::Exp(a) => {
                if live[a.0] {
                    let ga = g.zip_map(&node.value, |x, y| x * y)?;
                    Self::accumulate(grads, *a, ga)?;
                }
            }
            Op::Square(a) => {
                if live[a.0] {
                    let ga = g.zip_map(self.value(*a), |x, y| 2.0 * x * y)?;
                    Self::accumulate(grads, *a, ga)?;
                }
            }
            Op::Gather(a, index) => {
                if live[a.0] {
                    let mut ga = Tensor::zeros(self.value(*a).shape());
                    let d = ga.data_mut();
                    for (&src, &gv) in index.iter().zip(g.data()) {
                        d[src as usize] += gv;
                    }
                    Self::accumulate(grads, *a, ga)?;
                }
            }
            Op::GatherRows(a, index) => {
                if live[a.0] {
                    let mut ga = Tensor::zeros(self.value(*a).shape());
                    let b = ga.shape()[0];
                    let row = ga.len() / b;
                    for (dst, src) in ga.data_mut().chunks_mut(row).zip(g.data().chunks(index.len())) {
                        for (&i, &gv) in index.iter().zip(src) {
                            dst[i as usize] += gv;
                        }
                    }
                    Self::accumulate(grads, *a, ga)?;
                }
            }
            Op::Reshape(a) => {
                if live[a.0] {
                    let ga = g.reshape(self.value(*a).shape())?;
                    Self::accumulate(grads, *a, ga)?;
                }
            }
            Op::SoftmaxNll { logits, labels } => {
                if live[logits.0] {
                    let l = self.value(*logits);
                    let k = l.shape()[1];
                    let s = g.data()[0];
                    let mut gl = Vec::with_capacity(l.len());
                    for (row, &y) in l.data().chunks(k).zip(labels) {
                        let p = math::softmax(row);
                        for (j, pj) in p.into_iter().enumerate() {
                            let t = if j == y { 1.0 } else { 0.0 };
                            gl.push(s * (pj - t));
                        }
                    }
                    let gl = Tensor::new(l.shape().to_vec(), gl)?;
                    Self::accumulate(grads, *logits, gl)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_rel_err};

    #[test]
    fn scale_gradient() {
        let mut t = Tape::new();
        let th = t.parameter("theta", Tensor::scalar(2.0));
        let y = t.scale(th, 3.0);
        let g = t.param_gradients(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g["theta"].data(), &[3.0]);
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let mut t = Tape::new();
        let th = t.parameter("theta", Tensor::scalar(-1.0));
        let y = t.relu(th);
        let g = t.param_gradients(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g["theta"].data(), &[0.0]);
    }

    #[test]
    fn seed_shape_is_checked() {
        let mut t = Tape::new();
        let th = t.parameter("theta", Tensor::zeros(&[3]));
        let y = t.square(th);
        assert!(t.param_gradients(y, &Tensor::zeros(&[2])).is_err());
    }

    fn composite(t: &mut Tape, x: NodeId, w: NodeId) -> NodeId {
        let h = t.einsum(x, b"bi", w, b"oi", b"bo").unwrap();
        let r = t.relu(h);
        let hs = t.scale(h, 0.3);
        let e = t.exp(hs);
        let sq = t.square(r);
        let s = t.add(sq, e).unwrap();
        let idx: GatherIndex = Arc::from(vec![5u32, 0, 3, 3, 1, 2]);
        let gth = t.gather(s, idx, &[2, 3]).unwrap();
        let m = t.mul(gth, r).unwrap();
        let rows = t.gather_rows(s, Arc::from(vec![2u32, 0, 2]), &[3]).unwrap();
        let m = t.add(m, rows).unwrap();
        let sc = t.scale(m, 0.7);
        t.softmax_nll(sc, &[1, 2]).unwrap()
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let x = Tensor::from_fn(&[2, 4], |i| (i[0] as f64 - 0.5) * 0.8 + 0.3 * i[1] as f64 - 0.4);
        let w0 = Tensor::from_fn(&[3, 4], |i| 0.37 * ((i[0] * 4 + i[1]) as f64).sin());
        let f = |w: &Tensor| {
            let mut t = Tape::new();
            let xi = t.constant(x.clone());
            let wi = t.parameter("w", w.clone());
            let out = composite(&mut t, xi, wi);
            t.value(out).data()[0]
        };
        let mut t = Tape::new();
        let xi = t.constant(x.clone());
        let wi = t.parameter("w", w0.clone());
        let out = composite(&mut t, xi, wi);
        let g = t.param_gradients(out, &Tensor::scalar(1.0)).unwrap();
        let fd = finite_diff_grad(f, &w0, 1e-5).unwrap();
        assert!(max_rel_err(&g["w"], &fd) < 1e-6);
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let x = Tensor::from_fn(&[2, 4], |i| 0.1 * (i[0] + i[1]) as f64 - 0.2);
        let w = Tensor::from_fn(&[3, 4], |i| 0.3 * i[0] as f64 - 0.1 * i[1] as f64);
        let run = || {
            let mut t = Tape::new();
            let xi = t.constant(x.clone());
            let wi = t.parameter("w", w.clone());
            let out = composite(&mut t, xi, wi);
            t.value(out).clone()
        };
        assert_eq!(run().data()[0].to_bits(), run().data()[0].to_bits());
    }
}
