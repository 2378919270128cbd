//! Dense row-major real tensors and generalised contraction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major `f64` array.
///
/// The invariant `data.len() == shape.iter().product()` holds for every
/// value constructed through this API. A zero-rank tensor has shape `[]` and
/// one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape { op: "Tensor::new", shape, reason: "dims must be positive".into() });
        }
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                shape,
                reason: alloc::format!("data length {} does not match", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; numel(shape)] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n = numel(shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self { shape: shape.to_vec(), data }
    }

    /// `n x n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut o = 0;
        for (i, (&k, &d)) in idx.iter().zip(&self.shape).enumerate() {
            debug_assert!(k < d, "index {k} out of range on axis {i}");
            o = o * d + k;
        }
        o
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch { op: "reshape", left: self.shape.clone(), right: shape.to_vec() });
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn into_reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch { op: "reshape", left: self.shape, right: shape.to_vec() });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(alloc::format!("permutation {perm:?} invalid for rank {r}")));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = self.len();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; r];
        let mut src = 0usize;
        let last = r - 1;
        let inner = out_shape[last];
        let inner_stride = src_strides[last];
        let mut produced = 0;
        while produced < n {
            let mut s = src;
            for _ in 0..inner {
                data.push(self.data[s]);
                s += inner_stride;
            }
            produced += inner;
            // advance the outer index
            let mut ax = last;
            while ax > 0 {
                ax -= 1;
                idx[ax] += 1;
                src += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                src -= src_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self { shape: out_shape, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { op: "zip_map", left: self.shape.clone(), right: other.shape.clone() });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Sum over products of paired axes; result axes are the unpaired axes
    /// of `self` followed by the unpaired axes of `other`.
    pub fn contract(&self, other: &Self, pairs: &[(usize, usize)]) -> Result<Self> {
        let (la, lb, lo) = pair_labels(self.rank(), other.rank(), pairs).ok_or_else(|| {
            Error::InvalidArgument(alloc::format!(
                "contract: bad axis pairs {pairs:?} for ranks {} and {}",
                self.rank(),
                other.rank()
            ))
        })?;
        einsum(self, &la, other, &lb, &lo).map_err(|e| match e {
            Error::ShapeMismatch { .. } => {
                Error::ShapeMismatch { op: "contract", left: self.shape.clone(), right: other.shape.clone() }
            }
            e => e,
        })
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        einsum(self, b"ik", other, b"kj", b"ij")
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Self {
        self.permute(&[1, 0]).expect("rank-2 transpose")
    }
}

fn pair_labels(ra: usize, rb: usize, pairs: &[(usize, usize)]) -> Option<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    if ra + rb > 52 {
        return None;
    }
    let mut la: Vec<u8> = (0..ra).map(|i| b'A' + i as u8).collect();
    let mut lb: Vec<u8> = (0..rb).map(|i| b'a' + i as u8).collect();
    for &(i, j) in pairs {
        if i >= ra || j >= rb {
            return None;
        }
        lb[j] = la[i];
    }
    let mut used_a = vec![false; ra];
    let mut used_b = vec![false; rb];
    for &(i, j) in pairs {
        if core::mem::replace(&mut used_a[i], true) || core::mem::replace(&mut used_b[j], true) {
            return None;
        }
    }
    let mut lo = Vec::new();
    for (i, &l) in la.iter().enumerate() {
        if !used_a[i] {
            lo.push(l);
        }
    }
    for (j, &l) in lb.iter().enumerate() {
        if !used_b[j] {
            lo.push(l);
        }
    }
    la.shrink_to_fit();
    Some((la, lb, lo))
}

/// Two-operand Einstein summation with single-byte axis labels.
///
/// Every label of an operand must appear in the other operand or in the
/// output; every output label must appear in at least one operand. Labels
/// shared by both operands and the output are batch axes; labels shared by
/// the operands only are summed.
pub fn einsum(a: &Tensor, la: &[u8], b: &Tensor, lb: &[u8], lo: &[u8]) -> Result<Tensor> {
    let bad = |reason: &str| {
        Error::InvalidArgument(alloc::format!(
            "einsum {}, {} -> {}: {reason}",
            core::str::from_utf8(la).unwrap_or("?"),
            core::str::from_utf8(lb).unwrap_or("?"),
            core::str::from_utf8(lo).unwrap_or("?")
        ))
    };
    if la.len() != a.rank() || lb.len() != b.rank() {
        return Err(bad("label count does not match rank"));
    }
    let pos = |ls: &[u8], l: u8| ls.iter().position(|&x| x == l);
    for ls in [la, lb, lo] {
        for (i, &l) in ls.iter().enumerate() {
            if ls[..i].contains(&l) {
                return Err(bad("repeated label"));
            }
        }
    }
    let extent = |l: u8| -> Result<usize> {
        match (pos(la, l), pos(lb, l)) {
            (Some(i), Some(j)) => {
                if a.shape[i] != b.shape[j] {
                    Err(Error::ShapeMismatch { op: "einsum", left: a.shape.clone(), right: b.shape.clone() })
                } else {
                    Ok(a.shape[i])
                }
            }
            (Some(i), None) => Ok(a.shape[i]),
            (None, Some(j)) => Ok(b.shape[j]),
            (None, None) => Err(bad("output label absent from operands")),
        }
    };
    let mut batch = Vec::new();
    let mut afree = Vec::new();
    let mut bfree = Vec::new();
    for &l in lo {
        extent(l)?;
        match (pos(la, l).is_some(), pos(lb, l).is_some()) {
            (true, true) => batch.push(l),
            (true, false) => afree.push(l),
            (false, true) => bfree.push(l),
            (false, false) => unreachable!(),
        }
    }
    let mut summed = Vec::new();
    for &l in la {
        if pos(lo, l).is_none() {
            if pos(lb, l).is_none() {
                return Err(bad("label only in first operand"));
            }
            extent(l)?;
            summed.push(l);
        }
    }
    for &l in lb {
        if pos(lo, l).is_none() && pos(la, l).is_none() {
            return Err(bad("label only in second operand"));
        }
    }
    let ext = |ls: &[u8]| -> usize {
        ls.iter()
            .map(|&l| match pos(la, l) {
                Some(i) => a.shape[i],
                None => b.shape[pos(lb, l).unwrap()],
            })
            .product()
    };
    let nb = ext(&batch);
    let m = ext(&afree);
    let n = ext(&bfree);
    let k = ext(&summed);

    let perm_a: Vec<usize> = batch.iter().chain(&afree).chain(&summed).map(|&l| pos(la, l).unwrap()).collect();
    let perm_b: Vec<usize> = batch.iter().chain(&summed).chain(&bfree).map(|&l| pos(lb, l).unwrap()).collect();
    let ap = a.permute(&perm_a)?;
    let bp = b.permute(&perm_b)?;
    let mut out = vec![0.0; nb * m * n];
    for bi in 0..nb {
        let ab = &ap.data[bi * m * k..(bi + 1) * m * k];
        let bb = &bp.data[bi * k * n..(bi + 1) * k * n];
        let ob = &mut out[bi * m * n..(bi + 1) * m * n];
        gemm_acc(ab, bb, ob, m, k, n);
    }
    let mid_labels: Vec<u8> = batch.iter().chain(&afree).chain(&bfree).copied().collect();
    let mid_shape: Vec<usize> = mid_labels
        .iter()
        .map(|&l| match pos(la, l) {
            Some(i) => a.shape[i],
            None => b.shape[pos(lb, l).unwrap()],
        })
        .collect();
    let mid_shape = if mid_shape.is_empty() { vec![1] } else { mid_shape };
    let mid = Tensor { shape: mid_shape, data: out };
    if lo.is_empty() {
        return Ok(mid);
    }
    let perm_o: Vec<usize> = lo.iter().map(|&l| pos(&mid_labels, l).unwrap()).collect();
    mid.permute(&perm_o)
}

/// `c += a * b` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 1 {
        for i in 0..m {
            let row = &a[i * k..(i + 1) * k];
            c[i] += row.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
        return;
    }
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}
