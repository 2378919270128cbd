//! Generalised Gauss-Newton curvature: the softmax likelihood Hessian,
//! Kronecker-factored blocks for every branch kind, basis projection for
//! anchor parameters, and a brute-force exact GGN.
//!
//! Every block is described by a [`BlockSite`]. For one sample the
//! Jacobian of the logits with respect to the block's parameters is
//! `J_k = sum_t a_t (x) g_{k,t}` over an inner index `t` (spatial position
//! for filter kinds, channel for the factored kinds). KFAC exchanges the
//! sums: `scale * [sum_{n,t} a a^T] (x) [sum_{n,t} g^T Lambda g]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::layers::{BranchKind, Network, Trace};
use crate::linalg::{gram_acc, symmetrize};
use crate::math;
use crate::parallel::{chunks, Parallel};
use crate::tensor::Tensor;

/// Softmax cross-entropy Hessian `diag(p) - p p^T`, independent of the label.
pub fn loglik_hessian(logits: &[f64]) -> Tensor {
    let p = math::softmax(logits);
    let k = p.len();
    Tensor::from_fn(&[k, k], |i| if i[0] == i[1] { p[i[0]] - p[i[0]] * p[i[1]] } else { -p[i[0]] * p[i[1]] })
}

/// Square root `L` with `L L^T = diag(p) - p p^T`; column `k` is
/// `sqrt(p_k) (e_k - p)`.
pub fn loglik_hessian_sqrt(logits: &[f64]) -> Tensor {
    let p = math::softmax(logits);
    let k = p.len();
    Tensor::from_fn(&[k, k], |i| {
        let (j, c) = (i[0], i[1]);
        let e = if j == c { 1.0 } else { 0.0 };
        math::sqrt(p[c]) * (e - p[j])
    })
}

/// `scale * A (x) B`, Kronecker index `a * dim(B) + g`.
#[derive(Clone, Debug, PartialEq)]
pub struct KroneckerBlock {
    pub a: Tensor,
    pub b: Tensor,
    pub scale: f64,
}

impl KroneckerBlock {
    pub fn a_dim(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn b_dim(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.a_dim() * self.b_dim()
    }

    /// Dense matrix in Kronecker order.
    pub fn dense(&self) -> Result<Tensor> {
        Ok(crate::linalg::kron(&self.a, &self.b)?.scale(self.scale))
    }

    /// Dense matrix in the parameter tensor's storage order.
    pub fn dense_storage(&self, layout: KronLayout) -> Result<Tensor> {
        let k = self.dense()?;
        let (na, nb) = (self.a_dim(), self.b_dim());
        let n = na * nb;
        let map: Vec<usize> = (0..n).map(|i| layout.storage(i / nb, i % nb)).collect();
        let mut out = Tensor::zeros(&[n, n]);
        let (src, dst) = (k.data(), out.data_mut());
        for i in 0..n {
            for j in 0..n {
                dst[map[i] * n + map[j]] = src[i * n + j];
            }
        }
        Ok(out)
    }
}

/// Map from a Kronecker index pair `(a, g)` to the storage offset within
/// the parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KronLayout {
    /// FC weights `C' x C x Q x P` with `a = (c, p)` and `g = (c', q)`.
    Fc { channels: usize, hw_in: usize, hw_out: usize },
    /// Storage `g * a_dim + a` (filters, input-side factor, `u`, `u2`).
    GMajor { a_dim: usize },
    /// Storage `a * g_dim + g` (output-side factor, `u1`).
    AMajor { g_dim: usize },
}

impl KronLayout {
    pub fn storage(&self, a: usize, g: usize) -> usize {
        match *self {
            KronLayout::Fc { channels, hw_in, hw_out } => {
                let (c, p) = (a / hw_in, a % hw_in);
                let (d, q) = (g / hw_out, g % hw_out);
                ((d * channels + c) * hw_out + q) * hw_in + p
            }
            KronLayout::GMajor { a_dim } => g * a_dim + a,
            KronLayout::AMajor { g_dim } => a * g_dim + g,
        }
    }
}

/// How activations and output gradients are read off the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    /// `a` = flattened layer input, `g` = flattened layer output gradient.
    Fc,
    /// `a_t` = im2col patch row, `g_t` = output gradient at position `t`.
    Conv,
    /// Input-side factor: `a_c = e_c (x) x_c`, `g_c` = gradient of `x1[:, c]`.
    FactoredIn,
    /// Output-side factor: `a_d = e_d (x) x1[d, :]`, `g_d` = output gradient row `d`.
    FactoredOut,
}

/// Which factor a basis matrix projects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectSide {
    /// `A <- (I_channels (x) Phi)^T A (I_channels (x) Phi)`.
    A { channels: usize },
    /// `B <- Phi^T B Phi`.
    B,
}

/// Static description of one Kronecker block of a network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSite {
    /// Index of the parameter tensor in the network's list.
    pub param: usize,
    pub layer: usize,
    pub branch: usize,
    pub kind: FactorKind,
    /// Inner index count `T` per sample.
    pub inner: usize,
    /// Factor dims before projection.
    pub raw_a: usize,
    pub raw_g: usize,
    /// Basis projection: index into the branch trace's `phi` and the side.
    pub projection: Option<(usize, ProjectSide)>,
    /// Layout after projection.
    pub layout: KronLayout,
}

impl BlockSite {
    pub fn a_dim(&self, net: &Network) -> usize {
        match self.projection {
            Some((i, ProjectSide::A { channels })) => channels * self.anchors(net, i),
            _ => self.raw_a,
        }
    }

    pub fn g_dim(&self, net: &Network) -> usize {
        match self.projection {
            Some((i, ProjectSide::B)) => self.anchors(net, i),
            _ => self.raw_g,
        }
    }

    fn anchors(&self, net: &Network, i: usize) -> usize {
        let spec = &net.layers[self.layer].branches[self.branch].spec;
        match spec.kind {
            BranchKind::Sfc => spec.anchors[i],
            _ => spec.anchors[0],
        }
    }
}

/// Every Kronecker block of the network, in parameter order. Anchor
/// locations and lengthscales have no block.
pub fn block_sites(net: &Network) -> Vec<BlockSite> {
    let mut out = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        for (bi, br) in layer.branches.iter().enumerate() {
            let s = &br.spec;
            let (cf, df, hw) = (s.input.folded(), s.output.folded(), s.input.hw());
            let first = br.slots.start;
            let site = |param, kind, inner, raw_a, raw_g, projection, layout| BlockSite {
                param,
                layer: l,
                branch: bi,
                kind,
                inner,
                raw_a,
                raw_g,
                projection,
                layout,
            };
            match s.kind {
                BranchKind::Fc => out.push(site(
                    first,
                    FactorKind::Fc,
                    1,
                    cf * hw,
                    df * hw,
                    None,
                    KronLayout::Fc { channels: cf, hw_in: hw, hw_out: hw },
                )),
                BranchKind::Ffc => {
                    out.push(site(
                        first,
                        FactorKind::FactoredOut,
                        df,
                        df * cf,
                        hw,
                        None,
                        KronLayout::AMajor { g_dim: hw },
                    ));
                    out.push(site(
                        first + 1,
                        FactorKind::FactoredIn,
                        cf,
                        cf * hw,
                        df,
                        None,
                        KronLayout::GMajor { a_dim: cf * hw },
                    ));
                }
                BranchKind::Sfc => {
                    let (m1, m2) = (s.anchors[0], s.anchors[1]);
                    out.push(site(
                        first,
                        FactorKind::FactoredOut,
                        df,
                        df * cf,
                        hw,
                        Some((0, ProjectSide::B)),
                        KronLayout::AMajor { g_dim: m1 },
                    ));
                    out.push(site(
                        first + 3,
                        FactorKind::FactoredIn,
                        cf,
                        cf * hw,
                        df,
                        Some((1, ProjectSide::A { channels: cf })),
                        KronLayout::GMajor { a_dim: cf * m2 },
                    ));
                }
                BranchKind::Conv | BranchKind::Gconv | BranchKind::Pgconv => {
                    let d = s.patch_dim();
                    out.push(site(
                        first,
                        FactorKind::Conv,
                        s.positions(),
                        d,
                        s.filter_out(),
                        None,
                        KronLayout::GMajor { a_dim: d },
                    ));
                }
                BranchKind::Sconv => {
                    let m = s.anchors[0];
                    out.push(site(
                        first,
                        FactorKind::Conv,
                        s.positions(),
                        s.patch_dim(),
                        s.filter_out(),
                        Some((0, ProjectSide::A { channels: cf })),
                        KronLayout::GMajor { a_dim: cf * m },
                    ));
                }
            }
        }
    }
    out
}

/// Activation rows of one block for a batch: either dense rows
/// (`rows x dim`) or one-hot-expanded rows `a = e_t (x) v` stored as `v`.
enum ARows {
    Dense { data: Vec<f64>, rows: usize, dim: usize },
    OneHot { v: Vec<f64>, rows: usize, inner: usize, dim: usize },
}

fn transpose_per_sample(src: &[f64], b: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for n in 0..b {
        let (s, d) = (&src[n * r * c..(n + 1) * r * c], &mut out[n * r * c..(n + 1) * r * c]);
        for i in 0..r {
            for j in 0..c {
                d[j * r + i] = s[i * c + j];
            }
        }
    }
    out
}

fn a_rows(site: &BlockSite, tape: &Tape, trace: &Trace) -> ARows {
    let lt = &trace.layers[site.layer];
    let bt = &lt.branches[site.branch];
    match site.kind {
        FactorKind::Fc => {
            let x = tape.value(lt.input);
            let b = x.shape()[0];
            ARows::Dense { data: x.data().to_vec(), rows: b, dim: site.raw_a }
        }
        FactorKind::Conv => {
            let p = tape.value(bt.patches.expect("patches"));
            ARows::Dense { data: p.data().to_vec(), rows: p.len() / site.raw_a, dim: site.raw_a }
        }
        FactorKind::FactoredIn => {
            let x = tape.value(lt.input);
            let dim = site.raw_a / site.inner;
            ARows::OneHot { v: x.data().to_vec(), rows: x.len() / dim, inner: site.inner, dim }
        }
        FactorKind::FactoredOut => {
            let x1 = tape.value(bt.x1.expect("x1"));
            let dim = site.raw_a / site.inner;
            ARows::OneHot { v: x1.data().to_vec(), rows: x1.len() / dim, inner: site.inner, dim }
        }
    }
}

/// Output-gradient rows (`rows x raw_g`) of one block for one sweep.
fn g_rows(site: &BlockSite, trace: &Trace, grads: &crate::autodiff::Gradients) -> Result<Vec<f64>> {
    let lt = &trace.layers[site.layer];
    let bt = &lt.branches[site.branch];
    let missing = || Error::InvalidArgument("missing gradient for curvature factor".into());
    match site.kind {
        FactorKind::Fc | FactorKind::FactoredOut => Ok(grads.get(lt.output).ok_or_else(missing)?.data().to_vec()),
        FactorKind::Conv => {
            let g = grads.get(lt.output).ok_or_else(missing)?;
            let b = g.shape()[0];
            Ok(transpose_per_sample(g.data(), b, site.raw_g, site.inner))
        }
        FactorKind::FactoredIn => {
            let g = grads.get(bt.x1.expect("x1")).ok_or_else(missing)?;
            let b = g.shape()[0];
            Ok(transpose_per_sample(g.data(), b, site.raw_g, site.inner))
        }
    }
}

fn accumulate_a(acc: &mut [f64], rows: &ARows) {
    match rows {
        ARows::Dense { data, rows, dim } => gram_acc(acc, data, *rows, *dim),
        ARows::OneHot { v, rows, inner, dim } => {
            let full = inner * dim;
            let mut block = vec![0.0; dim * dim];
            for t in 0..*inner {
                block.iter_mut().for_each(|x| *x = 0.0);
                let sel: Vec<f64> = (0..*rows)
                    .filter(|r| r % inner == t)
                    .flat_map(|r| v[r * dim..(r + 1) * dim].iter().copied())
                    .collect();
                gram_acc(&mut block, &sel, sel.len() / dim, *dim);
                for i in 0..*dim {
                    for j in 0..*dim {
                        acc[(t * dim + i) * full + t * dim + j] += block[i * dim + j];
                    }
                }
            }
        }
    }
}

/// Nodes whose gradients the factor extraction reads.
fn gradient_targets(trace: &Trace) -> Vec<NodeId> {
    let mut t = Vec::new();
    for lt in &trace.layers {
        t.push(lt.output);
        for bt in &lt.branches {
            if let Some(x1) = bt.x1 {
                t.push(x1);
            }
        }
    }
    t
}

/// Project a block's factor onto anchor space.
pub fn project_block(block: &KroneckerBlock, phi: &Tensor, side: ProjectSide) -> Result<KroneckerBlock> {
    let n = phi.shape()[0];
    match side {
        ProjectSide::B => {
            if block.b_dim() != n {
                return Err(Error::ShapeMismatch {
                    op: "project_block",
                    left: block.b.shape().to_vec(),
                    right: phi.shape().to_vec(),
                });
            }
            let b = phi.t().matmul(&block.b)?.matmul(phi)?;
            Ok(KroneckerBlock { a: block.a.clone(), b, scale: block.scale })
        }
        ProjectSide::A { channels } => {
            if block.a_dim() != channels * n {
                return Err(Error::ShapeMismatch {
                    op: "project_block",
                    left: block.a.shape().to_vec(),
                    right: phi.shape().to_vec(),
                });
            }
            let p = crate::linalg::kron(&Tensor::eye(channels), phi)?;
            let a = p.t().matmul(&block.a)?.matmul(&p)?;
            Ok(KroneckerBlock { a, b: block.b.clone(), scale: block.scale })
        }
    }
}

/// A block at a particular parameter value.
#[derive(Clone, Debug)]
pub struct CurvatureBlock {
    pub site: BlockSite,
    pub kron: KroneckerBlock,
}

struct Partial {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    phi: Vec<Vec<Tensor>>,
}

fn batch_partial(net: &Network, params: &[Tensor], sites: &[BlockSite], x: &Tensor) -> Result<Partial> {
    let mut tape = Tape::new();
    let trace = net.forward(&mut tape, params, x)?;
    let logits = tape.value(trace.logits).clone();
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    let roots: Vec<Tensor> = logits.data().chunks(k).map(loglik_hessian_sqrt).collect();
    let mut a: Vec<Vec<f64>> = sites.iter().map(|s| vec![0.0; s.raw_a * s.raw_a]).collect();
    let mut bb: Vec<Vec<f64>> = sites.iter().map(|s| vec![0.0; s.raw_g * s.raw_g]).collect();
    for (s, acc) in sites.iter().zip(a.iter_mut()) {
        accumulate_a(acc, &a_rows(s, &tape, &trace));
    }
    let targets = gradient_targets(&trace);
    for c in 0..k {
        let seed = Tensor::from_fn(&[b, k], |i| roots[i[0]].get(&[i[1], c]));
        let grads = tape.backward(trace.logits, &seed, &targets)?;
        for (s, acc) in sites.iter().zip(bb.iter_mut()) {
            let g = g_rows(s, &trace, &grads)?;
            gram_acc(acc, &g, g.len() / s.raw_g, s.raw_g);
        }
    }
    let phi = sites
        .iter()
        .map(|s| trace.layers[s.layer].branches[s.branch].phi.iter().map(|&p| tape.value(p).clone()).collect())
        .collect();
    Ok(Partial { a, b: bb, phi })
}

/// Kronecker factors accumulated over the whole of `xs` (`N x ...`) in
/// fixed chunks of `chunk` samples, reduced in chunk order.
pub fn collect_kfac<P: Parallel + ?Sized>(
    net: &Network,
    params: &[Tensor],
    xs: &Tensor,
    chunk: usize,
    par: &P,
) -> Result<Vec<CurvatureBlock>> {
    let n = xs.shape()[0];
    if n == 0 {
        return Err(Error::EmptyInput("curvature batch"));
    }
    let sites = block_sites(net);
    let per = xs.len() / n;
    let ranges = chunks(n, chunk);
    let partials = par.map(ranges.len(), |i| {
        let r = ranges[i].clone();
        let mut shape = xs.shape().to_vec();
        shape[0] = r.len();
        let x = Tensor::new(shape, xs.data()[r.start * per..r.end * per].to_vec())?;
        batch_partial(net, params, &sites, &x)
    });
    let mut iter = partials.into_iter();
    let mut total = iter.next().expect("at least one chunk")?;
    for p in iter {
        let p = p?;
        for (acc, v) in total.a.iter_mut().zip(&p.a) {
            acc.iter_mut().zip(v).for_each(|(x, y)| *x += y);
        }
        for (acc, v) in total.b.iter_mut().zip(&p.b) {
            acc.iter_mut().zip(v).for_each(|(x, y)| *x += y);
        }
    }
    let mut out = Vec::with_capacity(sites.len());
    for (i, site) in sites.into_iter().enumerate() {
        let mut a = Tensor::new(vec![site.raw_a, site.raw_a], core::mem::take(&mut total.a[i]))?;
        let mut b = Tensor::new(vec![site.raw_g, site.raw_g], core::mem::take(&mut total.b[i]))?;
        symmetrize(&mut a);
        symmetrize(&mut b);
        let mut kron = KroneckerBlock { a, b, scale: 1.0 / (n * site.inner) as f64 };
        if let Some((pi, side)) = site.projection {
            kron = project_block(&kron, &total.phi[i][pi], side)?;
        }
        out.push(CurvatureBlock { site, kron });
    }
    Ok(out)
}

/// Per-sample Jacobian factors of one block under unit output seeds:
/// `a: T x a_dim` and `g: K x T x g_dim`, both already projected for
/// anchor parameters.
#[derive(Clone, Debug)]
pub struct SampleFactors {
    pub site: BlockSite,
    pub a: Tensor,
    pub g: Tensor,
}

impl SampleFactors {
    /// `J[k, storage(ia, ig)] = sum_t a[t, ia] g[k, t, ig]`.
    pub fn jacobian(&self) -> Tensor {
        let (t, na) = (self.a.shape()[0], self.a.shape()[1]);
        let (k, ng) = (self.g.shape()[0], self.g.shape()[2]);
        let mut j = Tensor::zeros(&[k, na * ng]);
        for kk in 0..k {
            for tt in 0..t {
                for ia in 0..na {
                    let av = self.a.get(&[tt, ia]);
                    if av == 0.0 {
                        continue;
                    }
                    for ig in 0..ng {
                        let idx = [kk, self.site.layout.storage(ia, ig)];
                        let v = j.get(&idx) + av * self.g.get(&[kk, tt, ig]);
                        j.set(&idx, v);
                    }
                }
            }
        }
        j
    }
}

/// Factors of every block for a single sample `x` (`1 x ...`).
pub fn sample_factors(net: &Network, params: &[Tensor], x: &Tensor) -> Result<Vec<SampleFactors>> {
    if x.shape()[0] != 1 {
        return Err(Error::InvalidArgument("sample_factors takes one sample".into()));
    }
    let mut tape = Tape::new();
    let trace = net.forward(&mut tape, params, x)?;
    let k = net.classes;
    let sites = block_sites(net);
    let targets = gradient_targets(&trace);
    let mut gs: Vec<Vec<f64>> = vec![Vec::new(); sites.len()];
    for c in 0..k {
        let seed = Tensor::from_fn(&[1, k], |i| if i[1] == c { 1.0 } else { 0.0 });
        let grads = tape.backward(trace.logits, &seed, &targets)?;
        for (s, acc) in sites.iter().zip(gs.iter_mut()) {
            acc.extend(g_rows(s, &trace, &grads)?);
        }
    }
    let mut out = Vec::new();
    for (site, g) in sites.into_iter().zip(gs) {
        let a = match a_rows(&site, &tape, &trace) {
            ARows::Dense { data, rows, dim } => Tensor::new(vec![rows, dim], data)?,
            ARows::OneHot { v, rows, inner, dim } => Tensor::from_fn(&[rows, inner * dim], |i| {
                let (r, col) = (i[0], i[1]);
                if col / dim == r % inner {
                    v[r * dim + col % dim]
                } else {
                    0.0
                }
            }),
        };
        let mut g = Tensor::new(vec![k, site.inner, site.raw_g], g)?;
        let mut a = a;
        if let Some((pi, side)) = site.projection {
            let phi = tape.value(trace.layers[site.layer].branches[site.branch].phi[pi]).clone();
            match side {
                ProjectSide::A { channels } => {
                    let p = crate::linalg::kron(&Tensor::eye(channels), &phi)?;
                    a = a.matmul(&p)?;
                }
                ProjectSide::B => {
                    let m = phi.shape()[1];
                    let g2 = g.reshape(&[k * site.inner, site.raw_g])?.matmul(&phi)?;
                    g = g2.into_reshaped(&[k, site.inner, m])?;
                }
            }
        }
        out.push(SampleFactors { site, a, g });
    }
    Ok(out)
}

/// Maximum number of parameters for which [`exact_ggn`] will run.
pub const EXACT_GGN_LIMIT: usize = 5000;

/// Exact GGN `sum_n J_n^T Lambda_n J_n` over the listed parameter tensors
/// (concatenated in storage order), with Jacobians from one reverse sweep
/// per class per sample.
pub fn exact_ggn(net: &Network, params: &[Tensor], xs: &Tensor, tensors: &[usize]) -> Result<Tensor> {
    let p: usize = tensors.iter().map(|&i| params[i].len()).sum();
    if p > EXACT_GGN_LIMIT {
        return Err(Error::SizeGuard { what: "exact_ggn", size: p, limit: EXACT_GGN_LIMIT });
    }
    let n = xs.shape()[0];
    let per = xs.len() / n;
    let k = net.classes;
    let mut h = Tensor::zeros(&[p, p]);
    for s in 0..n {
        let mut shape = xs.shape().to_vec();
        shape[0] = 1;
        let x = Tensor::new(shape, xs.data()[s * per..(s + 1) * per].to_vec())?;
        let mut tape = Tape::new();
        let trace = net.forward(&mut tape, params, &x)?;
        let targets: Vec<NodeId> = tensors.iter().map(|&i| trace.params[i]).collect();
        let mut j = Tensor::zeros(&[k, p]);
        for c in 0..k {
            let seed = Tensor::from_fn(&[1, k], |i| if i[1] == c { 1.0 } else { 0.0 });
            let grads = tape.backward(trace.logits, &seed, &targets)?;
            let mut off = 0;
            for &t in &targets {
                let len = tape.value(t).len();
                if let Some(g) = grads.get(t) {
                    j.data_mut()[c * p + off..c * p + off + len].copy_from_slice(g.data());
                }
                off += len;
            }
        }
        let lam = loglik_hessian(tape.value(trace.logits).data());
        let jt = j.t();
        h.add_assign(&jt.matmul(&lam)?.matmul(&j)?)?;
    }
    symmetrize(&mut h);
    Ok(h)
}
