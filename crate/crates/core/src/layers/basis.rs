//! Exponential anchor-point bases inducing dense weights.
//!
//! `phi_j(p) = exp(-omega^2 |p - z_j|^2)` and
//! `s(c', c, p) = sum_j u(c', c, j) phi_j(p)` over a fixed domain of
//! coordinates (filter offsets or the full grid).

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Anchor values `u: C' x C x M`, locations `z: M x 2` and lengthscale `omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisConfig {
    pub u: Tensor,
    pub z: Tensor,
    pub omega: f64,
}

impl BasisConfig {
    pub fn anchors(&self) -> usize {
        self.z.shape()[0]
    }
}

/// Centred `s x s` filter offsets `(i - k, j - k)`, row-major.
pub fn offset_domain(s: usize) -> Tensor {
    let k = (s / 2) as f64;
    Tensor::from_fn(&[s * s, 2], |ix| {
        let (i, j) = (ix[0] / s, ix[0] % s);
        if ix[1] == 0 {
            i as f64 - k
        } else {
            j as f64 - k
        }
    })
}

/// Full `h x w` grid coordinates `(x, y)`, row-major.
pub fn grid_domain(h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[h * w, 2], |ix| if ix[1] == 0 { (ix[0] / w) as f64 } else { (ix[0] % w) as f64 })
}

/// Basis matrix `Phi: |domain| x M`.
pub fn basis_matrix(z: &Tensor, omega: f64, domain: &Tensor) -> Tensor {
    let (n, m) = (domain.shape()[0], z.shape()[0]);
    let (d, zz) = (domain.data(), z.data());
    let w2 = omega * omega;
    Tensor::from_fn(&[n, m], |ix| {
        let (i, j) = (ix[0], ix[1]);
        let dx = d[2 * i] - zz[2 * j];
        let dy = d[2 * i + 1] - zz[2 * j + 1];
        math::exp(-w2 * (dx * dx + dy * dy))
    })
}

/// Record the basis on the tape. Returns `(phi, s)` with `phi: n x M` and
/// `s: C' x C x n`.
pub fn materialize_on_tape(
    tape: &mut Tape,
    u: NodeId,
    z: NodeId,
    omega: NodeId,
    domain: &Tensor,
) -> Result<(NodeId, NodeId)> {
    let zs = tape.value(z).shape().to_vec();
    if zs.len() != 2 || zs[1] != 2 || domain.rank() != 2 || domain.shape()[1] != 2 {
        return Err(Error::ShapeMismatch { op: "materialize_filter", left: zs, right: domain.shape().to_vec() });
    }
    let (n, m) = (domain.shape()[0], tape.value(z).shape()[0]);
    let us = tape.value(u).shape();
    if us.len() != 3 || us[2] != m {
        return Err(Error::ShapeMismatch { op: "materialize_filter", left: us.to_vec(), right: vec![m] });
    }
    let zidx: Vec<u32> = (0..n).flat_map(|_| (0..m).flat_map(|j| [2 * j as u32, 2 * j as u32 + 1])).collect();
    let zb = tape.gather(z, Arc::from(zidx), &[n, m, 2])?;
    let neg_p = Tensor::from_fn(&[n, m, 2], |ix| -domain.get(&[ix[0], ix[2]]));
    let neg_p = tape.constant(neg_p);
    let diff = tape.add(zb, neg_p)?;
    let sq = tape.square(diff);
    let ones = tape.constant(Tensor::full(&[2], 1.0));
    let d2 = tape.einsum(sq, b"nmk", ones, b"k", b"nm")?;
    let w2 = tape.square(omega);
    let wb = tape.gather(w2, Arc::from(vec![0u32; n * m]), &[n, m])?;
    let e = tape.mul(d2, wb)?;
    let e = tape.scale(e, -1.0);
    let phi = tape.exp(e);
    let s = tape.einsum(u, b"dcm", phi, b"nm", b"dcn")?;
    Ok((phi, s))
}

/// Dense weights `C' x C x |domain|` induced by the anchors.
pub fn materialize_filter(basis: &BasisConfig, domain: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let u = tape.constant(basis.u.clone());
    let z = tape.constant(basis.z.clone());
    let w = tape.constant(Tensor::scalar(basis.omega));
    let (_, s) = materialize_on_tape(&mut tape, u, z, w, domain)?;
    Ok(tape.value(s).clone())
}

/// Evenly spaced anchors over the bounding box of `domain`, first `m` in
/// row-major order of a `g x g` subgrid with `g = ceil(sqrt(m))`, each
/// jittered by `jitter(i)` (a pair in `[-0.5, 0.5)`) times half a subgrid step.
pub fn init_anchor_locations(domain: &Tensor, m: usize, mut jitter: impl FnMut() -> (f64, f64)) -> Tensor {
    let d = domain.data();
    let n = domain.shape()[0];
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..n {
        for a in 0..2 {
            lo[a] = lo[a].min(d[2 * i + a]);
            hi[a] = hi[a].max(d[2 * i + a]);
        }
    }
    let mut g = 1;
    while g * g < m {
        g += 1;
    }
    let step = [(hi[0] - lo[0] + 1.0) / g as f64, (hi[1] - lo[1] + 1.0) / g as f64];
    let mut z = Vec::with_capacity(2 * m);
    for j in 0..m {
        let (a, b) = (j / g, j % g);
        let (jx, jy) = jitter();
        z.push(lo[0] - 0.5 + (a as f64 + 0.5) * step[0] + 0.5 * jx * step[0]);
        z.push(lo[1] - 0.5 + (b as f64 + 0.5) * step[1] + 0.5 * jy * step[1]);
    }
    Tensor::from_vec(z).into_reshaped(&[m, 2]).expect("anchor shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(u: f64, omega: f64) -> BasisConfig {
        BasisConfig { u: Tensor::full(&[1, 1, 1], u), z: Tensor::zeros(&[1, 2]), omega }
    }

    #[test]
    fn anchor_at_origin() {
        let dom = Tensor::zeros(&[1, 2]);
        let s = materialize_filter(&single(2.0, 1.0), &dom).unwrap();
        assert_eq!(s.data(), &[2.0]);
    }

    #[test]
    fn zero_lengthscale_is_constant() {
        let b = BasisConfig {
            u: Tensor::new(vec![1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap(),
            z: Tensor::new(vec![3, 2], vec![0.0, 0.3, -1.0, 2.0, 1.5, 1.5]).unwrap(),
            omega: 0.0,
        };
        let s = materialize_filter(&b, &grid_domain(4, 4)).unwrap();
        assert!(s.data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn unit_offset_is_exp_minus_one() {
        let dom = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let s = materialize_filter(&single(1.0, 1.0), &dom).unwrap();
        assert!((s.data()[0] - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn tape_and_direct_basis_agree() {
        let z = Tensor::new(vec![2, 2], vec![0.2, -0.4, 1.0, 0.5]).unwrap();
        let dom = offset_domain(3);
        let phi = basis_matrix(&z, 0.7, &dom);
        let mut t = Tape::new();
        let u = t.constant(Tensor::full(&[1, 1, 2], 1.0));
        let zn = t.constant(z);
        let w = t.constant(Tensor::scalar(0.7));
        let (p, _) = materialize_on_tape(&mut t, u, zn, w, &dom).unwrap();
        assert!(t.value(p).max_abs_diff(&phi) < 1e-15);
    }

    #[test]
    fn anchors_cover_domain() {
        let z = init_anchor_locations(&offset_domain(3), 5, || (0.0, 0.0));
        assert_eq!(z.shape(), &[5, 2]);
        assert!(z.data().iter().all(|v| v.abs() <= 1.5));
    }
}
