//! Independent brute-force reference implementations.
//!
//! Everything here is written as direct nested sums over the defining
//! formulas, sharing no code with the fast paths. Tests and the `check`
//! suites compare against these.

use alloc::vec;
use alloc::vec::Vec;

use crate::groups::rotate_offset;
use crate::math;
use crate::tensor::Tensor;

fn wrap(v: isize, n: usize) -> usize {
    v.rem_euclid(n as isize) as usize
}

/// Dense FC map on `B x C x H x W` input.
pub fn fc(theta: &Tensor, x: &Tensor) -> Tensor {
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let d = theta.shape()[0];
    Tensor::from_fn(&[b, d, h, w], |o| {
        let mut acc = 0.0;
        for ci in 0..c {
            for px in 0..h {
                for py in 0..w {
                    acc += x.get(&[o[0], ci, px, py]) * theta.get(&[o[1], ci, o[2], o[3], px, py]);
                }
            }
        }
        acc
    })
}

/// Circular convolution `y(p') = sum_s x(p' - s) theta(s)`, centred offsets.
pub fn conv(theta: &Tensor, x: &Tensor) -> Tensor {
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (d, s) = (theta.shape()[0], theta.shape()[2]);
    let k = (s / 2) as isize;
    Tensor::from_fn(&[b, d, h, w], |o| {
        let mut acc = 0.0;
        for ci in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let px = wrap(o[2] as isize - (i as isize - k), h);
                    let py = wrap(o[3] as isize - (j as isize - k), w);
                    acc += x.get(&[o[0], ci, px, py]) * theta.get(&[o[1], ci, i, j]);
                }
            }
        }
        acc
    })
}

/// Dense FC weight of a factored layer: `theta1(c', c, q) theta2(c', c, p)`.
pub fn ffc_dense(theta1: &Tensor, theta2: &Tensor) -> Tensor {
    let s = theta1.shape();
    Tensor::from_fn(&[s[0], s[1], s[2], s[3], s[2], s[3]], |i| {
        theta1.get(&[i[0], i[1], i[2], i[3]]) * theta2.get(&[i[0], i[1], i[4], i[5]])
    })
}

/// Induced weights by direct evaluation of the exponential basis.
pub fn basis_field(u: &Tensor, z: &Tensor, omega: f64, domain: &[(f64, f64)]) -> Tensor {
    let (d, c, m) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    Tensor::from_fn(&[d, c, domain.len()], |i| {
        let (px, py) = domain[i[2]];
        (0..m)
            .map(|j| {
                let dx = px - z.get(&[j, 0]);
                let dy = py - z.get(&[j, 1]);
                u.get(&[i[0], i[1], j]) * math::exp(-omega * omega * (dx * dx + dy * dy))
            })
            .sum()
    })
}

/// Rotate an `S x S` filter so that `out(M^r s) = f(s)`.
fn rotate_filter(f: &[f64], s: usize, r: usize) -> Vec<f64> {
    let k = (s / 2) as isize;
    let mut out = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            let (u, v) = rotate_offset(i as isize - k, j as isize - k, r);
            out[(u + k) as usize * s + (v + k) as usize] = f[i * s + j];
        }
    }
    out
}

/// p4 group convolution by rotating the filter per output rotation and
/// running a planar convolution: filter `C' x C x O x S x S`, input
/// `B x C x O x N x N`, output `B x C' x 4 x N x N`.
pub fn gconv(theta: &Tensor, x: &Tensor) -> Tensor {
    let [b, c, o, n] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (d, s) = (theta.shape()[0], theta.shape()[3]);
    let k = (s / 2) as isize;
    let mut out = Tensor::zeros(&[b, d, 4, n, n]);
    for r in 0..4 {
        for di in 0..d {
            for ci in 0..c {
                for rb in 0..o {
                    let base: Vec<f64> = (0..s * s).map(|q| theta.get(&[di, ci, rb, q / s, q % s])).collect();
                    let rot = rotate_filter(&base, s, r);
                    let ri = (r + rb) % o;
                    for bi in 0..b {
                        for px in 0..n {
                            for py in 0..n {
                                let mut acc = 0.0;
                                for i in 0..s {
                                    for j in 0..s {
                                        let qx = wrap(px as isize - (i as isize - k), n);
                                        let qy = wrap(py as isize - (j as isize - k), n);
                                        acc += x.get(&[bi, ci, ri, qx, qy]) * rot[i * s + j];
                                    }
                                }
                                let idx = [bi, di, r, px, py];
                                let v = out.get(&idx) + acc;
                                out.set(&idx, v);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Patch vector `a[c, i, j] = x(n, c, p - (i - k, j - k))` of a circular
/// convolution at output position `p = (px, py)`.
pub fn conv_patch(x: &Tensor, n: usize, s: usize, px: usize, py: usize) -> Vec<f64> {
    let [c, h, w] = [x.shape()[1], x.shape()[2], x.shape()[3]];
    let k = (s / 2) as isize;
    let mut out = Vec::with_capacity(c * s * s);
    for ci in 0..c {
        for i in 0..s {
            for j in 0..s {
                let qx = wrap(px as isize - (i as isize - k), h);
                let qy = wrap(py as isize - (j as isize - k), w);
                out.push(x.get(&[n, ci, qx, qy]));
            }
        }
    }
    out
}

/// Kronecker factors from their definition: `A = sum a a^T` over the
/// activation vectors and `B = sum G^T Lambda G` over the `K x d` output
/// Jacobians, each paired with its sample's likelihood Hessian.
pub fn kfac_factors(acts: &[Vec<f64>], jacs: &[(Tensor, Tensor)]) -> (Tensor, Tensor) {
    let na = acts[0].len();
    let mut a = Tensor::zeros(&[na, na]);
    for v in acts {
        for i in 0..na {
            for j in 0..na {
                let e = a.get(&[i, j]) + v[i] * v[j];
                a.set(&[i, j], e);
            }
        }
    }
    let (k, nb) = (jacs[0].0.shape()[0], jacs[0].0.shape()[1]);
    let mut b = Tensor::zeros(&[nb, nb]);
    for (g, lam) in jacs {
        for i in 0..nb {
            for j in 0..nb {
                let mut e = 0.0;
                for r in 0..k {
                    for s in 0..k {
                        e += g.get(&[r, i]) * lam.get(&[r, s]) * g.get(&[s, j]);
                    }
                }
                b.set(&[i, j], b.get(&[i, j]) + e);
            }
        }
    }
    (a, b)
}

/// Likelihood Hessian `diag(p) - p p^T` of the softmax at `logits`.
pub fn softmax_hessian(logits: &[f64]) -> Tensor {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| math::exp(v - m)).collect();
    let z: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / z).collect();
    Tensor::from_fn(&[p.len(), p.len()], |i| {
        let d = if i[0] == i[1] { p[i[0]] } else { 0.0 };
        d - p[i[0]] * p[i[1]]
    })
}

/// `1/2 log det(H + alpha I)` via Cholesky.
pub fn dense_half_logdet(h: &Tensor, alpha: f64) -> f64 {
    let n = h.shape()[0];
    let m = h.add(&Tensor::eye(n).scale(alpha)).expect("square");
    0.5 * crate::linalg::logdet_spd(&m).expect("positive definite")
}

/// Effective parameter count `P - alpha tr((H + alpha I)^-1)`.
pub fn dense_gamma(h: &Tensor, alpha: f64) -> f64 {
    let n = h.shape()[0];
    let m = h.add(&Tensor::eye(n).scale(alpha)).expect("square");
    let inv = crate::linalg::inverse_spd(&m).expect("positive definite");
    n as f64 - alpha * (0..n).map(|i| inv.get(&[i, i])).sum::<f64>()
}
