//! Small dense linear algebra on rank-2 tensors: symmetric eigenvalues,
//! Cholesky, Kronecker products.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

fn square_dim(m: &Tensor, op: &'static str) -> Result<usize> {
    match *m.shape() {
        [r, c] if r == c => Ok(r),
        _ => Err(Error::InvalidShape { op, shape: m.shape().to_vec(), reason: "expected a square matrix".into() }),
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
///
/// Householder reduction to tridiagonal form followed by implicit QL with
/// Wilkinson-style shifts. Only the lower triangle is read.
pub fn sym_eigenvalues(m: &Tensor) -> Result<Vec<f64>> {
    let n = square_dim(m, "sym_eigenvalues")?;
    let mut a = m.data().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let at = |i: usize, j: usize| i * n + j;

    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[at(i, k)].abs()).sum();
            if scale == 0.0 {
                e[i] = a[at(i, l)];
            } else {
                for k in 0..=l {
                    a[at(i, k)] /= scale;
                    h += a[at(i, k)] * a[at(i, k)];
                }
                let f = a[at(i, l)];
                let g = if f >= 0.0 { -math::sqrt(h) } else { math::sqrt(h) };
                e[i] = scale * g;
                h -= f * g;
                a[at(i, l)] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[at(j, k)] * a[at(i, k)];
                    }
                    for k in j + 1..=l {
                        g += a[at(k, j)] * a[at(i, k)];
                    }
                    e[j] = g / h;
                    f += e[j] * a[at(i, j)];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[at(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[at(j, k)] -= f * e[k] + g * a[at(i, k)];
                    }
                }
            }
        } else {
            e[i] = a[at(i, l)];
        }
        d[i] = h;
    }
    for i in 0..n {
        d[i] = a[at(i, i)];
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    if n > 0 {
        e[n - 1] = 0.0;
    }

    // Off-diagonals below eps * ||T|| are negligible in absolute terms; the
    // relative test alone never fires between two (near-)zero eigenvalues.
    let norm = (0..n).fold(0.0f64, |m, i| m.max(d[i].abs() + e[i].abs()));
    let floor = f64::EPSILON * norm;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 200 {
                return Err(Error::NonFinite("sym_eigenvalues: QL iteration did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = math::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = math::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sym_eigenvalues: non-finite input".into()));
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(d)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &Tensor) -> Result<Tensor> {
    let n = square_dim(m, "cholesky")?;
    let a = m.data();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= l[j * n + k] * l[j * n + k];
        }
        if s.is_nan() || s <= 0.0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "cholesky: matrix not positive definite at pivot {j} ({s})"
            )));
        }
        let djj = math::sqrt(s);
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Tensor::new(vec![n, n], l)
}

/// `log det` of a symmetric positive-definite matrix via Cholesky.
pub fn logdet_spd(m: &Tensor) -> Result<f64> {
    let l = cholesky(m)?;
    let n = l.shape()[0];
    Ok((0..n).map(|i| 2.0 * math::ln(l.data()[i * n + i])).sum())
}

/// Inverse of a symmetric positive-definite matrix via Cholesky solves.
pub fn inverse_spd(m: &Tensor) -> Result<Tensor> {
    let l = cholesky(m)?;
    let n = l.shape()[0];
    let ld = l.data();
    let mut inv = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for c in 0..n {
        // L y = e_c
        for i in 0..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= ld[i * n + k] * col[k];
            }
            col[i] = s / ld[i * n + i];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= ld[k * n + i] * col[k];
            }
            col[i] = s / ld[i * n + i];
        }
        for i in 0..n {
            inv[i * n + c] = col[i];
        }
    }
    Tensor::new(vec![n, n], inv)
}

/// Dense Kronecker product `a (x) b` of two matrices.
pub fn kron(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ar, ac) = match *a.shape() {
        [r, c] => (r, c),
        _ => {
            return Err(Error::InvalidShape { op: "kron", shape: a.shape().to_vec(), reason: "rank 2 required".into() })
        }
    };
    let (br, bc) = match *b.shape() {
        [r, c] => (r, c),
        _ => {
            return Err(Error::InvalidShape { op: "kron", shape: b.shape().to_vec(), reason: "rank 2 required".into() })
        }
    };
    let rows = ar * br;
    let cols = ac * bc;
    let mut out = vec![0.0; rows * cols];
    for i in 0..ar {
        for j in 0..ac {
            let av = a.data()[i * ac + j];
            if av == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k) * cols + j * bc + l] = av * b.data()[k * bc + l];
                }
            }
        }
    }
    Tensor::new(vec![rows, cols], out)
}

/// `acc += m^T m` for an `r x c` matrix stored row-major in `rows`.
///
/// Rows are processed in tiles that are transposed once, so every entry
/// of the upper triangle is a contiguous dot product; the lower triangle
/// is mirrored at the end.
pub fn gram_acc(acc: &mut [f64], rows: &[f64], r: usize, c: usize) {
    debug_assert_eq!(acc.len(), c * c);
    debug_assert_eq!(rows.len(), r * c);
    const TILE: usize = 64;
    let mut upper = vec![0.0; c * c];
    let mut t = vec![0.0; c * TILE];
    for start in (0..r).step_by(TILE) {
        let k = TILE.min(r - start);
        for (kk, row) in rows[start * c..(start + k) * c].chunks(c).enumerate() {
            for (i, &v) in row.iter().enumerate() {
                t[i * TILE + kk] = v;
            }
        }
        for i in 0..c {
            let ti = &t[i * TILE..i * TILE + k];
            if ti.iter().all(|&v| v == 0.0) {
                continue;
            }
            for j in i..c {
                let tj = &t[j * TILE..j * TILE + k];
                upper[i * c + j] += ti.iter().zip(tj).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    for i in 0..c {
        for j in i..c {
            let v = upper[i * c + j];
            acc[i * c + j] += v;
            if j != i {
                acc[j * c + i] += v;
            }
        }
    }
}

/// Symmetrise in place: `m <- (m + m^T) / 2`.
pub fn symmetrize(m: &mut Tensor) {
    let n = m.shape()[0];
    let d = m.data_mut();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (d[i * n + j] + d[j * n + i]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        // Gram-Schmidt on a random matrix
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= d * y;
                }
            }
            let norm = math::sqrt(v.iter().map(|x| x * x).sum());
            if norm > 1e-6 {
                q.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        Tensor::from_fn(&[n, n], |i| q[i[1]][i[0]])
    }

    #[test]
    fn eigenvalues_of_rotated_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 3, 7, 20] {
            let diag: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 - 3.0).collect();
            let q = random_orthogonal(n, &mut rng);
            let d = Tensor::from_fn(&[n, n], |i| if i[0] == i[1] { diag[i[0]] } else { 0.0 });
            let m = q.matmul(&d).unwrap().matmul(&q.t()).unwrap();
            let ev = sym_eigenvalues(&m).unwrap();
            for (a, b) in ev.iter().zip(&diag) {
                assert!((a - b).abs() < 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn eigenvalues_two_by_two() {
        let m = Tensor::new(vec![2, 2], vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let ev = sym_eigenvalues(&m).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn logdet_matches_eigen_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 9;
        let x = Tensor::from_fn(&[n, n], |_| rng.random_range(-1.0..1.0));
        let m = x.matmul(&x.t()).unwrap().add(&Tensor::eye(n)).unwrap();
        let ld = logdet_spd(&m).unwrap();
        let ev: f64 = sym_eigenvalues(&m).unwrap().iter().map(|&v| math::ln(v)).sum();
        assert!((ld - ev).abs() < 1e-10);
        let inv = inverse_spd(&m).unwrap();
        let id = m.matmul(&inv).unwrap();
        assert!(id.max_abs_diff(&Tensor::eye(n)) < 1e-10);
    }

    #[test]
    fn eigenvalues_of_rank_deficient_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = Tensor::from_fn(&[3, 40], |_| rng.random_range(-1.0..1.0));
        let g = m.t().matmul(&m).unwrap();
        let ev = sym_eigenvalues(&g).unwrap();
        assert!(ev[..37].iter().all(|v| v.abs() < 1e-12));
        let top: f64 = ev[37..].iter().sum();
        let trace: f64 = (0..40).map(|i| g.get(&[i, i])).sum();
        assert!((top - trace).abs() < 1e-10 * trace);
    }

    #[test]
    fn gram_matches_transpose_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (r, c) in [(1, 1), (3, 5), (65, 7), (130, 3)] {
            let m = Tensor::from_fn(&[r, c], |_| rng.random_range(-1.0..1.0));
            let mut acc = vec![1.0; c * c];
            gram_acc(&mut acc, m.data(), r, c);
            let expect = m.t().matmul(&m).unwrap().add(&Tensor::full(&[c, c], 1.0)).unwrap();
            assert!(Tensor::new(vec![c, c], acc).unwrap().max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn kron_eigenvalues_are_products() {
        let a = Tensor::new(vec![2, 2], vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let b = Tensor::new(vec![3, 3], vec![3.0, 1.0, 0.0, 1.0, 2.0, 0.2, 0.0, 0.2, 1.0]).unwrap();
        let k = kron(&a, &b).unwrap();
        let ek = sym_eigenvalues(&k).unwrap();
        let ea = sym_eigenvalues(&a).unwrap();
        let eb = sym_eigenvalues(&b).unwrap();
        let mut prod: Vec<f64> = ea.iter().flat_map(|x| eb.iter().map(move |y| x * y)).collect();
        prod.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (x, y) in ek.iter().zip(&prod) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(cholesky(&m).is_err());
    }
}
