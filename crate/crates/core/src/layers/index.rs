//! Circular im2col index maps shared by every convolution-like branch.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::autodiff::GatherIndex;
use crate::groups::rotate_offset;

fn wrap(v: isize, n: usize) -> usize {
    v.rem_euclid(n as isize) as usize
}

/// Planar patches: row `t = (x', y')`, column `(c, i, j)`, value
/// `x(c, x' - (i - k), y' - (j - k))` with `k = (s - 1) / 2`.
pub fn conv_patches(channels: usize, h: usize, w: usize, s: usize) -> GatherIndex {
    let k = (s / 2) as isize;
    let hw = h * w;
    let mut idx = Vec::with_capacity(hw * channels * s * s);
    for px in 0..h {
        for py in 0..w {
            for c in 0..channels {
                for i in 0..s {
                    for j in 0..s {
                        let x = wrap(px as isize - (i as isize - k), h);
                        let y = wrap(py as isize - (j as isize - k), w);
                        idx.push((c * hw + x * w + y) as u32);
                    }
                }
            }
        }
    }
    Arc::from(idx)
}

/// p4 patches on an `n x n` grid for input with fibre `o_in` (1 lifts).
///
/// Rows are `t = (r', x', y')`. Full group filters have columns
/// `(c, r_bar, i, j)` reading `x(c, r' + r_bar, p' - M^r' s)`; pointwise
/// filters have columns `(c, i, j)` reading `x(c, r', p' - M^r' s)`.
pub fn group_patches(channels: usize, o_in: usize, n: usize, s: usize, pointwise: bool) -> GatherIndex {
    let k = (s / 2) as isize;
    let hw = n * n;
    let fib = if pointwise { 1 } else { o_in };
    let mut idx = Vec::with_capacity(4 * hw * channels * fib * s * s);
    for r in 0..4 {
        for px in 0..n {
            for py in 0..n {
                for c in 0..channels {
                    for rb in 0..fib {
                        let ri = if pointwise { r % o_in } else { (r + rb) % o_in };
                        for i in 0..s {
                            for j in 0..s {
                                let (dx, dy) = rotate_offset(i as isize - k, j as isize - k, r);
                                let x = wrap(px as isize - dx, n);
                                let y = wrap(py as isize - dy, n);
                                idx.push(((c * o_in + ri) * hw + x * n + y) as u32);
                            }
                        }
                    }
                }
            }
        }
    }
    Arc::from(idx)
}
