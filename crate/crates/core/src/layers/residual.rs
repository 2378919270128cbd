//! Splitting a dense FC weight into a stationary (convolutional) part and a
//! residual.

use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn fc_dims(theta: &Tensor) -> Result<[usize; 4]> {
    match *theta.shape() {
        [d, c, h, w, h2, w2] if h == h2 && w == w2 => Ok([d, c, h, w]),
        _ => Err(Error::InvalidShape {
            op: "decompose_residual",
            shape: theta.shape().to_vec(),
            reason: "expected C' x C x H x W x H x W".into(),
        }),
    }
}

/// Returns `(theta_res, theta_bar)` with
/// `theta_bar(c', c, a, b) = mean_{x,y} theta(c', c, x + a, y + b, x, y)`
/// over torus offsets and `theta_res = theta - embed(theta_bar)`.
pub fn decompose_residual(theta: &Tensor) -> Result<(Tensor, Tensor)> {
    let [d, c, h, w] = fc_dims(theta)?;
    let hw = h * w;
    let mut bar = Tensor::zeros(&[d, c, h, w]);
    let t = theta.data();
    for dc in 0..d * c {
        for a in 0..h {
            for b in 0..w {
                let mut acc = 0.0;
                for x in 0..h {
                    for y in 0..w {
                        let q = ((x + a) % h) * w + (y + b) % w;
                        acc += t[(dc * hw + q) * hw + x * w + y];
                    }
                }
                bar.data_mut()[dc * hw + a * w + b] = acc / hw as f64;
            }
        }
    }
    let res = theta.sub(&stationary_embedding(&bar)?)?;
    Ok((res, bar))
}

/// `E(c', c, x', y', x, y) = theta_bar(c', c, x' - x, y' - y)` (mod grid).
pub fn stationary_embedding(bar: &Tensor) -> Result<Tensor> {
    let [d, c, h, w] = match *bar.shape() {
        [d, c, h, w] => [d, c, h, w],
        _ => {
            return Err(Error::InvalidShape {
                op: "stationary_embedding",
                shape: bar.shape().to_vec(),
                reason: "expected C' x C x H x W".into(),
            })
        }
    };
    let hw = h * w;
    let mut out = Tensor::zeros(&[d, c, h, w, h, w]);
    let o = out.data_mut();
    for dc in 0..d * c {
        for q in 0..hw {
            let (qx, qy) = (q / w, q % w);
            for p in 0..hw {
                let (px, py) = (p / w, p % w);
                let r = ((qx + h - px) % h) * w + (qy + w - py) % w;
                o[(dc * hw + q) * hw + p] = bar.data()[dc * hw + r];
            }
        }
    }
    Ok(out)
}

/// Express a torus-offset filter as a centred odd `S x S` convolution
/// filter covering every offset once (aliased duplicates are zero).
pub fn residue_filter_to_conv(bar: &Tensor) -> Result<Tensor> {
    let [d, c, h, w] = match *bar.shape() {
        [d, c, h, w] => [d, c, h, w],
        _ => {
            return Err(Error::InvalidShape {
                op: "residue_filter_to_conv",
                shape: bar.shape().to_vec(),
                reason: "expected C' x C x H x W".into(),
            })
        }
    };
    let s = h.max(w) | 1;
    let k = (s / 2) as isize;
    let mut out = Tensor::zeros(&[d, c, s, s]);
    let mut seen = vec![false; h * w];
    for i in 0..s {
        for j in 0..s {
            let a = (i as isize - k).rem_euclid(h as isize) as usize;
            let b = (j as isize - k).rem_euclid(w as isize) as usize;
            if seen[a * w + b] {
                continue;
            }
            seen[a * w + b] = true;
            for dc in 0..d * c {
                out.data_mut()[(dc * s + i) * s + j] = bar.data()[dc * h * w + a * w + b];
            }
        }
    }
    Ok(out)
}
