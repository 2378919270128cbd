//! Polyphase downsampling: keep the stride-2 component with the largest
//! l-infinity norm per sample.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::autodiff::GatherIndex;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-sample l-infinity norms of the four polyphase components of a
/// `B x ... x H x W` tensor, component index `2 i + j` for offset `(i, j)`.
pub fn component_norms(x: &Tensor) -> Result<Vec<[f64; 4]>> {
    let s = x.shape();
    let r = s.len();
    if r < 3 || !s[r - 1].is_multiple_of(2) || !s[r - 2].is_multiple_of(2) {
        return Err(Error::InvalidShape {
            op: "polyphase_pool",
            shape: s.to_vec(),
            reason: "spatial dims must be even".into(),
        });
    }
    let (h, w) = (s[r - 2], s[r - 1]);
    let per = x.len() / s[0];
    Ok(x.data()
        .chunks(per)
        .map(|sample| {
            let mut n = [0.0f64; 4];
            for (k, v) in sample.iter().enumerate() {
                let (px, py) = ((k / w) % h, k % w);
                let c = 2 * (px % 2) + py % 2;
                n[c] = n[c].max(v.abs());
            }
            n
        })
        .collect())
}

/// Selected component per sample: largest norm, lowest index on ties.
pub fn select_components(x: &Tensor) -> Result<Vec<usize>> {
    Ok(component_norms(x)?.iter().map(|n| (1..4).fold(0, |best, c| if n[c] > n[best] { c } else { best })).collect())
}

/// Smallest gap between the winning norm and the runner-up over the batch.
pub fn selection_margin(x: &Tensor) -> Result<f64> {
    Ok(component_norms(x)?
        .iter()
        .map(|n| {
            let mut v = *n;
            v.sort_by(|a, b| b.total_cmp(a));
            v[0] - v[1]
        })
        .fold(f64::INFINITY, f64::min))
}

/// Gather index (over the flattened batch) and output shape of the pooled
/// tensor.
pub fn polyphase_index(x: &Tensor) -> Result<(GatherIndex, Vec<usize>)> {
    let comps = select_components(x)?;
    let s = x.shape();
    let r = s.len();
    let (h, w) = (s[r - 2], s[r - 1]);
    let (h2, w2) = (h / 2, w / 2);
    let per = x.len() / s[0];
    let planes = per / (h * w);
    let mut idx = Vec::with_capacity(x.len() / 4);
    for (b, &c) in comps.iter().enumerate() {
        let (i, j) = (c / 2, c % 2);
        for pl in 0..planes {
            let base = b * per + pl * h * w;
            for a in 0..h2 {
                for bb in 0..w2 {
                    idx.push((base + (2 * a + i) * w + 2 * bb + j) as u32);
                }
            }
        }
    }
    let mut shape = s.to_vec();
    shape[r - 2] = h2;
    shape[r - 1] = w2;
    Ok((Arc::from(idx), shape))
}

/// Pool a `B x ... x H x W` tensor to `H/2 x W/2`.
pub fn polyphase_pool(x: &Tensor) -> Result<Tensor> {
    let (idx, shape) = polyphase_index(x)?;
    let d = x.data();
    Tensor::new(shape, idx.iter().map(|&i| d[i as usize]).collect())
}
