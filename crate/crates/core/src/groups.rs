//! Finite groups as lookup tables, and their actions on torus grids and
//! group-indexed feature maps.
//!
//! Rotations permute torus indices by `(x, y) -> (y, W - 1 - x)`; translations
//! shift circularly. The roto-translation group p4 is realised as pairs
//! `(t, r)` acting by `p -> rot^r(p) + t`, so composition is
//! `(t1, r1)(t2, r2) = (t1 + M^r1 t2, r1 + r2)` with `M (dx, dy) = (dy, -dx)`
//! the linear part of the rotation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteGroup {
    order: usize,
    compose: Vec<u32>,
    inverse: Vec<u32>,
    identity: usize,
}

impl FiniteGroup {
    /// Build from a composition rule; inverses and identity are derived.
    pub fn from_rule(order: usize, rule: impl Fn(usize, usize) -> usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("group order must be positive".into()));
        }
        let mut compose = vec![0u32; order * order];
        for g in 0..order {
            for h in 0..order {
                let gh = rule(g, h);
                if gh >= order {
                    return Err(Error::IndexOutOfRange { what: "group element", index: gh, len: order });
                }
                compose[g * order + h] = gh as u32;
            }
        }
        let identity = (0..order)
            .find(|&e| (0..order).all(|g| compose[e * order + g] as usize == g && compose[g * order + e] as usize == g))
            .ok_or_else(|| Error::InvalidArgument("composition table has no identity".into()))?;
        let mut inverse = vec![0u32; order];
        for g in 0..order {
            let inv = (0..order)
                .find(|&h| compose[g * order + h] as usize == identity)
                .ok_or_else(|| Error::InvalidArgument(alloc::format!("element {g} has no inverse")))?;
            inverse[g] = inv as u32;
        }
        Ok(Self { order, compose, inverse, identity })
    }

    /// Cyclic group `Z_n`.
    pub fn cyclic(n: usize) -> Result<Self> {
        Self::from_rule(n, |a, b| (a + b) % n)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn compose(&self, g: usize, h: usize) -> usize {
        self.compose[g * self.order + h] as usize
    }

    pub fn inverse(&self, g: usize) -> usize {
        self.inverse[g] as usize
    }

    /// Exhaustive check of associativity, identity and inverse laws.
    pub fn check_axioms(&self) -> Result<()> {
        let n = self.order;
        for g in 0..n {
            if self.compose(self.identity, g) != g || self.compose(g, self.identity) != g {
                return Err(Error::InvalidArgument(alloc::format!("identity law fails at {g}")));
            }
            let gi = self.inverse(g);
            if self.compose(g, gi) != self.identity || self.compose(gi, g) != self.identity {
                return Err(Error::InvalidArgument(alloc::format!("inverse law fails at {g}")));
            }
        }
        for a in 0..n {
            for b in 0..n {
                let ab = self.compose(a, b);
                for c in 0..n {
                    if self.compose(ab, c) != self.compose(a, self.compose(b, c)) {
                        return Err(Error::InvalidArgument(alloc::format!("associativity fails at ({a}, {b}, {c})")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A finite group acting on an `H x W` torus grid and (for rotation groups)
/// cyclically on a rotation fibre of length 4.
#[derive(Clone, Debug)]
pub struct GridAction {
    group: FiniteGroup,
    height: usize,
    width: usize,
    /// `perm[g][p]` is the flat index of `g . p`.
    perm: Vec<Vec<u32>>,
    /// Rotation component (quarter turns) of each element.
    rotation: Vec<u8>,
    fibre: usize,
}

fn rot_point(x: usize, y: usize, w: usize) -> (usize, usize) {
    (y, w - 1 - x)
}

/// Linear part of one quarter turn applied `r` times to an offset.
pub fn rotate_offset(dx: isize, dy: isize, r: usize) -> (isize, isize) {
    let (mut a, mut b) = (dx, dy);
    for _ in 0..r % 4 {
        let t = a;
        a = b;
        b = -t;
    }
    (a, b)
}

impl GridAction {
    /// Circular translations `Z_H x Z_W`; element index `tx * W + ty`.
    pub fn translations(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("grid dims must be positive".into()));
        }
        let hw = height * width;
        let group = FiniteGroup::from_rule(hw, |g, h| {
            let (gx, gy) = (g / width, g % width);
            let (hx, hy) = (h / width, h % width);
            ((gx + hx) % height) * width + (gy + hy) % width
        })?;
        let perm = (0..hw)
            .map(|g| {
                let (tx, ty) = (g / width, g % width);
                (0..hw)
                    .map(|p| {
                        let (x, y) = (p / width, p % width);
                        (((x + tx) % height) * width + (y + ty) % width) as u32
                    })
                    .collect()
            })
            .collect();
        Ok(Self { group, height, width, perm, rotation: vec![0; hw], fibre: 1 })
    }

    /// Quarter-turn rotations about the grid centre.
    pub fn rotations(n: usize) -> Result<Self> {
        let p4 = Self::p4(n, n)?;
        let elems: Vec<usize> = (0..4).map(|r| p4.p4_element(r, 0, 0)).collect();
        let group = FiniteGroup::cyclic(4)?;
        let perm = elems.iter().map(|&e| p4.perm[e].clone()).collect();
        Ok(Self { group, height: n, width: n, perm, rotation: vec![0, 1, 2, 3], fibre: 4 })
    }

    /// Roto-translation group p4 on a square torus grid, order `4 H W`.
    /// Element index is `r * H W + tx * W + ty`.
    pub fn p4(height: usize, width: usize) -> Result<Self> {
        if height != width {
            return Err(Error::InvalidArgument(alloc::format!("p4 requires a square grid, got {height}x{width}")));
        }
        if height == 0 {
            return Err(Error::InvalidArgument("grid dims must be positive".into()));
        }
        let n = height;
        let hw = n * n;
        let split = |g: usize| (g / hw, (g % hw) / n, g % n);
        let group = FiniteGroup::from_rule(4 * hw, |g, h| {
            let (r1, x1, y1) = split(g);
            let (r2, x2, y2) = split(h);
            let (dx, dy) = rotate_offset(x2 as isize, y2 as isize, r1);
            let x = (x1 as isize + dx).rem_euclid(n as isize) as usize;
            let y = (y1 as isize + dy).rem_euclid(n as isize) as usize;
            ((r1 + r2) % 4) * hw + x * n + y
        })?;
        let mut perm = Vec::with_capacity(4 * hw);
        let mut rotation = Vec::with_capacity(4 * hw);
        for g in 0..4 * hw {
            let (r, tx, ty) = split(g);
            let p: Vec<u32> = (0..hw)
                .map(|p| {
                    let (mut x, mut y) = (p / n, p % n);
                    for _ in 0..r {
                        (x, y) = rot_point(x, y, n);
                    }
                    (((x + tx) % n) * n + (y + ty) % n) as u32
                })
                .collect();
            perm.push(p);
            rotation.push(r as u8);
        }
        Ok(Self { group, height, width, perm, rotation, fibre: 4 })
    }

    pub fn group(&self) -> &FiniteGroup {
        &self.group
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Length of the rotation fibre this group acts on (1 or 4).
    pub fn fibre(&self) -> usize {
        self.fibre
    }

    pub fn rotation_of(&self, g: usize) -> usize {
        self.rotation[g] as usize
    }

    /// p4 element with `r` quarter turns followed by translation `(tx, ty)`.
    pub fn p4_element(&self, r: usize, tx: usize, ty: usize) -> usize {
        let hw = self.height * self.width;
        (r % 4) * hw + (tx % self.height) * self.width + ty % self.width
    }

    /// Flat index of `g . p`.
    pub fn apply_point(&self, g: usize, p: usize) -> usize {
        self.perm[g][p] as usize
    }

    /// Exhaustive homomorphism check: `perm(g h) = perm(g) . perm(h)`.
    pub fn check_homomorphism(&self) -> Result<()> {
        let n = self.group.order();
        let hw = self.height * self.width;
        let e = self.group.identity();
        if (0..hw).any(|p| self.apply_point(e, p) != p) {
            return Err(Error::InvalidArgument("identity does not act trivially".into()));
        }
        for g in 0..n {
            for h in 0..n {
                let gh = self.group.compose(g, h);
                for p in 0..hw {
                    if self.apply_point(gh, p) != self.apply_point(g, self.apply_point(h, p)) {
                        return Err(Error::InvalidArgument(alloc::format!(
                            "action is not a homomorphism at ({g}, {h}, {p})"
                        )));
                    }
                }
                if (self.rotation_of(g) + self.rotation_of(h)) % self.fibre.max(1)
                    != self.rotation_of(gh) % self.fibre.max(1)
                {
                    return Err(Error::InvalidArgument("rotation component is not additive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Feature map `B x C x O x H x W` on a group; `O` is the rotation fibre
/// (1 for plain planar features).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupFeatureMap(Tensor);

impl GroupFeatureMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 5 {
            return Err(Error::InvalidShape {
                op: "GroupFeatureMap",
                shape: t.shape().to_vec(),
                reason: "expected B x C x O x H x W".into(),
            });
        }
        Ok(Self(t))
    }

    /// Lift a `B x C x H x W` planar tensor (fibre 1).
    pub fn planar(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [b, c, h, w] => Self::new(t.reshape(&[b, c, 1, h, w])?),
            _ => Err(Error::InvalidShape {
                op: "GroupFeatureMap::planar",
                shape: t.shape().to_vec(),
                reason: "expected B x C x H x W".into(),
            }),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn fibre(&self) -> usize {
        self.0.shape()[2]
    }
}

/// Regular action: `(g . f)(c, r, p) = f(c, r - r_g, g^-1 p)`. Spatial indices
/// are permuted by the grid action, the fibre axis by cyclic shift;
/// channels are untouched.
pub fn act(action: &GridAction, g: usize, feature: &GroupFeatureMap) -> Result<GroupFeatureMap> {
    let n = action.group().order();
    if g >= n {
        return Err(Error::IndexOutOfRange { what: "group element", index: g, len: n });
    }
    let shape = feature.tensor().shape();
    let (b, c, o, h, w) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
    if h != action.height() || w != action.width() {
        return Err(Error::ShapeMismatch {
            op: "act",
            left: shape.to_vec(),
            right: vec![action.height(), action.width()],
        });
    }
    if o != 1 && o != action.fibre() {
        return Err(Error::InvalidShape {
            op: "act",
            shape: shape.to_vec(),
            reason: alloc::format!("fibre {o} incompatible with group fibre {}", action.fibre()),
        });
    }
    let hw = h * w;
    let rg = action.rotation_of(g);
    let src = feature.tensor().data();
    let mut out = vec![0.0; src.len()];
    for bc in 0..b * c {
        for r in 0..o {
            let r_out = (r + rg) % o;
            let sbase = (bc * o + r) * hw;
            let dbase = (bc * o + r_out) * hw;
            for p in 0..hw {
                out[dbase + action.apply_point(g, p)] = src[sbase + p];
            }
        }
    }
    GroupFeatureMap::new(Tensor::new(shape.to_vec(), out)?)
}
