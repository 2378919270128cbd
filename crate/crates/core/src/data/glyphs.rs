//! Fixed glyph bitmaps. The first eight are drawn by hand and have no
//! rotational symmetry; further classes get seeded random bitmaps distinct
//! from all earlier ones.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GLYPH_SIZE: usize = 5;

const DRAWN: [&str; 8] = [
    "##### #.... ####. #.... #....",
    "....# ....# ....# #...# .###.",
    "####. #...# ####. #.... #....",
    "##### ..#.. ..#.. ..#.. ..#..",
    "####. #...# ####. #..#. #...#",
    "#...# #..#. ###.. #..#. #...#",
    "#...# .#.#. ..#.. ..#.. ..#..",
    "#..#. #..#. ##### ...#. ...#.",
];

fn drawn(c: usize) -> Vec<f64> {
    DRAWN[c].chars().filter(|ch| !ch.is_whitespace()).map(|ch| if ch == '#' { 1.0 } else { 0.0 }).collect()
}

/// Bitmap of class `c`, row-major `GLYPH_SIZE x GLYPH_SIZE` with values 0/1.
pub fn glyph(c: usize) -> Vec<f64> {
    if c < DRAWN.len() {
        return drawn(c);
    }
    let earlier: Vec<Vec<f64>> = (0..c).map(glyph).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c79_7068);
    rng.set_stream(c as u64);
    loop {
        let g: Vec<f64> = (0..GLYPH_SIZE * GLYPH_SIZE).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        if g.iter().any(|&v| v > 0.0) && !earlier.contains(&g) {
            return g;
        }
    }
}
