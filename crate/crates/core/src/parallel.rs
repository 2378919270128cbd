//! Deterministic fan-out over fixed work items.
//!
//! Work is always split into items whose boundaries do not depend on the
//! worker count, and results come back in item order, so any reduction the
//! caller performs afterwards has a fixed bracketing.

use alloc::vec::Vec;

pub trait Parallel: Sync {
    /// Evaluate `f(i)` for `i in 0..n` and return the results in order.
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T>;

    fn workers(&self) -> usize {
        1
    }
}

/// Runs every item on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Parallel for Sequential {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

/// Split `0..n` into consecutive chunks of at most `size` items.
pub fn chunks(n: usize, size: usize) -> Vec<core::ops::Range<usize>> {
    let size = size.max(1);
    (0..n.div_ceil(size)).map(|i| i * size..((i + 1) * size).min(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range() {
        assert_eq!(chunks(7, 3), alloc::vec![0..3, 3..6, 6..7]);
        assert!(chunks(0, 4).is_empty());
    }

    #[test]
    fn sequential_keeps_order() {
        assert_eq!(Sequential.map(4, |i| i * i), alloc::vec![0, 1, 4, 9]);
    }
}
