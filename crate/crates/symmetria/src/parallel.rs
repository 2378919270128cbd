//! Scoped-thread fan-out with results returned in item order.

use std::num::NonZeroUsize;

use symmetria_core::parallel::Parallel;

/// Environment variable capping the worker count.
pub const THREADS_VAR: &str = "SYMMETRIA_THREADS";

/// Items are dealt round-robin to a fixed number of workers; each result is
/// stored at its item index, so the output never depends on scheduling.
#[derive(Clone, Copy, Debug)]
pub struct Threaded {
    workers: usize,
}

impl Threaded {
    pub fn new(workers: usize) -> Self {
        Threaded { workers: workers.max(1) }
    }

    /// Available cores, capped by `SYMMETRIA_THREADS` when set.
    pub fn from_env() -> Self {
        let cores = std::thread::available_parallelism().map_or(1, NonZeroUsize::get);
        let cap = std::env::var(THREADS_VAR).ok().and_then(|v| v.trim().parse::<usize>().ok());
        Threaded::new(cap.map_or(cores, |c| c.min(cores)))
    }
}

impl Parallel for Threaded {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        let workers = self.workers.min(n);
        if workers <= 1 {
            return (0..n).map(f).collect();
        }
        let f = &f;
        let parts: Vec<Vec<(usize, T)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| s.spawn(move || (w..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
        for (i, v) in parts.into_iter().flatten() {
            slots[i] = Some(v);
        }
        slots.into_iter().map(|v| v.expect("every item computed")).collect()
    }

    fn workers(&self) -> usize {
        self.workers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_item_order() {
        for w in [1, 2, 3, 8] {
            let out = Threaded::new(w).map(10, |i| i * i);
            assert_eq!(out, (0..10).map(|i| i * i).collect::<Vec<_>>());
        }
        assert!(Threaded::new(4).map(0, |i| i).is_empty());
    }
}
