//! Deterministic worker-thread helpers.
//!
//! Per-cell kernels write disjoint output slots, so they may run on any
//! number of threads without changing a single bit of the result. The worker
//! count is capped by the `RISKFLOW_THREADS` environment variable and
//! defaults to the machine's available parallelism. Small problems stay on
//! the calling thread; threading only pays off once a grid has tens of
//! thousands of cells.

use std::num::NonZeroUsize;

/// Below this many output elements the scoped-thread setup costs more than
/// the work itself.
const PAR_MIN_LEN: usize = 1 << 15;

/// Worker-thread cap: `RISKFLOW_THREADS` if set and valid, otherwise the
/// available parallelism.
pub fn thread_count() -> usize {
    if let Ok(raw) = std::env::var("RISKFLOW_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism()
        .map(NonZeroUsize::get)
        .unwrap_or(1)
}

/// Fills `out[i] = f(i)` for every index, splitting the range over worker
/// threads when it is large enough. `f` must be a pure function of `i`.
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = thread_count();
    if out.len() < PAR_MIN_LEN || threads < 2 {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i);
        }
        return;
    }
    let chunk = out.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (c, part) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = c * chunk;
                for (i, slot) in part.iter_mut().enumerate() {
                    *slot = f(base + i);
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_indexed_matches_sequential_on_small_input() {
        let mut out = vec![0.0; 100];
        fill_indexed(&mut out, |i| i as f64 * 0.5);
        assert!(out.iter().enumerate().all(|(i, &v)| v == i as f64 * 0.5));
    }

    #[test]
    fn fill_indexed_matches_sequential_on_large_input() {
        let len = PAR_MIN_LEN + 17;
        let mut par = vec![0u64; len];
        fill_indexed(&mut par, |i| (i as u64).wrapping_mul(2654435761));
        let seq: Vec<u64> = (0..len as u64).map(|i| i.wrapping_mul(2654435761)).collect();
        assert_eq!(par, seq);
    }
}
