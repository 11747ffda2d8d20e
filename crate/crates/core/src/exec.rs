//! Replica execution: data-parallel over replicas with rayon when the
//! `parallel` feature is on, with a sequential path that is always available
//! for benchmarking and for feature-off builds.
//!
//! Replicas communicate nothing; results are collected in index order, so
//! output is identical in both modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over replica indices `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn replicate<T: Send>(n: u32, f: impl Fn(u32) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over replica indices `0..n`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn replicate<T>(n: u32, f: impl Fn(u32) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sequential reference path, kept unconditionally for the benches.
pub fn replicate_seq<T>(n: u32, f: impl Fn(u32) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Size the global worker pool (no-op when the `parallel` feature is off).
/// Call once, before any parallel work.
#[cfg(feature = "parallel")]
pub fn build_global_pool(workers: usize) -> std::result::Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
pub fn build_global_pool(_workers: usize) -> std::result::Result<(), String> {
    Ok(())
}

/// Replica seed derivation: `master ^ mix(index)`, so replica streams are
/// independent and any index range can be re-run in isolation.
pub fn replica_seed(master: u64, index: u32) -> u64 {
    let mut z = (index as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    master ^ (z ^ (z >> 31))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential() {
        let f = |i: u32| (i as u64).wrapping_mul(0x9E37_79B9) as f64;
        assert_eq!(replicate(1000, f), replicate_seq(1000, f));
    }

    #[test]
    fn replica_seeds_distinct() {
        let master = 42;
        let mut seen = std::collections::HashSet::new();
        for i in 0..10_000 {
            assert!(seen.insert(replica_seed(master, i)));
        }
    }
}
