//! Independent runs over many seeds.

use crate::par;

/// Runs `f` once per seed, in parallel when the `parallel` feature is on.
/// Results come back in seed order either way.
pub fn run_seeds<R, F>(seeds: &[u64], f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    par::map(seeds, |&s| f(s))
}

pub fn run_seeds_sequential<R, F>(seeds: &[u64], f: F) -> Vec<R>
where
    F: Fn(u64) -> R,
{
    par::map_sequential(seeds, |&s| f(s))
}

/// `count` consecutive seeds starting at `base`.
pub fn seed_range(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}
