//! Fixed-shape pairwise reduction.
//!
//! Floating-point addition is not associative, so the order partial sums are
//! combined in decides the last bits of a result. [`tree_map_reduce`] always
//! combines `[lo, mid)` with `[mid, hi)` at `mid = lo + len/2`, which fixes
//! the order regardless of how many threads execute it.

/// Maps every index in `0..len` and reduces the results pairwise over a
/// balanced binary tree whose shape depends only on `len`. Subtrees run in
/// parallel via `rayon::join`.
pub fn tree_map_reduce<T, M, C>(len: usize, map: &M, combine: &C) -> Option<T>
where
    T: Send,
    M: Fn(usize) -> T + Sync,
    C: Fn(T, T) -> T + Sync,
{
    (len > 0).then(|| range(0, len, map, combine))
}

fn range<T, M, C>(lo: usize, hi: usize, map: &M, combine: &C) -> T
where
    T: Send,
    M: Fn(usize) -> T + Sync,
    C: Fn(T, T) -> T + Sync,
{
    if hi - lo == 1 {
        return map(lo);
    }
    let mid = lo + (hi - lo) / 2;
    let (l, r) = rayon::join(|| range(lo, mid, map, combine), || range(mid, hi, map, combine));
    combine(l, r)
}
