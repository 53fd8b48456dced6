//! Execution strategy for the data-parallel loops.
//!
//! Every parallel helper here splits work into chunks whose boundaries do not
//! depend on the number of worker threads, and reduces partial results in
//! ascending chunk order. Sequential and parallel runs therefore produce
//! bitwise-identical floating point results.

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise falls back
    /// to sequential execution.
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread over a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Fixed chunk length used by chunked reductions over data points.
pub const CHUNK: usize = 16;

/// Maps `f` over `0..len` and collects the results in index order.
pub fn map_indexed<T, F>(len: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Chunked fold over `0..len` with an index-ascending reduction.
///
/// `fold` accumulates one chunk into a fresh accumulator produced by `init`;
/// `merge` adds a chunk result into the running total.
pub fn chunked_reduce<A, I, F, M>(len: usize, exec: Execution, init: I, fold: F, mut merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: FnMut(&mut A, A),
{
    let chunks = len.div_ceil(CHUNK);
    let partials = map_indexed(chunks, exec, |c| {
        let mut acc = init();
        let end = ((c + 1) * CHUNK).min(len);
        for i in c * CHUNK..end {
            fold(&mut acc, i);
        }
        acc
    });
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}
