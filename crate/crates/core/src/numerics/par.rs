//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it they
//! run the same closures in order. Results never depend on which path ran:
//! every output element is produced by exactly one closure invocation and
//! collections keep input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f(chunk_index, chunk)` over `data` split into `chunk_len`-sized pieces.
pub fn for_each_chunk_mut<T, G>(data: &mut [T], chunk_len: usize, f: G)
where
    T: Send,
    G: Fn(usize, &mut [T]) + Send + Sync,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Ordered map over a slice.
pub fn map<T, R, G>(items: &[T], f: G) -> Vec<R>
where
    T: Sync,
    R: Send,
    G: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Ordered map over `0..n`.
pub fn map_range<R, G>(n: usize, f: G) -> Vec<R>
where
    R: Send,
    G: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Runs `f` on a single worker so timings are not spread across cores.
pub fn single_worker<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Worker threads available to the current scope.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Row-chunk size that gives each task at least `min_work` scalar operations
/// and creates no more tasks than there are workers.
pub(crate) fn rows_per_task(rows: usize, work_per_row: usize, min_work: usize) -> usize {
    let rows = rows.max(1);
    let min_rows = (min_work / work_per_row.max(1)).max(1);
    let by_workers = rows.div_ceil(workers());
    min_rows.max(by_workers).min(rows)
}
