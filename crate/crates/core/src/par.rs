//! Data-parallel helpers. With the `parallel` feature these dispatch to rayon,
//! otherwise they run sequentially. Every helper produces results in index
//! order, so outputs are bitwise identical regardless of thread count.

/// `(0..n).map(f).collect()`, possibly in parallel.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Walks three equally long slices in lockstep chunks of `chunk` elements.
#[cfg(feature = "parallel")]
pub fn zip3_chunks_mut<T, F>(a: &mut [T], b: &mut [T], c: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T], &mut [T], &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    let n = chunk.max(1);
    a.par_chunks_mut(n)
        .zip(b.par_chunks_mut(n))
        .zip(c.par_chunks_mut(n))
        .enumerate()
        .for_each(|(i, ((x, y), z))| f(i, x, y, z));
}

#[cfg(not(feature = "parallel"))]
pub fn zip3_chunks_mut<T, F>(a: &mut [T], b: &mut [T], c: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T], &mut [T], &mut [T]) + Sync + Send,
{
    let n = chunk.max(1);
    a.chunks_mut(n)
        .zip(b.chunks_mut(n))
        .zip(c.chunks_mut(n))
        .enumerate()
        .for_each(|(i, ((x, y), z))| f(i, x, y, z));
}
