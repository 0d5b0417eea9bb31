//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper dispatches work in fixed-size chunks whose per-chunk
//! computation is self-contained, so the parallel and sequential builds
//! produce bit-identical results; only the schedule differs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `f(chunk_index, chunk)` over consecutive `chunk_len` slices of `data`.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_chunk_mut<F>(data: &mut [f32], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    data.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, chunk)| f(i, chunk));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_chunk_mut<F>(data: &mut [f32], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Like [`for_each_chunk_mut`] over two equally chunked buffers in lockstep.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_chunk_pair_mut<F>(a: &mut [f32], b: &mut [f32], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f32], &mut [f32]) + Sync + Send,
{
    a.par_chunks_mut(chunk_len)
        .zip(b.par_chunks_mut(chunk_len))
        .enumerate()
        .for_each(|(i, (ca, cb))| f(i, ca, cb));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_chunk_pair_mut<F>(a: &mut [f32], b: &mut [f32], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f32], &mut [f32]) + Sync + Send,
{
    for (i, (ca, cb)) in a.chunks_mut(chunk_len).zip(b.chunks_mut(chunk_len)).enumerate() {
        f(i, ca, cb);
    }
}

/// Split `out` into row chunks of at most `rows_per_chunk * row_len` floats
/// and run `f(first_row, chunk)` on each. Used to spread single-frame matvec
/// rows across threads in the streaming path.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_row_block<F>(out: &mut [f32], row_len: usize, rows_per_chunk: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    let block = row_len * rows_per_chunk.max(1);
    out.par_chunks_mut(block)
        .enumerate()
        .for_each(|(i, chunk)| f(i * rows_per_chunk.max(1), chunk));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_row_block<F>(out: &mut [f32], row_len: usize, rows_per_chunk: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    let block = row_len * rows_per_chunk.max(1);
    for (i, chunk) in out.chunks_mut(block).enumerate() {
        f(i * rows_per_chunk.max(1), chunk);
    }
}
