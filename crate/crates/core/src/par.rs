//! Data-parallel helpers. With the `parallel` feature these dispatch to rayon;
//! without it they run the same closures sequentially. Results are always
//! collected in index order, so output does not depend on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::linalg::Matrix;

/// `(0..len).map(f).collect()`, possibly in parallel.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk_mut<F>(data: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
}

/// `a * b`, one output column per task.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let m = a.nrows();
    let mut out = Matrix::zeros(m, b.ncols());
    for_each_chunk_mut(out.as_mut_slice(), m, |j, col| {
        let r = a * b.column(j);
        col.copy_from_slice(r.as_slice());
    });
    out
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunks_cover_everything() {
        let mut data = vec![0.0; 10];
        for_each_chunk_mut(&mut data, 3, |i, chunk| {
            for x in chunk.iter_mut() {
                *x = i as f64;
            }
        });
        assert_eq!(data, vec![0., 0., 0., 1., 1., 1., 2., 2., 2., 3.]);
    }

    #[test]
    fn matmul_matches_dense_product() {
        let a = Matrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        let b = Matrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.5);
        assert!((matmul(&a, &b) - &a * &b).amax() < 1e-12);
        assert_eq!(matmul(&Matrix::zeros(0, 3), &b).shape(), (0, 4));
    }
}
