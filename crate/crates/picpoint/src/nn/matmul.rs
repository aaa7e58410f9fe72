//! Deterministic matrix multiplication helpers.
//!
//! `par_matmul` splits the left operand into fixed-size row chunks and
//! multiplies the chunks on the rayon pool. Every output element is
//! produced by exactly one single-threaded GEMM with a schedule that does
//! not depend on the thread count, so results are bit-identical whether
//! the pool has 1 or 64 workers.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::Elem;

/// Row-chunk height for the parallel path. Fixed: changing it would not
/// change results, but keeping it constant makes schedules predictable.
const CHUNK_ROWS: usize = 128;

/// Work threshold (in multiply-adds) below which threading is skipped.
const PAR_THRESHOLD: usize = 1 << 20;

pub fn matmul<T: Elem>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Array2<T> {
    a.dot(&b)
}

pub fn par_matmul<T: Elem>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Array2<T> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ: {k} vs {k2}");
    let mut out = Array2::<T>::zeros((m, n));
    if m.saturating_mul(k).saturating_mul(n) < PAR_THRESHOLD || m <= CHUNK_ROWS {
        general_mat_mul(T::one(), &a, &b, T::zero(), &mut out.view_mut());
        return out;
    }
    out.axis_chunks_iter_mut(Axis(0), CHUNK_ROWS)
        .into_par_iter()
        .zip(a.axis_chunks_iter(Axis(0), CHUNK_ROWS).into_par_iter())
        .for_each(|(mut oc, ac)| {
            general_mat_mul(T::one(), &ac, &b, T::zero(), &mut oc);
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::Rng;

    #[test]
    fn par_matches_serial_bitwise() {
        let mut rng = crate::nn::rng_from_seed(9);
        let a = Array::from_shape_fn((517, 64), |_| rng.gen_range(-1.0f32..1.0));
        let b = Array::from_shape_fn((64, 96), |_| rng.gen_range(-1.0f32..1.0));
        let serial = matmul(a.view(), b.view());
        let parallel = par_matmul(a.view(), b.view());
        assert_eq!(serial, parallel);
    }

    #[test]
    fn par_matmul_small_path() {
        let a = ndarray::array![[1.0f64, 2.0], [3.0, 4.0]];
        let b = ndarray::array![[5.0f64], [6.0]];
        let got = par_matmul(a.view(), b.view());
        assert_eq!(got, ndarray::array![[17.0], [39.0]]);
    }
}
