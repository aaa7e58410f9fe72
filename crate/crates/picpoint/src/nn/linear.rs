//! Affine layer with explicit backward.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::{par_matmul, Elem, GradStore, ParamId, ParamStore};

/// `y = x W^T + b`, weight stored as `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// He-uniform weight init (`U(-sqrt(6/in), sqrt(6/in))`) with bias
    /// `U(-1/sqrt(in), 1/sqrt(in))`. Draws happen in f64 before
    /// conversion so the stream is identical across element types.
    pub fn init<T: Elem>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let mut w = Array2::<T>::zeros((out_dim, in_dim));
        for v in w.iter_mut() {
            *v = T::from_f64(rng.gen_range(-limit..limit));
        }
        let b_limit = 1.0 / (in_dim as f64).sqrt();
        let mut b = Array1::<T>::zeros(out_dim);
        for v in b.iter_mut() {
            *v = T::from_f64(rng.gen_range(-b_limit..b_limit));
        }
        Linear {
            w: ps.add(format!("{name}.weight"), w.into_dyn()),
            b: ps.add(format!("{name}.bias"), b.into_dyn()),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Elem>(&self, ps: &ParamStore<T>, x: ArrayView2<'_, T>) -> Array2<T> {
        debug_assert_eq!(x.ncols(), self.in_dim);
        let w = ps.mat(self.w);
        let mut y = par_matmul(x, w.t());
        let b = ps.vec(self.b);
        for mut row in y.rows_mut() {
            row += &b;
        }
        y
    }

    /// Accumulates `dW`, `db` and returns `dx`.
    pub fn backward<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        x: ArrayView2<'_, T>,
        dy: ArrayView2<'_, T>,
        gs: &mut GradStore<T>,
    ) -> Array2<T> {
        let dw = par_matmul(dy.t(), x);
        gs.accum(self.w, dw.into_dyn().view());
        let db = dy.sum_axis(Axis(0));
        gs.accum(self.b, db.into_dyn().view());
        par_matmul(dy, ps.mat(self.w))
    }
}
