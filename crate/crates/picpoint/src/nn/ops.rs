//! Elementwise activation and normalization primitives.

use ndarray::{Array2, ArrayView2};

use super::Elem;

pub fn relu<T: Elem>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Masks `dy` in place by the sign of the pre-activation.
pub fn relu_backward_inplace<T: Elem>(dy: &mut Array2<T>, pre: ArrayView2<'_, T>) {
    for (d, &p) in dy.iter_mut().zip(pre.iter()) {
        if p <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Row-wise `x / (||x|| + eps)`. The epsilon keeps exactly-zero rows
/// (possible at init with rectifiers) finite.
pub fn l2_normalize_rows<T: Elem>(x: ArrayView2<'_, T>, eps: f64) -> Array2<T> {
    let eps = T::from_f64(eps);
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let norm = row.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        let denom = norm + eps;
        row.mapv_inplace(|v| v / denom);
    }
    out
}

/// Backward of [`l2_normalize_rows`]: with `s = ||x|| + eps`,
/// `dx = dy / s - x * (x . dy) / (||x|| * s^2)`.
pub fn l2_normalize_rows_backward<T: Elem>(
    x: ArrayView2<'_, T>,
    dy: ArrayView2<'_, T>,
    eps: f64,
) -> Array2<T> {
    let eps = T::from_f64(eps);
    let mut dx = Array2::zeros(x.raw_dim());
    for ((xr, dyr), mut dxr) in x.rows().into_iter().zip(dy.rows()).zip(dx.rows_mut()) {
        let norm = xr.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        let s = norm + eps;
        let dot = xr.iter().zip(dyr.iter()).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        if norm > T::from_f64(1e-300) {
            let coeff = dot / (norm * s * s);
            for ((d, &xv), &g) in dxr.iter_mut().zip(xr.iter()).zip(dyr.iter()) {
                *d = g / s - xv * coeff;
            }
        } else {
            for (d, &g) in dxr.iter_mut().zip(dyr.iter()) {
                *d = g / s;
            }
        }
    }
    dx
}
