//! Projection heads into the shared latent space.
//!
//! Global heads are two-layer MLPs; local heads apply the same two
//! affine layers per location (1x1 convolutions in spirit: no
//! cross-location mixing). The local 3D head concatenates a 64-d pose
//! code, derived from the view matrix by a two-layer MLP, to every
//! location of its sample. Every emitted embedding is L2-normalized with
//! an epsilon guard.

use ndarray::{Array2, ArrayView2, Axis};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::nn::{
    l2_normalize_rows, l2_normalize_rows_backward, relu, relu_backward_inplace, Elem, GradStore,
    Linear, ParamStore,
};

/// Epsilon added to the norm before division.
pub const NORM_EPS: f64 = 1e-12;

/// Widths of the latent pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadsConfig {
    /// 3D backbone feature width.
    pub c3: usize,
    /// 2D backbone feature width.
    pub c2: usize,
    /// Latent dimension.
    pub d: usize,
    /// Hidden width of the global heads.
    pub global_hidden: usize,
    /// Hidden width of the local heads (pre pose concat).
    pub local_hidden: usize,
    /// Pose code width.
    pub pose_dim: usize,
    /// Concatenate pose codes into the local 3D head.
    pub use_pose: bool,
}

impl Default for HeadsConfig {
    fn default() -> Self {
        HeadsConfig {
            c3: 128,
            c2: 128,
            d: 512,
            global_hidden: 512,
            local_hidden: 256,
            pose_dim: 64,
            use_pose: true,
        }
    }
}

/// Two affine layers with a ReLU between, then row L2 normalization.
#[derive(Debug, Clone)]
pub struct GlobalHead {
    l1: Linear,
    l2: Linear,
}

pub struct GlobalHeadCtx<T: Elem> {
    x: Array2<T>,
    h_pre: Array2<T>,
    h: Array2<T>,
    y_raw: Array2<T>,
}

impl GlobalHead {
    pub fn init<T: Elem>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        d: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        GlobalHead {
            l1: Linear::init(ps, &format!("{name}.l1"), in_dim, hidden, rng),
            l2: Linear::init(ps, &format!("{name}.l2"), hidden, d, rng),
        }
    }

    pub fn forward<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        x: ArrayView2<'_, T>,
    ) -> Result<(Array2<T>, GlobalHeadCtx<T>)> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite input to projection head"));
        }
        let h_pre = self.l1.forward(ps, x);
        let h = relu(&h_pre);
        let y_raw = self.l2.forward(ps, h.view());
        let y = l2_normalize_rows(y_raw.view(), NORM_EPS);
        Ok((y, GlobalHeadCtx { x: x.to_owned(), h_pre, h, y_raw }))
    }

    pub fn backward<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        ctx: &GlobalHeadCtx<T>,
        d_y: ArrayView2<'_, T>,
        gs: &mut GradStore<T>,
    ) -> Array2<T> {
        let d_raw = l2_normalize_rows_backward(ctx.y_raw.view(), d_y, NORM_EPS);
        let mut d_h = self.l2.backward(ps, ctx.h.view(), d_raw.view(), gs);
        relu_backward_inplace(&mut d_h, ctx.h_pre.view());
        self.l1.backward(ps, ctx.x.view(), d_h.view(), gs)
    }
}

/// Per-location two-layer head. With `pose_dim` set, a per-sample code
/// is concatenated to the hidden activation of each of the sample's
/// locations before the second layer.
#[derive(Debug, Clone)]
pub struct LocalHead {
    l1: Linear,
    l2: Linear,
    pose_dim: Option<usize>,
}

pub struct LocalHeadCtx<T: Elem> {
    x: Array2<T>,
    h_pre: Array2<T>,
    /// Hidden activations with the pose code already appended.
    cat: Array2<T>,
    y_raw: Array2<T>,
    locations_per_sample: usize,
}

impl LocalHead {
    pub fn init<T: Elem>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        pose_dim: Option<usize>,
        d: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let cat_dim = hidden + pose_dim.unwrap_or(0);
        LocalHead {
            l1: Linear::init(ps, &format!("{name}.l1"), in_dim, hidden, rng),
            l2: Linear::init(ps, &format!("{name}.l2"), cat_dim, d, rng),
            pose_dim,
        }
    }

    /// `x` is (m * locations, in_dim) with the locations of sample `s`
    /// occupying rows `s*locations .. (s+1)*locations`. `codes` must be
    /// (m, pose_dim) exactly when the head was built with a pose input.
    pub fn forward<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        x: ArrayView2<'_, T>,
        codes: Option<ArrayView2<'_, T>>,
    ) -> Result<(Array2<T>, LocalHeadCtx<T>)> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite input to projection head"));
        }
        let h_pre = self.l1.forward(ps, x);
        let h = relu(&h_pre);
        let (cat, locations_per_sample) = match (self.pose_dim, codes) {
            (Some(p), Some(codes)) => {
                if codes.ncols() != p {
                    return Err(Error::ShapeMismatch(format!(
                        "pose codes have width {}, head expects {p}",
                        codes.ncols()
                    )));
                }
                let m = codes.nrows();
                if m == 0 || x.nrows() % m != 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "{} locations cannot be split over {m} samples",
                        x.nrows()
                    )));
                }
                let per = x.nrows() / m;
                let hidden = h.ncols();
                let mut cat = Array2::zeros((x.nrows(), hidden + p));
                for (row, hrow) in h.rows().into_iter().enumerate() {
                    let mut dst = cat.row_mut(row);
                    for (slot, &v) in hrow.iter().enumerate() {
                        dst[slot] = v;
                    }
                    let code = codes.row(row / per);
                    for (slot, &v) in code.iter().enumerate() {
                        dst[hidden + slot] = v;
                    }
                }
                (cat, per)
            }
            (None, None) => (h, 1),
            (Some(_), None) => {
                return Err(Error::invalid("head built with pose input but no codes given"))
            }
            (None, Some(_)) => {
                return Err(Error::invalid("head built without pose input but codes given"))
            }
        };
        let y_raw = self.l2.forward(ps, cat.view());
        let y = l2_normalize_rows(y_raw.view(), NORM_EPS);
        Ok((y, LocalHeadCtx { x: x.to_owned(), h_pre, cat, y_raw, locations_per_sample }))
    }

    /// Returns `(d_x, d_codes)`; `d_codes` is present iff the head takes
    /// a pose input (summed over each sample's locations).
    pub fn backward<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        ctx: &LocalHeadCtx<T>,
        d_y: ArrayView2<'_, T>,
        gs: &mut GradStore<T>,
    ) -> (Array2<T>, Option<Array2<T>>) {
        let d_raw = l2_normalize_rows_backward(ctx.y_raw.view(), d_y, NORM_EPS);
        let d_cat = self.l2.backward(ps, ctx.cat.view(), d_raw.view(), gs);
        let (mut d_h, d_codes) = match self.pose_dim {
            Some(p) => {
                let hidden = d_cat.ncols() - p;
                let per = ctx.locations_per_sample;
                let m = d_cat.nrows() / per;
                let mut d_codes = Array2::zeros((m, p));
                for (row, drow) in d_cat.rows().into_iter().enumerate() {
                    let mut dst = d_codes.row_mut(row / per);
                    for slot in 0..p {
                        dst[slot] += drow[hidden + slot];
                    }
                }
                (d_cat.slice(ndarray::s![.., 0..hidden]).to_owned(), Some(d_codes))
            }
            None => (d_cat, None),
        };
        relu_backward_inplace(&mut d_h, ctx.h_pre.view());
        let d_x = self.l1.backward(ps, ctx.x.view(), d_h.view(), gs);
        (d_x, d_codes)
    }
}

/// Two-layer MLP from the flattened 4x4 view matrix (16 values,
/// row-major) to a 64-d pose code. No normalization; codes are plain
/// features.
#[derive(Debug, Clone)]
pub struct PoseEncoder {
    l1: Linear,
    l2: Linear,
}

pub struct PoseEncoderCtx<T: Elem> {
    x: Array2<T>,
    h_pre: Array2<T>,
    h: Array2<T>,
}

impl PoseEncoder {
    pub fn init<T: Elem>(
        ps: &mut ParamStore<T>,
        name: &str,
        pose_dim: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        PoseEncoder {
            l1: Linear::init(ps, &format!("{name}.l1"), 16, pose_dim, rng),
            l2: Linear::init(ps, &format!("{name}.l2"), pose_dim, pose_dim, rng),
        }
    }

    pub fn forward<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        views_flat: ArrayView2<'_, T>,
    ) -> Result<(Array2<T>, PoseEncoderCtx<T>)> {
        if views_flat.ncols() != 16 {
            return Err(Error::ShapeMismatch(format!(
                "pose encoder expects 16 columns, got {}",
                views_flat.ncols()
            )));
        }
        let h_pre = self.l1.forward(ps, views_flat);
        let h = relu(&h_pre);
        let y = self.l2.forward(ps, h.view());
        Ok((y, PoseEncoderCtx { x: views_flat.to_owned(), h_pre, h }))
    }

    pub fn backward<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        ctx: &PoseEncoderCtx<T>,
        d_y: ArrayView2<'_, T>,
        gs: &mut GradStore<T>,
    ) {
        let mut d_h = self.l2.backward(ps, ctx.h.view(), d_y, gs);
        relu_backward_inplace(&mut d_h, ctx.h_pre.view());
        let _ = self.l1.backward(ps, ctx.x.view(), d_h.view(), gs);
    }
}

/// The four projection heads plus the pose encoder, wired to a config.
#[derive(Debug, Clone)]
pub struct Heads {
    pub cfg: HeadsConfig,
    pub global_3d: GlobalHead,
    pub global_2d: GlobalHead,
    pub local_3d: LocalHead,
    pub local_2d: LocalHead,
    pub pose: PoseEncoder,
}

impl Heads {
    pub fn init<T: Elem>(ps: &mut ParamStore<T>, cfg: HeadsConfig, rng: &mut ChaCha12Rng) -> Self {
        let global_3d =
            GlobalHead::init(ps, "head3d_glb", cfg.c3, cfg.global_hidden, cfg.d, rng);
        let global_2d =
            GlobalHead::init(ps, "head2d_glb", cfg.c2, cfg.global_hidden, cfg.d, rng);
        let local_3d = LocalHead::init(
            ps,
            "head3d_lcl",
            cfg.c3,
            cfg.local_hidden,
            cfg.use_pose.then_some(cfg.pose_dim),
            cfg.d,
            rng,
        );
        let local_2d =
            LocalHead::init(ps, "head2d_lcl", cfg.c2, cfg.local_hidden, None, cfg.d, rng);
        let pose = PoseEncoder::init(ps, "pose", cfg.pose_dim, rng);
        Heads { cfg, global_3d, global_2d, local_3d, local_2d, pose }
    }
}

/// Largest per-row deviation from unit norm; used by tests and entry guards.
pub fn max_norm_deviation<T: Elem>(rows: ArrayView2<'_, T>) -> f64 {
    rows.axis_iter(Axis(0))
        .map(|r| {
            let n = r.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt().to_f64();
            (n - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{central_diff_grad, max_sym_rel_error, rng_from_seed};
    use ndarray::Array;
    use rand::Rng;

    #[test]
    fn global_head_outputs_unit_norm() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(1);
        let head = GlobalHead::init(&mut ps, "g", 16, 32, 24, &mut rng);
        let x = Array::from_shape_fn((8, 16), |_| rng.gen_range(-1.0..1.0));
        let (y, _) = head.forward(&ps, x.view()).unwrap();
        assert!(max_norm_deviation(y.view()) < 1e-5);
    }

    #[test]
    fn global_head_is_not_scale_invariant() {
        // Guards against an accidentally linear head: doubling the input
        // must change the normalized output (bias + ReLU break linearity).
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(2);
        let head = GlobalHead::init(&mut ps, "g", 8, 16, 8, &mut rng);
        let x = Array::from_shape_fn((4, 8), |_| rng.gen_range(-1.0..1.0));
        let x2 = &x * 2.0;
        let (a, _) = head.forward(&ps, x.view()).unwrap();
        let (b, _) = head.forward(&ps, x2.view()).unwrap();
        let dev = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev > 1e-6, "head behaved linearly (deviation {dev})");
    }

    #[test]
    fn global_head_gradcheck() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(3);
        let head = GlobalHead::init(&mut ps, "g", 6, 10, 7, &mut rng);
        let x = Array::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let probe = Array::from_shape_fn((3, 7), |_| rng.gen_range(-1.0..1.0));
        let mut gs = GradStore::for_store(&ps);
        let (_, ctx) = head.forward(&ps, x.view()).unwrap();
        let dx = head.backward(&ps, &ctx, probe.view(), &mut gs);

        for id in ps.ids() {
            let base: Vec<f64> = ps.get(id).iter().copied().collect();
            let shape = ps.get(id).shape().to_vec();
            let f = |vals: &[f64]| {
                let mut ps2 = ps.clone();
                ps2.set(id, Array::from_shape_vec(shape.clone(), vals.to_vec()).unwrap());
                let (y, _) = head.forward(&ps2, x.view()).unwrap();
                (&y * &probe).sum()
            };
            let numeric = central_diff_grad(f, &base, 1e-6);
            let analytic: Vec<f64> = gs.get(id).unwrap().iter().copied().collect();
            let err = max_sym_rel_error(&analytic, &numeric);
            assert!(err < 1e-3, "{}: rel err {err}", ps.name(id));
        }
        // Input gradient too.
        let x0: Vec<f64> = x.iter().copied().collect();
        let fx = |vals: &[f64]| {
            let xm = Array::from_shape_vec((3, 6), vals.to_vec()).unwrap();
            let (y, _) = head.forward(&ps, xm.view()).unwrap();
            (&y * &probe).sum()
        };
        let numeric = central_diff_grad(fx, &x0, 1e-6);
        let analytic: Vec<f64> = dx.iter().copied().collect();
        assert!(max_sym_rel_error(&analytic, &numeric) < 1e-3);
    }

    #[test]
    fn local_head_is_per_location() {
        // Permuting locations permutes outputs; changing one location
        // changes only that row.
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(4);
        let head = LocalHead::init(&mut ps, "l", 8, 12, None, 6, &mut rng);
        let x = Array::from_shape_fn((5, 8), |_| rng.gen_range(-1.0..1.0));
        let (y, _) = head.forward(&ps, x.view(), None).unwrap();

        let mut xp = x.clone();
        let row0 = x.row(0).to_owned();
        xp.row_mut(0).assign(&x.row(4));
        xp.row_mut(4).assign(&row0);
        let (yp, _) = head.forward(&ps, xp.view(), None).unwrap();
        assert_eq!(y.row(0), yp.row(4));
        assert_eq!(y.row(4), yp.row(0));
        assert_eq!(y.row(2), yp.row(2));

        let mut xm = x.clone();
        xm[[1, 3]] += 0.5;
        let (ym, _) = head.forward(&ps, xm.view(), None).unwrap();
        for r in 0..5 {
            let changed = y.row(r) != ym.row(r);
            assert_eq!(changed, r == 1, "row {r}");
        }
    }

    #[test]
    fn pose_code_changes_local_embeddings() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(5);
        let head = LocalHead::init(&mut ps, "l", 8, 12, Some(4), 6, &mut rng);
        let x = Array::from_shape_fn((6, 8), |_| rng.gen_range(-1.0..1.0));
        let zero_codes = Array2::<f64>::zeros((2, 4));
        let codes = Array::from_shape_fn((2, 4), |_| rng.gen_range(-1.0..1.0));
        let (a, _) = head.forward(&ps, x.view(), Some(zero_codes.view())).unwrap();
        let (b, _) = head.forward(&ps, x.view(), Some(codes.view())).unwrap();
        let dev = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev > 1e-6, "pose path is dead");
    }

    #[test]
    fn constant_grid_yields_identical_embeddings() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(6);
        let head = LocalHead::init(&mut ps, "l", 8, 12, None, 6, &mut rng);
        let x = Array2::from_elem((49, 8), 0.3);
        let (y, _) = head.forward(&ps, x.view(), None).unwrap();
        for r in 1..49 {
            let dev = (&y.row(0) - &y.row(r)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(dev < 1e-6);
        }
    }

    #[test]
    fn local_head_gradcheck_including_pose_path() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(7);
        let head = LocalHead::init(&mut ps, "l", 5, 9, Some(4), 6, &mut rng);
        let m = 2;
        let per = 3;
        let x = Array::from_shape_fn((m * per, 5), |_| rng.gen_range(-1.0..1.0));
        let codes = Array::from_shape_fn((m, 4), |_| rng.gen_range(-1.0..1.0));
        let probe = Array::from_shape_fn((m * per, 6), |_| rng.gen_range(-1.0..1.0));

        let mut gs = GradStore::for_store(&ps);
        let (_, ctx) = head.forward(&ps, x.view(), Some(codes.view())).unwrap();
        let (dx, d_codes) = head.backward(&ps, &ctx, probe.view(), &mut gs);
        let d_codes = d_codes.unwrap();

        for id in ps.ids() {
            let base: Vec<f64> = ps.get(id).iter().copied().collect();
            let shape = ps.get(id).shape().to_vec();
            let f = |vals: &[f64]| {
                let mut ps2 = ps.clone();
                ps2.set(id, Array::from_shape_vec(shape.clone(), vals.to_vec()).unwrap());
                let (y, _) = head.forward(&ps2, x.view(), Some(codes.view())).unwrap();
                (&y * &probe).sum()
            };
            let numeric = central_diff_grad(f, &base, 1e-6);
            let analytic: Vec<f64> = gs.get(id).unwrap().iter().copied().collect();
            assert!(
                max_sym_rel_error(&analytic, &numeric) < 1e-3,
                "{} fails gradcheck",
                ps.name(id)
            );
        }

        let c0: Vec<f64> = codes.iter().copied().collect();
        let fc = |vals: &[f64]| {
            let cm = Array::from_shape_vec((m, 4), vals.to_vec()).unwrap();
            let (y, _) = head.forward(&ps, x.view(), Some(cm.view())).unwrap();
            (&y * &probe).sum()
        };
        let numeric = central_diff_grad(fc, &c0, 1e-6);
        let analytic: Vec<f64> = d_codes.iter().copied().collect();
        assert!(max_sym_rel_error(&analytic, &numeric) < 1e-3, "pose-code gradient");

        let x0: Vec<f64> = x.iter().copied().collect();
        let fxv = |vals: &[f64]| {
            let xm = Array::from_shape_vec((m * per, 5), vals.to_vec()).unwrap();
            let (y, _) = head.forward(&ps, xm.view(), Some(codes.view())).unwrap();
            (&y * &probe).sum()
        };
        let numeric = central_diff_grad(fxv, &x0, 1e-6);
        let analytic: Vec<f64> = dx.iter().copied().collect();
        assert!(max_sym_rel_error(&analytic, &numeric) < 1e-3, "input gradient");
    }

    #[test]
    fn pose_encoder_is_deterministic_and_discriminative() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(8);
        let enc = PoseEncoder::init(&mut ps, "pose", 64, &mut rng);
        let views = crate::geometry::dodecahedron_viewpoints(2.2).unwrap();
        let mut flat = Array2::zeros((2, 16));
        for (s, eye) in views.iter().take(2).enumerate() {
            let pose = crate::render::camera_at(*eye, 1.0).unwrap();
            for (k, v) in pose.view_row_major().iter().enumerate() {
                flat[[s, k]] = *v;
            }
        }
        let (a, _) = enc.forward(&ps, flat.view()).unwrap();
        let (b, _) = enc.forward(&ps, flat.view()).unwrap();
        assert_eq!(a, b);
        let dev = (&a.row(0) - &a.row(1)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev > 0.0, "two distinct views must encode differently");
    }

    #[test]
    fn pose_encoder_gradcheck() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(9);
        let enc = PoseEncoder::init(&mut ps, "pose", 8, &mut rng);
        let x = Array::from_shape_fn((3, 16), |_| rng.gen_range(-1.0..1.0));
        let probe = Array::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0));
        let mut gs = GradStore::for_store(&ps);
        let (_, ctx) = enc.forward(&ps, x.view()).unwrap();
        enc.backward(&ps, &ctx, probe.view(), &mut gs);
        for id in ps.ids() {
            let base: Vec<f64> = ps.get(id).iter().copied().collect();
            let shape = ps.get(id).shape().to_vec();
            let f = |vals: &[f64]| {
                let mut ps2 = ps.clone();
                ps2.set(id, Array::from_shape_vec(shape.clone(), vals.to_vec()).unwrap());
                let (y, _) = enc.forward(&ps2, x.view()).unwrap();
                (&y * &probe).sum()
            };
            let numeric = central_diff_grad(f, &base, 1e-6);
            let analytic: Vec<f64> = gs.get(id).unwrap().iter().copied().collect();
            assert!(max_sym_rel_error(&analytic, &numeric) < 1e-3, "{}", ps.name(id));
        }
    }

    #[test]
    fn heads_bundle_registers_expected_parameters() {
        let mut ps = ParamStore::<f32>::new();
        let mut rng = rng_from_seed(10);
        let _ = Heads::init(&mut ps, HeadsConfig::default(), &mut rng);
        let names: Vec<&str> = ps.iter().map(|(n, _)| n).collect();
        for expected in [
            "head3d_glb.l1.weight",
            "head2d_glb.l2.bias",
            "head3d_lcl.l2.weight",
            "head2d_lcl.l1.weight",
            "pose.l1.weight",
        ] {
            assert!(names.contains(&expected), "missing {expected}");
        }
        // Pose-conditioned local 3D head takes 256 + 64 inputs.
        let w = ps.get(ps.id("head3d_lcl.l2.weight").unwrap());
        assert_eq!(w.shape(), [512, 320]);
    }
}
