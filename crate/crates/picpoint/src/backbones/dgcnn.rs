//! Mini-DGCNN: three EdgeConv stages with a dynamic feature-space graph.
//!
//! Each stage applies a shared two-layer map to every edge feature
//! `(x_n, x_j - x_n)` and max-pools over the k neighbors. The first edge
//! layer is evaluated through per-point projections (`W1 [x_n; x_j-x_n]`
//! splits into two point-wise GEMMs), and the backward pass routes
//! gradients only through winning edges, so cost stays far below a dense
//! edge backward.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{par_matmul, Elem, GradStore, Linear, ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct DgcnnConfig {
    /// 3 for raw coordinates, 6 with normals appended.
    pub in_channels: usize,
    /// Neighbors per point.
    pub k: usize,
    /// Output channels of the three EdgeConv stages.
    pub stage_channels: [usize; 3],
    /// Recompute the kNN graph in feature space after each stage. A
    /// static graph (initial coordinate graph everywhere) exists for
    /// debugging.
    pub dynamic_graph: bool,
}

impl Default for DgcnnConfig {
    fn default() -> Self {
        DgcnnConfig { in_channels: 3, k: 20, stage_channels: [64, 64, 128], dynamic_graph: true }
    }
}

/// Per-center local features and the channel-max global feature of one
/// cloud batch entry.
#[derive(Debug, Clone)]
pub struct LocalFeatures3d<T: Elem> {
    /// L x C3.
    pub per_center: Array2<T>,
    /// C3; channel-wise max over all per-point top-level features.
    pub global: Array1<T>,
}

#[derive(Debug, Clone)]
struct EdgeStage {
    /// (h, 2*c_in), columns `[x_n | x_j - x_n]`.
    w1: ParamId,
    b1: ParamId,
    /// (c_out, h).
    w2: ParamId,
    b2: ParamId,
    c_in: usize,
    hidden: usize,
    c_out: usize,
}

struct StageCtx<T: Elem> {
    /// Neighbor table, n x k.
    idx: Array2<u32>,
    /// Point-wise projections: pa = x (W1a - W1b)^T, pb = x W1b^T.
    pa: Array2<T>,
    pb: Array2<T>,
    /// Winning neighbor slot per (point, channel), n x c_out.
    winners: Array2<u32>,
    /// Stage input, n x c_in.
    x: Array2<T>,
}

/// Backward context for one cloud.
pub struct DgcnnCtx<T: Elem> {
    stages: Vec<StageCtx<T>>,
    centers: Vec<usize>,
    /// Winning point index per channel for the global max pool.
    global_winners: Vec<u32>,
    n_points: usize,
}

#[derive(Debug, Clone)]
pub struct Dgcnn {
    pub cfg: DgcnnConfig,
    stages: Vec<EdgeStage>,
}

impl Dgcnn {
    /// Top-level feature width.
    pub fn out_channels(&self) -> usize {
        self.cfg.stage_channels[2]
    }

    pub fn init<T: Elem>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        cfg: DgcnnConfig,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let mut stages = Vec::with_capacity(3);
        let mut c_in = cfg.in_channels;
        for (s, &c_out) in cfg.stage_channels.iter().enumerate() {
            let hidden = c_out;
            let l1 = Linear::init(ps, &format!("{prefix}.stage{s}.edge1"), 2 * c_in, hidden, rng);
            let l2 = Linear::init(ps, &format!("{prefix}.stage{s}.edge2"), hidden, c_out, rng);
            stages.push(EdgeStage {
                w1: l1.w,
                b1: l1.b,
                w2: l2.w,
                b2: l2.b,
                c_in,
                hidden,
                c_out,
            });
            c_in = c_out;
        }
        Dgcnn { cfg, stages }
    }

    /// Forward for one cloud. `x` is n x in_channels (coordinates first),
    /// `centers` index the rows gathered as local region features.
    pub fn forward_sample<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        x: ArrayView2<'_, T>,
        centers: &[usize],
    ) -> Result<(LocalFeatures3d<T>, DgcnnCtx<T>)> {
        let n = x.nrows();
        if x.ncols() != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "cloud has {} channels, backbone expects {}",
                x.ncols(),
                self.cfg.in_channels
            )));
        }
        if self.cfg.k >= n {
            return Err(Error::invalid(format!("k = {} needs more than {n} points", self.cfg.k)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite input to 3D backbone"));
        }
        if let Some(&bad) = centers.iter().find(|&&c| c >= n) {
            return Err(Error::invalid(format!("center index {bad} out of range ({n} points)")));
        }

        // Initial graph always lives in coordinate space (xyz columns).
        let coord_graph = knn_indices(x.slice(ndarray::s![.., 0..3]), self.cfg.k);

        let mut stages = Vec::with_capacity(3);
        let mut cur: Array2<T> = x.to_owned();
        for (s, stage) in self.stages.iter().enumerate() {
            let idx = if s == 0 || !self.cfg.dynamic_graph {
                coord_graph.clone()
            } else {
                knn_indices(cur.view(), self.cfg.k)
            };
            let (out, ctx) = stage.forward(ps, cur.view(), idx)?;
            stages.push(ctx);
            cur = out;
        }

        let c3 = self.out_channels();
        let mut per_center = Array2::zeros((centers.len(), c3));
        for (row, &c) in centers.iter().enumerate() {
            per_center.row_mut(row).assign(&cur.row(c));
        }
        let mut global = Array1::from_elem(c3, T::neg_infinity());
        let mut global_winners = vec![0u32; c3];
        for (p, row) in cur.rows().into_iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v > global[c] {
                    global[c] = v;
                    global_winners[c] = p as u32;
                }
            }
        }
        Ok((
            LocalFeatures3d { per_center, global },
            DgcnnCtx { stages, centers: centers.to_vec(), global_winners, n_points: n },
        ))
    }

    /// Backward for one cloud; gradients accumulate into `gs`.
    pub fn backward_sample<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        ctx: &DgcnnCtx<T>,
        d_per_center: ArrayView2<'_, T>,
        d_global: ArrayView1<'_, T>,
        gs: &mut GradStore<T>,
    ) {
        let c3 = self.out_channels();
        let mut d_cur = Array2::<T>::zeros((ctx.n_points, c3));
        for (row, &c) in ctx.centers.iter().enumerate() {
            let mut dst = d_cur.row_mut(c);
            dst += &d_per_center.row(row);
        }
        for (c, &winner) in ctx.global_winners.iter().enumerate() {
            d_cur[[winner as usize, c]] += d_global[c];
        }
        for (stage, sctx) in self.stages.iter().zip(&ctx.stages).rev() {
            d_cur = stage.backward(ps, sctx, d_cur.view(), gs);
        }
    }

    /// Batched forward: samples run in parallel, outputs stay ordered.
    #[allow(clippy::type_complexity)]
    pub fn forward_batch<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        clouds: ArrayView3<'_, T>,
        centers: &[Vec<usize>],
    ) -> Result<(Vec<LocalFeatures3d<T>>, Vec<DgcnnCtx<T>>)> {
        let m = clouds.dim().0;
        assert_eq!(m, centers.len());
        let results: Vec<(LocalFeatures3d<T>, DgcnnCtx<T>)> = (0..m)
            .into_par_iter()
            .map(|s| self.forward_sample(ps, clouds.index_axis(Axis(0), s), &centers[s]))
            .collect::<Result<_>>()?;
        Ok(results.into_iter().unzip())
    }

    /// Batched backward. Per-sample gradient stores are merged in sample
    /// order, keeping the reduction deterministic for any thread count.
    pub fn backward_batch<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        ctxs: &[DgcnnCtx<T>],
        d_per_center: ArrayView3<'_, T>,
        d_global: ArrayView2<'_, T>,
        gs: &mut GradStore<T>,
    ) {
        let stores: Vec<GradStore<T>> = ctxs
            .par_iter()
            .enumerate()
            .map(|(s, ctx)| {
                let mut local = GradStore::new(ps.len());
                self.backward_sample(
                    ps,
                    ctx,
                    d_per_center.index_axis(Axis(0), s),
                    d_global.row(s),
                    &mut local,
                );
                local
            })
            .collect();
        for store in stores {
            gs.merge(store);
        }
    }
}

impl EdgeStage {
    fn forward<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        x: ArrayView2<'_, T>,
        idx: Array2<u32>,
    ) -> Result<(Array2<T>, StageCtx<T>)> {
        let n = x.nrows();
        let k = idx.ncols();
        let w1 = ps.mat(self.w1);
        let w1a = w1.slice(ndarray::s![.., 0..self.c_in]);
        let w1b = w1.slice(ndarray::s![.., self.c_in..]);
        // pa = x (W1a - W1b)^T, pb = x W1b^T; then the first edge layer is
        // h1(n, j) = pa[n] + pb[j] + b1.
        let w_amb = &w1a.to_owned() - &w1b;
        let pa = par_matmul(x, w_amb.t());
        let pb = par_matmul(x, w1b.t());
        let b1 = ps.vec(self.b1);
        let b2 = ps.vec(self.b2);
        let w2 = ps.mat(self.w2);

        // Edge matrix of first-layer activations, materialized transiently.
        let mut edges = Array2::<T>::zeros((n * k, self.hidden));
        for p in 0..n {
            let pa_row = pa.row(p);
            for s in 0..k {
                let j = idx[[p, s]] as usize;
                let pb_row = pb.row(j);
                let mut dst = edges.row_mut(p * k + s);
                for (slot, ((&a, &b), &bias)) in
                    pa_row.iter().zip(pb_row.iter()).zip(b1.iter()).enumerate()
                {
                    let v = a + b + bias;
                    dst[slot] = if v > T::zero() { v } else { T::zero() };
                }
            }
        }
        let l2 = par_matmul(edges.view(), w2.t());
        drop(edges);

        let mut out = Array2::<T>::from_elem((n, self.c_out), T::neg_infinity());
        let mut winners = Array2::<u32>::zeros((n, self.c_out));
        for p in 0..n {
            for s in 0..k {
                let row = l2.row(p * k + s);
                for c in 0..self.c_out {
                    let v = row[c] + b2[c];
                    if v > out[[p, c]] {
                        out[[p, c]] = v;
                        winners[[p, c]] = s as u32;
                    }
                }
            }
        }
        Ok((out, StageCtx { idx, pa, pb, winners, x: x.to_owned() }))
    }

    /// Winner-routed backward: only edges that won a channel maximum
    /// carry gradient, and their first-layer activations are recomputed
    /// from the stored point-wise projections.
    fn backward<T: Elem>(
        &self,
        ps: &ParamStore<T>,
        ctx: &StageCtx<T>,
        d_out: ArrayView2<'_, T>,
        gs: &mut GradStore<T>,
    ) -> Array2<T> {
        let n = ctx.x.nrows();
        let k = ctx.idx.ncols();
        let w2 = ps.mat(self.w2);
        let b1 = ps.vec(self.b1);

        let mut d_w2 = Array2::<T>::zeros((self.c_out, self.hidden));
        let mut d_b2 = Array1::<T>::zeros(self.c_out);
        let mut d_b1 = Array1::<T>::zeros(self.hidden);
        let mut d_pa = Array2::<T>::zeros((n, self.hidden));
        let mut d_pb = Array2::<T>::zeros((n, self.hidden));

        // Per-point scratch: lazily materialized relu rows and their
        // gradient accumulators for the (at most k) winning slots.
        let mut relu_rows = Array2::<T>::zeros((k, self.hidden));
        let mut d_relu = Array2::<T>::zeros((k, self.hidden));
        let mut slot_used = vec![false; k];
        for p in 0..n {
            slot_used.iter_mut().for_each(|u| *u = false);
            let pa_row = ctx.pa.row(p);
            for c in 0..self.c_out {
                let g = d_out[[p, c]];
                if g == T::zero() {
                    continue;
                }
                let slot = ctx.winners[[p, c]] as usize;
                if !slot_used[slot] {
                    slot_used[slot] = true;
                    let j = ctx.idx[[p, slot]] as usize;
                    let pb_row = ctx.pb.row(j);
                    let mut r = relu_rows.row_mut(slot);
                    let mut dr = d_relu.row_mut(slot);
                    for h in 0..self.hidden {
                        let v = pa_row[h] + pb_row[h] + b1[h];
                        r[h] = if v > T::zero() { v } else { T::zero() };
                        dr[h] = T::zero();
                    }
                }
                d_b2[c] += g;
                let r = relu_rows.row(slot);
                let mut dw2_row = d_w2.row_mut(c);
                let w2_row = w2.row(c);
                let mut dr = d_relu.row_mut(slot);
                for h in 0..self.hidden {
                    dw2_row[h] += g * r[h];
                    dr[h] += g * w2_row[h];
                }
            }
            for (slot, &used) in slot_used.iter().enumerate() {
                if !used {
                    continue;
                }
                let j = ctx.idx[[p, slot]] as usize;
                let r = relu_rows.row(slot);
                let dr = d_relu.row(slot);
                let mut dpa_row = d_pa.row_mut(p);
                for h in 0..self.hidden {
                    // relu mask: r > 0 iff pre-activation > 0.
                    if r[h] > T::zero() {
                        let dh = dr[h];
                        dpa_row[h] += dh;
                        d_pb[[j, h]] += dh;
                        d_b1[h] += dh;
                    }
                }
            }
        }

        gs.accum(self.w2, d_w2.into_dyn().view());
        gs.accum(self.b2, d_b2.into_dyn().view());
        gs.accum(self.b1, d_b1.into_dyn().view());

        // pa = x (W1a - W1b)^T, pb = x W1b^T:
        //   dW1a = d_pa^T x, dW1b = (d_pb - d_pa)^T x,
        //   dx = d_pa (W1a - W1b) + d_pb W1b.
        let ga = par_matmul(d_pa.t(), ctx.x.view());
        let gb_raw = par_matmul(d_pb.t(), ctx.x.view());
        let mut d_w1 = Array2::<T>::zeros((self.hidden, 2 * self.c_in));
        d_w1.slice_mut(ndarray::s![.., 0..self.c_in]).assign(&ga);
        d_w1.slice_mut(ndarray::s![.., self.c_in..]).assign(&(&gb_raw - &ga));
        gs.accum(self.w1, d_w1.into_dyn().view());

        let w1 = ps.mat(self.w1);
        let w1a = w1.slice(ndarray::s![.., 0..self.c_in]);
        let w1b = w1.slice(ndarray::s![.., self.c_in..]);
        let w_amb = &w1a.to_owned() - &w1b;
        let mut dx = par_matmul(d_pa.view(), w_amb.view());
        dx += &par_matmul(d_pb.view(), w1b);
        dx
    }
}

/// Exact kNN in feature space through the Gram-matrix expansion
/// `d^2(a, b) = |a|^2 + |b|^2 - 2 a.b`; self excluded, nearest first,
/// ties to the lowest index.
fn knn_indices<T: Elem>(x: ArrayView2<'_, T>, k: usize) -> Array2<u32> {
    let n = x.nrows();
    let gram = par_matmul(x, x.t());
    let norms: Vec<T> = (0..n).map(|i| gram[[i, i]]).collect();
    let mut out = Array2::zeros((n, k));
    let two = T::from_f64(2.0);
    let mut rows: Vec<(usize, Vec<u32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut scratch: Vec<(T, u32)> = Vec::with_capacity(n - 1);
            let grow = gram.row(i);
            for j in 0..n {
                if j != i {
                    let d2 = norms[i] + norms[j] - two * grow[j];
                    scratch.push((d2, j as u32));
                }
            }
            scratch.select_nth_unstable_by(k - 1, |a, b| {
                a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
            });
            let head = &mut scratch[..k];
            head.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            (i, head.iter().map(|&(_, j)| j).collect())
        })
        .collect();
    rows.sort_by_key(|(i, _)| *i);
    for (i, neigh) in rows {
        for (s, j) in neigh.into_iter().enumerate() {
            out[[i, s]] = j;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{central_diff_grad, max_sym_rel_error, rng_from_seed};
    use ndarray::Array;
    use rand::Rng;

    fn small_cfg() -> DgcnnConfig {
        DgcnnConfig { in_channels: 3, k: 4, stage_channels: [8, 8, 12], dynamic_graph: true }
    }

    fn random_cloud(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn permutation_of_points_leaves_features_unchanged() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(2);
        let net = Dgcnn::init(&mut ps, "bb", small_cfg(), &mut rng);
        let x = random_cloud(32, 7);
        let centers = vec![3usize, 17, 31];
        let (out, _) = net.forward_sample(&ps, x.view(), &centers).unwrap();

        // Reverse the point order; centers move accordingly.
        let perm: Vec<usize> = (0..32).rev().collect();
        let mut xp = Array2::zeros((32, 3));
        for (new, &old) in perm.iter().enumerate() {
            xp.row_mut(new).assign(&x.row(old));
        }
        let centers_p: Vec<usize> =
            centers.iter().map(|&c| perm.iter().position(|&o| o == c).unwrap()).collect();
        let (out_p, _) = net.forward_sample(&ps, xp.view(), &centers_p).unwrap();

        let dev_local = (&out.per_center - &out_p.per_center)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let dev_global =
            (&out.global - &out_p.global).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(dev_local < 1e-5, "local deviation {dev_local}");
        assert!(dev_global < 1e-5, "global deviation {dev_global}");
    }

    #[test]
    fn identical_points_share_features() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(3);
        let cfg = DgcnnConfig { in_channels: 3, k: 1, stage_channels: [4, 4, 4], dynamic_graph: true };
        let net = Dgcnn::init(&mut ps, "bb", cfg, &mut rng);
        let x = ndarray::array![[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]];
        let (out, _) = net.forward_sample(&ps, x.view(), &[0, 1]).unwrap();
        let dev = (&out.per_center.row(0) - &out.per_center.row(1))
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(dev < 1e-12);
    }

    #[test]
    fn global_is_channel_max_of_per_point_field() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(4);
        let net = Dgcnn::init(&mut ps, "bb", small_cfg(), &mut rng);
        let x = random_cloud(24, 9);
        let all: Vec<usize> = (0..24).collect();
        let (out, _) = net.forward_sample(&ps, x.view(), &all).unwrap();
        for c in 0..net.out_channels() {
            let col_max =
                (0..24).map(|p| out.per_center[[p, c]]).fold(f64::NEG_INFINITY, f64::max);
            assert!((out.global[c] - col_max).abs() < 1e-6);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Scalar functional: fixed random projections of both outputs.
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(5);
        let net = Dgcnn::init(&mut ps, "bb", small_cfg(), &mut rng);
        let x = random_cloud(16, 13);
        let centers = vec![0usize, 5, 11];
        let w_local = Array::from_shape_fn((3, 12), |_| rng.gen_range(-1.0..1.0));
        let w_global = Array::from_shape_fn(12, |_| rng.gen_range(-1.0..1.0));

        let mut gs = GradStore::for_store(&ps);
        let (_, ctx) = net.forward_sample(&ps, x.view(), &centers).unwrap();
        net.backward_sample(&ps, &ctx, w_local.view(), w_global.view(), &mut gs);

        for id in ps.ids() {
            let name = ps.name(id).to_string();
            let base: Vec<f64> = ps.get(id).iter().copied().collect();
            let shape = ps.get(id).shape().to_vec();
            let f = |vals: &[f64]| {
                let mut ps2 = ps.clone();
                ps2.set(id, Array::from_shape_vec(shape.clone(), vals.to_vec()).unwrap());
                let (out, _) = net.forward_sample(&ps2, x.view(), &centers).unwrap();
                (&out.per_center * &w_local).sum() + (&out.global * &w_global).sum()
            };
            let numeric = central_diff_grad(f, &base, 1e-6);
            let analytic: Vec<f64> = gs.get(id).unwrap().iter().copied().collect();
            let err = max_sym_rel_error(&analytic, &numeric);
            assert!(err < 1e-3, "{name}: rel err {err}");
        }
    }

    #[test]
    fn batch_matches_per_sample_path() {
        let mut ps = ParamStore::<f32>::new();
        let mut rng = rng_from_seed(6);
        let net = Dgcnn::init(&mut ps, "bb", small_cfg(), &mut rng);
        let mut clouds = ndarray::Array3::<f32>::zeros((3, 20, 3));
        for v in clouds.iter_mut() {
            *v = rng.gen_range(-1.0f32..1.0);
        }
        let centers: Vec<Vec<usize>> = vec![vec![0, 3], vec![5, 7], vec![19, 2]];
        let (outs, _) = net.forward_batch(&ps, clouds.view(), &centers).unwrap();
        for s in 0..3 {
            let (single, _) = net
                .forward_sample(&ps, clouds.index_axis(Axis(0), s), &centers[s])
                .unwrap();
            assert_eq!(single.per_center, outs[s].per_center);
            assert_eq!(single.global, outs[s].global);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(8);
        let net = Dgcnn::init(&mut ps, "bb", small_cfg(), &mut rng);
        let mut x = random_cloud(16, 1);
        x[[3, 1]] = f64::NAN;
        assert!(net.forward_sample(&ps, x.view(), &[0]).is_err());
    }

    #[test]
    fn knn_indices_match_geometry_oracle() {
        let x = random_cloud(40, 21);
        let got = knn_indices(x.view(), 5);
        let pc = crate::geometry::PointCloud::new(x).unwrap();
        let expected = crate::geometry::knn_graph(&pc, 5).unwrap();
        for i in 0..40 {
            for s in 0..5 {
                assert_eq!(got[[i, s]] as usize, expected[[i, s]], "row {i} slot {s}");
            }
        }
    }
}
