//! Contrastive objective: local InfoNCE over cross-modal patch
//! correspondences, global InfoNCE over shape embeddings, and their sum.
//!
//! For every valid local anchor the positive is the image patch its
//! center projects into; the candidate set is every patch of every
//! sample in the batch. Masked anchors are excluded from the average but
//! their patches still serve as negatives. All softmaxes are log-sum-exp
//! stabilized.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::geometry::PixelIndex;
use crate::nn::{par_matmul, Elem};

/// Tolerance on the unit-norm entry invariant.
const ENTRY_NORM_TOL: f64 = 1e-4;

fn check_unit_rows<T: Elem>(rows: ArrayView2<'_, T>, what: &str) -> Result<()> {
    for r in rows.axis_iter(Axis(0)) {
        let n2 = r.iter().fold(T::zero(), |acc, &v| acc + v * v).to_f64();
        if !n2.is_finite() {
            return Err(Error::invalid(format!("{what}: non-finite embedding")));
        }
        if (n2.sqrt() - 1.0).abs() > ENTRY_NORM_TOL {
            return Err(Error::invalid(format!(
                "{what}: embedding norm {} violates the unit contract",
                n2.sqrt()
            )));
        }
    }
    Ok(())
}

/// Core InfoNCE: anchors (n, d) against candidates (K, d) with one
/// positive index per anchor. Returns the mean loss and the gradients
/// w.r.t. anchors and candidates.
fn info_nce_core<T: Elem>(
    anchors: ArrayView2<'_, T>,
    cands: ArrayView2<'_, T>,
    positives: &[usize],
    tau: f64,
) -> Result<(T, Array2<T>, Array2<T>)> {
    if tau <= 0.0 {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let n = anchors.nrows();
    let k = cands.nrows();
    assert_eq!(n, positives.len());
    if let Some(&bad) = positives.iter().find(|&&p| p >= k) {
        return Err(Error::invalid(format!("positive index {bad} out of {k} candidates")));
    }
    let inv_tau = T::from_f64(1.0 / tau);
    let mut logits = par_matmul(anchors, cands.t());
    logits.mapv_inplace(|v| v * inv_tau);

    let inv_n = T::from_f64(1.0 / n as f64);
    let mut loss = T::zero();
    // logits becomes d_logits in place.
    for (r, mut row) in logits.rows_mut().into_iter().enumerate() {
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut denom = T::zero();
        for v in row.iter() {
            denom += (*v - max).exp();
        }
        let lse = max + denom.ln();
        loss += lse - row[positives[r]];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_n;
        }
        row[positives[r]] -= inv_n;
    }
    loss *= inv_n;

    let mut d_anchors = par_matmul(logits.view(), cands);
    d_anchors.mapv_inplace(|v| v * inv_tau);
    let mut d_cands = par_matmul(logits.t(), anchors);
    d_cands.mapv_inplace(|v| v * inv_tau);
    Ok((loss, d_anchors, d_cands))
}

/// Local InfoNCE. `z_local` is (m*L, d) with sample-major rows,
/// `q_local` is (m*G*G, d) with patch rows flattened as
/// `s*G*G + j*G + i`. Returns the loss and gradients shaped like the
/// inputs (zero rows for masked anchors).
#[allow(clippy::too_many_arguments)]
pub fn info_nce_local<T: Elem>(
    z_local: ArrayView2<'_, T>,
    q_local: ArrayView2<'_, T>,
    m: usize,
    l: usize,
    g: u32,
    targets: &[Vec<PixelIndex>],
    valid: &ndarray::Array2<bool>,
    tau: f64,
) -> Result<(T, Array2<T>, Array2<T>)> {
    let gg = (g * g) as usize;
    if z_local.nrows() != m * l || q_local.nrows() != m * gg {
        return Err(Error::ShapeMismatch(format!(
            "local loss shapes: z {} rows (want {}), q {} rows (want {})",
            z_local.nrows(),
            m * l,
            q_local.nrows(),
            m * gg
        )));
    }
    check_unit_rows(z_local, "z_local")?;
    check_unit_rows(q_local, "q_local")?;

    let mut anchor_rows = Vec::new();
    let mut positives = Vec::new();
    for s in 0..m {
        for li in 0..l {
            if valid[[s, li]] {
                let t = &targets[s][li];
                debug_assert_eq!(t.g, g);
                anchor_rows.push(s * l + li);
                positives.push(s * gg + t.flat());
            }
        }
    }
    if anchor_rows.is_empty() {
        return Err(Error::NoValidAnchors);
    }

    let mut anchors = Array2::zeros((anchor_rows.len(), z_local.ncols()));
    for (row, &src) in anchor_rows.iter().enumerate() {
        anchors.row_mut(row).assign(&z_local.row(src));
    }
    let (loss, d_anchors, d_cands) = info_nce_core(anchors.view(), q_local, &positives, tau)?;

    let mut d_z = Array2::zeros(z_local.raw_dim());
    for (row, &dst) in anchor_rows.iter().enumerate() {
        d_z.row_mut(dst).assign(&d_anchors.row(row));
    }
    Ok((loss, d_z, d_cands))
}

/// Global InfoNCE: sample `s`'s positive is the image embedding of the
/// same sample; candidates are all image embeddings in the batch.
pub fn info_nce_global<T: Elem>(
    z_global: ArrayView2<'_, T>,
    q_global: ArrayView2<'_, T>,
    tau: f64,
) -> Result<(T, Array2<T>, Array2<T>)> {
    if z_global.dim() != q_global.dim() {
        return Err(Error::ShapeMismatch(format!(
            "global loss shapes differ: {:?} vs {:?}",
            z_global.dim(),
            q_global.dim()
        )));
    }
    if z_global.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    check_unit_rows(z_global, "z_global")?;
    check_unit_rows(q_global, "q_global")?;
    let positives: Vec<usize> = (0..z_global.nrows()).collect();
    info_nce_core(z_global, q_global, &positives, tau)
}

#[derive(Debug, Clone, Copy)]
pub struct LossToggles {
    pub local: bool,
    pub global: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles { local: true, global: true }
    }
}

/// Everything the total objective consumes for one batch.
pub struct ContrastiveBatchInputs<'a, T: Elem> {
    /// (m*L, d).
    pub z_local: ArrayView2<'a, T>,
    /// (m*G*G, d).
    pub q_local: ArrayView2<'a, T>,
    pub m: usize,
    pub l: usize,
    pub g: u32,
    pub targets: &'a [Vec<PixelIndex>],
    pub valid: &'a ndarray::Array2<bool>,
    /// (m, d).
    pub z_global: ArrayView2<'a, T>,
    /// (m, d).
    pub q_global: ArrayView2<'a, T>,
    pub tau: f64,
}

/// Loss components plus gradients for every embedding input. Disabled
/// components report `None` and contribute zero gradient.
pub struct TotalLossOutput<T: Elem> {
    pub total: T,
    pub lcl: Option<T>,
    pub glb: Option<T>,
    pub d_z_local: Array2<T>,
    pub d_q_local: Array2<T>,
    pub d_z_global: Array2<T>,
    pub d_q_global: Array2<T>,
}

/// Unweighted sum of the enabled components.
pub fn total_loss<T: Elem>(
    inputs: &ContrastiveBatchInputs<'_, T>,
    toggles: LossToggles,
) -> Result<TotalLossOutput<T>> {
    if !toggles.local && !toggles.global {
        return Err(Error::invalid("at least one loss component must be enabled"));
    }
    let mut out = TotalLossOutput {
        total: T::zero(),
        lcl: None,
        glb: None,
        d_z_local: Array2::zeros(inputs.z_local.raw_dim()),
        d_q_local: Array2::zeros(inputs.q_local.raw_dim()),
        d_z_global: Array2::zeros(inputs.z_global.raw_dim()),
        d_q_global: Array2::zeros(inputs.q_global.raw_dim()),
    };
    if toggles.local {
        let (loss, d_z, d_q) = info_nce_local(
            inputs.z_local,
            inputs.q_local,
            inputs.m,
            inputs.l,
            inputs.g,
            inputs.targets,
            inputs.valid,
            inputs.tau,
        )?;
        out.total += loss;
        out.lcl = Some(loss);
        out.d_z_local = d_z;
        out.d_q_local = d_q;
    }
    if toggles.global {
        let (loss, d_z, d_q) = info_nce_global(inputs.z_global, inputs.q_global, inputs.tau)?;
        out.total += loss;
        out.glb = Some(loss);
        out.d_z_global = d_z;
        out.d_q_global = d_q;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{central_diff_grad, max_sym_rel_error, rng_from_seed};
    use ndarray::{Array, Array2};
    use rand::Rng;

    fn unit_rows<T: Elem>(n: usize, d: usize, rng: &mut impl Rng) -> Array2<T> {
        let mut x = Array2::<T>::zeros((n, d));
        for mut row in x.rows_mut() {
            let mut norm = T::zero();
            for v in row.iter_mut() {
                *v = T::from_f64(rng.gen_range(-1.0..1.0));
                norm += *v * *v;
            }
            let norm = norm.sqrt();
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        x
    }

    fn all_targets(m: usize, l: usize, g: u32, i: u32, j: u32) -> Vec<Vec<PixelIndex>> {
        vec![vec![PixelIndex { i, j, g }; l]; m]
    }

    #[test]
    fn uniform_embeddings_hit_the_log_count_value() {
        // All embeddings identical: every logit equal, loss = ln(m*G*G).
        let (m, l, g, d) = (4usize, 8usize, 7u32, 16usize);
        let mut v = Array2::<f64>::zeros((1, d));
        v[[0, 3]] = 1.0;
        let z = Array2::from_shape_fn((m * l, d), |(_, c)| v[[0, c]]);
        let q = Array2::from_shape_fn((m * 49, d), |(_, c)| v[[0, c]]);
        let valid = ndarray::Array2::from_elem((m, l), true);
        let (loss, _, _) = info_nce_local(
            z.view(),
            q.view(),
            m,
            l,
            g,
            &all_targets(m, l, g, 2, 3),
            &valid,
            0.07,
        )
        .unwrap();
        assert!((loss - (196.0f64).ln()).abs() < 1e-6, "loss {loss}");

        let zg = Array2::from_shape_fn((32, d), |(_, c)| v[[0, c]]);
        let (g_loss, _, _) = info_nce_global(zg.view(), zg.view(), 0.07).unwrap();
        assert!((g_loss - 32.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn one_hot_positive_matches_analytic_softmax() {
        // Positive similarity 1, every other candidate orthogonal:
        // loss = -ln(e^{1/tau} / (e^{1/tau} + (K-1))) = ln(1 + (K-1) e^{-1/tau}).
        let (m, l, g) = (4usize, 1usize, 7u32);
        let k = m * 49;
        let d = k + 1;
        let mut q = Array2::<f64>::zeros((k, d));
        for r in 0..k {
            q[[r, r]] = 1.0;
        }
        // One valid anchor aligned with its positive patch (2,3) of sample 0.
        let pos_col = 3 * 7 + 2;
        let mut z = Array2::<f64>::zeros((m * l, d));
        z[[0, pos_col]] = 1.0;
        for s in 1..m {
            z[[s, d - 1]] = 1.0; // orthogonal filler anchors, masked out
        }
        let mut valid = ndarray::Array2::from_elem((m, l), false);
        valid[[0, 0]] = true;
        let tau = 0.07;
        let (loss, _, _) = info_nce_local(
            z.view(),
            q.view(),
            m,
            l,
            g,
            &all_targets(m, l, g, 2, 3),
            &valid,
            tau,
        )
        .unwrap();
        let expected = (1.0 + (k as f64 - 1.0) * (-1.0 / tau).exp()).ln();
        assert!((loss - expected).abs() < 1e-6, "loss {loss}, expected {expected}");
        assert!((expected - 1.22e-4).abs() < 1e-5, "sanity: near 1.22e-4");
    }

    #[test]
    fn degenerate_single_candidate_gives_zero_loss() {
        let d = 8;
        let mut rng = rng_from_seed(1);
        let z = unit_rows::<f64>(1, d, &mut rng);
        let valid = ndarray::Array2::from_elem((1, 1), true);
        let (loss, _, _) = info_nce_local(
            z.view(),
            z.view(),
            1,
            1,
            1,
            &all_targets(1, 1, 1, 0, 0),
            &valid,
            0.07,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        let (g_loss, _, _) = info_nce_global(z.view(), z.view(), 1.0).unwrap();
        assert_eq!(g_loss, 0.0);
    }

    #[test]
    fn orthogonal_diagonal_case_matches_closed_form() {
        // z_i = q_i mutually orthogonal, m = 4, tau = 1:
        // per-sample loss = -ln(e / (e + 3)) = ln(1 + 3/e).
        let m = 4;
        let mut z = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            z[[i, i]] = 1.0;
        }
        let (loss, _, _) = info_nce_global(z.view(), z.view(), 1.0).unwrap();
        let expected = (1.0 + 3.0 * (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-9, "loss {loss} vs {expected}");
        assert!((expected - 0.743668).abs() < 1e-6);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_certainty() {
        let mut rng = rng_from_seed(2);
        for _ in 0..20 {
            let z = unit_rows::<f64>(6, 12, &mut rng);
            let q = unit_rows::<f64>(6, 12, &mut rng);
            let (loss, _, _) = info_nce_global(z.view(), q.view(), 0.2).unwrap();
            assert!(loss >= 0.0);
            assert!(loss > 0.0, "random embeddings cannot be certain");
        }
    }

    #[test]
    fn masked_anchors_are_excluded_but_patches_remain_negatives() {
        let mut rng = rng_from_seed(3);
        let (m, l, g, d) = (2usize, 2usize, 2u32, 8usize);
        let z = unit_rows::<f64>(m * l, d, &mut rng);
        let q = unit_rows::<f64>(m * 4, d, &mut rng);
        let targets = all_targets(m, l, g, 1, 0);
        let mut valid = ndarray::Array2::from_elem((m, l), true);
        valid[[1, 1]] = false;
        let (_, d_z, d_q) = info_nce_local(z.view(), q.view(), m, l, g, &targets, &valid, 0.1)
            .unwrap();
        // Masked anchor row gets zero gradient.
        assert!(d_z.row(3).iter().all(|&v| v == 0.0));
        assert!(d_z.row(0).iter().any(|&v| v != 0.0));
        // Sample 1 patches still see gradient (they are negatives).
        assert!(d_q.slice(ndarray::s![4..8, ..]).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn fully_masked_batch_errors() {
        let mut rng = rng_from_seed(4);
        let z = unit_rows::<f64>(2, 4, &mut rng);
        let q = unit_rows::<f64>(2, 4, &mut rng);
        let valid = ndarray::Array2::from_elem((2, 1), false);
        let err = info_nce_local(
            z.view(),
            q.view(),
            2,
            1,
            1,
            &all_targets(2, 1, 1, 0, 0),
            &valid,
            0.1,
        );
        assert!(matches!(err, Err(Error::NoValidAnchors)));
    }

    #[test]
    fn nonpositive_temperature_errors() {
        let mut rng = rng_from_seed(5);
        let z = unit_rows::<f64>(2, 4, &mut rng);
        assert!(info_nce_global(z.view(), z.view(), 0.0).is_err());
        assert!(info_nce_global(z.view(), z.view(), -1.0).is_err());
    }

    #[test]
    fn permuting_samples_leaves_losses_unchanged() {
        let mut rng = rng_from_seed(6);
        let (m, l, g, d) = (4usize, 3usize, 2u32, 10usize);
        let z = unit_rows::<f64>(m * l, d, &mut rng);
        let q = unit_rows::<f64>(m * 4, d, &mut rng);
        let valid = ndarray::Array2::from_elem((m, l), true);
        let mut targets = Vec::new();
        for _ in 0..m {
            let mut per = Vec::new();
            for _ in 0..l {
                per.push(PixelIndex { i: rng.gen_range(0..2), j: rng.gen_range(0..2), g });
            }
            targets.push(per);
        }
        let (loss, _, _) =
            info_nce_local(z.view(), q.view(), m, l, g, &targets, &valid, 0.1).unwrap();

        // Swap samples 0 and 2 in every structure.
        let perm = [2usize, 1, 0, 3];
        let mut zp = z.clone();
        let mut qp = q.clone();
        let mut tp = targets.clone();
        for (new, &old) in perm.iter().enumerate() {
            for li in 0..l {
                zp.row_mut(new * l + li).assign(&z.row(old * l + li));
            }
            for p in 0..4 {
                qp.row_mut(new * 4 + p).assign(&q.row(old * 4 + p));
            }
            tp[new] = targets[old].clone();
        }
        let (loss_p, _, _) =
            info_nce_local(zp.view(), qp.view(), m, l, g, &tp, &valid, 0.1).unwrap();
        assert!((loss - loss_p).abs() < 1e-6);

        let zg = unit_rows::<f64>(m, d, &mut rng);
        let qg = unit_rows::<f64>(m, d, &mut rng);
        let (gl, _, _) = info_nce_global(zg.view(), qg.view(), 0.1).unwrap();
        let mut zgp = zg.clone();
        let mut qgp = qg.clone();
        for (new, &old) in perm.iter().enumerate() {
            zgp.row_mut(new).assign(&zg.row(old));
            qgp.row_mut(new).assign(&qg.row(old));
        }
        let (gl_p, _, _) = info_nce_global(zgp.view(), qgp.view(), 0.1).unwrap();
        assert!((gl - gl_p).abs() < 1e-6);
    }

    #[test]
    fn loss_increases_with_temperature_for_separated_geometry() {
        // One-hot positive: higher tau flattens the softmax, raising loss.
        let k = 16;
        let mut q = Array2::<f64>::zeros((k, k));
        for r in 0..k {
            q[[r, r]] = 1.0;
        }
        let mut z = Array2::<f64>::zeros((1, k));
        z[[0, 0]] = 1.0;
        let mut prev = -1.0;
        for tau in [0.05, 0.1, 0.5, 1.0] {
            let (loss, _, _) =
                info_nce_core(z.view(), q.view(), &[0], tau).map(|(l, a, b)| (l, a, b)).unwrap();
            assert!(loss > prev, "tau {tau}: loss {loss} <= {prev}");
            prev = loss;
        }
    }

    #[test]
    fn extreme_cosines_stay_finite_at_f32() {
        let k = 64;
        let mut q = Array2::<f32>::zeros((k, 4));
        for r in 0..k {
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            q[[r, r % 4]] = sign;
        }
        let z = {
            let mut z = Array2::<f32>::zeros((1, 4));
            z[[0, 0]] = 1.0;
            z
        };
        let (loss, d_a, d_c) = info_nce_core(z.view(), q.view(), &[0], 0.01).unwrap();
        assert!(loss.is_finite());
        assert!(d_a.iter().all(|v| v.is_finite()));
        assert!(d_c.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn total_loss_sums_components_and_honors_toggles() {
        let mut rng = rng_from_seed(7);
        let (m, l, g, d) = (4usize, 8usize, 7u32, 16usize);
        let mut v = Array2::<f64>::zeros((1, d));
        v[[0, 0]] = 1.0;
        let z = Array2::from_shape_fn((m * l, d), |(_, c)| v[[0, c]]);
        let q = Array2::from_shape_fn((m * 49, d), |(_, c)| v[[0, c]]);
        let zg = Array2::from_shape_fn((m, d), |(_, c)| v[[0, c]]);
        let valid = ndarray::Array2::from_elem((m, l), true);
        let targets = all_targets(m, l, g, 0, 0);
        let inputs = ContrastiveBatchInputs {
            z_local: z.view(),
            q_local: q.view(),
            m,
            l,
            g,
            targets: &targets,
            valid: &valid,
            z_global: zg.view(),
            q_global: zg.view(),
            tau: 0.07,
        };
        let both = total_loss(&inputs, LossToggles::default()).unwrap();
        let expected = (196.0f64).ln() + (4.0f64).ln();
        assert!((both.total - expected).abs() < 1e-6, "total {}", both.total);

        let only_global =
            total_loss(&inputs, LossToggles { local: false, global: true }).unwrap();
        assert!(only_global.lcl.is_none());
        assert_eq!(only_global.total, only_global.glb.unwrap());
        assert!(only_global.d_z_local.iter().all(|&x| x == 0.0));

        assert!(total_loss(&inputs, LossToggles { local: false, global: false }).is_err());
        let _ = rng.gen::<f64>();
    }

    #[test]
    fn gradients_match_finite_differences() {
        // m=2, L=3, G=3, d=8 at f64, all four embedding blocks.
        let mut rng = rng_from_seed(8);
        let (m, l, g, d) = (2usize, 3usize, 3u32, 8usize);
        let z = unit_rows::<f64>(m * l, d, &mut rng);
        let q = unit_rows::<f64>(m * 9, d, &mut rng);
        let zg = unit_rows::<f64>(m, d, &mut rng);
        let qg = unit_rows::<f64>(m, d, &mut rng);
        let mut valid = ndarray::Array2::from_elem((m, l), true);
        valid[[1, 2]] = false;
        let mut targets = Vec::new();
        for _ in 0..m {
            let mut per = Vec::new();
            for _ in 0..l {
                per.push(PixelIndex { i: rng.gen_range(0..3), j: rng.gen_range(0..3), g });
            }
            targets.push(per);
        }
        let inputs = ContrastiveBatchInputs {
            z_local: z.view(),
            q_local: q.view(),
            m,
            l,
            g,
            targets: &targets,
            valid: &valid,
            z_global: zg.view(),
            q_global: qg.view(),
            tau: 0.3,
        };
        let out = total_loss(&inputs, LossToggles::default()).unwrap();

        let blocks: [(&str, &Array2<f64>, &Array2<f64>); 4] = [
            ("z_local", &z, &out.d_z_local),
            ("q_local", &q, &out.d_q_local),
            ("z_global", &zg, &out.d_z_global),
            ("q_global", &qg, &out.d_q_global),
        ];
        for (name, base, analytic) in blocks {
            let flat: Vec<f64> = base.iter().copied().collect();
            let shape = base.dim();
            let f = |vals: &[f64]| {
                let arr = Array::from_shape_vec(shape, vals.to_vec()).unwrap();
                let inputs = ContrastiveBatchInputs {
                    z_local: if name == "z_local" { arr.view() } else { z.view() },
                    q_local: if name == "q_local" { arr.view() } else { q.view() },
                    m,
                    l,
                    g,
                    targets: &targets,
                    valid: &valid,
                    z_global: if name == "z_global" { arr.view() } else { zg.view() },
                    q_global: if name == "q_global" { arr.view() } else { qg.view() },
                    tau: 0.3,
                };
                total_loss(&inputs, LossToggles::default()).unwrap().total
            };
            let numeric = central_diff_grad(f, &flat, 1e-6);
            let analytic_flat: Vec<f64> = analytic.iter().copied().collect();
            let err = max_sym_rel_error(&analytic_flat, &numeric);
            assert!(err < 1e-3, "{name}: rel err {err}");
        }
    }
}
