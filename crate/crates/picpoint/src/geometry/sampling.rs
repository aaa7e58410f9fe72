//! Farthest point sampling and the k-nearest-neighbor graph.

use ndarray::Array2;

use super::PointCloud;
use crate::error::{Error, Result};

/// Deterministic farthest point sampling.
///
/// Seeds with index 0, then greedily adds the point with the largest
/// distance to the chosen set; ties go to the lowest index. The result is
/// bit-identical across runs and platforms at f64.
pub fn farthest_point_sampling(pc: &PointCloud, l: usize) -> Result<Vec<usize>> {
    let n = pc.len();
    if l == 0 || l > n {
        return Err(Error::invalid(format!("FPS needs 1 <= L <= N, got L = {l}, N = {n}")));
    }
    let pts = &pc.points;
    let mut chosen = Vec::with_capacity(l);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = 0usize;
    chosen.push(current);
    for _ in 1..l {
        let cur = pts.row(current);
        let mut best = 0usize;
        let mut best_d2 = f64::NEG_INFINITY;
        for (idx, slot) in min_d2.iter_mut().enumerate() {
            let row = pts.row(idx);
            let dx = row[0] - cur[0];
            let dy = row[1] - cur[1];
            let dz = row[2] - cur[2];
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 < *slot {
                *slot = d2;
            }
            if *slot > best_d2 {
                best_d2 = *slot;
                best = idx;
            }
        }
        current = best;
        chosen.push(current);
    }
    Ok(chosen)
}

/// Exact k-nearest-neighbor table: row `n` lists the `k` nearest points
/// to point `n` by Euclidean distance, self excluded, nearest first; ties
/// broken by lowest index.
pub fn knn_graph(pc: &PointCloud, k: usize) -> Result<Array2<usize>> {
    let n = pc.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("kNN needs 1 <= k < N, got k = {k}, N = {n}")));
    }
    let pts = &pc.points;
    let mut out = Array2::zeros((n, k));
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        scratch.clear();
        let a = pts.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let b = pts.row(j);
            let dx = a[0] - b[0];
            let dy = a[1] - b[1];
            let dz = a[2] - b[2];
            scratch.push((dx * dx + dy * dy + dz * dz, j));
        }
        scratch.select_nth_unstable_by(k - 1, |x, y| {
            x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1))
        });
        let head = &mut scratch[..k];
        head.sort_unstable_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
        for (slot, (_, j)) in head.iter().enumerate() {
            out[[i, slot]] = *j;
        }
    }
    Ok(out)
}
