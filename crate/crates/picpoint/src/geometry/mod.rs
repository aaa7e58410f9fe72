//! Deterministic 3D math: cloud normalization, camera construction,
//! projective point-to-pixel mapping, sampling and augmentation.
//!
//! Conventions, pinned once and relied on everywhere:
//! - column vectors, right-handed coordinates, camera looks down `-z`
//! - clip space is OpenGL-style, NDC in `[-1, 1]^2`, depth `-near -> -1`
//! - image coordinates `(u, v)` in `[0, 1]^2` with `v` measured downward
//!   from the top row (raster order)
//! - all camera matrices are 4x4 homogeneous

mod camera;
mod sampling;

pub use camera::{
    compose_rotation, dodecahedron_viewpoints, look_at, perspective, pixel_index, project_point,
    random_rotation, rotate_cloud, Projection,
};
pub use sampling::{farthest_point_sampling, knn_graph};

use nalgebra::Matrix4;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating unit normals.
pub const NORMAL_TOL: f64 = 1e-5;

/// An unordered set of 3D points, optionally with unit normals and a
/// class label (the label is only used by evaluation code).
#[derive(Debug, Clone)]
pub struct PointCloud {
    /// N x 3 coordinates.
    pub points: Array2<f64>,
    /// Optional N x 3 unit normals.
    pub normals: Option<Array2<f64>>,
    /// Optional class id, carried through for probing.
    pub label: Option<u32>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        let pc = PointCloud { points, normals: None, label: None };
        pc.validate()?;
        Ok(pc)
    }

    pub fn with_normals(points: Array2<f64>, normals: Array2<f64>) -> Result<Self> {
        let pc = PointCloud { points, normals: Some(normals), label: None };
        pc.validate()?;
        Ok(pc)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Checks the structural invariants: at least one finite point and,
    /// if normals are present, one unit normal per point.
    pub fn validate(&self) -> Result<()> {
        if self.points.nrows() == 0 {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if self.points.ncols() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "points must be Nx3, got Nx{}",
                self.points.ncols()
            )));
        }
        if self.points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate in point cloud"));
        }
        if let Some(n) = &self.normals {
            if n.dim() != self.points.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "normals shape {:?} does not match points {:?}",
                    n.dim(),
                    self.points.dim()
                )));
            }
            for row in n.rows() {
                let norm = row.dot(&row).sqrt();
                if !norm.is_finite() || (norm - 1.0).abs() > NORMAL_TOL {
                    return Err(Error::invalid(format!("normal with norm {norm} is not unit")));
                }
            }
        }
        Ok(())
    }

    /// Centroid of the points.
    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.nrows() as f64;
        let mut c = [0.0; 3];
        for row in self.points.rows() {
            c[0] += row[0];
            c[1] += row[1];
            c[2] += row[2];
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Largest point norm.
    pub fn max_norm(&self) -> f64 {
        self.points
            .rows()
            .into_iter()
            .map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Centers the cloud on its centroid and scales it so the farthest point
/// lies on the unit sphere. Normals are carried through unchanged.
pub fn normalize(pc: &PointCloud) -> Result<PointCloud> {
    pc.validate()?;
    let c = pc.centroid();
    let mut points = pc.points.clone();
    for mut row in points.rows_mut() {
        row[0] -= c[0];
        row[1] -= c[1];
        row[2] -= c[2];
    }
    let scale = points
        .rows()
        .into_iter()
        .map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt())
        .fold(0.0, f64::max);
    if scale < 1e-12 {
        return Err(Error::ZeroExtent);
    }
    points.mapv_inplace(|v| v / scale);
    Ok(PointCloud { points, normals: pc.normals.clone(), label: pc.label })
}

/// One rendering viewpoint: world-to-camera and camera-to-clip transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    /// World -> camera, homogeneous.
    pub m_view: Matrix4<f64>,
    /// Camera -> clip, homogeneous.
    pub m_proj: Matrix4<f64>,
}

impl CameraPose {
    pub fn new(m_view: Matrix4<f64>, m_proj: Matrix4<f64>) -> Self {
        CameraPose { m_view, m_proj }
    }

    /// Validates that the view rotation block is orthonormal with
    /// determinant +1.
    pub fn validate(&self) -> Result<()> {
        let r = self.m_view.fixed_view::<3, 3>(0, 0).into_owned();
        let rtr = r.transpose() * r;
        let eye = nalgebra::Matrix3::<f64>::identity();
        let dev = (rtr - eye).abs().max();
        if dev > 1e-6 {
            return Err(Error::invalid(format!(
                "view rotation block not orthonormal (max |R'R - I| = {dev:.2e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("view rotation determinant {det} != +1")));
        }
        if self.m_view.iter().any(|v| !v.is_finite()) || self.m_proj.iter().any(|v| !v.is_finite())
        {
            return Err(Error::invalid("non-finite camera matrix entry"));
        }
        Ok(())
    }

    /// Row-major flattening of the view matrix, used by the pose encoder
    /// and the on-disk camera metadata.
    pub fn view_row_major(&self) -> [f64; 16] {
        row_major(&self.m_view)
    }

    pub fn proj_row_major(&self) -> [f64; 16] {
        row_major(&self.m_proj)
    }

    pub fn from_row_major(view: &[f64; 16], proj: &[f64; 16]) -> Self {
        CameraPose { m_view: matrix_from_row_major(view), m_proj: matrix_from_row_major(proj) }
    }
}

pub(crate) fn row_major(m: &Matrix4<f64>) -> [f64; 16] {
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    out
}

pub(crate) fn matrix_from_row_major(v: &[f64; 16]) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            m[(r, c)] = v[r * 4 + c];
        }
    }
    m
}

/// Index of one cell of the G x G top-level image feature grid.
///
/// `i` counts along `u` (left to right), `j` along `v` (top to bottom).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelIndex {
    pub i: u32,
    pub j: u32,
    /// Grid size; 7 for the reference configuration.
    pub g: u32,
}

impl PixelIndex {
    /// Row-major flat index into the grid (row = j, column = i), matching
    /// the layout of 2D feature maps.
    pub fn flat(&self) -> usize {
        (self.j * self.g + self.i) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalize_two_point_segment() {
        let pc = PointCloud::new(array![[1.0, 1.0, 1.0], [3.0, 1.0, 1.0]]).unwrap();
        let out = normalize(&pc).unwrap();
        assert_eq!(out.points, array![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = crate::nn::rng_from_seed(7);
        let pc = random_cloud(&mut rng, 64);
        let once = normalize(&pc).unwrap();
        let twice = normalize(&once).unwrap();
        for (a, b) in once.points.iter().zip(twice.points.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_matches_independent_scan() {
        // Oracle: recompute centroid and extent with a separate pass.
        let mut rng = crate::nn::rng_from_seed(3);
        let pc = random_cloud(&mut rng, 1024);
        let out = normalize(&pc).unwrap();
        let mut c = [0.0f64; 3];
        for row in out.points.rows() {
            for k in 0..3 {
                c[k] += row[k];
            }
        }
        let n = out.len() as f64;
        let centroid_norm = (c[0] / n).hypot((c[1] / n).hypot(c[2] / n));
        assert!(centroid_norm < 1e-6, "centroid norm {centroid_norm}");
        let max_norm = out.max_norm();
        assert!((max_norm - 1.0).abs() < 1e-6, "max norm {max_norm}");
    }

    #[test]
    fn normalize_rejects_zero_extent() {
        let pc = PointCloud::new(array![[2.0, 2.0, 2.0], [2.0, 2.0, 2.0]]).unwrap();
        assert!(matches!(normalize(&pc), Err(Error::ZeroExtent)));
    }

    #[test]
    fn normals_must_be_unit() {
        let points = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let bad = array![[0.5, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(PointCloud::with_normals(points, bad).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let m = Matrix4::new(
            1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0,
        );
        let v = row_major(&m);
        assert_eq!(v[1], 2.0); // row 0, col 1
        assert_eq!(v[4], 5.0); // row 1, col 0
        assert_eq!(matrix_from_row_major(&v), m);
    }

    pub(crate) fn random_cloud(rng: &mut impl rand::Rng, n: usize) -> PointCloud {
        let mut points = Array2::zeros((n, 3));
        for mut row in points.rows_mut() {
            for k in 0..3 {
                row[k] = rng.gen_range(-1.0..1.0);
            }
        }
        PointCloud::new(points).unwrap()
    }
}
