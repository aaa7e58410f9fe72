//! Camera construction and the point-to-pixel mapping.

use nalgebra::{Matrix4, Vector3, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CameraPose, PixelIndex, PointCloud};
use crate::error::{Error, Result};

/// The 20 vertices of a regular dodecahedron, each rescaled to `radius`.
///
/// Canonical vertex set (all of norm sqrt(3)), in this fixed order:
/// first the 8 cube vertices `(±1, ±1, ±1)` with signs iterated
/// lexicographically (x slowest, `-` before `+`), then the 12 vertices
/// `(0, ±1/φ, ±φ)`, `(±1/φ, ±φ, 0)`, `(±φ, 0, ±1/φ)` in that group
/// order, signs iterated the same way within each group.
pub fn dodecahedron_viewpoints(radius: f64) -> Result<Vec<Vector3<f64>>> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("dodecahedron radius must be > 0, got {radius}")));
    }
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let inv = 1.0 / phi;
    let mut verts: Vec<Vector3<f64>> = Vec::with_capacity(20);
    for &sx in &[-1.0, 1.0] {
        for &sy in &[-1.0, 1.0] {
            for &sz in &[-1.0, 1.0] {
                verts.push(Vector3::new(sx, sy, sz));
            }
        }
    }
    for &sa in &[-1.0, 1.0] {
        for &sb in &[-1.0, 1.0] {
            verts.push(Vector3::new(0.0, sa * inv, sb * phi));
        }
    }
    for &sa in &[-1.0, 1.0] {
        for &sb in &[-1.0, 1.0] {
            verts.push(Vector3::new(sa * inv, sb * phi, 0.0));
        }
    }
    for &sa in &[-1.0, 1.0] {
        for &sb in &[-1.0, 1.0] {
            verts.push(Vector3::new(sa * phi, 0.0, sb * inv));
        }
    }
    // Every canonical vertex has norm sqrt(3) = sqrt(1 + φ² + 1/φ²).
    let scale = radius / 3.0f64.sqrt();
    Ok(verts.into_iter().map(|v| v * scale).collect())
}

/// Right-handed view matrix: `eye` maps to the origin and the direction
/// toward `target` maps to `-z`.
pub fn look_at(
    eye: Vector3<f64>,
    target: Vector3<f64>,
    up: Vector3<f64>,
) -> Result<Matrix4<f64>> {
    let forward = target - eye;
    let f_norm = forward.norm();
    if f_norm < 1e-12 {
        return Err(Error::invalid("look_at: eye equals target"));
    }
    let f = forward / f_norm;
    let side = f.cross(&up);
    if side.norm() < 1e-9 {
        return Err(Error::DegenerateBasis);
    }
    let s = side.normalize();
    let u = s.cross(&f);
    let mut m = Matrix4::identity();
    // Rows are the camera axes; the camera looks down -z.
    for c in 0..3 {
        m[(0, c)] = s[c];
        m[(1, c)] = u[c];
        m[(2, c)] = -f[c];
    }
    m[(0, 3)] = -s.dot(&eye);
    m[(1, 3)] = -u.dot(&eye);
    m[(2, 3)] = f.dot(&eye);
    Ok(m)
}

/// Standard perspective frustum matrix (OpenGL clip conventions): depth
/// `-near` maps to clip `z/w = -1`, `-far` to `+1`.
pub fn perspective(fov_y: f64, aspect: f64, near: f64, far: f64) -> Result<Matrix4<f64>> {
    if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
        return Err(Error::InvalidFrustum(format!("fov_y {fov_y} outside (0, pi)")));
    }
    if !(aspect > 0.0) {
        return Err(Error::InvalidFrustum(format!("aspect {aspect} must be > 0")));
    }
    if !(near > 0.0 && far > near) {
        return Err(Error::InvalidFrustum(format!("need 0 < near < far, got ({near}, {far})")));
    }
    let f = 1.0 / (fov_y / 2.0).tan();
    let mut m = Matrix4::zeros();
    m[(0, 0)] = f / aspect;
    m[(1, 1)] = f;
    m[(2, 2)] = (far + near) / (near - far);
    m[(2, 3)] = 2.0 * far * near / (near - far);
    m[(3, 2)] = -1.0;
    Ok(m)
}

/// Result of projecting one world point through a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Horizontal image position in `[0, 1]`, left to right.
    pub u: f64,
    /// Vertical image position in `[0, 1]`, top to bottom.
    pub v: f64,
    /// Camera-space depth (`-z`), positive in front of the camera.
    pub depth: f64,
    /// False when `(u, v)` falls outside the unit square.
    pub in_frame: bool,
}

/// Projects a world point to image coordinates.
///
/// `clip = M_proj * (M_view * (p, 1))`, `u = (ndc_x + 1) / 2`,
/// `v = (1 - ndc_y) / 2` (raster orientation). Points with `clip.w <= 0`
/// are behind the camera and rejected; points projecting outside the
/// frame are flagged, not rejected.
pub fn project_point(p: Vector3<f64>, pose: &CameraPose) -> Result<Projection> {
    let eye = pose.m_view * Vector4::new(p[0], p[1], p[2], 1.0);
    let clip = pose.m_proj * eye;
    if clip[3] <= 0.0 {
        return Err(Error::BehindCamera);
    }
    let ndc_x = clip[0] / clip[3];
    let ndc_y = clip[1] / clip[3];
    let u = (ndc_x + 1.0) / 2.0;
    let v = (1.0 - ndc_y) / 2.0;
    let in_frame = (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v);
    Ok(Projection { u, v, depth: -eye[2], in_frame })
}

/// Maps image coordinates to a cell of the G x G patch grid:
/// `i = min(floor(u*G), G-1)`, `j = min(floor(v*G), G-1)`. The clamp
/// keeps the closed boundary `u = 1` (or `v = 1`) in range.
pub fn pixel_index(u: f64, v: f64, g: u32) -> Result<PixelIndex> {
    if g == 0 {
        return Err(Error::invalid("grid size must be positive"));
    }
    if !((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)) {
        return Err(Error::invalid(format!("(u, v) = ({u}, {v}) outside [0,1]^2")));
    }
    let gf = f64::from(g);
    let i = ((u * gf).floor() as u32).min(g - 1);
    let j = ((v * gf).floor() as u32).min(g - 1);
    Ok(PixelIndex { i, j, g })
}

/// Uniformly distributed rotation as a homogeneous 4x4 matrix, drawn via
/// a normalized 4-component Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix4<f64> {
    let mut q = [0.0f64; 4];
    loop {
        for slot in q.iter_mut() {
            *slot = StandardNormal.sample(rng);
        }
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n > 1e-12 {
            for slot in q.iter_mut() {
                *slot /= n;
            }
            break;
        }
    }
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let mut m = Matrix4::identity();
    m[(0, 0)] = 1.0 - 2.0 * (y * y + z * z);
    m[(0, 1)] = 2.0 * (x * y - w * z);
    m[(0, 2)] = 2.0 * (x * z + w * y);
    m[(1, 0)] = 2.0 * (x * y + w * z);
    m[(1, 1)] = 1.0 - 2.0 * (x * x + z * z);
    m[(1, 2)] = 2.0 * (y * z - w * x);
    m[(2, 0)] = 2.0 * (x * z - w * y);
    m[(2, 1)] = 2.0 * (y * z + w * x);
    m[(2, 2)] = 1.0 - 2.0 * (x * x + y * y);
    m
}

/// Applies a homogeneous rotation to the points (and normals) of a cloud.
pub fn rotate_cloud(pc: &PointCloud, rot: &Matrix4<f64>) -> PointCloud {
    let rotate = |arr: &ndarray::Array2<f64>| {
        let mut out = arr.clone();
        for (mut dst, src) in out.rows_mut().into_iter().zip(arr.rows()) {
            for r in 0..3 {
                dst[r] = rot[(r, 0)] * src[0] + rot[(r, 1)] * src[1] + rot[(r, 2)] * src[2];
            }
        }
        out
    };
    PointCloud {
        points: rotate(&pc.points),
        normals: pc.normals.as_ref().map(rotate),
        label: pc.label,
    }
}

/// Composes a rotation into the pose so that the rotated cloud projects
/// exactly like the original: the view matrix becomes `m_view * R^-1`.
///
/// The inverse is formed analytically (transpose of the rotation block),
/// so the composition stays exactly rigid.
pub fn compose_rotation(pose: &CameraPose, rot: &Matrix4<f64>) -> CameraPose {
    let mut inv = Matrix4::identity();
    for r in 0..3 {
        for c in 0..3 {
            inv[(r, c)] = rot[(c, r)];
        }
    }
    CameraPose { m_view: pose.m_view * inv, m_proj: pose.m_proj }
}
