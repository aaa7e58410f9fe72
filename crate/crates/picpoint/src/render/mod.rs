//! Deterministic software point-splat renderer.
//!
//! Each point is projected through the camera and splatted as a filled
//! disc; nearer points overwrite farther ones (painter's order over a
//! depth sort with index tie-breaks). Shading is a Lambertian term from
//! normals when present, otherwise depth mapped through a fixed
//! colormap. The background is white. Identical inputs produce
//! bit-identical images.

use nalgebra::Vector3;
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    dodecahedron_viewpoints, look_at, perspective, project_point, CameraPose, PointCloud,
};

/// Default camera distance for a unit-sphere object.
pub const DEFAULT_CAMERA_DISTANCE: f64 = 2.2;
/// Default vertical field of view (radians).
pub const DEFAULT_FOV_Y: f64 = 50.0 * std::f64::consts::PI / 180.0;
pub const DEFAULT_NEAR: f64 = 0.1;
pub const DEFAULT_FAR: f64 = 10.0;
/// Default splat radius in pixels at 224x224.
pub const DEFAULT_SPLAT_RADIUS: f64 = 2.0;
/// Default render resolution.
pub const DEFAULT_IMAGE_SIZE: usize = 224;

/// One rendered view of an object with its camera.
#[derive(Debug, Clone)]
pub struct RenderedView {
    /// H x W x 3, values in [0, 1].
    pub image: Array3<f32>,
    pub pose: CameraPose,
    pub view_id: u32,
}

/// Perspective camera at `eye` looking at the origin, up `(0,1,0)` with a
/// deterministic fallback to `(0,0,1)` when the view direction is
/// parallel to it.
pub fn camera_at(eye: Vector3<f64>, aspect: f64) -> Result<CameraPose> {
    let up = Vector3::new(0.0, 1.0, 0.0);
    let dir = -eye.normalize();
    let m_view = if dir.cross(&up).norm() < 1e-6 {
        look_at(eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0))?
    } else {
        look_at(eye, Vector3::zeros(), up)?
    };
    let m_proj = perspective(DEFAULT_FOV_Y, aspect, DEFAULT_NEAR, DEFAULT_FAR)?;
    Ok(CameraPose::new(m_view, m_proj))
}

/// Renders a point cloud as depth-sorted disc splats.
pub fn render_splat(
    pc: &PointCloud,
    pose: &CameraPose,
    h: usize,
    w: usize,
    splat_radius_px: f64,
) -> Result<RenderedView> {
    if pc.is_empty() {
        return Err(Error::invalid("cannot render an empty point cloud"));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }

    struct Splat {
        cx: f64,
        cy: f64,
        depth: f64,
        index: usize,
    }

    let mut splats = Vec::with_capacity(pc.len());
    for (index, row) in pc.points.rows().into_iter().enumerate() {
        let p = Vector3::new(row[0], row[1], row[2]);
        match project_point(p, pose) {
            Ok(proj) => splats.push(Splat {
                cx: proj.u * w as f64,
                cy: proj.v * h as f64,
                depth: proj.depth,
                index,
            }),
            Err(Error::BehindCamera) => continue,
            Err(e) => return Err(e),
        }
    }

    let (min_d, max_d) = splats
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.depth), hi.max(s.depth)));
    let depth_span = (max_d - min_d).max(1e-12);

    // Painter's order: farthest first; equal depths draw the higher index
    // first so the lowest index wins the pixel.
    splats.sort_unstable_by(|a, b| {
        b.depth.partial_cmp(&a.depth).unwrap().then(b.index.cmp(&a.index))
    });

    let normals = pc.normals.as_ref();
    let mut image = Array3::<f32>::from_elem((h, w, 3), 1.0);
    let r2 = splat_radius_px * splat_radius_px;
    for s in &splats {
        let color = match normals {
            Some(n) => {
                let row = n.row(s.index);
                // Headlight shading: normal transformed to camera space,
                // lit along +z (toward the camera).
                let m = &pose.m_view;
                let nz = m[(2, 0)] * row[0] + m[(2, 1)] * row[1] + m[(2, 2)] * row[2];
                let lambert = nz.max(0.0) as f32;
                let v = 0.08 + 0.87 * lambert;
                [v, v, v]
            }
            None => {
                let t = ((max_d - s.depth) / depth_span) as f32;
                colormap(t)
            }
        };
        let x_lo = ((s.cx - splat_radius_px - 1.0).floor().max(0.0)) as usize;
        let x_hi = ((s.cx + splat_radius_px + 1.0).ceil().min(w as f64)) as usize;
        let y_lo = ((s.cy - splat_radius_px - 1.0).floor().max(0.0)) as usize;
        let y_hi = ((s.cy + splat_radius_px + 1.0).ceil().min(h as f64)) as usize;
        for py in y_lo..y_hi {
            let dy = py as f64 + 0.5 - s.cy;
            for px in x_lo..x_hi {
                let dx = px as f64 + 0.5 - s.cx;
                if dx * dx + dy * dy <= r2 {
                    image[[py, px, 0]] = color[0];
                    image[[py, px, 1]] = color[1];
                    image[[py, px, 2]] = color[2];
                }
            }
        }
    }

    Ok(RenderedView { image, pose: pose.clone(), view_id: 0 })
}

/// Renders the 20-viewpoint dodecahedron rig around a normalized cloud.
/// Views are rendered in parallel and returned ordered by `view_id`.
pub fn generate_views(
    pc: &PointCloud,
    camera_distance: f64,
    h: usize,
    w: usize,
    splat_radius_px: f64,
) -> Result<Vec<RenderedView>> {
    let eyes = dodecahedron_viewpoints(camera_distance)?;
    let aspect = w as f64 / h as f64;
    let mut views: Vec<RenderedView> = eyes
        .into_par_iter()
        .enumerate()
        .map(|(k, eye)| {
            let pose = camera_at(eye, aspect)?;
            let mut view = render_splat(pc, &pose, h, w, splat_radius_px)?;
            view.view_id = k as u32;
            Ok(view)
        })
        .collect::<Result<_>>()?;
    views.sort_by_key(|v| v.view_id);
    Ok(views)
}

/// Fixed 9-stop colormap (dark blue through green to yellow), linearly
/// interpolated; `t` in [0, 1] with 1 = nearest.
pub fn colormap(t: f32) -> [f32; 3] {
    const STOPS: [[f32; 3]; 9] = [
        [0.267, 0.005, 0.329],
        [0.283, 0.141, 0.458],
        [0.254, 0.265, 0.530],
        [0.207, 0.372, 0.553],
        [0.164, 0.471, 0.558],
        [0.128, 0.567, 0.551],
        [0.135, 0.659, 0.518],
        [0.267, 0.749, 0.441],
        [0.993, 0.906, 0.144],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let lo = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - lo as f32;
    let a = STOPS[lo];
    let b = STOPS[lo + 1];
    [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
}

/// Camera metadata for one object's views, serialized as JSON alongside
/// the rendered images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraMetaFile {
    pub views: Vec<CameraMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraMeta {
    pub view_id: u32,
    /// 16 floats, row-major.
    pub m_view: Vec<f64>,
    /// 16 floats, row-major.
    pub m_proj: Vec<f64>,
}

impl CameraMeta {
    pub fn from_pose(view_id: u32, pose: &CameraPose) -> Self {
        CameraMeta {
            view_id,
            m_view: pose.view_row_major().to_vec(),
            m_proj: pose.proj_row_major().to_vec(),
        }
    }

    pub fn to_pose(&self) -> Result<CameraPose> {
        let view: [f64; 16] = self.m_view.as_slice().try_into().map_err(|_| {
            Error::parse(format!("m_view has {} entries, need 16", self.m_view.len()))
        })?;
        let proj: [f64; 16] = self.m_proj.as_slice().try_into().map_err(|_| {
            Error::parse(format!("m_proj has {} entries, need 16", self.m_proj.len()))
        })?;
        let pose = CameraPose::from_row_major(&view, &proj);
        pose.validate()?;
        Ok(pose)
    }
}

impl CameraMetaFile {
    pub fn from_views(views: &[RenderedView]) -> Self {
        CameraMetaFile {
            views: views.iter().map(|v| CameraMeta::from_pose(v.view_id, &v.pose)).collect(),
        }
    }

    /// Parses and validates camera metadata from untrusted JSON bytes.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let meta: CameraMetaFile = serde_json::from_slice(bytes)?;
        for v in &meta.views {
            v.to_pose()?;
        }
        Ok(meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_bytes(&bytes)
    }
}

/// Quantizes to 8-bit and writes a PNG. The encoder settings are fixed,
/// so output bytes are reproducible.
pub fn save_png(image: &Array3<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!("expected HxWx3 image, got {c} channels")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let (yy, xx) = (y as usize, x as usize);
        for k in 0..3 {
            px.0[k] = (image[[yy, xx, k]].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path).map_err(Error::from)
}

/// Loads a PNG into an H x W x 3 array of [0, 1] floats.
pub fn load_png(path: impl AsRef<Path>) -> Result<Array3<f32>> {
    let path = path.as_ref();
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for k in 0..3 {
            out[[y as usize, x as usize, k]] = f32::from(px.0[k]) / 255.0;
        }
    }
    Ok(out)
}
