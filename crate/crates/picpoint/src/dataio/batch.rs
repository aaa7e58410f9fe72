//! Mini-batch assembly with augmentation and patch correspondences.

use ndarray::{Array2, Array3, Array4};
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{
    compose_rotation, farthest_point_sampling, pixel_index, project_point, random_rotation,
    rotate_cloud, CameraPose, PixelIndex,
};
use crate::render::load_png;

#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Samples per batch.
    pub m: usize,
    /// Local regions (FPS centers) per cloud.
    pub l: usize,
    /// Patch grid size.
    pub g: u32,
    /// Rotate clouds and compose poses.
    pub augment: bool,
    /// Decode view PNGs into `images` (training against cached 2D
    /// features skips this).
    pub load_images: bool,
}

/// One training batch. Clouds are stored post-augmentation, poses
/// post-composition, so projecting `points[s][center_indices[s][l]]`
/// through `poses[s]` reproduces `patch_targets[s][l]` exactly.
#[derive(Debug, Clone)]
pub struct Batch {
    pub object_indices: Vec<usize>,
    pub object_ids: Vec<String>,
    pub view_ids: Vec<u32>,
    /// m x N x 3.
    pub points: Array3<f64>,
    /// m x N x 3 when the dataset carries normals.
    pub normals: Option<Array3<f64>>,
    /// m x H x W x 3, present when `load_images` was set.
    pub images: Option<Array4<f32>>,
    pub poses: Vec<CameraPose>,
    /// m x L.
    pub center_indices: Array2<usize>,
    /// m x L.
    pub patch_targets: Vec<Vec<PixelIndex>>,
    /// m x L; false entries are excluded from the local loss.
    pub valid_mask: Array2<bool>,
}

impl Batch {
    pub fn m(&self) -> usize {
        self.object_indices.len()
    }
}

/// Draws `m` distinct objects, one uniform view each, applies the
/// rotation augmentation, computes FPS centers and their patch targets.
/// All randomness comes from `rng` in a fixed draw order.
pub fn sample_batch(ds: &Dataset, opts: &BatchOptions, rng: &mut ChaCha12Rng) -> Result<Batch> {
    let n_objects = ds.len();
    if opts.m == 0 || opts.m > n_objects {
        return Err(Error::invalid(format!(
            "batch size {} exceeds dataset size {n_objects}",
            opts.m
        )));
    }
    let n_views = ds.n_views();
    if n_views == 0 {
        return Err(Error::invalid("dataset has no views"));
    }
    let n_points = ds.objects[0].cloud.len();
    if opts.l == 0 || opts.l > n_points {
        return Err(Error::invalid(format!("L = {} must be in 1..={n_points}", opts.l)));
    }

    let object_indices = index_sample(rng, n_objects, opts.m).into_vec();
    let has_normals = ds.objects.iter().all(|o| o.cloud.normals.is_some());

    let mut points = Array3::zeros((opts.m, n_points, 3));
    let mut normals = if has_normals { Some(Array3::zeros((opts.m, n_points, 3))) } else { None };
    let mut images = if opts.load_images { Some(None) } else { None };
    let mut poses = Vec::with_capacity(opts.m);
    let mut view_ids = Vec::with_capacity(opts.m);
    let mut object_ids = Vec::with_capacity(opts.m);
    let mut center_indices = Array2::zeros((opts.m, opts.l));
    let mut patch_targets = vec![vec![PixelIndex { i: 0, j: 0, g: opts.g }; opts.l]; opts.m];
    let mut valid_mask = Array2::from_elem((opts.m, opts.l), false);

    for (s, &obj_idx) in object_indices.iter().enumerate() {
        let record = &ds.objects[obj_idx];
        let view: u32 = rng.gen_range(0..n_views as u32);
        view_ids.push(view);
        object_ids.push(record.entry.object_id.clone());

        let (cloud, pose) = if opts.augment {
            let rot = random_rotation(rng);
            (
                rotate_cloud(&record.cloud, &rot),
                compose_rotation(&record.cameras[view as usize], &rot),
            )
        } else {
            (record.cloud.clone(), record.cameras[view as usize].clone())
        };

        if cloud.len() != n_points {
            return Err(Error::ShapeMismatch(format!(
                "object {} has {} points, batch expects {n_points}",
                record.entry.object_id,
                cloud.len()
            )));
        }

        let centers = farthest_point_sampling(&cloud, opts.l)?;
        for (l, &c) in centers.iter().enumerate() {
            center_indices[[s, l]] = c;
            let row = cloud.points.row(c);
            let p = nalgebra::Vector3::new(row[0], row[1], row[2]);
            match project_point(p, &pose) {
                Ok(proj) if proj.in_frame => {
                    patch_targets[s][l] = pixel_index(proj.u, proj.v, opts.g)?;
                    valid_mask[[s, l]] = true;
                }
                Ok(_) | Err(Error::BehindCamera) => {}
                Err(e) => return Err(e),
            }
        }

        points.index_axis_mut(ndarray::Axis(0), s).assign(&cloud.points);
        if let (Some(dst), Some(src)) = (normals.as_mut(), cloud.normals.as_ref()) {
            dst.index_axis_mut(ndarray::Axis(0), s).assign(src);
        }

        if let Some(slot) = images.as_mut() {
            let img = load_png(ds.image_path(obj_idx, view))?;
            let (h, w, _) = img.dim();
            let stack: &mut Option<Array4<f32>> = slot;
            let arr = stack.get_or_insert_with(|| Array4::zeros((opts.m, h, w, 3)));
            if arr.dim().1 != h || arr.dim().2 != w {
                return Err(Error::ShapeMismatch("inconsistent image sizes in batch".into()));
            }
            arr.index_axis_mut(ndarray::Axis(0), s).assign(&img);
        }
        poses.push(pose);
    }

    Ok(Batch {
        object_indices,
        object_ids,
        view_ids,
        points,
        normals,
        images: images.flatten(),
        poses,
        center_indices,
        patch_targets,
        valid_mask,
    })
}
