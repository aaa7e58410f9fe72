//! Cache of frozen 2D backbone features.
//!
//! The 2D backbone never updates and the rendered views never change
//! during a run, so each (object, view) feature map is computed once.
//! Entries hold the flattened G*G x C2 grid (rows `j*G + i`) and the
//! pooled global feature. Reading a cached entry returns the identical
//! arrays the backbone produced, so caching does not change numerics.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::backbones::TinyCnn;
use crate::dataio::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::nn::Elem;
use crate::render::load_png;

pub struct Feature2dCache<T: Elem> {
    entries: Vec<Vec<Option<(Array2<T>, Array1<T>)>>>,
    grid_size: u32,
}

impl<T: Elem> Feature2dCache<T> {
    pub fn new(ds: &Dataset, tiny: &TinyCnn<T>) -> Result<Self> {
        let n_views = ds.n_views();
        // Grid size comes from the actual image dimensions on disk.
        let (w, h) = image::image_dimensions(ds.image_path(0, 0))
            .map_err(crate::error::Error::from)?;
        if w != h {
            return Err(Error::ShapeMismatch(format!("views must be square, got {w}x{h}")));
        }
        let grid_size = tiny.grid_size(h as usize) as u32;
        if grid_size == 0 {
            return Err(Error::ShapeMismatch(format!("image size {h} too small")));
        }
        Ok(Feature2dCache {
            entries: vec![vec![None; n_views]; ds.len()],
            grid_size,
        })
    }

    pub fn grid_size(&self) -> u32 {
        self.grid_size
    }

    /// Computes and stores the features for every (object, view) pair in
    /// the batch that is not cached yet; pairs are processed in parallel.
    pub fn ensure(&mut self, ds: &Dataset, tiny: &TinyCnn<T>, batch: &Batch) -> Result<()> {
        let mut missing: Vec<(usize, u32)> = Vec::new();
        for (obj, view) in batch.object_indices.iter().zip(&batch.view_ids) {
            if self.entries[*obj][*view as usize].is_none()
                && !missing.contains(&(*obj, *view))
            {
                missing.push((*obj, *view));
            }
        }
        let computed: Vec<((usize, u32), (Array2<T>, Array1<T>))> = missing
            .into_par_iter()
            .map(|(obj, view)| {
                let feat = compute_features(ds, tiny, obj, view)?;
                Ok(((obj, view), feat))
            })
            .collect::<Result<_>>()?;
        for ((obj, view), feat) in computed {
            self.entries[obj][view as usize] = Some(feat);
        }
        Ok(())
    }

    /// Warms the whole dataset (used before long runs; optional).
    pub fn warm_all(&mut self, ds: &Dataset, tiny: &TinyCnn<T>) -> Result<()> {
        let n_views = ds.n_views();
        let jobs: Vec<(usize, u32)> = (0..ds.len())
            .flat_map(|o| (0..n_views as u32).map(move |v| (o, v)))
            .filter(|(o, v)| self.entries[*o][*v as usize].is_none())
            .collect();
        let computed: Vec<((usize, u32), (Array2<T>, Array1<T>))> = jobs
            .into_par_iter()
            .map(|(obj, view)| Ok(((obj, view), compute_features(ds, tiny, obj, view)?)))
            .collect::<Result<_>>()?;
        for ((obj, view), feat) in computed {
            self.entries[obj][view as usize] = Some(feat);
        }
        Ok(())
    }

    pub fn get(&self, obj: usize, view: u32) -> Result<(&Array2<T>, &Array1<T>)> {
        self.entries[obj][view as usize]
            .as_ref()
            .map(|(g, gl)| (g, gl))
            .ok_or_else(|| Error::invalid(format!("features for object {obj} view {view} not cached")))
    }
}

fn compute_features<T: Elem>(
    ds: &Dataset,
    tiny: &TinyCnn<T>,
    obj: usize,
    view: u32,
) -> Result<(Array2<T>, Array1<T>)> {
    let img = load_png(ds.image_path(obj, view))?;
    let (h, w, _) = img.dim();
    let mut cast = ndarray::Array3::<T>::zeros((h, w, 3));
    for (dst, &src) in cast.iter_mut().zip(img.iter()) {
        *dst = T::from_f64(f64::from(src));
    }
    let fm = tiny.forward(cast.view())?;
    let (gh, gw, c2) = fm.grid.dim();
    let grid_flat = fm
        .grid
        .into_shape_with_order((gh * gw, c2))
        .expect("grid flatten");
    Ok((grid_flat, fm.global))
}
