//! The full trainable system: 3D backbone, four heads, pose encoder,
//! and the frozen 2D backbone, wired for one forward/backward step.

use ndarray::{Array1, Array2, Array3, Axis};

use super::config::{Backbone2d, TrainConfig};
use super::features2d::Feature2dCache;
use crate::backbones::{Dgcnn, DgcnnConfig, TinyCnn, TINY_CNN_SEED};
use crate::dataio::Batch;
use crate::error::{Error, Result};
use crate::heads::{Heads, HeadsConfig};
use crate::nn::{mix_seed, rng_from_seed, Elem, GradStore, ParamId, ParamStore};
use crate::objective::{total_loss, ContrastiveBatchInputs, LossToggles, TotalLossOutput};

/// RNG stream tags under the run seed.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_DATA: u64 = 2;

/// Parameter-group assignment: the point branch carries the 3D backbone,
/// both 3D heads and the pose encoder; the image branch carries the 2D
/// heads (the 2D backbone is frozen and owns no parameters here).
pub const POINT_GROUP_PREFIXES: [&str; 4] = ["backbone3d.", "head3d_glb.", "head3d_lcl.", "pose."];
pub const IMAGE_GROUP_PREFIXES: [&str; 2] = ["head2d_glb.", "head2d_lcl."];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Point,
    Image,
}

#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub total: f64,
    pub lcl: Option<f64>,
    pub glb: Option<f64>,
}

pub struct PicPointModel<T: Elem> {
    pub ps: ParamStore<T>,
    pub backbone: Dgcnn,
    pub heads: Heads,
    pub tiny: TinyCnn<T>,
    pub groups: Vec<Group>,
    pub config: TrainConfig,
}

impl<T: Elem> PicPointModel<T> {
    /// Builds the system from a config: 3D backbone first, then heads,
    /// drawn from one init stream; the frozen 2D backbone comes from its
    /// fixed seed or an external weight file.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let mut rng = rng_from_seed(mix_seed(config.seed, STREAM_INIT));
        let bb_cfg = DgcnnConfig {
            in_channels: if config.use_normals { 6 } else { 3 },
            k: config.k,
            ..DgcnnConfig::default()
        };
        let backbone = Dgcnn::init(&mut ps, "backbone3d", bb_cfg, &mut rng);
        let tiny = match &config.backbone2d {
            Backbone2d::Name(_) => TinyCnn::seeded(TINY_CNN_SEED),
            Backbone2d::External { external } => TinyCnn::load_weights(external)?,
        };
        let heads_cfg = HeadsConfig {
            c3: backbone.out_channels(),
            c2: tiny.out_channels(),
            d: config.d,
            use_pose: config.use_pose,
            ..HeadsConfig::default()
        };
        let heads = Heads::init(&mut ps, heads_cfg, &mut rng);
        let groups = assign_groups(&ps)?;
        Ok(PicPointModel { ps, backbone, heads, tiny, groups, config: config.clone() })
    }

    pub fn group_of(&self, id: ParamId) -> Group {
        self.groups[id.0]
    }

    pub fn toggles(&self) -> LossToggles {
        LossToggles { local: self.config.use_local_loss, global: self.config.use_global_loss }
    }

    /// Stacks batch clouds (and normals when enabled) into the backbone
    /// input layout.
    pub fn batch_clouds(&self, batch: &Batch) -> Result<Array3<T>> {
        let (m, n, _) = batch.points.dim();
        let channels = if self.config.use_normals { 6 } else { 3 };
        let mut out = Array3::zeros((m, n, channels));
        for s in 0..m {
            for p in 0..n {
                for k in 0..3 {
                    out[[s, p, k]] = T::from_f64(batch.points[[s, p, k]]);
                }
            }
        }
        if self.config.use_normals {
            let normals = batch
                .normals
                .as_ref()
                .ok_or_else(|| Error::invalid("use_normals set but the batch has no normals"))?;
            for s in 0..m {
                for p in 0..n {
                    for k in 0..3 {
                        out[[s, p, 3 + k]] = T::from_f64(normals[[s, p, k]]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// One full forward and backward pass over a batch. The 2D features
    /// come from the frozen-feature cache; gradients for every trainable
    /// parameter accumulate into the returned store.
    pub fn forward_backward(
        &self,
        batch: &Batch,
        cache: &Feature2dCache<T>,
    ) -> Result<(StepLoss, GradStore<T>)> {
        let m = batch.m();
        let l = self.config.l;
        let g = cache.grid_size();
        let c3 = self.backbone.out_channels();
        let c2 = self.tiny.out_channels();

        // --- 3D branch ---
        let clouds = self.batch_clouds(batch)?;
        let centers: Vec<Vec<usize>> =
            (0..m).map(|s| batch.center_indices.row(s).to_vec()).collect();
        let (locals, ctxs) = self.backbone.forward_batch(&self.ps, clouds.view(), &centers)?;
        let mut per_center_flat = Array2::zeros((m * l, c3));
        let mut global3d = Array2::zeros((m, c3));
        for (s, f) in locals.iter().enumerate() {
            for li in 0..l {
                per_center_flat.row_mut(s * l + li).assign(&f.per_center.row(li));
            }
            global3d.row_mut(s).assign(&f.global);
        }

        // --- pose codes ---
        let pose_inputs = {
            let mut arr = Array2::zeros((m, 16));
            for (s, pose) in batch.poses.iter().enumerate() {
                for (kk, v) in pose.view_row_major().iter().enumerate() {
                    arr[[s, kk]] = T::from_f64(*v);
                }
            }
            arr
        };
        let pose_pass = if self.config.use_pose {
            Some(self.heads.pose.forward(&self.ps, pose_inputs.view())?)
        } else {
            None
        };

        // --- heads ---
        let (z_local, z_local_ctx) = self.heads.local_3d.forward(
            &self.ps,
            per_center_flat.view(),
            pose_pass.as_ref().map(|(codes, _)| codes.view()),
        )?;
        let (z_global, z_global_ctx) = self.heads.global_3d.forward(&self.ps, global3d.view())?;

        // --- frozen 2D features ---
        let gg = (g * g) as usize;
        let mut q_feat_flat = Array2::zeros((m * gg, c2));
        let mut q_feat_global = Array2::zeros((m, c2));
        for s in 0..m {
            let (grid, global) = cache.get(batch.object_indices[s], batch.view_ids[s])?;
            for p in 0..gg {
                q_feat_flat.row_mut(s * gg + p).assign(&grid.row(p));
            }
            q_feat_global.row_mut(s).assign(global);
        }
        let (q_local, q_local_ctx) =
            self.heads.local_2d.forward(&self.ps, q_feat_flat.view(), None)?;
        let (q_global, q_global_ctx) =
            self.heads.global_2d.forward(&self.ps, q_feat_global.view())?;

        // --- objective ---
        let inputs = ContrastiveBatchInputs {
            z_local: z_local.view(),
            q_local: q_local.view(),
            m,
            l,
            g,
            targets: &batch.patch_targets,
            valid: &batch.valid_mask,
            z_global: z_global.view(),
            q_global: q_global.view(),
            tau: self.config.tau,
        };
        let TotalLossOutput { total, lcl, glb, d_z_local, d_q_local, d_z_global, d_q_global } =
            total_loss(&inputs, self.toggles())?;

        // --- backward ---
        let mut gs = GradStore::for_store(&self.ps);
        let (d_per_center_flat, d_codes) =
            self.heads.local_3d.backward(&self.ps, &z_local_ctx, d_z_local.view(), &mut gs);
        let d_global3d =
            self.heads.global_3d.backward(&self.ps, &z_global_ctx, d_z_global.view(), &mut gs);
        // 2D heads train; their input gradients stop at the frozen backbone.
        let _ = self.heads.local_2d.backward(&self.ps, &q_local_ctx, d_q_local.view(), &mut gs);
        let _ = self.heads.global_2d.backward(&self.ps, &q_global_ctx, d_q_global.view(), &mut gs);
        if let (Some((_, pose_ctx)), Some(d_codes)) = (&pose_pass, d_codes) {
            self.heads.pose.backward(&self.ps, pose_ctx, d_codes.view(), &mut gs);
        }

        let mut d_per_center = Array3::zeros((m, l, c3));
        for s in 0..m {
            for li in 0..l {
                d_per_center
                    .index_axis_mut(Axis(0), s)
                    .row_mut(li)
                    .assign(&d_per_center_flat.row(s * l + li));
            }
        }
        self.backbone.backward_batch(
            &self.ps,
            &ctxs,
            d_per_center.view(),
            d_global3d.view(),
            &mut gs,
        );

        let loss = StepLoss {
            total: total.to_f64(),
            lcl: lcl.map(|v| v.to_f64()),
            glb: glb.map(|v| v.to_f64()),
        };
        Ok((loss, gs))
    }

    /// Forward of the 3D branch only, for evaluation (global features).
    pub fn global_feature(&self, cloud: ndarray::ArrayView2<'_, T>) -> Result<Array1<T>> {
        let (out, _) = self.backbone.forward_sample(&self.ps, cloud, &[])?;
        Ok(out.global)
    }
}

/// Assigns every parameter to exactly one optimizer group by name
/// prefix; errors if any parameter is unassigned or doubly assigned.
pub fn assign_groups<T: Elem>(ps: &ParamStore<T>) -> Result<Vec<Group>> {
    let mut out = Vec::with_capacity(ps.len());
    for id in ps.ids() {
        let name = ps.name(id);
        let in_point = POINT_GROUP_PREFIXES.iter().any(|p| name.starts_with(p));
        let in_image = IMAGE_GROUP_PREFIXES.iter().any(|p| name.starts_with(p));
        match (in_point, in_image) {
            (true, false) => out.push(Group::Point),
            (false, true) => out.push(Group::Image),
            (false, false) => {
                return Err(Error::invalid(format!("parameter {name} belongs to no group")))
            }
            (true, true) => {
                return Err(Error::invalid(format!("parameter {name} belongs to both groups")))
            }
        }
    }
    Ok(out)
}
