//! Dataset construction, loading and revalidation.
//!
//! A built dataset directory contains `manifest.jsonl`,
//! `build_report.json`, `objects/<id>.pcpd` and
//! `views/<id>/view_NN.png` plus `views/<id>/cameras.json`.

use std::path::{Path, PathBuf};

use rand::seq::index::sample as index_sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::formats::{
    pcpd_to_bytes, read_manifest, read_pcpd, read_xyz, write_manifest, write_pcpd, ManifestEntry,
    MANIFEST_FILE,
};
use super::synthetic::{generate_synthetic_object, ShapeSpec, SyntheticShapeSpec, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::geometry::{normalize, random_rotation, rotate_cloud, CameraPose, PointCloud};
use crate::nn::{mix_seed, rng_from_seed};
use crate::render::{self, generate_views, CameraMetaFile};

/// Where objects come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic { objects: usize, jitter_sigma: f64 },
    Directory(PathBuf),
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub views: usize,
    pub n_points: usize,
    pub seed: u64,
    pub image_size: usize,
    pub camera_distance: f64,
    pub splat_radius: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            views: 20,
            n_points: 1024,
            seed: 0,
            image_size: render::DEFAULT_IMAGE_SIZE,
            camera_distance: render::DEFAULT_CAMERA_DISTANCE,
            splat_radius: render::DEFAULT_SPLAT_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildReport {
    pub objects: usize,
    pub views_per_object: usize,
    pub n_points: usize,
    pub seed: u64,
    pub skipped: Vec<String>,
}

pub const BUILD_REPORT_FILE: &str = "build_report.json";

/// Builds a dataset directory. Object pipelines run in parallel; each
/// object derives its own RNG stream from the master seed, so the output
/// bytes are identical for any worker count.
pub fn build_dataset(
    source: &DataSource,
    out_dir: impl AsRef<Path>,
    opts: &BuildOptions,
) -> Result<BuildReport> {
    if opts.views == 0 || opts.views > 20 {
        return Err(Error::invalid("views must be in 1..=20 (dodecahedron rig)"));
    }
    if opts.n_points == 0 {
        return Err(Error::invalid("n_points must be positive"));
    }
    let out_dir = out_dir.as_ref();
    let objects_dir = out_dir.join("objects");
    let views_root = out_dir.join("views");
    std::fs::create_dir_all(&objects_dir).map_err(|e| Error::io(&objects_dir, e))?;
    std::fs::create_dir_all(&views_root).map_err(|e| Error::io(&views_root, e))?;

    enum Job {
        Synthetic { index: usize, jitter: f64 },
        File { index: usize, path: PathBuf },
    }

    let jobs: Vec<Job> = match source {
        DataSource::Synthetic { objects, jitter_sigma } => {
            (0..*objects).map(|index| Job::Synthetic { index, jitter: *jitter_sigma }).collect()
        }
        DataSource::Directory(dir) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|r| r.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("pcpd") | Some("xyz")
                    )
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::invalid(format!(
                    "no .pcpd or .xyz files in {}",
                    dir.display()
                )));
            }
            files.into_iter().enumerate().map(|(index, path)| Job::File { index, path }).collect()
        }
    };

    let results: Vec<std::result::Result<ManifestEntry, String>> = jobs
        .par_iter()
        .map(|job| {
            let (index, object_id, class, cloud) = match job {
                Job::Synthetic { index, jitter } => {
                    let mut rng = rng_from_seed(mix_seed(opts.seed, *index as u64));
                    let class_id = (*index % CLASS_NAMES.len()) as u32;
                    let shape = ShapeSpec::sample(class_id, &mut rng)
                        .map_err(|e| format!("object {index}: {e}"))?;
                    let spec = SyntheticShapeSpec { shape, jitter_sigma: *jitter };
                    let mut pc = generate_synthetic_object(&spec, opts.n_points, &mut rng)
                        .map_err(|e| format!("object {index}: {e}"))?;
                    // Random orientation: classes stay recognizable by
                    // shape, not by canonical axis alignment.
                    pc = rotate_cloud(&pc, &random_rotation(&mut rng));
                    (
                        *index,
                        format!("syn_{index:05}"),
                        shape.class_name().to_string(),
                        pc,
                    )
                }
                Job::File { index, path } => {
                    let mut rng = rng_from_seed(mix_seed(opts.seed, *index as u64));
                    let loaded = match path.extension().and_then(|e| e.to_str()) {
                        Some("pcpd") => read_pcpd(path),
                        _ => read_xyz(path),
                    }
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                    if loaded.len() < opts.n_points {
                        return Err(format!(
                            "{}: has {} points, need {}",
                            path.display(),
                            loaded.len(),
                            opts.n_points
                        ));
                    }
                    let keep = index_sample(&mut rng, loaded.len(), opts.n_points).into_vec();
                    let mut points = ndarray::Array2::zeros((opts.n_points, 3));
                    let mut normals = loaded
                        .normals
                        .as_ref()
                        .map(|_| ndarray::Array2::zeros((opts.n_points, 3)));
                    for (row, &src) in keep.iter().enumerate() {
                        for k in 0..3 {
                            points[[row, k]] = loaded.points[[src, k]];
                            if let (Some(dst), Some(srcn)) = (normals.as_mut(), &loaded.normals) {
                                dst[[row, k]] = srcn[[src, k]];
                            }
                        }
                    }
                    let pc = PointCloud { points, normals, label: None };
                    let object_id = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("obj_{index:05}"));
                    (*index, object_id, "unknown".to_string(), pc)
                }
            };
            let _ = index;
            let pc = normalize(&cloud).map_err(|e| format!("{object_id}: {e}"))?;
            let cloud_rel = PathBuf::from("objects").join(format!("{object_id}.pcpd"));
            write_pcpd(&pc, out_dir.join(&cloud_rel)).map_err(|e| format!("{object_id}: {e}"))?;

            let views_rel = PathBuf::from("views").join(&object_id);
            let views_abs = out_dir.join(&views_rel);
            std::fs::create_dir_all(&views_abs).map_err(|e| format!("{object_id}: {e}"))?;
            let views = generate_views(
                &pc,
                opts.camera_distance,
                opts.image_size,
                opts.image_size,
                opts.splat_radius,
            )
            .map_err(|e| format!("{object_id}: {e}"))?;
            let views = &views[..opts.views];
            for v in views {
                render::save_png(&v.image, views_abs.join(format!("view_{:02}.png", v.view_id)))
                    .map_err(|e| format!("{object_id}: {e}"))?;
            }
            CameraMetaFile::from_views(views)
                .save(views_abs.join("cameras.json"))
                .map_err(|e| format!("{object_id}: {e}"))?;

            Ok(ManifestEntry {
                object_id,
                class,
                cloud: cloud_rel,
                views_dir: views_rel,
                n_points: opts.n_points,
            })
        })
        .collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(entry) => entries.push(entry),
            Err(msg) => {
                eprintln!("warning: skipping object: {msg}");
                skipped.push(msg);
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::invalid("no objects could be built"));
    }
    write_manifest(&entries, out_dir.join(MANIFEST_FILE))?;
    let report = BuildReport {
        objects: entries.len(),
        views_per_object: opts.views,
        n_points: opts.n_points,
        seed: opts.seed,
        skipped,
    };
    let report_path = out_dir.join(BUILD_REPORT_FILE);
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}

/// One loaded object: manifest entry, normalized cloud, camera poses.
#[derive(Debug, Clone)]
pub struct ObjectRecord {
    pub entry: ManifestEntry,
    pub cloud: PointCloud,
    pub cameras: Vec<CameraPose>,
}

/// An in-memory dataset: clouds and cameras are loaded eagerly (small),
/// images stay on disk and are decoded on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub objects: Vec<ObjectRecord>,
    pub class_names: Vec<String>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let manifest_path = root.join(MANIFEST_FILE);
        let entries = read_manifest(&manifest_path)?;
        if entries.is_empty() {
            return Err(Error::invalid(format!("{} lists no objects", manifest_path.display())));
        }
        let objects: Vec<ObjectRecord> = entries
            .into_par_iter()
            .map(|entry| {
                let mut cloud = read_pcpd(root.join(&entry.cloud))?;
                let meta = CameraMetaFile::load(root.join(&entry.views_dir).join("cameras.json"))?;
                let mut cameras = Vec::with_capacity(meta.views.len());
                for v in &meta.views {
                    cameras.push(v.to_pose()?);
                }
                if cameras.is_empty() {
                    return Err(Error::invalid(format!("{}: no views", entry.object_id)));
                }
                cloud.label = None;
                Ok(ObjectRecord { entry, cloud, cameras })
            })
            .collect::<Result<_>>()?;
        let mut class_names: Vec<String> =
            objects.iter().map(|o| o.entry.class.clone()).collect();
        class_names.sort();
        class_names.dedup();
        let labels = objects
            .iter()
            .map(|o| class_names.iter().position(|c| *c == o.entry.class).unwrap() as u32)
            .collect();
        Ok(Dataset { root, objects, class_names, labels })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn n_views(&self) -> usize {
        self.objects.iter().map(|o| o.cameras.len()).min().unwrap_or(0)
    }

    pub fn label(&self, object_index: usize) -> u32 {
        self.labels[object_index]
    }

    pub fn image_path(&self, object_index: usize, view_id: u32) -> PathBuf {
        self.root
            .join(&self.objects[object_index].entry.views_dir)
            .join(format!("view_{view_id:02}.png"))
    }

    pub fn index_of(&self, object_id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.entry.object_id == object_id)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub objects: usize,
    pub views: usize,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Re-runs every structural invariant over a built dataset: cloud files
/// parse and are canonical bytes, clouds are normalized with unit
/// normals, camera files parse with valid poses, images exist with the
/// expected dimensions.
pub fn validate_dataset(dir: impl AsRef<Path>) -> Result<ValidationReport> {
    let root = dir.as_ref();
    let entries = read_manifest(root.join(MANIFEST_FILE))?;
    let mut report = ValidationReport::default();
    let mut image_dims: Option<(u32, u32)> = None;
    for entry in &entries {
        report.objects += 1;
        let mut complain = |msg: String| report.problems.push(format!("{}: {msg}", entry.object_id));
        let cloud_path = root.join(&entry.cloud);
        match read_pcpd(&cloud_path) {
            Ok(cloud) => {
                if cloud.len() != entry.n_points {
                    complain(format!("cloud has {} points, manifest says {}", cloud.len(), entry.n_points));
                }
                let c = cloud.centroid();
                let centroid_norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                if centroid_norm > 1e-6 {
                    complain(format!("centroid norm {centroid_norm:.2e} after normalization"));
                }
                let max_norm = cloud.max_norm();
                if (max_norm - 1.0).abs() > 1e-6 {
                    complain(format!("max point norm {max_norm}"));
                }
                // Byte canonicality doubles as the write/read round trip.
                match std::fs::read(&cloud_path) {
                    Ok(bytes) => {
                        if bytes != pcpd_to_bytes(&cloud) {
                            complain("cloud file is not canonical PCPD bytes".into());
                        }
                    }
                    Err(e) => complain(format!("reread failed: {e}")),
                }
            }
            Err(e) => complain(format!("cloud unreadable: {e}")),
        }
        let cam_path = root.join(&entry.views_dir).join("cameras.json");
        match CameraMetaFile::load(&cam_path) {
            Ok(meta) => {
                for (k, v) in meta.views.iter().enumerate() {
                    report.views += 1;
                    if v.view_id != k as u32 {
                        complain(format!("view {k} has id {}", v.view_id));
                    }
                    if let Err(e) = v.to_pose() {
                        complain(format!("view {k}: {e}"));
                    }
                    let img = root.join(&entry.views_dir).join(format!("view_{:02}.png", v.view_id));
                    match image::image_dimensions(&img) {
                        Ok(dims) => match image_dims {
                            None => image_dims = Some(dims),
                            Some(expected) if expected != dims => {
                                complain(format!("view {k} is {dims:?}, expected {expected:?}"))
                            }
                            _ => {}
                        },
                        Err(e) => complain(format!("view {k} image: {e}")),
                    }
                }
            }
            Err(e) => complain(format!("cameras.json: {e}")),
        }
    }
    Ok(report)
}
