//! Dataset construction, on-disk formats and mini-batch assembly.

mod batch;
mod dataset;
mod formats;
mod synthetic;

pub use batch::{sample_batch, Batch, BatchOptions};
pub use dataset::{
    build_dataset, validate_dataset, BuildOptions, BuildReport, DataSource, Dataset, ObjectRecord,
    ValidationReport, BUILD_REPORT_FILE,
};
pub use formats::{
    manifest_from_str, pcpd_from_bytes, pcpd_to_bytes, read_manifest, read_pcpd, read_xyz,
    write_manifest, write_pcpd, xyz_from_str, ManifestEntry, MANIFEST_FILE, PCPD_MAGIC,
    PCPD_VERSION,
};
pub use synthetic::{generate_synthetic_object, ShapeSpec, SyntheticShapeSpec, CLASS_NAMES};
