//! On-disk formats: PCPD binary clouds, XYZ text import, the JSONL
//! dataset manifest.
//!
//! PCPD layout (little-endian): magic `PCPD`, u32 version (1), u32 point
//! count, u8 has_normals, then Nx3 f32 points and, when flagged, Nx3 f32
//! normals. Floats are stored at f32; readers widen to f64.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const PCPD_MAGIC: &[u8; 4] = b"PCPD";
pub const PCPD_VERSION: u32 = 1;

/// Upper bound on the point count accepted from untrusted files.
const MAX_POINTS: u32 = 1 << 24;

pub fn pcpd_to_bytes(pc: &PointCloud) -> Vec<u8> {
    let n = pc.len();
    let has_normals = pc.normals.is_some();
    let mut out = Vec::with_capacity(13 + n * 12 * if has_normals { 2 } else { 1 });
    out.extend_from_slice(PCPD_MAGIC);
    out.extend_from_slice(&PCPD_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(u8::from(has_normals));
    for row in pc.points.rows() {
        for k in 0..3 {
            out.extend_from_slice(&(row[k] as f32).to_le_bytes());
        }
    }
    if let Some(normals) = &pc.normals {
        for row in normals.rows() {
            for k in 0..3 {
                out.extend_from_slice(&(row[k] as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Parses a PCPD cloud from untrusted bytes.
pub fn pcpd_from_bytes(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 13 {
        return Err(Error::parse("PCPD truncated before header"));
    }
    if &bytes[..4] != PCPD_MAGIC {
        return Err(Error::parse("bad PCPD magic"));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != PCPD_VERSION {
        return Err(Error::parse(format!("unsupported PCPD version {version}")));
    }
    let n = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if n == 0 {
        return Err(Error::parse("PCPD with zero points"));
    }
    if n > MAX_POINTS {
        return Err(Error::parse(format!("PCPD point count {n} exceeds limit")));
    }
    let has_normals = match bytes[12] {
        0 => false,
        1 => true,
        other => return Err(Error::parse(format!("bad has_normals flag {other}"))),
    };
    let n = n as usize;
    let blocks = if has_normals { 2 } else { 1 };
    let expected = 13 + n * 12 * blocks;
    if bytes.len() != expected {
        return Err(Error::parse(format!(
            "PCPD size {} does not match expected {expected}",
            bytes.len()
        )));
    }
    let read_block = |offset: usize| -> Result<Array2<f64>> {
        let mut arr = Array2::zeros((n, 3));
        for i in 0..n {
            for k in 0..3 {
                let at = offset + (i * 3 + k) * 4;
                let v = f32::from_le_bytes([
                    bytes[at],
                    bytes[at + 1],
                    bytes[at + 2],
                    bytes[at + 3],
                ]);
                if !v.is_finite() {
                    return Err(Error::parse("non-finite value in PCPD"));
                }
                arr[[i, k]] = f64::from(v);
            }
        }
        Ok(arr)
    };
    let points = read_block(13)?;
    let pc = if has_normals {
        let normals = read_block(13 + n * 12)?;
        PointCloud::with_normals(points, normals)?
    } else {
        PointCloud::new(points)?
    };
    Ok(pc)
}

pub fn write_pcpd(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&pcpd_to_bytes(pc)).map_err(|e| Error::io(path, e))
}

pub fn read_pcpd(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    pcpd_from_bytes(&bytes)
}

/// Parses text `x y z [nx ny nz]` lines. Blank lines and `#` comments are
/// skipped; every data line must have exactly 3 or 6 columns, consistent
/// across the file.
pub fn xyz_from_str(text: &str) -> Result<PointCloud> {
    let mut points: Vec<[f64; 3]> = Vec::new();
    let mut normals: Vec<[f64; 3]> = Vec::new();
    let mut has_normals: Option<bool> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_ascii_whitespace().collect();
        let with_n = match cols.len() {
            3 => false,
            6 => true,
            other => {
                return Err(Error::parse(format!(
                    "line {}: expected 3 or 6 columns, got {other}",
                    lineno + 1
                )))
            }
        };
        match has_normals {
            None => has_normals = Some(with_n),
            Some(expected) if expected != with_n => {
                return Err(Error::parse(format!(
                    "line {}: inconsistent column count",
                    lineno + 1
                )))
            }
            _ => {}
        }
        let mut vals = [0.0f64; 6];
        for (k, c) in cols.iter().enumerate() {
            vals[k] = c
                .parse::<f64>()
                .map_err(|e| Error::parse(format!("line {}: {e}", lineno + 1)))?;
            if !vals[k].is_finite() {
                return Err(Error::parse(format!("line {}: non-finite value", lineno + 1)));
            }
        }
        points.push([vals[0], vals[1], vals[2]]);
        if with_n {
            normals.push([vals[3], vals[4], vals[5]]);
        }
    }
    if points.is_empty() {
        return Err(Error::parse("XYZ file contains no points"));
    }
    let to_array = |rows: &[[f64; 3]]| {
        let mut arr = Array2::zeros((rows.len(), 3));
        for (i, r) in rows.iter().enumerate() {
            for k in 0..3 {
                arr[[i, k]] = r[k];
            }
        }
        arr
    };
    if has_normals == Some(true) {
        PointCloud::with_normals(to_array(&points), to_array(&normals))
    } else {
        PointCloud::new(to_array(&points))
    }
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    xyz_from_str(&text)
}

/// One object in the dataset manifest (one JSON document per line).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub object_id: String,
    pub class: String,
    /// Cloud path, relative to the manifest directory.
    pub cloud: PathBuf,
    /// Views directory, relative to the manifest directory.
    pub views_dir: PathBuf,
    pub n_points: usize,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses manifest JSONL from untrusted text.
pub fn manifest_from_str(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::parse(format!("manifest line {}: {e}", lineno + 1)))?;
        if entry.n_points == 0 {
            return Err(Error::parse(format!("manifest line {}: zero n_points", lineno + 1)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    manifest_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pcpd_round_trip_is_bit_exact_at_f32() {
        let pc = PointCloud::with_normals(
            array![[0.1, -0.2, 0.3], [1.0, 2.0, -3.0]],
            array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
        )
        .unwrap();
        let bytes = pcpd_to_bytes(&pc);
        let back = pcpd_from_bytes(&bytes).unwrap();
        for (a, b) in pc.points.iter().zip(back.points.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
        // Values that came through f32 storage round-trip identically.
        let again = pcpd_from_bytes(&pcpd_to_bytes(&back)).unwrap();
        assert_eq!(back.points, again.points);
        assert_eq!(back.normals.unwrap(), again.normals.unwrap());
    }

    #[test]
    fn pcpd_rejects_malformed() {
        assert!(pcpd_from_bytes(b"").is_err());
        assert!(pcpd_from_bytes(b"PCPX\x01\x00\x00\x00\x01\x00\x00\x00\x00").is_err());
        // Count larger than payload.
        let mut bytes = PCPD_MAGIC.to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&100u32.to_le_bytes());
        bytes.push(0);
        assert!(pcpd_from_bytes(&bytes).is_err());
        // Bad flag.
        let pc = PointCloud::new(array![[0.0, 0.0, 0.0]]).unwrap();
        let mut ok = pcpd_to_bytes(&pc);
        ok[12] = 7;
        assert!(pcpd_from_bytes(&ok).is_err());
        // Trailing garbage.
        let mut long = pcpd_to_bytes(&pc);
        long.push(0);
        assert!(pcpd_from_bytes(&long).is_err());
    }

    #[test]
    fn xyz_parses_with_and_without_normals() {
        let pc = xyz_from_str("# comment\n1 2 3\n4 5 6\n").unwrap();
        assert_eq!(pc.len(), 2);
        assert!(pc.normals.is_none());
        let pc = xyz_from_str("1 2 3 0 0 1\n4 5 6 1 0 0\n").unwrap();
        assert!(pc.normals.is_some());
        assert_eq!(pc.points[[1, 2]], 6.0);
    }

    #[test]
    fn xyz_rejects_malformed() {
        assert!(xyz_from_str("").is_err());
        assert!(xyz_from_str("1 2\n").is_err());
        assert!(xyz_from_str("1 2 3\n4 5 6 0 0 1\n").is_err());
        assert!(xyz_from_str("1 2 nope\n").is_err());
        assert!(xyz_from_str("inf 0 0\n").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![
            ManifestEntry {
                object_id: "syn_00000".into(),
                class: "sphere".into(),
                cloud: "objects/syn_00000.pcpd".into(),
                views_dir: "views/syn_00000".into(),
                n_points: 1024,
            },
            ManifestEntry {
                object_id: "syn_00001".into(),
                class: "box".into(),
                cloud: "objects/syn_00001.pcpd".into(),
                views_dir: "views/syn_00001".into(),
                n_points: 1024,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        write_manifest(&entries, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn manifest_rejects_bad_lines() {
        assert!(manifest_from_str("{\"object_id\": 3}").is_err());
        assert!(manifest_from_str("not json").is_err());
        let zero = r#"{"object_id":"a","class":"c","cloud":"x","views_dir":"y","n_points":0}"#;
        assert!(manifest_from_str(zero).is_err());
    }
}
