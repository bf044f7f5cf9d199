//! Point-cloud binary files: little-endian float32 records, 4 or 5 fields
//! per point (nuScenes sweeps carry a fifth ring-index field).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

const FIELD_BYTES: usize = 4;

/// Read a `.bin` cloud. The first four fields map to (x, y, z, r); a fifth
/// field, if present, is discarded. Reflectivity stored on a 0-255 scale
/// (any value > 1) is normalized to [0, 1] at ingest.
pub fn read_cloud(path: &Path, fields_per_point: usize) -> Result<PointCloud> {
    if !(fields_per_point == 4 || fields_per_point == 5) {
        return Err(Error::Validation(format!(
            "fields_per_point must be 4 or 5, got {fields_per_point}"
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let record = FIELD_BYTES * fields_per_point;
    let remainder = bytes.len() % record;
    if remainder != 0 {
        return Err(Error::format(
            path,
            format!(
                "size {} is not a multiple of the {record}-byte record ({remainder} trailing bytes)",
                bytes.len()
            ),
        ));
    }

    let n = bytes.len() / record;
    let mut cloud = PointCloud::with_capacity(n);
    let mut any_wide_reflectivity = false;
    for rec in bytes.chunks_exact(record) {
        let f = |i: usize| -> f64 {
            f32::from_le_bytes(
                rec[i * FIELD_BYTES..(i + 1) * FIELD_BYTES]
                    .try_into()
                    .unwrap(),
            ) as f64
        };
        let p = Point::new(f(0), f(1), f(2), f(3));
        if p.r > 1.0 {
            any_wide_reflectivity = true;
        }
        cloud.push(p);
    }
    if any_wide_reflectivity {
        let rescaled: PointCloud = cloud
            .iter()
            .map(|p| Point::new(p.x, p.y, p.z, p.r / 255.0))
            .collect();
        return Ok(rescaled);
    }
    Ok(cloud)
}

/// Write a cloud as 4-field little-endian float32 records.
pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * FIELD_BYTES * 4);
    for p in cloud.iter() {
        for v in [p.x, p.y, p.z, p.r] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_file_reads_empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        std::fs::write(&path, b"").unwrap();
        assert!(read_cloud(&path, 4).unwrap().is_empty());
        assert!(read_cloud(&path, 5).unwrap().is_empty());
    }

    #[test]
    fn single_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.bin");
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let cloud = read_cloud(&path, 4).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud[0], Point::new(1.0, 2.0, 3.0, 0.5));
    }

    #[test]
    fn size_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, vec![0u8; 18]).unwrap();
        let err = read_cloud(&path, 4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.bin"), "{msg}");
        assert!(msg.contains("2 trailing bytes"), "{msg}");
    }

    #[test]
    fn fifth_field_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ring.bin");
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.25, 17.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let cloud = read_cloud(&path, 5).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud[0], Point::new(1.0, 2.0, 3.0, 0.25));
    }

    #[test]
    fn wide_reflectivity_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.bin");
        let mut bytes = Vec::new();
        for rec in [[0.0f32, 0.0, 0.0, 255.0], [1.0, 1.0, 1.0, 51.0]] {
            for v in rec {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(&path, bytes).unwrap();
        let cloud = read_cloud(&path, 4).unwrap();
        assert_eq!(cloud[0].r, 1.0);
        assert_eq!(cloud[1].r, 51.0 / 255.0);
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        // Coordinates are generated at f32 granularity, matching what any
        // cloud loaded from disk contains.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud: PointCloud = (0..10_000)
            .map(|_| {
                Point::new(
                    (rng.random::<f32>() * 100.0) as f64,
                    (rng.random::<f32>() * -80.0) as f64,
                    (rng.random::<f32>() * 8.0 - 4.0) as f64,
                    rng.random::<f32>() as f64,
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.bin");
        write_cloud(&cloud, &path).unwrap();
        let back = read_cloud(&path, 4).unwrap();
        assert_eq!(back, cloud);
        let again = dir.path().join("rt2.bin");
        write_cloud(&back, &again).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }

    #[test]
    fn empty_cloud_writes_empty_file_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        write_cloud(&PointCloud::new(), &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
        let p2 = dir.path().join("e2.bin");
        write_cloud(&PointCloud::new(), &p2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&p2).unwrap());
    }
}
