//! Deterministic synthetic dataset generator: gently tilted ground planes
//! sampled with LiDAR-like 1/range density falloff, plus procedurally
//! placed objects from four synthetic categories with surface-sampled
//! points. Identical (seed, frame count) settings produce byte-identical
//! output directories.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{write_cloud, write_labels, write_manifest, LabelRecord, ManifestEntry};
use crate::error::{Error, Result};
use crate::geometry::{bev_overlap, yaw_rotate, Box3D, Point, PointCloud};

/// The synthetic category palette: name and nominal (l, w, h). Every
/// footprint is wide enough to gather placement support from a 1/range
/// density ground within the generated range band.
pub const FIXTURE_CATEGORIES: [(&str, f64, f64, f64); 4] = [
    ("sedan", 4.6, 1.9, 1.7),
    ("van", 5.4, 2.2, 2.1),
    ("kiosk", 2.6, 2.0, 1.9),
    ("barrier", 2.8, 0.8, 1.1),
];

const GROUND_Z: f64 = -1.8;
const MAX_SLOPE: f64 = 0.052; // tan(3 degrees)
const RING_START: f64 = 2.4;
const RING_STEP: f64 = 0.55;
const MAX_RING_RADIUS: f64 = 48.0;
const OBJECT_RANGE: (f64, f64) = (6.0, 34.0);
const FRAMES_PER_SCENE: usize = 5;
/// Surface points keep this fraction of the half extents so quantization
/// of the label file cannot push them outside the box.
const SURFACE_INSET: f64 = 0.995;

#[derive(Clone, Debug)]
pub struct FixtureConfig {
    pub seed: u64,
    pub frames: usize,
    /// Approximate ground points per frame; objects add a few percent.
    pub points_per_frame: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            seed: 7,
            frames: 10,
            points_per_frame: 30_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FixtureSummary {
    pub frames: usize,
    pub total_points: u64,
    pub total_boxes: u64,
}

struct GroundPlane {
    a: f64,
    b: f64,
    c: f64,
}

impl GroundPlane {
    fn height(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

fn sample_plane(rng: &mut ChaCha8Rng) -> GroundPlane {
    let direction = rng.random_range(-PI..PI);
    let slope = rng.random_range(0.0..MAX_SLOPE);
    GroundPlane {
        a: slope * direction.cos(),
        b: slope * direction.sin(),
        c: GROUND_Z + rng.random_range(-0.1..0.1),
    }
}

/// Ground returns on concentric rings: constant points per ring with fixed
/// radial spacing gives areal density proportional to 1/range.
fn sample_ground(rng: &mut ChaCha8Rng, plane: &GroundPlane, target: usize, cloud: &mut PointCloud) {
    let rings = ((MAX_RING_RADIUS - RING_START) / RING_STEP).floor() as usize;
    let per_ring = (target / rings).max(1);
    for ring in 0..rings {
        let radius = RING_START + ring as f64 * RING_STEP;
        for k in 0..per_ring {
            let azimuth = (k as f64 + rng.random_range(0.0..1.0)) / per_ring as f64 * 2.0 * PI - PI;
            let r_jitter = radius + rng.random_range(-0.5..0.5) * RING_STEP;
            let (x, y) = (r_jitter * azimuth.cos(), r_jitter * azimuth.sin());
            let z = plane.height(x, y) + rng.random_range(-0.03..0.03);
            cloud.push(Point::new(x, y, z, rng.random_range(0.05..0.35)));
        }
    }
}

/// Points over the four side faces and the top, inset slightly and area
/// weighted. Object reflectivity sits above the ground band.
fn sample_object_surface(rng: &mut ChaCha8Rng, b: &Box3D, count: usize, cloud: &mut PointCloud) {
    let (hl, hw, hh) = (b.l / 2.0, b.w / 2.0, b.h / 2.0);
    // Faces: (+u, -u, +v, -v, top) with their areas.
    let areas = [b.w * b.h, b.w * b.h, b.l * b.h, b.l * b.h, b.l * b.w];
    let total: f64 = areas.iter().sum();
    for _ in 0..count {
        let mut pick = rng.random_range(0.0..total);
        let mut face = 0;
        for (i, &a) in areas.iter().enumerate() {
            if pick < a {
                face = i;
                break;
            }
            pick -= a;
        }
        let (u, v, s) = match face {
            0 => (hl, rng.random_range(-hw..hw), rng.random_range(-hh..hh)),
            1 => (-hl, rng.random_range(-hw..hw), rng.random_range(-hh..hh)),
            2 => (rng.random_range(-hl..hl), hw, rng.random_range(-hh..hh)),
            3 => (rng.random_range(-hl..hl), -hw, rng.random_range(-hh..hh)),
            _ => (rng.random_range(-hl..hl), rng.random_range(-hw..hw), hh),
        };
        let local = yaw_rotate(
            Point::new(u * SURFACE_INSET, v * SURFACE_INSET, 0.0, 0.0),
            b.yaw,
        );
        cloud.push(Point::new(
            b.cx + local.x,
            b.cy + local.y,
            b.cz + s * SURFACE_INSET,
            rng.random_range(0.45..0.95),
        ));
    }
}

fn sample_objects(
    rng: &mut ChaCha8Rng,
    plane: &GroundPlane,
    frame_id: &str,
    cloud: &mut PointCloud,
    labels: &mut Vec<LabelRecord>,
) -> u64 {
    let n = rng.random_range(0..=8usize);
    let mut placed: Vec<Box3D> = Vec::new();
    for _ in 0..n {
        let (name, l0, w0, h0) = FIXTURE_CATEGORIES[rng.random_range(0..FIXTURE_CATEGORIES.len())];
        let jitter = rng.random_range(0.92..1.08);
        let (l, w, h) = (l0 * jitter, w0 * jitter, h0 * jitter);
        let mut accepted = None;
        for _ in 0..40 {
            let range = rng.random_range(OBJECT_RANGE.0..OBJECT_RANGE.1);
            let azimuth = rng.random_range(-PI..PI);
            let yaw = rng.random_range(-PI..PI);
            let (cx, cy) = (range * azimuth.cos(), range * azimuth.sin());
            let cz = plane.height(cx, cy) + h / 2.0;
            let candidate = Box3D::new(cx, cy, cz, l, w, h, yaw).expect("fixture box params");
            if placed.iter().all(|other| !bev_overlap(other, &candidate)) {
                accepted = Some(candidate);
                break;
            }
        }
        let Some(b) = accepted else { continue };
        let area = 2.0 * (b.l * b.h + b.w * b.h) + b.l * b.w;
        let count = ((area * 12.0) as usize).clamp(60, 420);
        sample_object_surface(rng, &b, count, cloud);
        labels.push(LabelRecord {
            frame_id: frame_id.to_string(),
            category: name.to_string(),
            box3d: b,
        });
        placed.push(b);
    }
    placed.len() as u64
}

/// Generate the dataset: `manifest.csv`, `labels.csv` and `clouds/*.bin`
/// under `out_dir`. Refuses a non-empty output directory unless `force`.
pub fn generate_fixture(
    cfg: &FixtureConfig,
    out_dir: &Path,
    force: bool,
) -> Result<FixtureSummary> {
    if cfg.frames < 1 {
        return Err(Error::Validation("fixture needs at least one frame".into()));
    }
    if out_dir.exists() {
        let occupied = fs::read_dir(out_dir)
            .map_err(|e| Error::io(out_dir, e))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(Error::Validation(format!(
                "output directory {} is not empty (use force to overwrite)",
                out_dir.display()
            )));
        }
    }
    let clouds_dir = out_dir.join("clouds");
    fs::create_dir_all(&clouds_dir).map_err(|e| Error::io(&clouds_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::with_capacity(cfg.frames);
    let mut labels = Vec::new();
    let mut summary = FixtureSummary {
        frames: cfg.frames,
        ..FixtureSummary::default()
    };

    for idx in 0..cfg.frames {
        let frame_id = format!("frame-{idx:04}");
        let scene_id = format!("scene-{:03}", idx / FRAMES_PER_SCENE);
        let plane = sample_plane(&mut rng);
        let mut cloud = PointCloud::with_capacity(cfg.points_per_frame + 4096);
        sample_ground(&mut rng, &plane, cfg.points_per_frame, &mut cloud);
        summary.total_boxes += sample_objects(&mut rng, &plane, &frame_id, &mut cloud, &mut labels);
        summary.total_points += cloud.len() as u64;

        let rel = format!("clouds/{frame_id}.bin");
        write_cloud(&cloud, &out_dir.join(&rel))?;
        entries.push(ManifestEntry {
            frame_id,
            scene_id,
            cloud_path: rel,
        });
    }

    write_labels(&labels, &out_dir.join("labels.csv"))?;
    write_manifest(&entries, &out_dir.join("manifest.csv"))?;
    Ok(summary)
}
