//! Diagnostics for scene realism: the reality-conforming score, per-frame
//! foreground/background voxel-cell ratios at feature-map resolution, and
//! object-bank / scene-category summary tables.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::dataset::{ObjectBank, SceneFrame};
use crate::error::{Error, Result};

/// Voxel grid plus the BEV coarsening stride of the detector feature map.
#[derive(Clone, Debug)]
pub struct VoxelSpec {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub stride: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
}

impl Default for VoxelSpec {
    fn default() -> Self {
        VoxelSpec {
            vx: 0.075,
            vy: 0.075,
            vz: 0.2,
            stride: 8,
            x_range: (-54.0, 54.0),
            y_range: (-54.0, 54.0),
            z_range: (-5.0, 3.0),
        }
    }
}

impl VoxelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vx <= 0.0 || self.vy <= 0.0 || self.vz <= 0.0 {
            return Err(Error::Validation("voxel sizes must be positive".into()));
        }
        if self.stride < 1 {
            return Err(Error::Validation("stride must be >= 1".into()));
        }
        for (name, (lo, hi)) in [
            ("x", self.x_range),
            ("y", self.y_range),
            ("z", self.z_range),
        ] {
            if hi <= lo || !hi.is_finite() || !lo.is_finite() {
                return Err(Error::Validation(format!(
                    "empty {name} range [{lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    /// Voxel index of a point, or None when out of bounds (half-open upper
    /// edges).
    fn voxel_index(&self, x: f64, y: f64, z: f64) -> Option<(usize, usize, usize)> {
        let in_range = |v: f64, (lo, hi): (f64, f64)| v >= lo && v < hi;
        if !in_range(x, self.x_range) || !in_range(y, self.y_range) || !in_range(z, self.z_range) {
            return None;
        }
        Some((
            ((x - self.x_range.0) / self.vx).floor() as usize,
            ((y - self.y_range.0) / self.vy).floor() as usize,
            ((z - self.z_range.0) / self.vz).floor() as usize,
        ))
    }
}

/// Ratio of augmented to baseline metric values; 1.0 means the augmented
/// data is indistinguishable to the fixed model.
pub fn reality_score(metric_aug: f64, metric_noaug: f64) -> Result<f64> {
    if !metric_aug.is_finite() || !metric_noaug.is_finite() {
        return Err(Error::Validation("metric values must be finite".into()));
    }
    if metric_aug < 0.0 {
        return Err(Error::Validation(format!(
            "augmented metric must be >= 0, got {metric_aug}"
        )));
    }
    if metric_noaug <= 0.0 {
        return Err(Error::Validation(format!(
            "baseline metric must be positive, got {metric_noaug}"
        )));
    }
    Ok(metric_aug / metric_noaug)
}

/// Foreground/background occupied-cell ratio for one category, averaged
/// over frames. A coarse BEV cell (stride x voxel) is foreground iff it
/// holds at least one in-bounds point inside a ground-truth box of the
/// category; background cells are the remaining occupied ones.
pub fn fg_bg_ratio(frames: &[SceneFrame], spec: &VoxelSpec, category: &str) -> Result<f64> {
    spec.validate()?;
    if frames.is_empty() {
        return Err(Error::Validation(
            "fg/bg ratio needs at least one frame".into(),
        ));
    }
    let mut total = 0.0;
    for frame in frames {
        let boxes: Vec<_> = frame
            .boxes
            .iter()
            .filter(|b| b.category == category)
            .map(|b| b.box3d)
            .collect();
        let mut occupied: HashSet<(usize, usize)> = HashSet::new();
        let mut foreground: HashSet<(usize, usize)> = HashSet::new();
        for p in frame.cloud.iter() {
            let Some((ix, iy, _)) = spec.voxel_index(p.x, p.y, p.z) else {
                continue;
            };
            let cell = (ix / spec.stride, iy / spec.stride);
            occupied.insert(cell);
            if boxes.iter().any(|b| b.contains(p)) {
                foreground.insert(cell);
            }
        }
        let fg = foreground.len();
        let bg = occupied.len() - fg;
        if bg == 0 {
            return Err(Error::Validation(format!(
                "frame {} has no background cells",
                frame.frame_id
            )));
        }
        total += fg as f64 / bg as f64;
    }
    Ok(total / frames.len() as f64)
}

/// One per-category row of the object summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryRow {
    pub category: String,
    pub mean_length: f64,
    pub mean_width: f64,
    pub mean_height: f64,
    /// Mean number of points enclosed by a bank box.
    pub mean_points: f64,
    /// Mean points per voxel of the mean-sized box.
    pub density_per_voxel: f64,
    /// Fraction of frames containing the category.
    pub frame_fraction: f64,
    /// Fraction of bank objects with this category.
    pub bank_fraction: f64,
}

/// Per-category means over the bank plus frame/bank occurrence fractions.
/// The voxel density divides the mean point count by the voxel count of the
/// mean box (ratio of means).
pub fn object_stats(
    frames: &[SceneFrame],
    bank: &ObjectBank,
    spec: &VoxelSpec,
) -> Result<Vec<CategoryRow>> {
    spec.validate()?;
    if bank.is_empty() {
        return Err(Error::Validation(
            "object stats need a non-empty bank".into(),
        ));
    }

    let mut frames_with: HashMap<&str, usize> = HashMap::new();
    for frame in frames {
        for category in frame.categories() {
            *frames_with.entry(category).or_insert(0) += 1;
        }
    }

    let mut rows = Vec::new();
    for category in bank.categories().map(str::to_owned).collect::<Vec<_>>() {
        let idxs = bank.category_samples(&category);
        let n = idxs.len() as f64;
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for &i in idxs {
            let s = &bank.samples()[i];
            sums.0 += s.box3d.l;
            sums.1 += s.box3d.w;
            sums.2 += s.box3d.h;
            sums.3 += s.points.len() as f64;
        }
        let (mean_l, mean_w, mean_h, mean_pts) = (sums.0 / n, sums.1 / n, sums.2 / n, sums.3 / n);
        let mean_voxels = (mean_l / spec.vx) * (mean_w / spec.vy) * (mean_h / spec.vz);
        rows.push(CategoryRow {
            frame_fraction: if frames.is_empty() {
                0.0
            } else {
                *frames_with.get(category.as_str()).unwrap_or(&0) as f64 / frames.len() as f64
            },
            bank_fraction: n / bank.len() as f64,
            density_per_voxel: mean_pts / mean_voxels,
            mean_length: mean_l,
            mean_width: mean_w,
            mean_height: mean_h,
            mean_points: mean_pts,
            category,
        });
    }
    Ok(rows)
}

/// Ground-truth box counts grouped by scene, then category.
pub fn scene_category_table(frames: &[SceneFrame]) -> BTreeMap<String, BTreeMap<String, u64>> {
    let mut out: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for frame in frames {
        let scene = out.entry(frame.scene_id.clone()).or_default();
        for b in &frame.boxes {
            *scene.entry(b.category.clone()).or_insert(0) += 1;
        }
    }
    out
}
