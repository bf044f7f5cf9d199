//! Object-into-scene composition under reality-conforming constraints:
//! the inserted object keeps its original sensor range (within a
//! tolerance), keeps its observing angle exactly, takes a heading aligned
//! with same-category scene objects, snaps to the local ground height, and
//! must land on placeable ground without colliding with any other box.

use std::collections::BTreeMap;

use rand::Rng;

use crate::dataset::{bank_sample, LabeledBox, ObjectBank, ObjectSample, SceneFrame};
use crate::error::{Error, Result};
use crate::geometry::{bev_overlap, wrap_angle, yaw_rotate, Box3D, Point, PointCloud};
use crate::ground::GroundLabels;

/// Range tolerance for an inserted object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DeltaPolicy {
    /// Half the object's length, the value used throughout.
    HalfLength,
    /// A fixed tolerance in meters.
    Fixed(f64),
}

#[derive(Clone, Debug)]
pub struct CompositionConfig {
    pub delta_policy: DeltaPolicy,
    /// Points below this predicted placeability do not support a placement.
    pub placeability_threshold: f64,
    /// Support neighborhood radius = scale * max(l, w) of the footprint.
    pub support_radius_scale: f64,
    pub min_support_points: usize,
    pub min_support_fraction: f64,
    /// Position draws per object (K).
    pub position_attempts: usize,
    /// Object redraws per requested insertion (M).
    pub object_retries: usize,
    /// Delete scene points inside an inserted box.
    pub remove_occupied: bool,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            delta_policy: DeltaPolicy::HalfLength,
            placeability_threshold: 0.5,
            support_radius_scale: 0.5,
            min_support_points: 10,
            min_support_fraction: 0.8,
            position_attempts: 10,
            object_retries: 3,
            remove_occupied: true,
        }
    }
}

impl CompositionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("placeability_threshold", self.placeability_threshold),
            ("min_support_fraction", self.min_support_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "{name} must be in [0, 1], got {v}"
                )));
            }
        }
        if self.position_attempts < 1 || self.object_retries < 1 {
            return Err(Error::Validation(
                "position_attempts and object_retries must be >= 1".into(),
            ));
        }
        if let DeltaPolicy::Fixed(d) = self.delta_policy {
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Validation(format!(
                    "fixed delta must be positive, got {d}"
                )));
            }
        }
        if self.support_radius_scale <= 0.0 {
            return Err(Error::Validation(
                "support_radius_scale must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Range tolerance for a sample under this config.
    pub fn delta(&self, sample: &ObjectSample) -> f64 {
        match self.delta_policy {
            DeltaPolicy::HalfLength => sample.box3d.l / 2.0,
            DeltaPolicy::Fixed(d) => d,
        }
    }
}

/// A successfully placed object.
#[derive(Clone, Debug)]
pub struct PlacementResult {
    pub sample_id: String,
    pub category: String,
    pub new_box: Box3D,
    pub new_points: PointCloud,
}

/// Why attempts failed, tallied per frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RejectionCounts {
    pub placeability: u64,
    pub collision: u64,
    pub no_candidate: u64,
}

/// One accepted insertion, with enough provenance to re-derive every
/// constraint it had to satisfy.
#[derive(Clone, Debug)]
pub struct PlacementRecord {
    pub sample_id: String,
    pub category: String,
    pub new_box: Box3D,
    pub origin_range: f64,
    pub observing_angle: f64,
    pub delta: f64,
    /// Mean of the gated ground heights used for the height snap.
    pub ground_mean_z: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FrameReport {
    pub frame_id: String,
    pub requested: u64,
    pub placed: u64,
    pub skipped: u64,
    pub rejected: RejectionCounts,
    pub placements: Vec<PlacementRecord>,
}

/// Closed-form heading choice: the mean direction of same-category scene
/// headings (the argmax of the summed cosine similarity). Falls back to the
/// bank's modal heading when the scene has no same-category object or the
/// headings cancel; categories absent from the bank fall back to 0.
pub fn select_heading(category: &str, scene_boxes: &[LabeledBox], bank: &ObjectBank) -> f64 {
    let mut sum_sin = 0.0;
    let mut sum_cos = 0.0;
    let mut any = false;
    for b in scene_boxes.iter().filter(|b| b.category == category) {
        sum_sin += b.box3d.yaw.sin();
        sum_cos += b.box3d.yaw.cos();
        any = true;
    }
    if any {
        let resultant = sum_sin.hypot(sum_cos);
        if resultant >= 1e-9 {
            return wrap_angle(sum_sin.atan2(sum_cos));
        }
    }
    bank.heading_mode(category).unwrap_or(0.0)
}

/// BEV position that keeps the sample's observing angle at the new heading
/// and range. The range must stay within `delta` of the origin range.
pub fn candidate_position(
    sample: &ObjectSample,
    theta_new: f64,
    r_new: f64,
    delta: f64,
) -> Result<(f64, f64)> {
    if (r_new - sample.origin_range).abs() > delta {
        return Err(Error::Validation(format!(
            "candidate range {r_new} outside origin {} +/- {delta}",
            sample.origin_range
        )));
    }
    let azimuth = wrap_angle(sample.observing_angle - theta_new);
    Ok((r_new * azimuth.cos(), r_new * azimuth.sin()))
}

/// Support neighborhood verdict for a candidate footprint.
#[derive(Clone, Debug)]
pub struct Support {
    pub ok: bool,
    /// Points within the BEV support radius.
    pub count: usize,
    /// How many of those are flagged placeable.
    pub placeable: usize,
    /// Heights of placeable points under the footprint (radius fallback
    /// when the footprint rectangle itself is empty).
    pub ground_z: Vec<f64>,
}

/// Gate a footprint against the scene: enough neighbors, enough of them
/// placeable, and collect the ground heights under the box for the height
/// snap.
pub fn placement_support(
    cloud: &PointCloud,
    mask: &GroundLabels,
    footprint: &Box3D,
    cfg: &CompositionConfig,
) -> Support {
    support_with_keep(cloud, mask, None, footprint, cfg)
}

fn support_with_keep(
    cloud: &PointCloud,
    mask: &GroundLabels,
    keep: Option<&[bool]>,
    footprint: &Box3D,
    cfg: &CompositionConfig,
) -> Support {
    let radius = cfg.support_radius_scale * footprint.l.max(footprint.w);
    let radius_sq = radius * radius;
    let mut count = 0usize;
    let mut placeable = 0usize;
    let mut in_rect = Vec::new();
    let mut in_radius = Vec::new();
    for (i, p) in cloud.iter().enumerate() {
        if let Some(keep) = keep {
            if !keep[i] {
                continue;
            }
        }
        let dx = p.x - footprint.cx;
        let dy = p.y - footprint.cy;
        if dx * dx + dy * dy > radius_sq {
            continue;
        }
        count += 1;
        if mask.mask[i] {
            placeable += 1;
            in_radius.push(p.z);
            if footprint.footprint_contains(p.x, p.y) {
                in_rect.push(p.z);
            }
        }
    }
    let ok = count >= cfg.min_support_points
        && (placeable as f64) >= cfg.min_support_fraction * count as f64;
    let ground_z = if in_rect.is_empty() {
        in_radius
    } else {
        in_rect
    };
    Support {
        ok,
        count,
        placeable,
        ground_z,
    }
}

/// New center height: mean ground height plus half the box height.
pub fn adjust_height(box_h: f64, ground_z: &[f64]) -> Result<f64> {
    if ground_z.is_empty() {
        return Err(Error::Validation(
            "height adjustment needs at least one ground point".into(),
        ));
    }
    let mean = ground_z.iter().sum::<f64>() / ground_z.len() as f64;
    Ok(mean + box_h / 2.0)
}

/// Rigidly move the sample to the new pose: its points are expressed in the
/// box frame, rotated by the heading change, and re-anchored at the new
/// center. Reflectivity is untouched.
pub fn place_object(
    sample: &ObjectSample,
    x: f64,
    y: f64,
    z: f64,
    theta_new: f64,
) -> PlacementResult {
    let b = &sample.box3d;
    let delta_yaw = theta_new - b.yaw;
    let new_points: PointCloud = sample
        .points
        .iter()
        .map(|p| {
            let centered = Point::new(p.x - b.cx, p.y - b.cy, p.z - b.cz, p.r);
            let rotated = yaw_rotate(centered, delta_yaw);
            Point::new(rotated.x + x, rotated.y + y, rotated.z + z, rotated.r)
        })
        .collect();
    let new_box = Box3D {
        cx: x,
        cy: y,
        cz: z,
        l: b.l,
        w: b.w,
        h: b.h,
        yaw: wrap_angle(theta_new),
    };
    PlacementResult {
        sample_id: sample.sample_id.clone(),
        category: sample.category.clone(),
        new_box,
        new_points,
    }
}

/// Drop scene points occupying the box volume (footprint in BEV, z within
/// the box's vertical slab). Survivor order is preserved.
pub fn remove_occupied_points(cloud: &PointCloud, b: &Box3D) -> PointCloud {
    cloud.iter().filter(|p| !b.contains(p)).copied().collect()
}

/// Compose one frame: draw the requested number of objects per category
/// (alphabetical order), gate every candidate pose, and append accepted
/// objects to the scene. Scene ground truth is never moved or deleted; only
/// background points under inserted boxes are removed.
pub fn compose_frame<R: Rng>(
    frame: &SceneFrame,
    bank: &ObjectBank,
    counts: &BTreeMap<String, u32>,
    placeability: &GroundLabels,
    cfg: &CompositionConfig,
    rng: &mut R,
) -> Result<(SceneFrame, FrameReport)> {
    cfg.validate()?;
    if placeability.len() != frame.cloud.len() {
        return Err(Error::Validation(format!(
            "placeability mask length {} does not match cloud length {}",
            placeability.len(),
            frame.cloud.len()
        )));
    }

    let mut report = FrameReport {
        frame_id: frame.frame_id.clone(),
        ..FrameReport::default()
    };
    let mut keep = vec![true; frame.cloud.len()];
    let mut boxes = frame.boxes.clone();
    let mut inserted: Vec<PlacementResult> = Vec::new();

    for (category, &n) in counts {
        for _ in 0..n {
            report.requested += 1;
            if !bank.contains_category(category) {
                report.skipped += 1;
                continue;
            }
            let mut placed = false;
            'redraw: for _ in 0..cfg.object_retries {
                let sample = bank_sample(bank, category, rng)?;
                let theta = select_heading(category, &frame.boxes, bank);
                let delta = cfg.delta(sample);
                for _ in 0..cfg.position_attempts {
                    let r_new =
                        rng.random_range(sample.origin_range - delta..=sample.origin_range + delta);
                    let Ok((x, y)) = candidate_position(sample, theta, r_new, delta) else {
                        report.rejected.no_candidate += 1;
                        continue;
                    };
                    // A draw below range zero (or boundary rounding in the
                    // polar reconstruction) would break the range tolerance
                    // on the output box; such candidates are not usable.
                    if r_new < 0.0 || (x.hypot(y) - sample.origin_range).abs() > delta {
                        report.rejected.no_candidate += 1;
                        continue;
                    }
                    let footprint = Box3D {
                        cx: x,
                        cy: y,
                        cz: sample.box3d.cz,
                        l: sample.box3d.l,
                        w: sample.box3d.w,
                        h: sample.box3d.h,
                        yaw: wrap_angle(theta),
                    };
                    let support =
                        support_with_keep(&frame.cloud, placeability, Some(&keep), &footprint, cfg);
                    if !support.ok {
                        report.rejected.placeability += 1;
                        continue;
                    }
                    let collides = boxes.iter().any(|b| bev_overlap(&b.box3d, &footprint));
                    if collides {
                        report.rejected.collision += 1;
                        continue;
                    }
                    if support.ground_z.is_empty() {
                        report.rejected.no_candidate += 1;
                        continue;
                    }
                    let ground_mean =
                        support.ground_z.iter().sum::<f64>() / support.ground_z.len() as f64;
                    let z = adjust_height(sample.box3d.h, &support.ground_z)?;
                    let result = place_object(sample, x, y, z, theta);
                    if cfg.remove_occupied {
                        for (i, p) in frame.cloud.iter().enumerate() {
                            if keep[i] && result.new_box.contains(p) {
                                keep[i] = false;
                            }
                        }
                    }
                    boxes.push(LabeledBox {
                        box3d: result.new_box,
                        category: result.category.clone(),
                    });
                    report.placements.push(PlacementRecord {
                        sample_id: result.sample_id.clone(),
                        category: result.category.clone(),
                        new_box: result.new_box,
                        origin_range: sample.origin_range,
                        observing_angle: sample.observing_angle,
                        delta,
                        ground_mean_z: ground_mean,
                    });
                    inserted.push(result);
                    report.placed += 1;
                    placed = true;
                    break 'redraw;
                }
            }
            if !placed {
                report.skipped += 1;
            }
        }
    }

    let mut cloud = PointCloud::with_capacity(frame.cloud.len());
    for (i, p) in frame.cloud.iter().enumerate() {
        if keep[i] {
            cloud.push(*p);
        }
    }
    for result in &inserted {
        for p in result.new_points.iter() {
            cloud.push(*p);
        }
    }

    Ok((
        SceneFrame {
            frame_id: frame.frame_id.clone(),
            scene_id: frame.scene_id.clone(),
            cloud,
            boxes,
        },
        report,
    ))
}
