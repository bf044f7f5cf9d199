//! Batch pipelines over dataset directories: mask generation, estimator
//! training, augmentation, statistics, and their file outputs. Frames are
//! processed in parallel with per-frame generators seeded from the global
//! seed and the frame id, so results do not depend on the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analytics::{scene_category_table, CategoryRow};
use crate::compose::{compose_frame, CompositionConfig, FrameReport, RejectionCounts};
use crate::dataset::{
    load_dataset, write_cloud, write_labels, write_manifest, LabelRecord, ManifestEntry,
    ObjectBank, SceneFrame,
};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::ground::{ground_fit, GroundFitConfig, GroundLabels};
use crate::placeability::{infer_mask, train, PlaceabilityModel, TrainConfig};
use crate::schedule::{counts_for_frame, ScheduleConfig, ScheduleState};

/// Stable per-frame seed: FNV-1a over the frame id, mixed with the global
/// seed through a splitmix finalizer.
pub fn derive_seed(global_seed: u64, frame_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in frame_id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ global_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn make_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Validation(format!("cannot build worker pool: {e}")))
}

/// Per-point mask file: one 0/1 byte per point, in cloud order.
pub fn write_mask(mask: &GroundLabels, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.mask.iter().map(|&m| u8::from(m)).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<GroundLabels> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut mask = Vec::with_capacity(bytes.len());
    for (i, b) in bytes.iter().enumerate() {
        match b {
            0 => mask.push(false),
            1 => mask.push(true),
            other => {
                return Err(Error::format(
                    path,
                    format!("byte {i}: invalid mask value {other}"),
                ))
            }
        }
    }
    Ok(GroundLabels { mask })
}

/// How augmentation obtains per-point placeability.
pub enum MaskSource {
    /// Sector plane fitting on each frame.
    GroundFit(GroundFitConfig),
    /// A trained estimator thresholded at the composition threshold.
    Model(Box<PlaceabilityModel>),
}

pub struct AugmentOptions {
    /// Training-progress fraction driving the schedule.
    pub progress: f64,
    pub seed: u64,
    /// 0 uses the library default thread count.
    pub workers: usize,
    pub fields_per_point: usize,
    pub composition: CompositionConfig,
    pub schedule: ScheduleConfig,
    pub mask_source: MaskSource,
}

#[derive(Clone, Debug, Default)]
pub struct AugmentSummary {
    pub frames: usize,
    pub requested: u64,
    pub placed: u64,
    pub skipped: u64,
    pub rejected: RejectionCounts,
    pub reports: Vec<FrameReport>,
}

pub const REPORT_FILE: &str = "report.csv";
const REPORT_HEADER: [&str; 7] = [
    "frame_id",
    "requested",
    "placed",
    "skipped",
    "rejected_placeability",
    "rejected_collision",
    "rejected_no_candidate",
];

pub fn write_report(reports: &[FrameReport], path: &Path) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_record(REPORT_HEADER)
        .map_err(|e| Error::format(path, e.to_string()))?;
    for r in reports {
        writer
            .write_record([
                r.frame_id.as_str(),
                &r.requested.to_string(),
                &r.placed.to_string(),
                &r.skipped.to_string(),
                &r.rejected.placeability.to_string(),
                &r.rejected.collision.to_string(),
                &r.rejected.no_candidate.to_string(),
            ])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn frame_mask(frame: &SceneFrame, source: &MaskSource, threshold: f64) -> GroundLabels {
    match source {
        MaskSource::GroundFit(cfg) => ground_fit(&frame.cloud, cfg),
        MaskSource::Model(model) => infer_mask(model, &frame.cloud, threshold),
    }
}

/// Augment every frame of `dataset_dir` into `out_dir` (clouds, labels,
/// manifest, per-frame report). Output bytes are a pure function of
/// (dataset, options, seed) and independent of the worker count.
pub fn run_augment(
    dataset_dir: &Path,
    out_dir: &Path,
    bank: &ObjectBank,
    opts: &AugmentOptions,
) -> Result<AugmentSummary> {
    opts.composition.validate()?;
    opts.schedule.validate()?;
    if let MaskSource::GroundFit(cfg) = &opts.mask_source {
        cfg.validate()?;
    }
    let state = ScheduleState::at(opts.progress, &opts.schedule)?;
    let frames = load_dataset(dataset_dir, opts.fields_per_point)?;

    let pool = make_pool(opts.workers)?;
    let results: Result<Vec<(SceneFrame, FrameReport)>> = pool.install(|| {
        frames
            .par_iter()
            .map(|frame| {
                let mask = frame_mask(
                    frame,
                    &opts.mask_source,
                    opts.composition.placeability_threshold,
                );
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &frame.frame_id));
                let counts =
                    counts_for_frame(&frame.categories(), &state, &opts.schedule, &mut rng);
                compose_frame(frame, bank, &counts, &mask, &opts.composition, &mut rng)
            })
            .collect()
    });
    let results = results?;

    let clouds_dir = out_dir.join("clouds");
    fs::create_dir_all(&clouds_dir).map_err(|e| Error::io(&clouds_dir, e))?;
    let mut entries = Vec::with_capacity(results.len());
    let mut labels = Vec::new();
    let mut summary = AugmentSummary {
        frames: results.len(),
        ..AugmentSummary::default()
    };

    for (frame, report) in &results {
        let rel = format!("clouds/{}.bin", frame.frame_id);
        write_cloud(&frame.cloud, &out_dir.join(&rel))?;
        entries.push(ManifestEntry {
            frame_id: frame.frame_id.clone(),
            scene_id: frame.scene_id.clone(),
            cloud_path: rel,
        });
        for b in &frame.boxes {
            labels.push(LabelRecord {
                frame_id: frame.frame_id.clone(),
                category: b.category.clone(),
                box3d: b.box3d,
            });
        }
        summary.requested += report.requested;
        summary.placed += report.placed;
        summary.skipped += report.skipped;
        summary.rejected.placeability += report.rejected.placeability;
        summary.rejected.collision += report.rejected.collision;
        summary.rejected.no_candidate += report.rejected.no_candidate;
    }
    write_labels(&labels, &out_dir.join("labels.csv"))?;
    write_manifest(&entries, &out_dir.join("manifest.csv"))?;
    summary.reports = results.into_iter().map(|(_, r)| r).collect();
    write_report(&summary.reports, &out_dir.join(REPORT_FILE))?;
    Ok(summary)
}

/// Compute masks for every frame (plane fit or model) and write one
/// `<frame_id>.mask` file per frame into `out_dir`.
pub fn run_masks(
    dataset_dir: &Path,
    out_dir: &Path,
    source: &MaskSource,
    threshold: f64,
    workers: usize,
    fields_per_point: usize,
) -> Result<usize> {
    if let MaskSource::GroundFit(cfg) = source {
        cfg.validate()?;
    }
    let frames = load_dataset(dataset_dir, fields_per_point)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = make_pool(workers)?;
    let masks: Vec<(String, GroundLabels)> = pool.install(|| {
        frames
            .par_iter()
            .map(|f| (f.frame_id.clone(), frame_mask(f, source, threshold)))
            .collect()
    });
    for (frame_id, mask) in &masks {
        write_mask(mask, &out_dir.join(format!("{frame_id}.mask")))?;
    }
    Ok(masks.len())
}

pub struct TrainOptions {
    pub train: TrainConfig,
    pub ground: GroundFitConfig,
    pub fourier_order: usize,
    /// Per-frame training subsample cap; 0 trains on every point.
    pub max_points_per_frame: usize,
    pub workers: usize,
    pub fields_per_point: usize,
}

/// Train an estimator against plane-fit labels over a dataset. Returns the
/// model and the per-epoch loss history.
pub fn run_train(dataset_dir: &Path, opts: &TrainOptions) -> Result<(PlaceabilityModel, Vec<f64>)> {
    if opts.fourier_order < 1 {
        return Err(Error::Validation("train.fourier_order must be >= 1".into()));
    }
    opts.ground.validate()?;
    let frames = load_dataset(dataset_dir, opts.fields_per_point)?;
    if frames.is_empty() {
        return Err(Error::Validation("training dataset has no frames".into()));
    }
    let pool = make_pool(opts.workers)?;
    let labeled: Vec<(PointCloud, GroundLabels)> = pool.install(|| {
        frames
            .par_iter()
            .map(|frame| {
                let mask = ground_fit(&frame.cloud, &opts.ground);
                if opts.max_points_per_frame == 0 || frame.cloud.len() <= opts.max_points_per_frame
                {
                    return (frame.cloud.clone(), mask);
                }
                // Deterministic per-frame subsample.
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(opts.train.seed, &frame.frame_id));
                let mut picked = rand::seq::index::sample(
                    &mut rng,
                    frame.cloud.len(),
                    opts.max_points_per_frame,
                )
                .into_vec();
                picked.sort_unstable();
                let cloud: PointCloud = picked.iter().map(|&i| frame.cloud[i]).collect();
                let mask = GroundLabels {
                    mask: picked.iter().map(|&i| mask.mask[i]).collect(),
                };
                (cloud, mask)
            })
            .collect()
    });

    let mut model = PlaceabilityModel::init(opts.fourier_order, opts.train.seed);
    let refs: Vec<(&PointCloud, &GroundLabels)> = labeled.iter().map(|(c, m)| (c, m)).collect();
    let history = train(&mut model, &refs, &opts.train)?;
    Ok((model, history))
}

pub fn write_object_stats(rows: &[CategoryRow], path: &Path) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_record([
            "category",
            "mean_l",
            "mean_w",
            "mean_h",
            "mean_points",
            "density_per_voxel",
            "frame_fraction",
            "bank_fraction",
        ])
        .map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        writer
            .write_record([
                r.category.as_str(),
                &format!("{:.6}", r.mean_length),
                &format!("{:.6}", r.mean_width),
                &format!("{:.6}", r.mean_height),
                &format!("{:.6}", r.mean_points),
                &format!("{:.6}", r.density_per_voxel),
                &format!("{:.6}", r.frame_fraction),
                &format!("{:.6}", r.bank_fraction),
            ])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_scene_table(
    table: &BTreeMap<String, BTreeMap<String, u64>>,
    path: &Path,
) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_record(["scene_id", "category", "count"])
        .map_err(|e| Error::format(path, e.to_string()))?;
    for (scene, by_category) in table {
        for (category, count) in by_category {
            writer
                .write_record([scene.as_str(), category.as_str(), &count.to_string()])
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_fgbg(entries: &[(String, f64)], path: &Path) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_record(["category", "fg_bg_ratio"])
        .map_err(|e| Error::format(path, e.to_string()))?;
    for (category, ratio) in entries {
        writer
            .write_record([category.as_str(), &format!("{ratio:.8}")])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Group frames by scene and count categories; convenience wrapper used by
/// the stats command.
pub fn scene_table_for(frames: &[SceneFrame]) -> BTreeMap<String, BTreeMap<String, u64>> {
    scene_category_table(frames)
}

/// FNV-1a content hash of every file under a directory, for idempotence
/// checks.
pub fn dir_fingerprint(dir: &Path) -> Result<u64> {
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for path in files {
        let rel = path
            .strip_prefix(dir)
            .unwrap_or(&path)
            .display()
            .to_string();
        feed(rel.as_bytes());
        feed(&fs::read(&path).map_err(|e| Error::io(&path, e))?);
    }
    Ok(hash)
}
