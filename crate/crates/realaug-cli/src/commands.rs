use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use realaug::analytics::{fg_bg_ratio, object_stats, reality_score};
use realaug::compose::DeltaPolicy;
use realaug::config::ConfigDoc;
use realaug::dataset::{bank_build, load_bank, load_dataset, save_bank};
use realaug::error::Error;
use realaug::fixture::{generate_fixture, FixtureConfig};
use realaug::pipeline::{
    run_augment, run_masks, run_train, scene_table_for, write_fgbg, write_object_stats,
    write_scene_table, AugmentOptions, MaskSource, TrainOptions,
};
use realaug::placeability::{PlaceabilityModel, DEFAULT_FOURIER_ORDER};
use realaug::Result;

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MissingInput(_) => 2,
        Error::Validation(_) | Error::Format { .. } | Error::TrainingDiverged { .. } => 3,
        Error::Io { .. } => 4,
    }
}

pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::MissingInput(_) => "missing-input",
        Error::Validation(_) => "validation",
        Error::Format { .. } => "format",
        Error::TrainingDiverged { .. } => "training",
        Error::Io { .. } => "io",
    }
}

#[derive(Parser)]
#[command(
    name = "realaug",
    version,
    about = "Reality-conforming LiDAR scene synthesis pipelines"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the deterministic synthetic fixture dataset.
    Fixture(FixtureArgs),
    /// Object-bank operations.
    Bank {
        #[command(subcommand)]
        command: BankCommand,
    },
    /// Ground labeling by sector plane fitting.
    Ground {
        #[command(subcommand)]
        command: GroundCommand,
    },
    /// Placeability estimator training and inference.
    Placeability {
        #[command(subcommand)]
        command: PlaceabilityCommand,
    },
    /// Compose objects into every frame of a dataset.
    Augment(AugmentArgs),
    /// Dataset statistics tables.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Reality-conforming score from a metric pair.
    Score(ScoreArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Key = value configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global random seed (overrides the `seed` config key).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = library default).
    #[arg(long)]
    workers: Option<usize>,
    /// Fields per point in `.bin` clouds (4, or 5 with a ring index).
    #[arg(long)]
    point_fields: Option<usize>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// Approximate ground points per frame.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum BankCommand {
    /// Extract an object bank from a dataset's ground truth.
    Build(BankBuildArgs),
}

#[derive(Args)]
struct BankBuildArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Boxes with fewer enclosed points are skipped.
    #[arg(long)]
    min_points: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum GroundCommand {
    /// Write a plane-fit ground mask per frame.
    Fit(GroundFitArgs),
}

#[derive(Args)]
struct GroundFitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum PlaceabilityCommand {
    /// Train the estimator against plane-fit labels.
    Train(PlaceabilityTrainArgs),
    /// Write estimator masks per frame.
    Infer(PlaceabilityInferArgs),
}

#[derive(Args)]
struct PlaceabilityTrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PlaceabilityInferArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mask threshold on the predicted placeability.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training-progress fraction in [0, 1] driving the schedule.
    #[arg(long, default_value_t = 0.0)]
    progress: f64,
    /// Optional placeability model; plane fitting is used otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Per-category object-bank summary.
    Objects(StatsObjectsArgs),
    /// Ground-truth box counts per scene and category.
    SceneCategory(StatsSceneArgs),
    /// Foreground/background occupied-cell ratios.
    Fgbg(StatsFgbgArgs),
}

#[derive(Args)]
struct StatsObjectsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    /// Optional CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct StatsSceneArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct StatsFgbgArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Restrict to one category (default: every labeled category).
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    map_aug: f64,
    #[arg(long)]
    map_noaug: f64,
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::MissingInput(format!(
            "{what} directory {}",
            path.display()
        )));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::MissingInput(format!("{what} {}", path.display())));
    }
    Ok(())
}

fn load_doc(common: &CommonArgs) -> Result<ConfigDoc> {
    let mut doc = match &common.config {
        Some(path) => {
            require_file(path, "config file")?;
            ConfigDoc::from_file(path)?
        }
        None => ConfigDoc::new(),
    };
    if let Some(s) = common.seed {
        doc.set("seed", s);
    }
    if let Some(w) = common.workers {
        doc.set("workers", w);
    }
    if let Some(f) = common.point_fields {
        doc.set("io.point_fields", f);
    }
    Ok(doc)
}

fn doc_workers(doc: &ConfigDoc) -> Result<usize> {
    doc.parsed_or("workers", 0)
}

fn doc_point_fields(doc: &ConfigDoc) -> Result<usize> {
    doc.parsed_or("io.point_fields", 4)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fixture(args) => cmd_fixture(args),
        Command::Bank {
            command: BankCommand::Build(args),
        } => cmd_bank_build(args),
        Command::Ground {
            command: GroundCommand::Fit(args),
        } => cmd_ground_fit(args),
        Command::Placeability { command } => match command {
            PlaceabilityCommand::Train(args) => cmd_placeability_train(args),
            PlaceabilityCommand::Infer(args) => cmd_placeability_infer(args),
        },
        Command::Augment(args) => cmd_augment(args),
        Command::Stats { command } => match command {
            StatsCommand::Objects(args) => cmd_stats_objects(args),
            StatsCommand::SceneCategory(args) => cmd_stats_scene(args),
            StatsCommand::Fgbg(args) => cmd_stats_fgbg(args),
        },
        Command::Score(args) => cmd_score(args),
    }
}

fn cmd_fixture(args: FixtureArgs) -> Result<()> {
    let doc = load_doc(&args.common)?;
    let cfg = FixtureConfig {
        seed: doc.parsed_or("seed", 7)?,
        frames: args.frames,
        points_per_frame: args
            .points
            .map(Ok)
            .unwrap_or_else(|| doc.parsed_or("fixture.points_per_frame", 30_000))?,
    };
    let summary = generate_fixture(&cfg, &args.out, args.force)?;
    println!(
        "fixture: {} frames, {} points, {} boxes -> {}",
        summary.frames,
        summary.total_points,
        summary.total_boxes,
        args.out.display()
    );
    Ok(())
}

fn cmd_bank_build(args: BankBuildArgs) -> Result<()> {
    require_dir(&args.dataset, "dataset")?;
    let doc = load_doc(&args.common)?;
    let min_points = args
        .min_points
        .map(Ok)
        .unwrap_or_else(|| doc.parsed_or("bank.min_points", 5))?;
    let frames = load_dataset(&args.dataset, doc_point_fields(&doc)?)?;
    let (bank, skipped) = bank_build(&frames, min_points)?;
    save_bank(&bank, &args.out)?;
    println!(
        "bank: {} samples across {} categories ({} boxes skipped) -> {}",
        bank.len(),
        bank.categories().count(),
        skipped,
        args.out.display()
    );
    for category in bank.categories() {
        println!("  {category}: {}", bank.category_samples(category).len());
    }
    Ok(())
}

fn cmd_ground_fit(args: GroundFitArgs) -> Result<()> {
    require_dir(&args.dataset, "dataset")?;
    let doc = load_doc(&args.common)?;
    let n = run_masks(
        &args.dataset,
        &args.out,
        &MaskSource::GroundFit(doc.ground()?),
        0.5,
        doc_workers(&doc)?,
        doc_point_fields(&doc)?,
    )?;
    println!("ground fit: {n} masks -> {}", args.out.display());
    Ok(())
}

fn cmd_placeability_train(args: PlaceabilityTrainArgs) -> Result<()> {
    require_dir(&args.dataset, "dataset")?;
    let doc = load_doc(&args.common)?;
    let opts = TrainOptions {
        train: doc.train()?,
        ground: doc.ground()?,
        fourier_order: doc.parsed_or("train.fourier_order", DEFAULT_FOURIER_ORDER)?,
        max_points_per_frame: doc.parsed_or("train.max_points_per_frame", 4000)?,
        workers: doc_workers(&doc)?,
        fields_per_point: doc_point_fields(&doc)?,
    };
    let (model, history) = run_train(&args.dataset, &opts)?;
    model.save(&args.out)?;
    let first = history.first().copied().unwrap_or(f64::NAN);
    let last = history.last().copied().unwrap_or(f64::NAN);
    println!(
        "placeability train: {} epochs, loss {first:.6} -> {last:.6}, model -> {}",
        history.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_placeability_infer(args: PlaceabilityInferArgs) -> Result<()> {
    require_dir(&args.dataset, "dataset")?;
    require_file(&args.model, "model file")?;
    let doc = load_doc(&args.common)?;
    let model = PlaceabilityModel::load(&args.model)?;
    let n = run_masks(
        &args.dataset,
        &args.out,
        &MaskSource::Model(Box::new(model)),
        args.threshold,
        doc_workers(&doc)?,
        doc_point_fields(&doc)?,
    )?;
    println!("placeability infer: {n} masks -> {}", args.out.display());
    Ok(())
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    require_dir(&args.dataset, "dataset")?;
    require_dir(&args.bank, "bank")?;
    let mut doc = load_doc(&args.common)?;
    let seed = doc.parsed::<u64>("seed")?.ok_or_else(|| {
        Error::MissingInput("augment needs --seed (or `seed` in the config)".into())
    })?;
    if !(0.0..=1.0).contains(&args.progress) {
        return Err(Error::Validation(format!(
            "--progress must be in [0, 1], got {}",
            args.progress
        )));
    }

    let mask_source = match &args.model {
        Some(path) => {
            require_file(path, "model file")?;
            MaskSource::Model(Box::new(PlaceabilityModel::load(path)?))
        }
        None => MaskSource::GroundFit(doc.ground()?),
    };

    let opts = AugmentOptions {
        progress: args.progress,
        seed,
        workers: doc_workers(&doc)?,
        fields_per_point: doc_point_fields(&doc)?,
        composition: doc.composition()?,
        schedule: doc.schedule()?,
        mask_source,
    };

    let bank = load_bank(&args.bank)?;
    let summary = run_augment(&args.dataset, &args.out, &bank, &opts)?;

    // Snapshot the fully resolved run configuration beside the outputs.
    doc.set("seed", seed);
    doc.set("workers", opts.workers);
    doc.set("io.point_fields", opts.fields_per_point);
    doc.set("augment.progress", args.progress);
    doc.set("augment.dataset", args.dataset.display());
    doc.set("augment.bank", args.bank.display());
    if let Some(model) = &args.model {
        doc.set("model.path", model.display());
    }
    let delta = match opts.composition.delta_policy {
        DeltaPolicy::HalfLength => "half_length".to_string(),
        DeltaPolicy::Fixed(d) => d.to_string(),
    };
    doc.set("composition.delta", delta);
    doc.set(
        "composition.placeability_threshold",
        opts.composition.placeability_threshold,
    );
    doc.set(
        "composition.support_radius_scale",
        opts.composition.support_radius_scale,
    );
    doc.set(
        "composition.min_support_points",
        opts.composition.min_support_points,
    );
    doc.set(
        "composition.min_support_fraction",
        opts.composition.min_support_fraction,
    );
    doc.set(
        "composition.position_attempts",
        opts.composition.position_attempts,
    );
    doc.set(
        "composition.object_retries",
        opts.composition.object_retries,
    );
    doc.set(
        "composition.remove_occupied",
        opts.composition.remove_occupied,
    );
    doc.set("schedule.alpha_start", opts.schedule.alpha_start);
    doc.set("schedule.beta_factor", opts.schedule.beta_factor);
    doc.set(
        "schedule.beta_steps",
        opts.schedule
            .beta_steps
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    for (category, n) in &opts.schedule.n_plain {
        doc.set(&format!("schedule.n_plain.{category}"), n);
    }
    doc.write_file(&args.out.join("config.snapshot"))?;

    println!(
        "augment: {} frames, requested {}, placed {}, skipped {} (rejected: placeability {}, collision {}, no_candidate {}) -> {}",
        summary.frames,
        summary.requested,
        summary.placed,
        summary.skipped,
        summary.rejected.placeability,
        summary.rejected.collision,
        summary.rejected.no_candidate,
        args.out.display()
    );
    Ok(())
}

fn cmd_stats_objects(args: StatsObjectsArgs) -> Result<()> {
    require_dir(&args.dataset, "dataset")?;
    require_dir(&args.bank, "bank")?;
    let doc = load_doc(&args.common)?;
    let frames = load_dataset(&args.dataset, doc_point_fields(&doc)?)?;
    let bank = load_bank(&args.bank)?;
    let rows = object_stats(&frames, &bank, &doc.voxel()?)?;
    println!(
        "{:<14} {:>8} {:>8} {:>8} {:>10} {:>10} {:>9} {:>9}",
        "category", "mean_l", "mean_w", "mean_h", "mean_pts", "d_pts", "r_frame", "r_obj"
    );
    for r in &rows {
        println!(
            "{:<14} {:>8.3} {:>8.3} {:>8.3} {:>10.1} {:>10.3} {:>8.2}% {:>8.2}%",
            r.category,
            r.mean_length,
            r.mean_width,
            r.mean_height,
            r.mean_points,
            r.density_per_voxel,
            100.0 * r.frame_fraction,
            100.0 * r.bank_fraction
        );
    }
    if let Some(out) = &args.out {
        write_object_stats(&rows, out)?;
    }
    Ok(())
}

fn cmd_stats_scene(args: StatsSceneArgs) -> Result<()> {
    require_dir(&args.dataset, "dataset")?;
    let doc = load_doc(&args.common)?;
    let frames = load_dataset(&args.dataset, doc_point_fields(&doc)?)?;
    let table = scene_table_for(&frames);
    println!("{:<14} {:<14} {:>7}", "scene_id", "category", "count");
    for (scene, by_category) in &table {
        for (category, count) in by_category {
            println!("{scene:<14} {category:<14} {count:>7}");
        }
    }
    if let Some(out) = &args.out {
        write_scene_table(&table, out)?;
    }
    Ok(())
}

fn cmd_stats_fgbg(args: StatsFgbgArgs) -> Result<()> {
    require_dir(&args.dataset, "dataset")?;
    let doc = load_doc(&args.common)?;
    let frames = load_dataset(&args.dataset, doc_point_fields(&doc)?)?;
    let spec = doc.voxel()?;
    let categories: Vec<String> = match &args.category {
        Some(c) => vec![c.clone()],
        None => {
            let mut set = std::collections::BTreeSet::new();
            for f in &frames {
                for b in &f.boxes {
                    set.insert(b.category.clone());
                }
            }
            set.into_iter().collect()
        }
    };
    let mut entries = Vec::new();
    println!("{:<14} {:>12}", "category", "fg/bg");
    for category in categories {
        let ratio = fg_bg_ratio(&frames, &spec, &category)?;
        println!("{category:<14} {:>11.4}%", 100.0 * ratio);
        entries.push((category, ratio));
    }
    if let Some(out) = &args.out {
        write_fgbg(&entries, out)?;
    }
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let re = reality_score(args.map_aug, args.map_noaug)?;
    println!("Re={re:.6}");
    Ok(())
}
