//! `fpr` command line: synth, split, render, describe, evaluate, loss.
//!
//! Failures print one JSON line `{"error": ..., "kind": ...}` to stderr.
//! Usage problems (bad flags, violated parameter constraints, missing input
//! files) exit with 2, everything else with 1.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::benchmark::{
    build_selfsupervised, build_supervised, NegativeBufferMode, SelfSupervisedParams, SupervisedParams,
};
use crate::dataio::{
    depth_overlay, generate_synthetic, load_dataset, range_image_to_image, read_test_split, read_train_split,
    rendered_to_image, split_files, write_json, write_ppm, Dataset, SynthParams,
};
use crate::descriptor::{export_descriptors, extract_baseline, import_descriptors, DescriptorConfig, DescriptorSet};
use crate::exec::{with_threads, Execution};
use crate::geometry::{spherical_projection, transform_points};
use crate::interaction::{
    colorize_cloud, depth_maps_to_lidar_range, rasterize_targets, render_sparse_depth, rendered_range_image,
};
use crate::losses::{
    depth_loss, relative_lidar_pose, reprojection_loss, total_loss, triplet_loss, Descriptor, LossWeights, Reduction,
    TripletMode,
};
use crate::retrieval::{build_index, check_ks, evaluate_recall, random_ranking_recall};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "fpr", version, about = "Multi-modal place recognition benchmark toolkit")]
pub struct Cli {
    /// Worker threads for per-sample work (outputs do not depend on it).
    #[arg(long, global = true, env = "FPR_THREADS")]
    pub threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-scene dataset.
    Synth(SynthArgs),
    /// Mine training tuples and test ground truth.
    Split(SplitArgs),
    /// Write sparse depth overlays and range images of one sample as PPM.
    Render(RenderArgs),
    /// Compute or import descriptors for every sample.
    Describe(DescribeArgs),
    /// Average recall at N of a descriptor file on a test split.
    Evaluate(EvaluateArgs),
    /// Depth, triplet, reprojection and total loss of one training tuple.
    Loss(LossArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub scenes: usize,
    #[arg(long, default_value_t = 80)]
    pub samples_per_scene: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub revisit_rate: f64,
    #[arg(long, default_value_t = 2400)]
    pub landmarks: usize,
    /// Date of the first scene (ISO-8601).
    #[arg(long, default_value = "2024-01-01")]
    pub first_date: NaiveDate,
    /// Days between the first scene and the earliest new scene.
    #[arg(long, default_value_t = 105)]
    pub date_gap_days: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Supervised,
    SelfSupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Faithful,
    Sanitized,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub scheme: SchemeArg,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for train.json and test.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum spacing of database samples, meters (supervised).
    #[arg(long, default_value_t = SupervisedParams::DELTA)]
    pub delta: f64,
    /// Date threshold (ISO-8601); overrides --gamma-days.
    #[arg(long, conflicts_with = "gamma_days")]
    pub gamma: Option<NaiveDate>,
    /// Date threshold as days after the earliest scene date.
    #[arg(long, default_value_t = 105)]
    pub gamma_days: i64,
    #[arg(long, default_value_t = SupervisedParams::RHO_POS)]
    pub rho_pos: f64,
    /// Negative distance threshold, meters (supervised).
    #[arg(long, default_value_t = SupervisedParams::RHO_NEG)]
    pub rho_neg: f64,
    /// Negative delay in samples (self-supervised).
    #[arg(long, default_value_t = SelfSupervisedParams::SIGMA_NEG)]
    pub sigma_neg: usize,
    #[arg(long, default_value_t = SupervisedParams::N_POS)]
    pub n_pos: usize,
    #[arg(long, default_value_t = SupervisedParams::N_NEG)]
    pub n_neg: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    /// Negative buffer (self-supervised).
    #[arg(long, value_enum, default_value_t = ModeArg::Faithful)]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub sample: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Baseline,
    Import,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Baseline)]
    pub method: MethodArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Descriptor file to import (method import).
    #[arg(long, required_if_eq("method", "import"))]
    pub input: Option<PathBuf>,
    /// Add hue histograms from the colorized cloud (baseline).
    #[arg(long)]
    pub color: bool,
    #[arg(long, default_value_t = 8)]
    pub range_bins: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub descriptors: PathBuf,
    /// Test split file, or a split directory holding test.json.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    pub topk: Vec<usize>,
    /// JSON report path; a CSV with columns x,AR is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also evaluate the validation queries.
    #[arg(long)]
    pub include_validation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReductionArg {
    Sum,
    Mean,
}

impl From<ReductionArg> for Reduction {
    fn from(r: ReductionArg) -> Self {
        match r {
            ReductionArg::Sum => Reduction::Sum,
            ReductionArg::Mean => Reduction::Mean,
        }
    }
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Train split file, or a split directory holding train.json.
    #[arg(long)]
    pub split: PathBuf,
    /// Query id of the training tuple.
    #[arg(long)]
    pub tuple: String,
    /// Descriptor file; baseline descriptors are computed when omitted.
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReductionArg::Sum)]
    pub reduction: ReductionArg,
    /// Clamp the triplet loss at zero.
    #[arg(long)]
    pub hinge: bool,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda_d: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_t: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda_r: f64,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            eprintln!("{}", json!({"error": first, "kind": "usage"}));
            return 2;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({"error": e.to_string(), "kind": e.kind()}));
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) | Error::Config(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let exec = match cli.threads {
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    with_threads(cli.threads, || match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a, exec),
        Command::Render(a) => render(a),
        Command::Describe(a) => describe(a, exec),
        Command::Evaluate(a) => evaluate(a, exec),
        Command::Loss(a) => loss(a),
    })?
}

fn print_json(v: serde_json::Value) {
    println!("{v}");
}

fn synth(a: &SynthArgs) -> Result<()> {
    let p = SynthParams {
        seed: a.seed,
        num_scenes: a.scenes,
        samples_per_scene: a.samples_per_scene,
        revisit_rate: a.revisit_rate,
        landmark_count: a.landmarks,
        first_date: a.first_date,
        date_gap_days: a.date_gap_days,
        ..Default::default()
    };
    p.validate()?;
    let m = generate_synthetic(&p, &a.out)?;
    let samples: usize = m.scenes.iter().map(|s| s.samples.len()).sum();
    print_json(json!({"dataset": a.out.display().to_string(), "scenes": m.scenes.len(), "samples": samples}));
    Ok(())
}

fn resolve_gamma(a: &SplitArgs, ds: &Dataset) -> NaiveDate {
    a.gamma.unwrap_or_else(|| {
        let earliest = ds.scenes().iter().map(|s| s.date).min().unwrap_or_default();
        earliest + Duration::days(a.gamma_days)
    })
}

fn split(a: &SplitArgs, exec: Execution) -> Result<()> {
    // Parameter checks that need no dataset run before anything is read.
    let probe = NaiveDate::default();
    let sup = SupervisedParams {
        delta: a.delta,
        gamma: probe,
        rho_pos: a.rho_pos,
        rho_neg: a.rho_neg,
        n_pos: a.n_pos,
        n_neg: a.n_neg,
        seed: a.seed,
        val_fraction: a.val_fraction,
    };
    let selfsup = SelfSupervisedParams {
        gamma: probe,
        rho_pos: a.rho_pos,
        sigma_neg: a.sigma_neg,
        n_pos: a.n_pos,
        n_neg: a.n_neg,
        seed: a.seed,
        mode: match a.mode {
            ModeArg::Faithful => NegativeBufferMode::Faithful,
            ModeArg::Sanitized => NegativeBufferMode::Sanitized,
        },
        val_fraction: a.val_fraction,
    };
    match a.scheme {
        SchemeArg::Supervised => sup.validate()?,
        SchemeArg::SelfSupervised => selfsup.validate()?,
    }
    let ds = load_dataset(&a.dataset)?;
    let gamma = resolve_gamma(a, &ds);
    let (split, files) = match a.scheme {
        SchemeArg::Supervised => {
            let p = SupervisedParams { gamma, ..sup };
            let (split, _) = build_supervised(ds.scenes(), &p, exec)?;
            let files = split_files(&split, &p)?;
            (split, files)
        }
        SchemeArg::SelfSupervised => {
            let p = SelfSupervisedParams { gamma, ..selfsup };
            let split = build_selfsupervised(ds.scenes(), &p, exec)?;
            let files = split_files(&split, &p)?;
            (split, files)
        }
    };
    write_json(&a.out.join("train.json"), &files.0)?;
    write_json(&a.out.join("test.json"), &files.1)?;
    print_json(json!({
        "gamma": gamma.to_string(),
        "database": split.database.len(),
        "tuples": split.train.len(),
        "test_queries": split.test.len(),
        "validation": split.validation.len(),
        "summary": split.summary,
    }));
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let s = ds.load_sample(&a.sample)?;
    let cfg = ds.manifest().lidar.spherical;
    let targets = render_sparse_depth(&s.cloud, ds.rig(), &s.ego_from_lidar);
    let maps = rasterize_targets(&targets, ds.rig())?;
    for ((cam, img), map) in ds.rig().cameras().iter().zip(&s.images).zip(&maps) {
        write_ppm(
            &a.out.join(format!("sparse_depth_{}.ppm", cam.name)),
            &depth_overlay(img, map, cfg.r_max),
        )?;
    }
    let holistic = depth_maps_to_lidar_range(
        &maps,
        ds.rig(),
        &s.ego_from_lidar,
        &ds.manifest().lidar.camera_spherical,
    )?;
    write_ppm(
        &a.out.join("holistic_range.ppm"),
        &range_image_to_image(&holistic, cfg.r_max),
    )?;
    let range = spherical_projection(&s.cloud, &cfg);
    write_ppm(&a.out.join("range.ppm"), &range_image_to_image(&range, cfg.r_max))?;
    let colored = colorize_cloud(&s.cloud, &s.images, ds.rig(), &s.ego_from_lidar)?;
    let rendered = rendered_range_image(&colored, &cfg);
    write_ppm(&a.out.join("rendered_range.ppm"), &rendered_to_image(&rendered)?)?;
    print_json(json!({
        "sample": s.id,
        "points": s.cloud.len(),
        "sparse_targets": targets.total(),
        "visible_points": colored.visible_count(),
        "range_valid": range.valid_count(),
        "holistic_valid": holistic.valid_count(),
    }));
    Ok(())
}

fn describe(a: &DescribeArgs, exec: Execution) -> Result<()> {
    let cfg = DescriptorConfig {
        range_bins: a.range_bins,
        use_color: a.color,
        ..Default::default()
    };
    let ds = load_dataset(&a.dataset)?;
    let set = match a.method {
        MethodArg::Baseline => {
            let cfg = DescriptorConfig {
                rows: ds.manifest().lidar.spherical.height,
                dim: ds.manifest().lidar.spherical.height * cfg.range_bins,
                ..cfg
            };
            ds.describe(&cfg, exec)?
        }
        MethodArg::Import => {
            let input = a.input.as_deref().expect("clap enforces --input for import");
            let set = import_descriptors(input)?;
            if let Some(missing) = ds.sample_ids().find(|id| set.get(id).is_none()) {
                return Err(Error::Lookup(format!("imported descriptors lack sample {missing}")));
            }
            set
        }
    };
    export_descriptors(&set, &a.out)?;
    print_json(json!({"descriptors": a.out.display().to_string(), "count": set.len(), "dim": set.dim()}));
    Ok(())
}

fn split_member(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

fn evaluate(a: &EvaluateArgs, exec: Execution) -> Result<()> {
    check_ks(&a.topk)?;
    let set = import_descriptors(&a.descriptors)?;
    let test = read_test_split(&split_member(&a.split, "test.json"))?;
    let index = build_index(&set, &test.database)?;
    let queries = test.evaluation_queries(a.include_validation);
    let report = evaluate_recall(&index, &queries, &set, &a.topk, exec)?;
    write_json(&a.out, &report)?;
    let csv = a.out.with_extension("csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let chance: indexmap::IndexMap<usize, f64> = a
        .topk
        .iter()
        .map(|&x| (x, random_ranking_recall(&queries, index.len(), x)))
        .collect();
    print_json(json!({
        "n_query": report.n_query,
        "excluded_empty_gt": report.excluded_empty_gt,
        "recall": report.recall,
        "random_ranking": chance,
    }));
    Ok(())
}

fn loss(a: &LossArgs) -> Result<()> {
    let weights = LossWeights {
        lambda_d: a.lambda_d,
        lambda_t: a.lambda_t,
        lambda_r: a.lambda_r,
        alpha: a.alpha,
    };
    weights.validate()?;
    let ds = load_dataset(&a.dataset)?;
    let train = read_train_split(&split_member(&a.split, "train.json"))?;
    let tuple = train
        .tuples
        .iter()
        .find(|t| t.query == a.tuple)
        .ok_or_else(|| Error::Lookup(format!("no training tuple with query {}", a.tuple)))?;
    let reduction = Reduction::from(a.reduction);
    let cfg = ds.manifest().lidar.spherical;
    let ego_from_lidar = *ds.ego_from_lidar();

    let query = ds.sample(&tuple.query)?;
    let positive = ds.sample(&tuple.positives[0])?;
    let cloud_q = ds.load_cloud(&query.id)?;
    let cloud_p = ds.load_cloud(&positive.id)?;
    let t_l = relative_lidar_pose(&query.pose, &positive.pose, &ego_from_lidar);

    let targets = render_sparse_depth(&cloud_q, ds.rig(), &ego_from_lidar);
    let warped = transform_points(&cloud_p, &t_l);
    let depth_maps = rasterize_targets(&render_sparse_depth(&warped, ds.rig(), &ego_from_lidar), ds.rig())?;
    let ld = depth_loss(&targets, &depth_maps, reduction)?;
    let lr = reprojection_loss(&cloud_p, &cloud_q, &t_l, &cfg, reduction);

    let descriptors = match &a.descriptors {
        Some(path) => import_descriptors(path)?,
        None => {
            let dcfg = DescriptorConfig::default();
            let mut set = DescriptorSet::new(dcfg.dim);
            for id in std::iter::once(&tuple.query)
                .chain(&tuple.positives)
                .chain(&tuple.negatives)
            {
                if set.get(id).is_none() {
                    set.insert(id.clone(), extract_baseline(&ds.range_image(id, false)?, &dcfg)?)?;
                }
            }
            set
        }
    };
    let lookup = |id: &String| -> Result<Descriptor> {
        descriptors
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("no descriptor for {id}")))
    };
    let dq = lookup(&tuple.query)?;
    let dp = tuple.positives.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    let dn = tuple.negatives.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    let mode = if a.hinge {
        TripletMode::Hinge
    } else {
        TripletMode::Literal
    };
    let lt = triplet_loss(&dq, &dp, &dn, weights.alpha, mode)?;
    print_json(json!({
        "tuple": tuple.query,
        "depth": ld,
        "triplet": lt,
        "reprojection": lr,
        "total": total_loss(ld, lt, lr, &weights),
        "weights": weights,
        "reduction": reduction,
        "triplet_mode": mode,
    }));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_defaults() {
        let mut cmd = Cli::command();
        let split = cmd.find_subcommand_mut("split").unwrap();
        let help = split.render_long_help().to_string();
        for needle in [
            "--rho-pos",
            "[default: 9]",
            "[default: 18]",
            "[default: 1]",
            "[default: 105]",
            "[default: 6]",
            "[default: 2]",
            "[default: 4]",
        ] {
            assert!(help.contains(needle), "missing {needle}\n{help}");
        }
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["fpr", "frobnicate"]), 2);
        assert_eq!(
            run(["fpr", "split", "supervised", "--dataset", "x", "--out", "y", "--bogus"]),
            2
        );
        assert_eq!(
            run([
                "fpr",
                "split",
                "supervised",
                "--dataset",
                "x",
                "--out",
                "y",
                "--rho-pos",
                "20"
            ]),
            2
        );
        assert_eq!(
            run([
                "fpr",
                "evaluate",
                "--descriptors",
                "/nonexistent/d",
                "--split",
                "/nonexistent",
                "--out",
                "r"
            ]),
            2
        );
        assert_eq!(run(["fpr", "--help"]), 0);
    }
}
