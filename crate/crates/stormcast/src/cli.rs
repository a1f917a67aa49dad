//! The `stormcast` command-line interface.
//!
//! One binary exposes the whole pipeline as subcommands so the fold/variant
//! matrix stays scriptable:
//!
//! | subcommand   | role                                                      |
//! |--------------|-----------------------------------------------------------|
//! | `synth`      | generate a synthetic storm dataset (frames + events)      |
//! | `preprocess` | frames + events → feature stacks and target rasters       |
//! | `flow`       | TV-L1 optical flow between two single-channel rasters     |
//! | `train`      | train one fold of one variant, write checkpoint + log     |
//! | `evaluate`   | score a checkpoint on a fold's test split                 |
//! | `predict`    | full-frame probability map from a raw feature stack       |
//! | `gradcheck`  | finite-difference verification of every gradient          |
//! | `report`     | merge per-fold evaluation reports into one summary        |
//!
//! Exit codes are stable: 0 success, 1 usage error, 2 data/format error,
//! 3 numeric failure (non-finite loss, failed gradient check). Every error
//! is printed to standard error with the machine-parsable prefix
//! `ERROR <code>:`. Artifact-producing subcommands are idempotent: identical
//! flags, configuration, and seed produce byte-identical outputs.
//!
//! Configuration files are line-based `key = value` with `#` comments; the
//! environment variable `STORMCAST_THREADS`, when set, caps worker
//! parallelism (it must parse as a positive integer).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use clap::{Parser, Subcommand};

use crate::config::ConfigFile;
use crate::data::{
    gen_sequence, read_events, read_raster, write_events, write_raster, Checkpoint, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{emit_report, ConfusionMatrix, MetricReport};
use crate::flow::{tvl1_flow, FlowParams};
use crate::grid::Raster;
use crate::model::{gradient_suite, Model, ModelConfig, Variant};
use crate::preprocess::{
    feature_path, frame_path, list_frame_timestamps, target_path, NormStats, TILE_H, TILE_W,
};
use crate::train::{
    evaluate_model, make_folds, predict_frame, train, write_epoch_logs, Dataset, FoldSpec,
    TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "stormcast",
    version,
    about = "Lightning nowcasting from optical-flow extrapolation errors",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic storm dataset: frame rasters plus an event CSV.
    Synth {
        /// Optional `key = value` file overriding generator defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for frame_<stamp>.scr files and events.csv
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Turn raw frames and lightning events into feature/target rasters.
    Preprocess {
        /// Directory of frame_<stamp>.scr rasters
        #[arg(long)]
        frames_dir: PathBuf,
        /// Lightning event CSV (timestamp,row,col)
        #[arg(long)]
        events: PathBuf,
        /// Directory for features_<stamp>.scr / target_<stamp>.scr
        #[arg(long)]
        out_dir: PathBuf,
        /// Where to write whole-dataset per-channel normalization stats
        #[arg(long)]
        stats_out: PathBuf,
    },
    /// Estimate TV-L1 optical flow between two single-channel rasters.
    Flow {
        /// Earlier frame (single-channel raster)
        #[arg(long)]
        i0: PathBuf,
        /// Later frame (single-channel raster)
        #[arg(long)]
        i1: PathBuf,
        /// Output two-channel raster (columnwise u, then rowwise v)
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one cross-validation fold of one network variant.
    Train {
        /// Directory of preprocessed features/targets
        #[arg(long)]
        data_dir: PathBuf,
        /// Cross-validation fold (1-4)
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        fold: u8,
        /// Network variant
        #[arg(long, value_parser = ["runetpp", "unetpp"])]
        variant: String,
        /// Optional `key = value` training configuration
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the checkpoint and epoch log
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on its fold's held-out test range.
    Evaluate {
        /// Trained model checkpoint (.sckp)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of preprocessed features/targets
        #[arg(long)]
        data_dir: PathBuf,
        /// Cross-validation fold (1-4)
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        fold: u8,
        /// Decision threshold on predicted probabilities
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Output CSV of per-fold confusion counts and metrics
        #[arg(long)]
        report: PathBuf,
        /// Output TSV of metric\tvariant\tvalue rows for plotting
        #[arg(long)]
        plot_data: PathBuf,
    },
    /// Predict a full-frame lightning probability map from raw features.
    Predict {
        /// Trained model checkpoint (.sckp)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw (unnormalized) feature stack raster for one frame
        #[arg(long)]
        features: PathBuf,
        /// Output single-channel probability raster
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients of every op and the full network.
    Gradcheck {
        /// Seed for the randomized check points
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge per-fold evaluation CSVs into one aggregate report.
    Report {
        /// Variant label for the merged rows
        #[arg(long)]
        variant: String,
        /// Decision threshold the inputs were produced with
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Output CSV of per-fold and pooled counts and metrics
        #[arg(long)]
        report: PathBuf,
        /// Output TSV of metric\tvariant\tvalue rows for plotting
        #[arg(long)]
        plot_data: PathBuf,
        /// Per-fold evaluation CSVs produced by `stormcast evaluate`
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Entry point used by the binary and by tests: parses `argv`, dispatches,
/// and maps every failure onto the documented exit codes.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("ERROR 1: {}", e.render());
            return 1;
        }
    };
    let out = worker_cap().and_then(|_| match cli.command {
        Command::Synth { config, out_dir } => cmd_synth(config.as_deref(), &out_dir),
        Command::Preprocess {
            frames_dir,
            events,
            out_dir,
            stats_out,
        } => cmd_preprocess(&frames_dir, &events, &out_dir, &stats_out),
        Command::Flow { i0, i1, out } => cmd_flow(&i0, &i1, &out),
        Command::Train {
            data_dir,
            fold,
            variant,
            config,
            out_dir,
        } => cmd_train(&data_dir, fold, &variant, config.as_deref(), &out_dir),
        Command::Evaluate {
            checkpoint,
            data_dir,
            fold,
            threshold,
            report,
            plot_data,
        } => cmd_evaluate(&checkpoint, &data_dir, fold, threshold, &report, &plot_data),
        Command::Predict {
            checkpoint,
            features,
            out,
        } => cmd_predict(&checkpoint, &features, &out),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::Report {
            variant,
            threshold,
            report,
            plot_data,
            inputs,
        } => cmd_report(&variant, threshold, &report, &plot_data, &inputs),
    });
    match out {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("ERROR {code}: {e}");
            code
        }
    }
}

/// Validates `STORMCAST_THREADS` and returns the worker cap (default 1; the
/// current implementation is single-threaded, so any cap is honored).
fn worker_cap() -> Result<usize> {
    match std::env::var("STORMCAST_THREADS") {
        Err(_) => Ok(1),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Usage(format!(
                "STORMCAST_THREADS must be a positive integer, got `{raw}`"
            ))),
        },
    }
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::read(p),
        None => ConfigFile::parse(""),
    }
}

const SYNTH_KEYS: &[&str] = &[
    "h",
    "w",
    "channels",
    "n_frames",
    "start",
    "step_minutes",
    "initial_blobs",
    "blob_amplitude",
    "blob_radius",
    "advect_cols",
    "advect_rows",
    "initiation_rate",
    "lightning_rate",
    "target_positive_fraction",
    "frame_drop_rate",
    "seed",
];

fn synth_config(cfg: &ConfigFile) -> Result<SynthConfig> {
    cfg.check_keys(SYNTH_KEYS)?;
    let mut c = SynthConfig::default();
    if let Some(v) = cfg.parsed("h")? {
        c.h = v;
    }
    if let Some(v) = cfg.parsed("w")? {
        c.w = v;
    }
    if let Some(v) = cfg.parsed("channels")? {
        c.channels = v;
    }
    if let Some(v) = cfg.parsed("n_frames")? {
        c.n_frames = v;
    }
    if let Some(raw) = cfg.get("start") {
        c.start = DateTime::parse_from_rfc3339(raw)
            .map_err(|e| Error::Config(format!("key `start`: cannot parse `{raw}`: {e}")))?
            .with_timezone(&Utc);
    }
    if let Some(v) = cfg.parsed("step_minutes")? {
        c.step_minutes = v;
    }
    if let Some(v) = cfg.parsed("initial_blobs")? {
        c.initial_blobs = v;
    }
    if let Some(v) = cfg.parsed("blob_amplitude")? {
        c.blob_amplitude = v;
    }
    if let Some(v) = cfg.parsed("blob_radius")? {
        c.blob_radius = v;
    }
    if let Some(v) = cfg.parsed("advect_cols")? {
        c.advection.0 = v;
    }
    if let Some(v) = cfg.parsed("advect_rows")? {
        c.advection.1 = v;
    }
    if let Some(v) = cfg.parsed("initiation_rate")? {
        c.initiation_rate = v;
    }
    if let Some(v) = cfg.parsed("lightning_rate")? {
        c.lightning_rate = v;
    }
    if let Some(v) = cfg.parsed("target_positive_fraction")? {
        c.target_positive_fraction = v;
    }
    if let Some(v) = cfg.parsed("frame_drop_rate")? {
        c.frame_drop_rate = v;
    }
    if let Some(v) = cfg.parsed("seed")? {
        c.seed = v;
    }
    Ok(c)
}

fn cmd_synth(config: Option<&Path>, out_dir: &Path) -> Result<()> {
    let cfg = synth_config(&read_config(config)?)?;
    let (frames, events) = gen_sequence(&cfg)?;
    std::fs::create_dir_all(out_dir)?;
    for frame in &frames {
        write_raster(&frame_path(out_dir, frame.timestamp), &frame.channels)?;
    }
    write_events(&out_dir.join("events.csv"), &events)?;
    println!(
        "wrote {} frames ({} channels of {}x{}) and {} events to {}",
        frames.len(),
        cfg.channels,
        cfg.h,
        cfg.w,
        events.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_preprocess(frames_dir: &Path, events: &Path, out_dir: &Path, stats_out: &Path) -> Result<()> {
    let stamps = list_frame_timestamps(frames_dir)?;
    if stamps.len() < 3 {
        return Err(Error::Data(format!(
            "need at least 3 frames to form extrapolation triplets, found {} in {}",
            stamps.len(),
            frames_dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(stamps.len());
    for &ts in &stamps {
        frames.push((ts, read_raster(&frame_path(frames_dir, ts))?));
    }
    // The nominal frame step is the smallest gap seen; larger gaps are
    // treated as dropped frames and their triplets skipped downstream.
    let step = stamps
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > Duration::zero())
        .min()
        .ok_or_else(|| Error::Data("frame timestamps are not strictly increasing".into()))?;
    let events = read_events(events)?;
    let produced = crate::preprocess::build_frame_features(
        &frames,
        &events,
        step,
        &FlowParams::default(),
    )?;
    if produced.is_empty() {
        return Err(Error::Data(
            "no consecutive frame triplets found; cannot build any features".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    for (stack, target) in &produced {
        write_raster(&feature_path(out_dir, stack.timestamp), &stack.channels)?;
        write_raster(&target_path(out_dir, stack.timestamp), &[target.clone()])?;
    }
    let stats = NormStats::compute(produced.iter().map(|(s, _)| s.channels.as_slice()))?;
    stats.write(stats_out)?;
    println!(
        "preprocessed {} of {} frames into {} (stats: {})",
        produced.len(),
        stamps.len(),
        out_dir.display(),
        stats_out.display()
    );
    Ok(())
}

fn single_channel(path: &Path) -> Result<Raster> {
    let mut channels = read_raster(path)?;
    if channels.len() != 1 {
        return Err(Error::Data(format!(
            "{} has {} channels, expected a single-channel raster",
            path.display(),
            channels.len()
        )));
    }
    Ok(channels.remove(0))
}

fn cmd_flow(i0: &Path, i1: &Path, out: &Path) -> Result<()> {
    let a = single_channel(i0)?;
    let b = single_channel(i1)?;
    let field = tvl1_flow(&a, &b, &FlowParams::default())?;
    let (h, w) = (field.h(), field.w());
    let u = Raster::from_vec(h, w, field.u().to_vec())?;
    let v = Raster::from_vec(h, w, field.v().to_vec())?;
    write_raster(out, &[u, v])?;
    println!(
        "flow {}x{}: mean |v| = {:.4} px -> {}",
        h,
        w,
        field.mean_magnitude(),
        out.display()
    );
    Ok(())
}

const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "lr0",
    "lr_drop_factor",
    "plateau_window",
    "plateau_threshold",
    "weight_decay",
    "batch_frames",
    "pos_weight",
    "seed",
    "eval_every",
    "threshold",
    "tile_h",
    "tile_w",
    "base_width",
    "bn_eps",
    "bn_momentum",
    "margin_hours",
];

/// Everything a training run needs beyond the flags: the optimizer
/// schedule, the network hyperparameters, and the fold margin.
struct TrainSettings {
    tc: TrainConfig,
    base_width: usize,
    bn_eps: f64,
    bn_momentum: f64,
    margin_hours: i64,
}

fn train_settings(cfg: &ConfigFile) -> Result<TrainSettings> {
    cfg.check_keys(TRAIN_KEYS)?;
    let mut tc = TrainConfig::default();
    if let Some(v) = cfg.parsed("epochs")? {
        tc.epochs = v;
    }
    if let Some(v) = cfg.parsed("lr0")? {
        tc.lr0 = v;
    }
    if let Some(v) = cfg.parsed("lr_drop_factor")? {
        tc.lr_drop_factor = v;
    }
    if let Some(v) = cfg.parsed("plateau_window")? {
        tc.plateau_window = v;
    }
    if let Some(v) = cfg.parsed("plateau_threshold")? {
        tc.plateau_threshold = v;
    }
    if let Some(v) = cfg.parsed("weight_decay")? {
        tc.weight_decay = v;
    }
    if let Some(v) = cfg.parsed("batch_frames")? {
        tc.batch_frames = v;
    }
    if let Some(v) = cfg.parsed("pos_weight")? {
        tc.pos_weight = Some(v);
    }
    if let Some(v) = cfg.parsed("seed")? {
        tc.seed = v;
    }
    if let Some(v) = cfg.parsed("eval_every")? {
        tc.eval_every = v;
    }
    if let Some(v) = cfg.parsed("threshold")? {
        tc.threshold = v;
    }
    if let Some(v) = cfg.parsed("tile_h")? {
        tc.tile_h = v;
    }
    if let Some(v) = cfg.parsed("tile_w")? {
        tc.tile_w = v;
    }
    let defaults = ModelConfig::default();
    Ok(TrainSettings {
        tc,
        base_width: cfg.parsed("base_width")?.unwrap_or(defaults.base_width),
        bn_eps: cfg.parsed("bn_eps")?.unwrap_or(defaults.bn_eps),
        bn_momentum: cfg.parsed("bn_momentum")?.unwrap_or(defaults.bn_momentum),
        margin_hours: cfg.parsed("margin_hours")?.unwrap_or(12),
    })
}

/// Canonical `key = value` rendering of the effective settings, embedded in
/// checkpoints so `evaluate`/`predict` can recover tiling and fold margins.
fn settings_echo(s: &TrainSettings, variant: Variant, fold: u8, in_channels: usize) -> String {
    let mut lines = vec![
        format!("variant = {variant}"),
        format!("fold = {fold}"),
        format!("in_channels = {in_channels}"),
        format!("base_width = {}", s.base_width),
        format!("bn_eps = {}", s.bn_eps),
        format!("bn_momentum = {}", s.bn_momentum),
        format!("margin_hours = {}", s.margin_hours),
        format!("epochs = {}", s.tc.epochs),
        format!("lr0 = {}", s.tc.lr0),
        format!("lr_drop_factor = {}", s.tc.lr_drop_factor),
        format!("plateau_window = {}", s.tc.plateau_window),
        format!("plateau_threshold = {}", s.tc.plateau_threshold),
        format!("weight_decay = {}", s.tc.weight_decay),
        format!("batch_frames = {}", s.tc.batch_frames),
        format!("seed = {}", s.tc.seed),
        format!("eval_every = {}", s.tc.eval_every),
        format!("threshold = {}", s.tc.threshold),
        format!("tile_h = {}", s.tc.tile_h),
        format!("tile_w = {}", s.tc.tile_w),
    ];
    if let Some(p) = s.tc.pos_weight {
        lines.push(format!("pos_weight = {p}"));
    }
    lines.join("\n") + "\n"
}

/// Loads the preprocessed dataset and splits it for `fold` (1-based).
fn load_fold(data_dir: &Path, fold: u8, margin_hours: i64) -> Result<(Dataset, FoldSpec)> {
    let data = Dataset::load(data_dir)?;
    let timeline: Vec<DateTime<Utc>> = data.frames.iter().map(|f| f.timestamp).collect();
    let folds = make_folds(&timeline, Duration::hours(margin_hours))?;
    Ok((data, folds[usize::from(fold) - 1]))
}

fn cmd_train(
    data_dir: &Path,
    fold: u8,
    variant: &str,
    config: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let variant: Variant = variant.parse()?;
    let settings = train_settings(&read_config(config)?)?;
    settings.tc.validate()?;

    let (data, spec) = load_fold(data_dir, fold, settings.margin_hours)?;
    let mut train_set = data.filter(|t| spec.is_train(t));
    let mut test_set = data.filter(|t| spec.is_test(t));
    if train_set.frames.is_empty() || test_set.frames.is_empty() {
        return Err(Error::Data(format!(
            "fold {fold} has {} training and {} test frames; need both non-empty",
            train_set.frames.len(),
            test_set.frames.len()
        )));
    }
    let norm = train_set.channel_stats()?;
    train_set.normalize(&norm)?;
    test_set.normalize(&norm)?;

    let in_channels = train_set.frames[0].channels.len();
    let model = Model::new(ModelConfig {
        variant,
        base_width: settings.base_width,
        in_channels,
        seed: settings.tc.seed,
        bn_eps: settings.bn_eps,
        bn_momentum: settings.bn_momentum,
    })?;
    println!(
        "fold {fold} {variant}: {} train / {} test frames, {} parameters",
        train_set.frames.len(),
        test_set.frames.len(),
        model.count_parameters()
    );

    let outcome = train(model, &train_set, Some(&test_set), &settings.tc)?;

    std::fs::create_dir_all(out_dir)?;
    let echo = settings_echo(&settings, variant, fold, in_channels);
    let ck_path = out_dir.join(format!("fold{fold}_{variant}.sckp"));
    let log_path = out_dir.join(format!("fold{fold}_{variant}_log.csv"));
    outcome.model.to_checkpoint(&norm, echo).write(&ck_path)?;
    write_epoch_logs(&log_path, &outcome.logs)?;
    for log in &outcome.logs {
        match (log.tpr, log.tnr) {
            (Some(tpr), Some(tnr)) => println!(
                "epoch {:>3}: loss {:.6} lr {} test tpr {tpr:.4} tnr {tnr:.4}",
                log.epoch, log.loss, log.lr
            ),
            _ => println!("epoch {:>3}: loss {:.6} lr {}", log.epoch, log.loss, log.lr),
        }
    }
    println!("checkpoint: {}", ck_path.display());
    println!("epoch log:  {}", log_path.display());
    if let Some(diag) = outcome.aborted {
        // Artifacts for the last completed epoch are on disk; surface the
        // failure through the numeric exit code.
        return Err(Error::Numeric(diag));
    }
    Ok(())
}

/// Recovers tiling and fold-margin settings from a checkpoint's embedded
/// configuration echo, falling back to defaults when absent.
fn echoed_settings(ck: &Checkpoint) -> Result<(usize, usize, i64)> {
    let echo = ConfigFile::parse(&ck.config_echo).unwrap_or_else(|_| {
        ConfigFile::parse("").expect("empty config always parses")
    });
    Ok((
        echo.parsed("tile_h")?.unwrap_or(TILE_H),
        echo.parsed("tile_w")?.unwrap_or(TILE_W),
        echo.parsed("margin_hours")?.unwrap_or(12),
    ))
}

fn cmd_evaluate(
    checkpoint: &Path,
    data_dir: &Path,
    fold: u8,
    threshold: f64,
    report: &Path,
    plot_data: &Path,
) -> Result<()> {
    if !threshold.is_finite() {
        return Err(Error::Usage(format!("threshold must be finite, got {threshold}")));
    }
    let ck = Checkpoint::read(checkpoint)?;
    let (model, norm) = Model::from_checkpoint(&ck)?;
    let (tile_h, tile_w, margin_hours) = echoed_settings(&ck)?;

    let (data, spec) = load_fold(data_dir, fold, margin_hours)?;
    let mut test_set = data.filter(|t| spec.is_test(t));
    if test_set.frames.is_empty() {
        return Err(Error::Data(format!("fold {fold} has no test frames")));
    }
    test_set.normalize(&norm)?;

    let cm = evaluate_model(&model, &test_set, threshold, tile_h, tile_w)?;
    let summary = emit_report(&ck.variant, &[(fold, cm)], threshold, report, plot_data)?;
    println!(
        "fold {fold} {} @ {threshold}: tpr {} tnr {} accuracy {} far {} precision {}",
        ck.variant,
        MetricReport::fmt_opt(summary.tpr),
        MetricReport::fmt_opt(summary.tnr),
        MetricReport::fmt_opt(summary.accuracy),
        MetricReport::fmt_opt(summary.far),
        MetricReport::fmt_opt(summary.precision),
    );
    println!("report:    {}", report.display());
    println!("plot data: {}", plot_data.display());
    Ok(())
}

fn cmd_predict(checkpoint: &Path, features: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::read(checkpoint)?;
    let (model, norm) = Model::from_checkpoint(&ck)?;
    let (tile_h, tile_w, _) = echoed_settings(&ck)?;

    let mut channels = read_raster(features)?;
    if channels.len() != ck.in_channels as usize {
        return Err(Error::Data(format!(
            "{} has {} channels, model expects {}",
            features.display(),
            channels.len(),
            ck.in_channels
        )));
    }
    norm.normalize(&mut channels)?;
    let probs = predict_frame(&model, &channels, tile_h, tile_w)?;
    let (mean, max) = probs
        .data()
        .iter()
        .fold((0.0, f64::NEG_INFINITY), |(s, m), &v| (s + v, m.max(v)));
    let mean = mean / probs.data().len() as f64;
    write_raster(out, &[probs])?;
    println!(
        "prediction mean {:.6}, max {:.6} -> {}",
        mean,
        max,
        out.display()
    );
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let suite = gradient_suite(seed)?;
    println!(
        "{:<22} {:>7} {:>14} {:>9} {:>7}",
        "check", "points", "max_rel_err", "tol", "status"
    );
    let mut failures = 0usize;
    for (res, tol) in &suite {
        let ok = res.passes(*tol);
        if !ok {
            failures += 1;
        }
        println!(
            "{:<22} {:>7} {:>14.3e} {:>9.0e} {:>7}",
            res.name,
            res.points,
            res.max_rel_err,
            tol,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failures > 0 {
        return Err(Error::Numeric(format!(
            "{failures} of {} gradient checks exceeded tolerance",
            suite.len()
        )));
    }
    println!("all {} gradient checks passed", suite.len());
    Ok(())
}

/// Reads the per-fold rows (everything except the pooled `all` row) back
/// out of an evaluation CSV.
fn read_fold_rows(path: &Path) -> Result<Vec<(u8, ConfusionMatrix)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("fold") || headers.len() < 5 {
        return Err(Error::Data(format!(
            "{} is not an evaluation report (header starts with {:?})",
            path.display(),
            headers.get(0).unwrap_or("")
        )));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let label = record.get(0).unwrap_or("");
        if label == "all" {
            continue;
        }
        let fold: u8 = label.parse().map_err(|_| {
            Error::Data(format!("{}: fold label `{label}` is not a number", path.display()))
        })?;
        let count = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: `{raw}` in column {} is not a count",
                    path.display(),
                    headers.get(i).unwrap_or("?")
                ))
            })
        };
        rows.push((
            fold,
            ConfusionMatrix {
                true_pos: count(1)?,
                false_pos: count(2)?,
                false_neg: count(3)?,
                true_neg: count(4)?,
            },
        ));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} contains no fold rows", path.display())));
    }
    Ok(rows)
}

fn cmd_report(
    variant: &str,
    threshold: f64,
    report: &Path,
    plot_data: &Path,
    inputs: &[PathBuf],
) -> Result<()> {
    let mut folds: Vec<(u8, ConfusionMatrix)> = Vec::new();
    for path in inputs {
        for (fold, cm) in read_fold_rows(path)? {
            if folds.iter().any(|&(f, _)| f == fold) {
                return Err(Error::Data(format!(
                    "fold {fold} appears in more than one input report"
                )));
            }
            folds.push((fold, cm));
        }
    }
    folds.sort_by_key(|&(f, _)| f);
    let summary = emit_report(variant, &folds, threshold, report, plot_data)?;
    println!(
        "{} folds pooled for {variant}: tpr {} tnr {} accuracy {} far {} precision {}",
        folds.len(),
        MetricReport::fmt_opt(summary.tpr),
        MetricReport::fmt_opt(summary.tnr),
        MetricReport::fmt_opt(summary.accuracy),
        MetricReport::fmt_opt(summary.far),
        MetricReport::fmt_opt(summary.precision),
    );
    Ok(())
}
