//! Command-line surface: the `spirit` binary's argument schema, artifact
//! writers, and exit-code policy.
//!
//! Seven subcommands bind the library to files on disk:
//!
//! * `generate` — write the seeded synthetic benchmark: one `seq_NNN/`
//!   directory per sequence holding `frame_NNNN.pgm` frames plus a
//!   `gt.json` annotation file.
//! * `detect` — single-frame detection (no memory) over one image or every
//!   `.pgm` in a directory; one detections JSON per image.
//! * `track` — stateful detection over ordered frames, threading the memory
//!   bank; one detections JSON per frame. A directory of sequence
//!   subdirectories fans out across workers.
//! * `tune` — coordinate descent over the seven pipeline scalars on the
//!   benchmark; writes the tuned parameter file and the loss trace.
//! * `eval` — metric report plus precision-recall sweep of a parameter file
//!   on the benchmark.
//! * `ablate` — the four-variant module ablation table.
//! * `sweep-k` — the memory-length sensitivity table over K in {1,3,5,7,9}.
//!
//! The benchmark commands (`tune`, `eval`, `ablate`, `sweep-k`) rebuild the
//! scenes in memory from `--seed`; passing `--input` points them at a tree
//! previously written by `generate` instead. The two paths agree
//! bit-for-bit because generated frames are quantized through the same
//! 8-bit codec the PGM files use.
//!
//! Every artifact is written atomically (temp file, then rename) and read
//! back before the process reports success: a command exits 0 only if each
//! JSON artifact re-parses to exactly the value written, each PGM to
//! exactly the image written, and each CSV to the expected table shape.
//! Exit codes: `2` usage error, `1` unreadable or malformed input, `3`
//! violated invariant (the message names the invariant).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::bench::{
    benchmark_config, default_benchmark, evaluate, load_sequences, materialize, run_benchmark,
    LoadedSequence,
};
use crate::error::{Error, Result};
use crate::eval::{pr_sweep, FrameEval, MetricReport};
use crate::formats::{
    fmt_float, read_json, read_pgm, write_csv, write_json, write_pgm, FrameDetections, ParamsFile,
};
use crate::numeric::Matrix;
use crate::pipeline::{detect_frame, track_sequence, PipelineConfig};
use crate::types::Detection;

/// Finite-difference probe width used by `tune`.
const TUNE_FD_H: f64 = 1e-4;
/// Descent step size used by `tune`.
const TUNE_STEP_SIZE: f64 = 0.05;
/// Columns of the loss-trace CSV written by `tune`.
const LOSS_HEADER: [&str; 5] = ["step", "bbox", "cls", "giou", "total"];
/// Columns of the precision-recall CSV written by `eval`.
const PR_HEADER: [&str; 3] = ["score", "precision", "recall"];
/// Metric columns shared by every report-table CSV.
const REPORT_HEADER: [&str; 6] =
    ["precision", "recall", "f1", "ap50", "mean_scr", "association_accuracy"];

/// Top-level argument schema of the `spirit` binary.
#[derive(Debug, Parser)]
#[command(
    name = "spirit",
    version,
    about = "Small-target detection on synthetic infrared scenes: \
             generation, detection, tracking, tuning, and ablation sweeps"
)]
pub struct Cli {
    /// Worker threads for fan-out over independent images and sequences
    /// (default: one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// One pipeline command.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the seeded synthetic benchmark as PGM frames plus ground-truth
    /// JSON, one seq_NNN directory per sequence
    Generate(GenerateArgs),
    /// Detect targets in independent single images (no memory); one
    /// detections JSON per image
    Detect(DetectArgs),
    /// Track frame sequences, threading the memory bank; one detections
    /// JSON per frame
    Track(TrackArgs),
    /// Tune the seven pipeline scalars on the benchmark; write the tuned
    /// parameter file and the loss trace CSV
    Tune(TuneArgs),
    /// Evaluate a parameter file on the benchmark; write the metric report
    /// JSON and the precision-recall CSV
    Eval(EvalArgs),
    /// Evaluate the four module ablation variants (baseline, refinement
    /// only, memory only, both); write one CSV row per variant
    Ablate(BenchArgs),
    /// Evaluate the configuration at each memory length K in {1,3,5,7,9};
    /// write one CSV row per K
    SweepK(BenchArgs),
}

/// Arguments of `generate`.
#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Benchmark seed; the output tree is a pure function of it.
    #[arg(long)]
    pub seed: u64,
    /// Directory receiving the sequence tree.
    #[arg(long)]
    pub out: PathBuf,
}

/// Arguments of `detect`.
#[derive(Debug, Args)]
pub struct DetectArgs {
    /// A .pgm image, or a directory whose .pgm images are processed
    /// independently (non-recursive).
    #[arg(long)]
    pub input: PathBuf,
    /// Parameter file produced by `tune`.
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory; each image X.pgm yields X.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration JSON; defaults to the benchmark
    /// configuration. Image size follows each input image.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the detection score threshold.
    #[arg(long)]
    pub score_threshold: Option<f64>,
}

/// Arguments of `track`.
#[derive(Debug, Args)]
pub struct TrackArgs {
    /// A directory of .pgm frames (one sequence, tracked in name order), or
    /// a directory of such subdirectories (each tracked independently).
    #[arg(long)]
    pub input: PathBuf,
    /// Parameter file produced by `tune`.
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory; frame X.pgm yields X.json, under a per-sequence
    /// subdirectory when the input holds several sequences.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration JSON; defaults to the benchmark
    /// configuration. Image size follows each sequence's frames.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the memory length (bank capacity in frames).
    #[arg(long)]
    pub k: Option<usize>,
    /// Override the feasibility radius scale.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Override the detection score threshold.
    #[arg(long)]
    pub score_threshold: Option<f64>,
}

/// Arguments of `tune`.
#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Benchmark seed; ignored when --input is given.
    #[arg(long)]
    pub seed: u64,
    /// Benchmark tree written by `generate`; replaces the in-memory
    /// benchmark derived from --seed.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Where the tuned parameter file is written.
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory for the loss trace (loss.csv).
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration JSON the tuning starts from; defaults to the
    /// benchmark configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of finite-difference descent steps.
    #[arg(long, default_value_t = 60)]
    pub steps: usize,
}

/// Arguments of `eval`.
#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Benchmark seed; ignored when --input is given.
    #[arg(long)]
    pub seed: u64,
    /// Benchmark tree written by `generate`; replaces the in-memory
    /// benchmark derived from --seed.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Parameter file produced by `tune`.
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory for metrics.json and pr.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration JSON; defaults to the benchmark
    /// configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the memory length (bank capacity in frames).
    #[arg(long)]
    pub k: Option<usize>,
    /// Override the feasibility radius scale.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Override the detection score threshold.
    #[arg(long)]
    pub score_threshold: Option<f64>,
}

/// Arguments shared by `ablate` and `sweep-k`.
#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark seed; ignored when --input is given.
    #[arg(long)]
    pub seed: u64,
    /// Benchmark tree written by `generate`; replaces the in-memory
    /// benchmark derived from --seed.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Parameter file produced by `tune`.
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory for the table CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration JSON; defaults to the benchmark
    /// configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Execute one parsed command, writing and validating its artifacts.
pub fn run(cli: Cli) -> Result<()> {
    init_jobs(cli.jobs)?;
    match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Detect(args) => detect(args),
        Command::Track(args) => track(args),
        Command::Tune(args) => tune(args),
        Command::Eval(args) => eval(args),
        Command::Ablate(args) => ablate(args),
        Command::SweepK(args) => sweep_k(args),
    }
}

/// Process exit code for an error: I/O and file-format failures exit 1,
/// violated invariants exit 3. (Usage errors exit 2 before `run` is
/// reached.)
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Format(_) | Error::Json(_) => 1,
        Error::InvalidInput(_) | Error::Numerical(_) | Error::Shape(_) | Error::FrameOrder(_) => 3,
    }
}

/// Size the global worker pool from `--jobs`.
fn init_jobs(jobs: Option<usize>) -> Result<()> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err(Error::InvalidInput("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))
}

fn generate(args: &GenerateArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    default_benchmark(args.seed)
        .par_iter()
        .map(|case| {
            let seq = materialize(case)?;
            let dir = args.out.join(&seq.name);
            fs::create_dir_all(&dir)?;
            for (i, image) in seq.images.iter().enumerate() {
                emit_pgm(&dir.join(format!("frame_{i:04}.pgm")), image)?;
            }
            emit_json(&dir.join("gt.json"), &seq.truth)?;
            log::info!("generated {} ({} frames)", dir.display(), seq.images.len());
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

fn detect(args: &DetectArgs) -> Result<()> {
    let mut config = load_setup(args.config.as_deref(), &args.params)?;
    apply_overrides(&mut config, None, None, args.score_threshold)?;
    let images = image_paths(&args.input)?;
    fs::create_dir_all(&args.out)?;
    images
        .par_iter()
        .map(|path| {
            let image = read_pgm(path)?;
            let mut framed = config.clone();
            framed.image_size = (image.rows(), image.cols());
            let detections = detect_frame(&image, &framed, None)?;
            let artifact = FrameDetections { frame: 0, detections };
            let out_path = args.out.join(json_name(path));
            emit_json(&out_path, &artifact)?;
            log::debug!("{} -> {}", path.display(), out_path.display());
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

fn track(args: &TrackArgs) -> Result<()> {
    let mut config = load_setup(args.config.as_deref(), &args.params)?;
    apply_overrides(&mut config, args.k, args.kappa, args.score_threshold)?;
    let sequences = sequence_inputs(&args.input)?;
    fs::create_dir_all(&args.out)?;
    sequences
        .par_iter()
        .map(|(name, frames)| {
            let out_dir = match name {
                Some(name) => args.out.join(name),
                None => args.out.clone(),
            };
            fs::create_dir_all(&out_dir)?;
            let images = frames.iter().map(|p| read_pgm(p)).collect::<Result<Vec<_>>>()?;
            let mut framed = config.clone();
            framed.image_size = (images[0].rows(), images[0].cols());
            let per_frame = track_sequence(&images, &framed)?;
            for (i, (path, detections)) in frames.iter().zip(per_frame).enumerate() {
                let artifact = FrameDetections { frame: i as u64, detections };
                emit_json(&out_dir.join(json_name(path)), &artifact)?;
            }
            log::info!("tracked {} frames into {}", frames.len(), out_dir.display());
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

fn tune(args: &TuneArgs) -> Result<()> {
    let base = load_config(args.config.as_deref())?;
    let seqs = benchmark_sequences(args.seed, args.input.as_deref())?;
    let (result, tuned) =
        crate::bench::tune_benchmark(&seqs, &base, args.steps, TUNE_FD_H, TUNE_STEP_SIZE)?;
    if let Some(reason) = &result.aborted {
        return Err(Error::Numerical(format!("tuning aborted: {reason}")));
    }
    fs::create_dir_all(&args.out)?;
    if let Some(parent) = args.params.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    emit_json(&args.params, &ParamsFile::from_config(&tuned))?;
    let rows: Vec<Vec<String>> = result
        .trace
        .iter()
        .map(|row| {
            vec![
                row.step.to_string(),
                fmt_float(row.bbox),
                fmt_float(row.cls),
                fmt_float(row.giou),
                fmt_float(row.total),
            ]
        })
        .collect();
    emit_csv(&args.out.join("loss.csv"), &LOSS_HEADER, &rows)?;
    log::info!(
        "tuned loss {} -> {} over {} steps",
        fmt_float(result.trace[0].total),
        fmt_float(result.best_loss),
        args.steps
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let mut config = load_setup(args.config.as_deref(), &args.params)?;
    apply_overrides(&mut config, args.k, args.kappa, args.score_threshold)?;
    let seqs = benchmark_sequences(args.seed, args.input.as_deref())?;
    let report = evaluate(&seqs, &config)?;
    fs::create_dir_all(&args.out)?;
    emit_json(&args.out.join("metrics.json"), &report)?;

    let per_seq = run_benchmark(&seqs, &config)?;
    let sweep = pr_sweep(&frame_evals(&seqs, &per_seq), 0.5)?;
    let rows: Vec<Vec<String>> = sweep
        .iter()
        .map(|p| vec![fmt_float(p.score), fmt_float(p.precision), fmt_float(p.recall)])
        .collect();
    emit_csv(&args.out.join("pr.csv"), &PR_HEADER, &rows)?;
    log::info!("f1 {} ap50 {}", fmt_float(report.f1), fmt_float(report.ap50));
    Ok(())
}

fn ablate(args: &BenchArgs) -> Result<()> {
    let config = load_setup(args.config.as_deref(), &args.params)?;
    let seqs = benchmark_sequences(args.seed, args.input.as_deref())?;
    let table = crate::bench::ablate(&seqs, &config)?;
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|(label, report)| {
            let mut row = vec![(*label).to_string()];
            row.extend(report_row(report));
            row
        })
        .collect();
    fs::create_dir_all(&args.out)?;
    emit_csv(&args.out.join("ablate.csv"), &labeled_header("variant"), &rows)?;
    for (label, report) in &table {
        log::info!("{label}: f1 {}", fmt_float(report.f1));
    }
    Ok(())
}

fn sweep_k(args: &BenchArgs) -> Result<()> {
    let config = load_setup(args.config.as_deref(), &args.params)?;
    let seqs = benchmark_sequences(args.seed, args.input.as_deref())?;
    let table = crate::bench::sweep_k(&seqs, &config)?;
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|(k, report)| {
            let mut row = vec![k.to_string()];
            row.extend(report_row(report));
            row
        })
        .collect();
    fs::create_dir_all(&args.out)?;
    emit_csv(&args.out.join("sweep_k.csv"), &labeled_header("k"), &rows)?;
    for (k, report) in &table {
        log::info!("K={k}: f1 {}", fmt_float(report.f1));
    }
    Ok(())
}

/// Load `--config` (or fall back to the calibrated benchmark
/// configuration) and overlay the parameter file.
fn load_setup(config: Option<&Path>, params: &Path) -> Result<PipelineConfig> {
    let mut config = load_config(config)?;
    let file: ParamsFile = read_json(params)?;
    file.apply(&mut config)?;
    Ok(config)
}

/// Read a pipeline configuration file; absent fields take the library
/// defaults, an absent flag means the benchmark configuration.
fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(path) => {
            let config: PipelineConfig = read_json(path)?;
            config.validate()?;
            Ok(config)
        }
        None => Ok(benchmark_config()),
    }
}

/// Overlay command-line overrides on a configuration and re-validate it.
fn apply_overrides(
    config: &mut PipelineConfig,
    k: Option<usize>,
    kappa: Option<f64>,
    score_threshold: Option<f64>,
) -> Result<()> {
    if let Some(k) = k {
        config.pgma.capacity = k;
    }
    if let Some(kappa) = kappa {
        config.kappa = kappa;
    }
    if let Some(threshold) = score_threshold {
        config.score_threshold = threshold;
    }
    config.validate()
}

/// The benchmark sequences a command evaluates: loaded from `--input` when
/// given, otherwise regenerated in memory from `--seed`.
fn benchmark_sequences(seed: u64, input: Option<&Path>) -> Result<Vec<LoadedSequence>> {
    match input {
        Some(dir) => load_input(load_sequences(dir)),
        None => default_benchmark(seed).iter().map(materialize).collect(),
    }
}

/// Convert "the input exists but holds nothing usable" errors raised by
/// library loaders into I/O errors, so they exit 1 (unreadable input)
/// rather than 3.
fn load_input<T>(loaded: Result<T>) -> Result<T> {
    loaded.map_err(|err| match err {
        Error::InvalidInput(msg) => {
            Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
        }
        other => other,
    })
}

/// An I/O error (exit 1) for an input path with nothing usable under it.
fn input_missing(msg: String) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, msg))
}

/// The images `detect` runs on: the file itself, or every `.pgm` directly
/// under a directory, sorted by name.
fn image_paths(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let files = pgm_files(input)?;
    if files.is_empty() {
        return Err(input_missing(format!(
            "no .pgm images directly under {} (detect does not recurse)",
            input.display()
        )));
    }
    Ok(files)
}

/// The sequences `track` runs on. A directory holding `.pgm` frames is one
/// unnamed sequence written directly under `--out`; otherwise each
/// subdirectory with frames is a named sequence written under
/// `<out>/<name>/`.
fn sequence_inputs(input: &Path) -> Result<Vec<(Option<String>, Vec<PathBuf>)>> {
    let direct = pgm_files(input)?;
    if !direct.is_empty() {
        return Ok(vec![(None, direct)]);
    }
    let mut dirs: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(input)? {
        let path = entry?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    let mut sequences = Vec::new();
    for dir in dirs {
        let frames = pgm_files(&dir)?;
        if frames.is_empty() {
            continue;
        }
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned());
        sequences.push((name, frames));
    }
    if sequences.is_empty() {
        return Err(input_missing(format!("no .pgm frames under {}", input.display())));
    }
    Ok(sequences)
}

/// Every `.pgm` file directly under `dir`, sorted by path.
fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "pgm") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Output name for an image: its stem with a `.json` extension.
fn json_name(image: &Path) -> PathBuf {
    let stem = image.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "frame".into());
    PathBuf::from(stem).with_extension("json")
}

/// Flatten per-sequence detections and truths into the frame list the
/// dataset-level PR sweep consumes.
fn frame_evals(seqs: &[LoadedSequence], per_seq: &[Vec<Vec<Detection>>]) -> Vec<FrameEval> {
    seqs.iter()
        .zip(per_seq)
        .flat_map(|(seq, dets)| {
            seq.truth.iter().zip(dets).map(|(truth, detections)| FrameEval {
                detections: detections.clone(),
                truths: truth.targets.iter().map(|g| g.bbox).collect(),
            })
        })
        .collect()
}

/// Header of a labeled metric table: a leading key column plus the shared
/// report columns.
fn labeled_header(key: &'static str) -> Vec<&'static str> {
    let mut header = vec![key];
    header.extend(REPORT_HEADER);
    header
}

/// The metric columns of one report row.
fn report_row(report: &MetricReport) -> Vec<String> {
    vec![
        fmt_float(report.precision),
        fmt_float(report.recall),
        fmt_float(report.f1),
        fmt_float(report.ap50),
        fmt_opt(report.mean_scr),
        fmt_opt(report.association_accuracy),
    ]
}

/// Format an optional metric; absent values become empty cells.
fn fmt_opt(value: Option<f64>) -> String {
    value.map(fmt_float).unwrap_or_default()
}

/// Write a JSON artifact atomically, then require it to re-parse to
/// exactly the value written.
fn emit_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)?;
    let reread: serde_json::Value = read_json(path)?;
    if reread != serde_json::to_value(value)? {
        return Err(Error::Format(format!(
            "artifact does not round-trip: {}",
            path.display()
        )));
    }
    Ok(())
}

/// Write a PGM artifact atomically, then require it to decode to exactly
/// the image written.
fn emit_pgm(path: &Path, image: &Matrix) -> Result<()> {
    write_pgm(path, image)?;
    let reread = read_pgm(path)?;
    let same = reread.rows() == image.rows()
        && reread.cols() == image.cols()
        && reread.data() == image.data();
    if !same {
        return Err(Error::Format(format!(
            "artifact does not round-trip: {}",
            path.display()
        )));
    }
    Ok(())
}

/// Write a CSV artifact atomically, then require the expected header and
/// row count on re-read.
fn emit_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_csv(path, header, rows)?;
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(header.join(",").as_str()) {
        return Err(Error::Format(format!("unexpected header in {}", path.display())));
    }
    let body = lines.count();
    if body != rows.len() {
        return Err(Error::Format(format!(
            "expected {} rows in {}, found {body}",
            rows.len(),
            path.display()
        )));
    }
    Ok(())
}
