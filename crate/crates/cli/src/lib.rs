//! `capsx` command line: training, evaluation and explanation artifacts.

pub mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use capsx::explain::{
    capsule_report, explain_misclassification, export_class_outputs, extract_relevance_path, perturbation_sweep, render_image_grid,
    to_byte, ExplainError, GrayImage, GridLayout, Layer, SweepGrid,
};
use capsx::model::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use capsx::model::routing::normalization_stats;
use capsx::model::{CapsNet, ModelError, NormAxis};
use capsx::parallel;
use capsx::train::{evaluate, load_split, train_with, AdamConfig, MnistDataset, Progress, Split, TrainConfig, TrainError};
use manifest::{sha256_hex, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// File names inside a training output directory.
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.log";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(name = "capsx", version, about = "Capsule network training and explanation", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, metrics log and manifest.
    Train(TrainArgs),
    /// Accuracy, confusion matrix and mean losses of a checkpoint.
    Eval(EvalArgs),
    /// Decode a grid of perturbations of the detected class capsule.
    Sweep(SweepArgs),
    /// Export 2-D class capsule outputs with class centroids.
    Scatter(ScatterArgs),
    /// Reconstruction panels for every misclassified sample.
    Misclass(MisclassArgs),
    /// Capsule explanation sets and the relevance path of one image.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory with the four MNIST IDX files.
    #[arg(long, env = "CAPSX_MNIST_DIR", default_value = "data/mnist")]
    pub data_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 3)]
    pub routing_iters: usize,
    #[arg(long, default_value = "over_parents")]
    pub norm_axis: NormAxis,
    /// Train on the first N samples of a seeded shuffle.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Evaluate the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Manifest path (default: next to the checkpoint).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub image_idx: usize,
    /// Perturbed dimensions: rows vary the first, columns the second.
    #[arg(long, default_value = "0,1", value_parser = parse_dims)]
    pub dims: (usize, usize),
    #[arg(long, default_value_t = capsx::explain::DEFAULT_LO, allow_negative_numbers = true)]
    pub lo: f64,
    #[arg(long, default_value_t = capsx::explain::DEFAULT_HI, allow_negative_numbers = true)]
    pub hi: f64,
    #[arg(long, default_value_t = capsx::explain::DEFAULT_STEP)]
    pub step: f64,
    /// Panel path; PGM unless it ends in `.png`, which also writes a PGM
    /// alongside.
    #[arg(long, default_value = "sweep.pgm")]
    pub out_png: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct ScatterArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 1000)]
    pub limit: usize,
    #[arg(long, default_value = "scatter.csv")]
    pub out_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct MisclassArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 1000)]
    pub limit: usize,
    #[arg(long, default_value = "misclass")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub image_idx: usize,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Manifest path (default: next to the checkpoint).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated indices, got {s:?}"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] capsx::tensor::TensorError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Scatter(a) => scatter_cmd(a),
        Command::Misclass(a) => misclass_cmd(a),
        Command::Inspect(a) => inspect_cmd(a),
    }
}

fn base_manifest(command: &str) -> RunManifest {
    let mut m = RunManifest::new(command);
    m.set("runtime.deterministic", parallel::deterministic());
    m.set("runtime.threads", parallel::worker_threads());
    m
}

/// Adds the process-wide coupling normalization counters and writes `m`.
fn finish(m: &mut RunManifest, path: &Path) -> Result<(), CliError> {
    let (checks, violations) = normalization_stats();
    m.set("routing.normalization_checks", checks);
    m.set("routing.normalization_violations", violations);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    m.write(path).map_err(io_err(path))
}

fn record_dataset(m: &mut RunManifest, dir: &Path, split: Split) -> Result<(), CliError> {
    let (images, labels) = split.file_names();
    m.set("split", split);
    for (name, file) in [("images", images), ("labels", labels)] {
        let path = dir.join(file);
        m.input_file(name, &path).map_err(io_err(&path))?;
    }
    Ok(())
}

fn load_model(m: &mut RunManifest, path: &Path) -> Result<CapsNet, CliError> {
    let ckpt = load_checkpoint(path).map_err(|source| CliError::Checkpoint { path: path.to_path_buf(), source })?;
    m.input_file("checkpoint", path).map_err(io_err(path))?;
    m.set_block("model", &ckpt.model.config().to_canonical());
    Ok(ckpt.model)
}

fn load_data(m: &mut RunManifest, args: &SplitArgs, limit: Option<usize>) -> Result<MnistDataset, CliError> {
    let data = load_split(&args.data.data_dir, args.split)?;
    record_dataset(m, &args.data.data_dir, args.split)?;
    let data = match limit {
        Some(n) => data.head(n),
        None => data,
    };
    m.set("samples", data.len());
    Ok(data)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig { learning_rate: a.lr, ..AdamConfig::default() },
        seed: a.seed,
        subset: a.subset,
        routing_iters: a.routing_iters,
        norm_axis: a.norm_axis,
    };
    cfg.validate()?;
    let mut m = base_manifest("train");
    m.set("seed", cfg.seed);
    for (k, v) in [
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("learning_rate", format!("{:?}", cfg.adam.learning_rate)),
        ("beta1", format!("{:?}", cfg.adam.beta1)),
        ("beta2", format!("{:?}", cfg.adam.beta2)),
        ("epsilon", format!("{:?}", cfg.adam.epsilon)),
        ("subset", cfg.subset.map_or("none".into(), |s| s.to_string())),
        ("routing_iters", cfg.routing_iters.to_string()),
        ("norm_axis", cfg.norm_axis.to_string()),
    ] {
        m.set(format!("train.{k}"), v);
    }
    let model_cfg = cfg.model_config();
    m.set_block("model", &model_cfg.to_canonical());
    let data = load_split(&a.data.data_dir, Split::Train)?;
    record_dataset(&mut m, &a.data.data_dir, Split::Train)?;

    let model = CapsNet::new(model_cfg, cfg.seed)?;
    let started = std::time::Instant::now();
    let (model, report) = train_with(model, &data, &cfg, |p| match p {
        Progress::Epoch(e) => println!("{}", e.record()),
        Progress::Step { epoch, step, loss, .. } if step % 50 == 0 => eprintln!("epoch {epoch} step {step} loss {loss:.6}"),
        Progress::Step { .. } => {}
    })?;
    m.set("train.samples", report.samples / cfg.epochs);
    m.set("train.steps", report.steps);
    m.set("runtime.wall_seconds", format!("{:.1}", started.elapsed().as_secs_f64()));

    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let ckpt = a.out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, Some(&report.metadata(&cfg)), &ckpt).map_err(|source| CliError::Checkpoint { path: ckpt.clone(), source })?;
    let metrics = a.out.join(METRICS_FILE);
    write_file(&metrics, report.metrics_log().as_bytes())?;
    m.output_file("checkpoint", &ckpt).map_err(io_err(&ckpt))?;
    m.output_file("metrics", &metrics).map_err(io_err(&metrics))?;
    let manifest = a.out.join(MANIFEST_FILE);
    finish(&mut m, &manifest)?;
    println!("checkpoint={}", ckpt.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let mut m = base_manifest("eval");
    let model = load_model(&mut m, &a.ckpt)?;
    m.set("limit", a.limit.map_or("none".into(), |l| l.to_string()));
    let data = load_data(&mut m, &a.split, a.limit)?;
    let report = evaluate(&model, &data)?;
    let summary = report.summary();
    print!("{summary}");
    m.set("accuracy", format!("{:.6}", report.accuracy));
    m.set("sha256.report", sha256_hex(summary.as_bytes()));
    let path = a.manifest.unwrap_or_else(|| sibling(&a.ckpt, ".eval.manifest"));
    finish(&mut m, &path)?;
    Ok(())
}

/// Bytes of one tile as it appears in a panel (scale 1, no border).
pub fn tile_bytes(tile: &capsx::tensor::Tensor) -> Vec<u8> {
    tile.data().iter().map(|&v| to_byte(v)).collect()
}

fn distinct_tiles(grid: &SweepGrid) -> usize {
    let mut sums: Vec<String> = grid.cells.iter().flatten().map(|t| sha256_hex(&tile_bytes(t))).collect();
    sums.sort();
    sums.dedup();
    sums.len()
}

fn write_png(path: &Path, img: &GrayImage) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| CliError::Invalid(format!("png: {e}")))?;
        w.write_image_data(&img.pixels).map_err(|e| CliError::Invalid(format!("png: {e}")))?;
    }
    write_file(path, &bytes)
}

fn sweep_cmd(a: SweepArgs) -> Result<(), CliError> {
    let mut m = base_manifest("sweep");
    let model = load_model(&mut m, &a.ckpt)?;
    let data = load_data(&mut m, &a.split, None)?;
    if a.image_idx >= data.len() {
        return Err(CliError::Invalid(format!("image index {} outside the {} split of {} samples", a.image_idx, data.split(), data.len())));
    }
    for (k, v) in [
        ("image_idx", a.image_idx.to_string()),
        ("dims", format!("{},{}", a.dims.0, a.dims.1)),
        ("lo", format!("{:?}", a.lo)),
        ("hi", format!("{:?}", a.hi)),
        ("step", format!("{:?}", a.step)),
        ("scale", a.scale.to_string()),
    ] {
        m.set(format!("sweep.{k}"), v);
    }
    let grid = perturbation_sweep(&model, &data.image(a.image_idx), a.dims, a.lo, a.hi, a.step)?;
    let (h, w) = (data.rows(), data.cols());
    let panel = grid.render(h, w, a.scale)?;

    let is_png = a.out_png.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let pgm_path = if is_png { a.out_png.with_extension("pgm") } else { a.out_png.clone() };
    write_file(&pgm_path, &panel.to_pgm())?;
    m.output_file("panel_pgm", &pgm_path).map_err(io_err(&pgm_path))?;
    if is_png {
        write_png(&a.out_png, &panel)?;
        m.output_file("panel_png", &a.out_png).map_err(io_err(&a.out_png))?;
    }

    let axes = grid.axes_text();
    print!("label={} {axes}", data.label(a.image_idx));
    m.set("sweep.class", grid.class);
    m.set("sweep.offsets", grid.offsets.iter().map(|o| ((o * 1e9).round() / 1e9).to_string()).collect::<Vec<_>>().join(","));
    m.set("sha256.baseline", sha256_hex(&tile_bytes(&grid.baseline)));
    for (r, row) in grid.cells.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            m.set(format!("sha256.tile.{r}.{c}"), sha256_hex(&tile_bytes(tile)));
        }
    }
    let zero = match grid.zero_cell() {
        Some((r, c)) => {
            let identical = grid.cells[r][c] == grid.baseline;
            println!("zero_cell={r},{c} identical_to_baseline={identical}");
            format!("{r},{c}")
        }
        None => {
            println!("zero_cell=none");
            "none".into()
        }
    };
    m.set("sweep.zero_cell", zero);
    let distinct = distinct_tiles(&grid);
    println!("tiles={} distinct={distinct}", grid.offsets.len().pow(2));
    m.set("sweep.distinct_tiles", distinct);
    let manifest = sibling(&pgm_path, ".manifest");
    finish(&mut m, &manifest)?;
    println!("panel={}", pgm_path.display());
    Ok(())
}

fn scatter_cmd(a: ScatterArgs) -> Result<(), CliError> {
    let mut m = base_manifest("scatter");
    let model = load_model(&mut m, &a.ckpt)?;
    m.set("limit", a.limit);
    let data = load_data(&mut m, &a.split, Some(a.limit))?;
    let export = export_class_outputs(&model, &data)?;
    write_file(&a.out_csv, export.to_csv().as_bytes())?;
    let summary = export.summary(3);
    let summary_path = a.out_csv.with_extension("summary.txt");
    write_file(&summary_path, summary.as_bytes())?;
    print!("{summary}");
    m.output_file("csv", &a.out_csv).map_err(io_err(&a.out_csv))?;
    m.output_file("summary", &summary_path).map_err(io_err(&summary_path))?;
    let manifest = sibling(&a.out_csv, ".manifest");
    finish(&mut m, &manifest)?;
    Ok(())
}

fn misclass_cmd(a: MisclassArgs) -> Result<(), CliError> {
    let mut m = base_manifest("misclass");
    let model = load_model(&mut m, &a.ckpt)?;
    m.set("limit", a.limit);
    m.set("scale", a.scale);
    let data = load_data(&mut m, &a.split, Some(a.limit))?;
    let summary = explain_misclassification(&model, &data)?;
    fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;

    let (h, w) = (data.rows(), data.cols());
    let mut rows: [Vec<capsx::tensor::Tensor>; 4] = Default::default();
    for r in &summary.reports {
        let path = a.out_dir.join(format!("sample_{:05}.pgm", r.id));
        write_file(&path, &r.panel(a.scale)?.to_pgm())?;
        m.output_file(&format!("panel.{}", r.id), &path).map_err(io_err(&path))?;
        rows[0].push(r.image.clone());
        rows[1].push(r.predicted_reconstruction.clone().reshape(&[h, w])?);
        rows[2].push(r.second_reconstruction.clone().reshape(&[h, w])?);
        rows[3].push(r.true_reconstruction.clone().reshape(&[h, w])?);
    }
    if !summary.reports.is_empty() {
        let cols = summary.reports.len();
        let tiles: Vec<_> = rows.into_iter().flatten().collect();
        let panel = render_image_grid(&tiles, GridLayout { rows: 4, cols }, a.scale)?;
        let path = a.out_dir.join("all.pgm");
        write_file(&path, &panel.to_pgm())?;
        m.output_file("panel_all", &path).map_err(io_err(&path))?;
    }
    let text = summary.to_text();
    let path = a.out_dir.join("summary.txt");
    write_file(&path, text.as_bytes())?;
    m.output_file("summary", &path).map_err(io_err(&path))?;
    print!("{text}");
    let manifest = a.out_dir.join(MANIFEST_FILE);
    finish(&mut m, &manifest)?;
    Ok(())
}

fn inspect_cmd(a: InspectArgs) -> Result<(), CliError> {
    let mut m = base_manifest("inspect");
    let model = load_model(&mut m, &a.ckpt)?;
    let data = load_data(&mut m, &a.split, None)?;
    if a.image_idx >= data.len() {
        return Err(CliError::Invalid(format!("image index {} outside the {} split of {} samples", a.image_idx, data.split(), data.len())));
    }
    m.set("image_idx", a.image_idx);
    m.set("top_k", a.top_k);
    let trace = model.forward(&data.image(a.image_idx), None)?;
    let mut out = format!("image_idx={} label={} predicted={}\n", a.image_idx, data.label(a.image_idx), trace.predicted);
    out.push_str(&capsule_report(&trace, Layer::Class, model.config().classes).to_text());
    out.push_str(&capsule_report(&trace, Layer::Primary, a.top_k).to_text());
    out.push_str(&extract_relevance_path(&trace, trace.predicted, a.top_k)?.to_text());
    print!("{out}");
    m.set("sha256.report", sha256_hex(out.as_bytes()));
    let path = a.manifest.unwrap_or_else(|| sibling(&a.ckpt, ".inspect.manifest"));
    finish(&mut m, &path)?;
    Ok(())
}
