//! Command-line interface: argument definitions and command bodies.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, corrupt files, a failing
//! verify suite), 2 usage, configuration or data errors, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::dataset::{
    load_raster, load_source_dir, load_sources, save_mask, save_raster, split_spatial,
    window_offsets, write_source_dir, Sample, Source, DEFAULT_STRIDE,
};
use crate::error::{Error, Result};
use crate::model::init_model;
use crate::synthetic::RectangleCorpus;
use crate::training::{evaluate, predict_mask, train, TrainHistory};
use crate::verify::{run_all, SuiteResult, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "gcnseg", version, about = "Graph convolutional building segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut source rasters into aligned image/mask patches.
    Slice(SliceArgs),
    /// Train a model with SGD and write checkpoints.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Write the predicted building mask of one image.
    Predict(PredictArgs),
    /// Run the numerical self-check suites.
    Verify(VerifyArgs),
    /// Write a synthetic rectangle corpus in dataset layout.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// `key=value` configuration file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory with `images/*.ppm` and `masks/*.pgm`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub connectivity: Option<String>,
    /// Comma-separated convolution widths, e.g. `16,16`.
    #[arg(long)]
    pub conv_channels: Option<String>,
    /// Comma-separated GCN output widths, ending in the class count.
    #[arg(long)]
    pub gcn_dims: Option<String>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 32)]
    pub max_n: usize,
    /// Defaults to `cheb_order` from `--config`, else 8.
    #[arg(long)]
    pub max_order: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub corrupt_eigensolver: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NumericalFailure(_) | Error::DegenerateSpectrum(_) => 3,
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidArchitecture(_)
        | Error::InvalidDataset(_)
        | Error::InvalidInput(_)
        | Error::InvalidDimension(_)
        | Error::InvalidLabel { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli.command, &mut out) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Runs one command. `Ok(false)` means it completed but reported failure.
pub fn run(command: Command, out: &mut impl Write) -> Result<bool> {
    match command {
        Command::Slice(a) => {
            let n = cmd_slice(&a)?;
            writeln!(out, "{n}").map_err(stdout_err)?;
        }
        Command::Train(a) => {
            let (path, history) = cmd_train(&a)?;
            for r in &history.records {
                let metrics = r.eval.map(|m| format!(" {}", m.machine_line())).unwrap_or_default();
                writeln!(out, "epoch {} loss={:.6}{metrics}", r.epoch + 1, r.mean_loss)
                    .map_err(stdout_err)?;
            }
            writeln!(out, "checkpoint {}", path.display()).map_err(stdout_err)?;
        }
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            eprintln!("{report}");
            writeln!(out, "{}", report.machine_line()).map_err(stdout_err)?;
        }
        Command::Predict(a) => cmd_predict(&a)?,
        Command::Verify(a) => {
            let results = cmd_verify(&a)?;
            for r in &results {
                writeln!(out, "{r}").map_err(stdout_err)?;
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if !failed.is_empty() {
                eprintln!("failing suites: {}", failed.join(", "));
                return Ok(false);
            }
        }
        Command::Synth(a) => {
            let n = cmd_synth(&a)?;
            writeln!(out, "{n}").map_err(stdout_err)?;
        }
    }
    Ok(true)
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Writes `out/images/<id>_r<row>_c<col>.ppm`, the matching mask under
/// `out/masks/`, and `out/index.tsv`. Returns the number of patches.
pub fn cmd_slice(a: &SliceArgs) -> Result<usize> {
    if a.size == 0 || a.stride == 0 {
        return Err(Error::Config("--size and --stride must be positive".into()));
    }
    let sources = load_sources(&a.images, &a.masks)?;
    for sub in ["images", "masks"] {
        let p = a.out.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut index = String::from("patch\tsource\trow\tcol\n");
    let mut count = 0;
    for s in &sources {
        let (h, w) = (s.image.height(), s.image.width());
        if h < a.size || w < a.size {
            return Err(Error::InvalidDataset(format!(
                "{}: {h}x{w} source is smaller than the {}px window",
                s.id, a.size
            )));
        }
        for &row in &window_offsets(h, a.size, a.stride) {
            for &col in &window_offsets(w, a.size, a.stride) {
                let name = format!("{}_r{row:05}_c{col:05}", s.id);
                save_raster(
                    &s.image.crop(row, col, a.size, a.size)?,
                    a.out.join("images").join(format!("{name}.ppm")),
                )?;
                save_raster(
                    &s.mask.crop(row, col, a.size, a.size)?,
                    a.out.join("masks").join(format!("{name}.pgm")),
                )?;
                index.push_str(&format!("{name}\t{}\t{row}\t{col}\n", s.id));
                count += 1;
            }
        }
    }
    let index_path = a.out.join("index.tsv");
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;
    Ok(count)
}

pub fn resolve_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut set = |key: &str, value: Option<String>| -> Result<()> {
        match value {
            Some(v) => cfg.set(key, &v),
            None => Ok(()),
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    set("data", path(&a.data))?;
    set("eval_data", path(&a.eval_data))?;
    set("checkpoint_path", path(&a.checkpoint))?;
    set("learning_rate", a.learning_rate.map(|v| v.to_string()))?;
    set("epochs", a.epochs.map(|v| v.to_string()))?;
    set("batch_size", a.batch_size.map(|v| v.to_string()))?;
    set("seed", a.seed.map(|v| v.to_string()))?;
    set("log_every", a.log_every.map(|v| v.to_string()))?;
    set("split_ratio", a.split_ratio.map(|v| v.to_string()))?;
    set("connectivity", a.connectivity.clone())?;
    set("conv_channels", a.conv_channels.clone())?;
    set("gcn_dims", a.gcn_dims.clone())?;
    set("patch_size", a.patch_size.map(|v| v.to_string()))?;
    set("stride", a.stride.map(|v| v.to_string()))?;
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn patches_of(sources: &[Source], size: usize, stride: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for s in sources {
        out.extend(s.patches(size, stride)?);
    }
    Ok(out)
}

/// Per-epoch history as TSV next to the checkpoint: `<stem>.history.tsv`.
pub fn history_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    checkpoint.with_file_name(format!("{stem}.history.tsv"))
}

fn write_history(path: &Path, h: &TrainHistory) -> Result<()> {
    let mut text = String::from("epoch\tmean_loss\telapsed_secs\toa\tf1\tiou\n");
    for r in &h.records {
        let m = match &r.eval {
            Some(m) => format!("{:.6}\t{:.6}\t{:.6}", m.overall_accuracy, m.f1, m.iou),
            None => "-\t-\t-".into(),
        };
        text.push_str(&format!(
            "{}\t{:.9}\t{:.3}\t{m}\n",
            r.epoch + 1,
            r.mean_loss,
            r.elapsed_secs
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Returns the final checkpoint path and the training history.
pub fn cmd_train(a: &TrainArgs) -> Result<(PathBuf, TrainHistory)> {
    let cfg = resolve_run_config(a)?;
    let train_cfg = cfg.train_config()?;
    let arch = cfg.architecture();
    arch.validate()
        .map_err(|e| Error::Config(format!("architecture: {e}")))?;
    let data_dir = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("no training data: set data= or pass --data".into()))?;
    let sources = load_source_dir(&data_dir)?;

    let (train_set, eval_set) = match (&cfg.eval_data, cfg.split_ratio) {
        (Some(eval_dir), _) => (
            patches_of(&sources, cfg.patch_size, cfg.stride)?,
            patches_of(&load_source_dir(eval_dir)?, cfg.patch_size, cfg.stride)?,
        ),
        (None, Some(ratio)) => split_spatial(&sources, ratio, cfg.patch_size, cfg.stride)?,
        (None, None) => (patches_of(&sources, cfg.patch_size, cfg.stride)?, Vec::new()),
    };
    log::info!(
        "{} training patches, {} evaluation patches",
        train_set.len(),
        eval_set.len()
    );
    let model = init_model(train_cfg.seed, &arch)?;
    let eval = (!eval_set.is_empty()).then_some(eval_set.as_slice());
    let (_, history) = train(&train_cfg, model, &train_set, eval)?;
    write_history(&history_path(&cfg.checkpoint_path), &history)?;
    Ok((cfg.checkpoint_path, history))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<crate::metrics::MetricsReport> {
    let model = load_checkpoint(&a.model)?;
    if model.height() != model.width() {
        return Err(Error::InvalidArgument(format!(
            "evaluation slices square windows; model grid is {}x{}",
            model.height(),
            model.width()
        )));
    }
    let samples = patches_of(&load_source_dir(&a.data)?, model.height(), a.stride)?;
    if samples.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "{} yields no patches",
            a.data.display()
        )));
    }
    evaluate(&model, &samples)?.report()
}

/// Predicts a 0/255 PGM mask; images of another size get a rebuilt grid.
pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let image = load_raster(&a.image)?;
    let model = if (image.height(), image.width()) == (model.height(), model.width()) {
        model
    } else {
        model.with_grid(image.height(), image.width())?
    };
    let mask = predict_mask(&model, &image.to_normalized_rgb())?;
    save_mask(&mask, &a.out)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<Vec<SuiteResult>> {
    let config_order = match &a.config {
        Some(p) => Some(RunConfig::from_file(p)?.cheb_order),
        None => None,
    };
    let opts = VerifyOptions {
        max_n: a.max_n,
        max_order: a.max_order.or(config_order).unwrap_or(8),
        trials: a.trials,
        seed: a.seed,
        corrupt_eigensolver: a.corrupt_eigensolver,
    };
    run_all(&opts)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<usize> {
    let corpus = RectangleCorpus {
        count: a.count,
        size: a.size,
        seed: a.seed,
        max_side: RectangleCorpus::default().max_side.min(a.size),
        min_side: RectangleCorpus::default().min_side.min(a.size),
        ..RectangleCorpus::default()
    };
    let sources = corpus.generate()?;
    write_source_dir(&a.out, &sources)?;
    Ok(sources.len())
}
