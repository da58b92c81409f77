//! Command-line front end: `ingest`, `synth`, `train`, `eval`.
//!
//! Every command reads an optional JSON run configuration
//! (`--config PATH`, schema-validated, unknown keys rejected) and applies
//! command-line overrides on top: flag > file > default.
//!
//! Exit codes: 0 success, 2 configuration/usage errors, 3 input-data
//! errors, 4 numeric failures during optimization.

mod export;

pub use export::{write_attention_csv, write_attention_pgm};

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{
    read_externals_csv, read_requests_csv, synth_generate, write_externals_csv,
    write_requests_csv, Dataset, GridSpec, RowError, SynthConfig, FEATURE_COUNT,
};
use crate::error::{Error, Result};
use crate::model::{ablate, load_file, save_file, AblationVariant, FusionKind, ModelConfig, StefNet};
use crate::train::{evaluate, persistence_baseline, train, Metrics, TrainConfig};

/// Everything a run needs, as stored in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Fraction of intervals (chronologically first) used for training.
    pub train_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            train_fraction: 0.8,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.model.width != self.grid.width || self.model.height != self.grid.height {
            return Err(Error::Config(format!(
                "model grid {}x{} does not match data grid {}x{}",
                self.model.width, self.model.height, self.grid.width, self.grid.height
            )));
        }
        if self.model.external && self.model.fuzzy_inputs != FEATURE_COUNT {
            return Err(Error::Config(format!(
                "the data pipeline encodes {FEATURE_COUNT} external variables; \
                 model.fuzzy_inputs is {}",
                self.model.fuzzy_inputs
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let config = match path {
            None => RunConfig::default(),
            Some(p) => {
                let bytes = std::fs::read(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
        };
        Ok(config)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "stef",
    about = "Spatio-temporal passenger demand forecasting",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a dataset directory from request and externals CSV files.
    Ingest {
        /// Requests CSV (id,pickup_epoch,lon,lat).
        #[arg(long)]
        requests: PathBuf,
        /// Externals CSV (one weather row per interval).
        #[arg(long)]
        externals: PathBuf,
        /// JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the training fraction from the config file.
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Generate a seeded synthetic dataset directory.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Generator seed (overrides the config file's train.seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of generated days.
        #[arg(long)]
        days: Option<u32>,
    },
    /// Train a model on a dataset directory.
    Train {
        /// Dataset directory produced by `ingest` or `synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run seed (parameter init and batch shuffling).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for checkpoint, log, and metrics.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// History length k (number of past intervals).
        #[arg(long)]
        history: Option<usize>,
        /// Fusion operator: conv or weighted-addition.
        #[arg(long)]
        fusion: Option<String>,
        /// Disable the attention head (temporal mean instead).
        #[arg(long)]
        no_attention: bool,
        /// Disable the external branch entirely.
        #[arg(long)]
        no_external: bool,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the metrics report and attention maps;
        /// without it the report goes to stdout only.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Export attention weights (CSV + PGM) for this many test samples.
        #[arg(long, default_value_t = 0)]
        export_attention: usize,
    },
}

/// Parse arguments, run, and map errors to the documented exit codes.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parse and run from explicit arguments (the first element is the program
/// name). Lets tests and embedders drive the same dispatch as [`main`].
pub fn run_args<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string()))?;
    run(cli)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Dimension(_) => 2,
        Error::Input(_) | Error::Format(_) | Error::Io(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            requests,
            externals,
            config,
            out,
            train_fraction,
        } => {
            let mut run = RunConfig::load(config.as_deref())?;
            if let Some(f) = train_fraction {
                run.train_fraction = f;
            }
            run.validate()?;
            cmd_ingest(&requests, &externals, &run, &out)
        }
        Command::Synth {
            config,
            seed,
            out,
            days,
        } => {
            let mut run = RunConfig::load(config.as_deref())?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if let Some(d) = days {
                run.synth.days = d;
            }
            run.validate()?;
            cmd_synth(&run, &out)
        }
        Command::Train {
            data,
            config,
            seed,
            out,
            epochs,
            history,
            fusion,
            no_attention,
            no_external,
        } => {
            let mut run = RunConfig::load(config.as_deref())?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if let Some(e) = epochs {
                run.train.epochs = e;
            }
            if let Some(k) = history {
                run.model.history = k;
            }
            if let Some(f) = &fusion {
                run.model.fusion = match f.as_str() {
                    "conv" => FusionKind::Conv,
                    "weighted-addition" => FusionKind::WeightedAddition,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown fusion '{other}' (expected conv or weighted-addition)"
                        )))
                    }
                };
            }
            if no_attention {
                run.model = ablate(&run.model, AblationVariant::NoAttention);
            }
            if no_external {
                run.model = ablate(&run.model, AblationVariant::NoExternal);
            }
            cmd_train(&data, &run, &out)
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            export_attention,
        } => cmd_eval(&checkpoint, &data, out.as_deref(), export_attention),
    }
}

fn report_row_errors(label: &str, errors: &[RowError]) {
    const SHOWN: usize = 5;
    for e in errors.iter().take(SHOWN) {
        eprintln!("warning: {label}:{}: {}", e.line, e.message);
    }
    if errors.len() > SHOWN {
        eprintln!(
            "warning: {label}: {} further malformed row(s) skipped",
            errors.len() - SHOWN
        );
    }
}

/// Build a dataset directory from raw CSV files.
pub fn cmd_ingest(
    requests_path: &Path,
    externals_path: &Path,
    run: &RunConfig,
    out: &Path,
) -> Result<()> {
    let requests = read_requests_csv(requests_path)?;
    report_row_errors(&requests_path.display().to_string(), &requests.errors);
    let externals = read_externals_csv(externals_path)?;
    report_row_errors(&externals_path.display().to_string(), &externals.errors);
    if requests.rows.is_empty() && !requests.errors.is_empty() {
        return Err(Error::Input(format!(
            "{}: no parseable rows",
            requests_path.display()
        )));
    }

    let dataset = Dataset::build(
        requests.rows,
        &externals.rows,
        &run.grid,
        run.train_fraction,
    )?;
    dataset.save(out)?;
    print_dataset_summary(&dataset);
    Ok(())
}

/// Generate raw synthetic CSVs and ingest them, fully seeded.
pub fn cmd_synth(run: &RunConfig, out: &Path) -> Result<()> {
    let (requests, externals) = synth_generate(run.train.seed, &run.grid, &run.synth)?;
    std::fs::create_dir_all(out)?;
    write_requests_csv(&out.join("requests.csv"), &requests)?;
    write_externals_csv(&out.join("externals.csv"), &externals)?;
    let dataset = Dataset::build(requests, &externals, &run.grid, run.train_fraction)?;
    dataset.save(out)?;
    print_dataset_summary(&dataset);
    Ok(())
}

fn print_dataset_summary(dataset: &Dataset) {
    let m = &dataset.manifest;
    println!(
        "dataset: {} intervals ({} train, {} test), grid {}x{}",
        m.interval_count,
        m.boundary_interval - m.start_interval,
        m.start_interval + m.interval_count as i64 - m.boundary_interval,
        m.grid.width,
        m.grid.height
    );
    println!(
        "requests: {} total, {} discarded (outside box or range)",
        m.total_requests, m.discarded_requests
    );
}

/// Combined model + baseline report, serialized as the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: Metrics,
    pub persistence: Metrics,
}

impl MetricsReport {
    fn print(&self, split: &str) {
        println!(
            "{split} metrics: model MAE {:.4} RMSE {:.4} | persistence MAE {:.4} RMSE {:.4} ({} samples)",
            self.model.mae,
            self.model.rmse,
            self.persistence.mae,
            self.persistence.rmse,
            self.model.samples
        );
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Train per the run config and write `model.ckpt`, `train_log.txt`, and
/// `train_metrics.json` into `out`.
pub fn cmd_train(data_dir: &Path, run: &RunConfig, out: &Path) -> Result<()> {
    run.model.validate()?;
    run.train.validate()?;
    if run.model.external && run.model.fuzzy_inputs != FEATURE_COUNT {
        return Err(Error::Config(format!(
            "the data pipeline encodes {FEATURE_COUNT} external variables; \
             model.fuzzy_inputs is {}",
            run.model.fuzzy_inputs
        )));
    }
    let dataset = Dataset::load(data_dir)?;
    let grid = &dataset.manifest.grid;
    if run.model.width != grid.width || run.model.height != grid.height {
        return Err(Error::Config(format!(
            "model grid {}x{} does not match dataset grid {}x{}",
            run.model.width, run.model.height, grid.width, grid.height
        )));
    }
    let (train_samples, _) = dataset.windows(run.model.history)?;
    if train_samples.is_empty() {
        return Err(Error::Input(
            "dataset has no training samples for this history length".into(),
        ));
    }

    std::fs::create_dir_all(out)?;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(run.train.seed);
    let mut net = StefNet::new(run.model.clone(), &mut rng)?;
    println!(
        "training: {} samples, {} epochs, batch {}, {} parameters",
        train_samples.len(),
        run.train.epochs,
        run.train.batch_size,
        net.params().scalar_count()
    );

    let mut log = std::fs::File::create(out.join("train_log.txt"))?;
    train(&mut net, &train_samples, &run.train, |epoch| {
        let line = format!(
            "epoch={} loss={:.6e} wall_seconds={:.3}",
            epoch.epoch, epoch.loss, epoch.wall_seconds
        );
        println!("{line}");
        let _ = writeln!(log, "{line}");
    })?;

    save_file(&net, out.join("model.ckpt"))?;
    let report = MetricsReport {
        model: evaluate(&net, &train_samples, &dataset.manifest.scaling)?,
        persistence: persistence_baseline(&train_samples)?,
    };
    report.print("train");
    report.write(&out.join("train_metrics.json"))?;
    Ok(())
}

/// Evaluate a checkpoint on the dataset's test split; optionally export
/// attention weights for the first few test samples.
pub fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    out: Option<&Path>,
    export_attention: usize,
) -> Result<()> {
    let net = load_file(checkpoint)?;
    let dataset = Dataset::load(data_dir)?;
    let grid = &dataset.manifest.grid;
    let cfg = net.config();
    if cfg.width != grid.width || cfg.height != grid.height {
        return Err(Error::Config(format!(
            "checkpoint grid {}x{} does not match dataset grid {}x{}",
            cfg.width, cfg.height, grid.width, grid.height
        )));
    }
    let (_, test_samples) = dataset.windows(cfg.history)?;
    if test_samples.is_empty() {
        return Err(Error::Input(
            "dataset has no test samples for this history length".into(),
        ));
    }

    let report = MetricsReport {
        model: evaluate(&net, &test_samples, &dataset.manifest.scaling)?,
        persistence: persistence_baseline(&test_samples)?,
    };
    report.print("test");

    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        report.write(&out.join("eval_metrics.json"))?;
        if export_attention > 0 {
            if !cfg.attention {
                return Err(Error::Config(
                    "checkpoint was trained without attention; nothing to export".into(),
                ));
            }
            let dir = out.join("attention");
            std::fs::create_dir_all(&dir)?;
            for sample in test_samples.iter().take(export_attention) {
                let (_, attn) = net.predict(&sample.demands, &sample.externals)?;
                let attn = attn.expect("attention enabled");
                let stem = format!("sample_{}", sample.target_interval);
                write_attention_csv(&dir.join(format!("{stem}.csv")), &attn)?;
                for t in 0..cfg.history {
                    write_attention_pgm(&dir.join(format!("{stem}_t{t}.pgm")), &attn, t)?;
                }
            }
            println!(
                "attention export: {} sample(s) -> {}",
                export_attention.min(test_samples.len()),
                dir.display()
            );
        }
    } else if export_attention > 0 {
        return Err(Error::Config(
            "--export-attention requires --out for the output directory".into(),
        ));
    }
    Ok(())
}
