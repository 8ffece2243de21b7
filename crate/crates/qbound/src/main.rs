use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qbound::commands::{self, Sweep};
use qbound::dataset::load_dataset;
use qbound::files::{sibling_blob, ModelFile};
use qbound::Table;
use qbound_core::infer::Dataset;
use qbound_core::quantize::RoundingMode;

/// Certified worst-case output error of weight-quantized networks.
#[derive(Parser)]
#[command(name = "qbound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-stage operator norms and their summaries.
    Norms {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Error bounds for each bit width (or for a given quantized model).
    Bounds {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        /// Compare against this quantized manifest instead of quantizing.
        #[arg(long)]
        quantized: Option<PathBuf>,
        /// Blob of the quantized model [default: weights.bin next to it].
        #[arg(long)]
        quantized_weights: Option<PathBuf>,
        /// Calibration inputs for adaptive rounding.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Quantize and write model.json + weights.bin with quantization metadata.
    Quantize {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        /// Calibration inputs for adaptive rounding.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory; one subdirectory per width when several are given.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Top-1 accuracy on a labeled dataset, full precision and quantized.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Bit widths to evaluate besides full precision, e.g. 4,8.
        #[arg(long, value_delimiter = ',')]
        bits: Vec<u32>,
        #[arg(long, value_parser = parse_mode, default_value = "floor")]
        mode: RoundingMode,
        #[arg(long)]
        cle: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Norm summaries, bounds and accuracy merged into one row per width.
    Report {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Manifest path, or builtin:mlp5|mlp7|mlp9|mlp11 (append -nobias for bias-free).
    #[arg(long)]
    model: String,
    /// Weights blob [default: weights.bin next to the manifest].
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Input domain half-width, overriding the manifest.
    #[arg(long = "D")]
    domain: Option<f64>,
    /// Seed for built-in weights, sampling and calibration.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated bit widths.
    #[arg(long, value_delimiter = ',', default_value = "8", value_parser = clap::value_parser!(u32).range(1..))]
    bits: Vec<u32>,
    #[arg(long, value_parser = parse_mode, default_value = "floor")]
    mode: RoundingMode,
    /// Uniform samples for the empirical error estimate.
    #[arg(long, default_value_t = qbound_core::infer::DEFAULT_SAMPLES)]
    samples: usize,
    /// Add an empirical lower estimate of the worst-case error.
    #[arg(long)]
    estimate: bool,
    /// Apply cross-layer equalization before quantizing.
    #[arg(long)]
    cle: bool,
}

#[derive(Args)]
struct OutputArgs {
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_mode(s: &str) -> Result<RoundingMode, String> {
    s.parse().map_err(|_| format!("expected floor, round or adaround, got `{s}`"))
}

impl ModelArgs {
    fn load(&self) -> Result<ModelFile> {
        commands::load_model(&self.model, self.weights.as_deref(), self.seed, self.domain)
    }
}

impl SweepArgs {
    fn sweep(&self, seed: u64, calibration: Option<&Dataset>) -> Sweep {
        let mut s = Sweep::new(self.bits.clone(), self.mode, seed);
        s.samples = self.samples;
        s.estimate = self.estimate;
        s.cle = self.cle;
        s.calibration = calibration.map(|d| d.inputs.clone());
        s
    }
}

fn dataset(path: Option<&Path>) -> Result<Option<Dataset>> {
    path.map(|p| load_dataset(p).with_context(|| format!("loading {}", p.display()))).transpose()
}

fn emit(table: &Table, format: Format, out: Option<&Path>) -> Result<()> {
    let bytes = match format {
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json(),
    };
    match out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(&bytes)?),
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("QBOUND_THREADS") {
        let n: usize =
            v.trim().parse().with_context(|| format!("QBOUND_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Norms { model, output } => {
            let f = model.load()?;
            emit(&commands::norms_table(&f.network)?, output.format, output.out.as_deref())
        }
        Command::Bounds { model, sweep, quantized, quantized_weights, dataset: data, output } => {
            let f = model.load()?;
            let data = dataset(data.as_deref())?;
            let s = sweep.sweep(model.seed, data.as_ref());
            let table = match quantized {
                Some(q) => {
                    let blob = quantized_weights.unwrap_or_else(|| sibling_blob(&q));
                    let qf = ModelFile::load(&q, &blob).with_context(|| format!("loading {}", q.display()))?;
                    commands::bounds_against(&f.network, &qf, &s)?
                }
                None => commands::bounds_table(&f.network, &s)?,
            };
            emit(&table, output.format, output.out.as_deref())
        }
        Command::Quantize { model, sweep, dataset: data, out, format } => {
            let f = model.load()?;
            let data = dataset(data.as_deref())?;
            let s = sweep.sweep(model.seed, data.as_ref());
            emit(&commands::quantize_to(&f, &s, &out)?, format, None)
        }
        Command::Eval { model, dataset: data, bits, mode, cle, output } => {
            let f = model.load()?;
            let data = dataset(Some(&data))?.expect("path given");
            let mut s = Sweep::new(bits, mode, model.seed);
            s.cle = cle;
            emit(&commands::eval_table(&f.network, &data, &s)?, output.format, output.out.as_deref())
        }
        Command::Report { model, sweep, dataset: data, output } => {
            let f = model.load()?;
            let data = dataset(data.as_deref())?;
            let s = sweep.sweep(model.seed, data.as_ref());
            emit(&commands::report_table(&f.network, data.as_ref(), &s)?, output.format, output.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
