//! The work behind each subcommand, returning tables rather than printing.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use qbound_core::bounds::BoundReport;
use qbound_core::infer::{accuracy, empirical_sup_error, Dataset, Sampler};
use qbound_core::model::{builtin_architecture, random_weights, Network};
use qbound_core::norms;
use qbound_core::quantize::{equalize_network, quantize_network, QuantConfig, QuantizedNetwork, RoundingMode};

use crate::files::{sibling_blob, ModelFile, QuantizationInfo};
use crate::table::{Cell, Table};

/// `builtin:mlp5` (with biases), `builtin:mlp5-nobias`, or a manifest path.
pub fn load_model(model: &str, weights: Option<&Path>, seed: u64, domain: Option<f64>) -> Result<ModelFile> {
    let mut file = if let Some(name) = model.strip_prefix("builtin:") {
        let (name, with_bias) = match name.strip_suffix("-nobias") {
            Some(n) => (n, false),
            None => (name, true),
        };
        let spec = builtin_architecture(name, with_bias)?;
        let w = random_weights(&spec, seed)?;
        ModelFile::from_network(Network::new(spec, w)?, None)
    } else {
        let manifest = PathBuf::from(model);
        let blob = weights.map_or_else(|| sibling_blob(&manifest), Path::to_path_buf);
        ModelFile::load(&manifest, &blob).with_context(|| format!("loading {}", manifest.display()))?
    };
    if let Some(d) = domain {
        if !(d > 0.0 && d.is_finite()) {
            bail!("--D must be a positive finite number, got {d}");
        }
        file.network.spec.domain_d = d;
    }
    Ok(file)
}

/// What to sweep and how.
#[derive(Debug, Clone)]
pub struct Sweep {
    /// Ascending, without duplicates.
    pub bits: Vec<u32>,
    pub mode: RoundingMode,
    pub seed: u64,
    pub samples: usize,
    pub estimate: bool,
    pub cle: bool,
    /// Inputs for adaptive rounding; sampled from the domain when absent.
    pub calibration: Option<Vec<Vec<f64>>>,
}

impl Sweep {
    pub fn new(mut bits: Vec<u32>, mode: RoundingMode, seed: u64) -> Self {
        bits.sort_unstable();
        bits.dedup();
        Self {
            bits,
            mode,
            seed,
            samples: qbound_core::infer::DEFAULT_SAMPLES,
            estimate: false,
            cle: false,
            calibration: None,
        }
    }

    fn config(&self, bits: u32) -> QuantConfig {
        QuantConfig { seed: self.seed, ..QuantConfig::new(bits, self.mode) }
    }
}

/// The full-precision network the sweep quantizes: equalized first when asked.
pub fn prepare(net: &Network, sweep: &Sweep) -> Result<Network> {
    if !sweep.cle {
        return Ok(net.clone());
    }
    let eq = equalize_network(net)?;
    for (a, b) in &eq.skipped {
        eprintln!("note: layers {a} and {b} not equalized (activation is not positively homogeneous)");
    }
    Ok(eq.network)
}

/// One quantized network per bit width, in the order of `sweep.bits`.
pub fn quantize_sweep(base: &Network, sweep: &Sweep) -> Result<Vec<QuantizedNetwork>> {
    sweep
        .bits
        .par_iter()
        .map(|&n| Ok(quantize_network(base, &sweep.config(n), sweep.calibration.as_deref())?))
        .collect()
}

const NORM_COLUMNS: &[&str] = &[
    "stage",
    "layer",
    "kind",
    "r",
    "exact",
    "width_in",
    "width_out",
    "kernel",
    "in_channels",
    "row_taps",
    "r_max",
    "r_mean",
    "r_conv",
    "max_width_in",
    "max_row_taps",
    "bias_augmented",
];

/// One row per linear stage and a summary row. When the network has biases
/// every `r` is the norm of the bias-augmented matrix.
pub fn norms_table(net: &Network) -> Result<Table> {
    let p = norms::profile_of(net)?;
    let mut t = Table::new(NORM_COLUMNS);
    for (i, s) in p.stages.iter().enumerate() {
        let conv = s.conv.as_ref();
        let mut row = vec![
            Cell::Int(i as i64 + 1),
            Cell::Int(s.layer_index as i64),
            Cell::text(s.kind.name()),
            Cell::Float(s.r),
            Cell::Bool(s.exact),
            Cell::Int(s.width_in as i64),
            Cell::Int(s.width_out as i64),
            conv.map_or(Cell::Empty, |c| Cell::Int(c.kernel as i64)),
            conv.map_or(Cell::Empty, |c| Cell::Int(c.in_channels as i64)),
            conv.map_or(Cell::Empty, |c| Cell::Int(c.row_taps as i64)),
        ];
        row.extend((0..5).map(|_| Cell::Empty));
        row.push(Cell::Bool(p.has_bias));
        t.push(row);
    }
    let r = p.r();
    let max_taps = p.stages.iter().filter_map(|s| s.conv.as_ref().map(|c| c.row_taps)).max();
    let mut row = vec![Cell::text("summary")];
    row.extend((0..9).map(|_| Cell::Empty));
    row.extend([
        Cell::Float(qbound_core::bounds::r_max(&r)),
        Cell::Float(qbound_core::bounds::r_mean(&r)),
        Cell::Float(qbound_core::bounds::r_conv(&r)),
        Cell::Int(p.max_width() as i64),
        max_taps.map_or(Cell::Empty, |v| Cell::Int(v as i64)),
        Cell::Bool(p.has_bias),
    ]);
    t.push(row);
    Ok(t)
}

const BOUND_COLUMNS: &[&str] = &[
    "bits",
    "mode",
    "dtheta",
    "depth",
    "r_max",
    "r_mean",
    "r_conv",
    "log10_prev_2023",
    "prev_2023",
    "log10_pathnorm",
    "pathnorm",
    "log10_general",
    "general",
    "log10_mlp_nobias",
    "mlp_nobias",
    "log10_conv",
    "conv",
    "log10_new",
    "new",
    "new_kind",
    "ratio_log10",
    "log10_decomposition",
    "empirical",
    "empirical_samples",
    "flags",
];

struct BoundRow {
    report: BoundReport,
    flags: Vec<&'static str>,
    empirical: Option<(f64, usize)>,
}

fn bound_row(base: &Network, q: &Network, sweep: &Sweep) -> Result<BoundRow> {
    let domain = base.spec.domain_d;
    let report = BoundReport::for_networks(base, q, domain)?;
    let exact = norms::profile_of(base)?.all_exact() && norms::profile_of(q)?.all_exact();
    let mut flags = Vec::new();
    if report.prev_hypothesis_violated {
        flags.push("prev_assumes_r_max_ge_1");
    }
    if !exact {
        flags.push("shortcut_norm_is_upper_bound");
    }
    if report.dtheta == 0.0 {
        flags.push("ratio_undefined");
    }
    let empirical = if sweep.estimate {
        let sampler = Sampler::new(domain, base.spec.input_len(), sweep.seed, sweep.samples);
        let e = empirical_sup_error(base, q, &sampler, true)?;
        Some((e.value, e.evaluated))
    } else {
        None
    };
    Ok(BoundRow { report, flags, empirical })
}

fn bound_cells(bits: Option<u32>, mode: Option<RoundingMode>, row: &BoundRow) -> Vec<Cell> {
    let r = &row.report;
    let both = |v: Option<qbound_core::Log10>| match v {
        Some(v) => [Cell::log10(v), Cell::linear(v)],
        None => [Cell::Empty, Cell::Empty],
    };
    let mut cells = vec![
        bits.map_or(Cell::Empty, |b| Cell::Int(i64::from(b))),
        mode.map_or(Cell::Empty, |m| Cell::text(m.name())),
        Cell::Float(r.dtheta),
        Cell::Int(r.depth as i64),
        Cell::Float(r.r_max),
        Cell::Float(r.r_mean),
        Cell::Float(r.r_conv),
    ];
    for v in [Some(r.prev_2023), Some(r.pathnorm), Some(r.general), r.mlp_nobias, r.conv, Some(r.new_bound)] {
        cells.extend(both(v));
    }
    cells.push(Cell::text(r.new_kind.name()));
    cells.push(Cell::opt(r.ratio_log10().ok()));
    cells.push(r.decomposition.as_ref().map_or(Cell::Empty, |d| Cell::log10(d.total)));
    match row.empirical {
        Some((v, n)) => cells.extend([Cell::Float(v), Cell::Int(n as i64)]),
        None => cells.extend([Cell::Empty, Cell::Empty]),
    }
    cells.push(Cell::text(row.flags.join(";")));
    cells
}

/// One row per bit width, quantizing `net` with the sweep's settings.
pub fn bounds_table(net: &Network, sweep: &Sweep) -> Result<Table> {
    let base = prepare(net, sweep)?;
    let rows: Vec<Vec<Cell>> = sweep
        .bits
        .par_iter()
        .map(|&n| {
            let q = quantize_network(&base, &sweep.config(n), sweep.calibration.as_deref())?;
            Ok(bound_cells(Some(n), Some(sweep.mode), &bound_row(&base, &q.network, sweep)?))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(BOUND_COLUMNS);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

/// A single row comparing `net` with an already quantized copy.
pub fn bounds_against(net: &Network, quantized: &ModelFile, sweep: &Sweep) -> Result<Table> {
    let q = &quantized.network;
    if q.spec.layers != net.spec.layers || q.spec.input_shape != net.spec.input_shape {
        bail!("the quantized model's architecture does not match the model's");
    }
    let info = quantized.manifest.quantization.as_ref();
    let row = bound_row(net, q, sweep)?;
    let mut t = Table::new(BOUND_COLUMNS);
    t.push(bound_cells(info.map(|i| i.bits), info.map(|i| i.mode), &row));
    Ok(t)
}

const QUANTIZE_COLUMNS: &[&str] = &["bits", "mode", "dtheta", "max_eta", "manifest", "weights"];

/// Quantizes and writes each bit width to `out` (or `out/n{bits}` when
/// several widths are requested).
pub fn quantize_to(file: &ModelFile, sweep: &Sweep, out: &Path) -> Result<Table> {
    let base = prepare(&file.network, sweep)?;
    let qs = quantize_sweep(&base, sweep)?;
    let mut t = Table::new(QUANTIZE_COLUMNS);
    for q in qs {
        let n = q.config.bits;
        let dir = if sweep.bits.len() == 1 { out.to_path_buf() } else { out.join(format!("n{n}")) };
        let info = QuantizationInfo::of(&q, sweep.cle);
        let max_eta = q.steps.values().fold(0.0f64, |a, &b| a.max(b));
        let (dtheta, mode) = (q.dtheta, q.config.mode);
        let stored = file.with_network(q.network, Some(info))?;
        let (m, w) = stored.save_dir(&dir)?;
        t.push(vec![
            Cell::Int(i64::from(n)),
            Cell::text(mode.name()),
            Cell::Float(dtheta),
            Cell::Float(max_eta),
            Cell::text(m.display().to_string()),
            Cell::text(w.display().to_string()),
        ]);
    }
    Ok(t)
}

const EVAL_COLUMNS: &[&str] = &["model", "bits", "mode", "inputs", "accuracy"];

/// Accuracy of the full-precision model, then of each quantized width.
pub fn eval_table(net: &Network, data: &Dataset, sweep: &Sweep) -> Result<Table> {
    check_dataset(net, data)?;
    let mut t = Table::new(EVAL_COLUMNS);
    let n = data.len() as i64;
    t.push(vec![
        Cell::text("full_precision"),
        Cell::Empty,
        Cell::Empty,
        Cell::Int(n),
        Cell::Float(accuracy(net, data)?),
    ]);
    let base = prepare(net, sweep)?;
    let accs: Vec<f64> =
        quantize_sweep(&base, sweep)?.par_iter().map(|q| Ok(accuracy(&q.network, data)?)).collect::<Result<_>>()?;
    for (bits, acc) in sweep.bits.iter().zip(accs) {
        t.push(vec![
            Cell::text("quantized"),
            Cell::Int(i64::from(*bits)),
            Cell::text(sweep.mode.name()),
            Cell::Int(n),
            Cell::Float(acc),
        ]);
    }
    Ok(t)
}

fn check_dataset(net: &Network, data: &Dataset) -> Result<()> {
    let want = net.spec.input_len();
    let got: usize = data.input_shape.iter().product();
    if want != got {
        bail!("dataset inputs have {got} values ({:?}) but the model expects {want}", data.input_shape);
    }
    Ok(())
}

const REPORT_COLUMNS: &[&str] = &[
    "bits",
    "mode",
    "dtheta",
    "depth",
    "r_max",
    "r_mean",
    "r_conv",
    "max_width_in",
    "max_row_taps",
    "log10_prev_2023",
    "log10_general",
    "log10_new",
    "new",
    "new_kind",
    "ratio_log10",
    "empirical",
    "accuracy",
    "accuracy_full_precision",
    "flags",
];

/// Norms, bounds and (with a labeled dataset) accuracy, one row per width.
pub fn report_table(net: &Network, data: Option<&Dataset>, sweep: &Sweep) -> Result<Table> {
    let data = data.filter(|d| d.labels.is_some());
    if let Some(d) = data {
        check_dataset(net, d)?;
    }
    let base = prepare(net, sweep)?;
    let profile = norms::profile_of(&base)?;
    let max_taps = profile.stages.iter().filter_map(|s| s.conv.as_ref().map(|c| c.row_taps)).max();
    let fp_acc = data.map(|d| accuracy(&base, d)).transpose()?;
    let rows: Vec<Vec<Cell>> = sweep
        .bits
        .par_iter()
        .map(|&n| {
            let q = quantize_network(&base, &sweep.config(n), sweep.calibration.as_deref())?;
            let row = bound_row(&base, &q.network, sweep)?;
            let acc = data.map(|d| accuracy(&q.network, d)).transpose()?;
            let r = &row.report;
            Ok(vec![
                Cell::Int(i64::from(n)),
                Cell::text(sweep.mode.name()),
                Cell::Float(r.dtheta),
                Cell::Int(r.depth as i64),
                Cell::Float(r.r_max),
                Cell::Float(r.r_mean),
                Cell::Float(r.r_conv),
                Cell::Int(profile.max_width() as i64),
                max_taps.map_or(Cell::Empty, |v| Cell::Int(v as i64)),
                Cell::log10(r.prev_2023),
                Cell::log10(r.general),
                Cell::log10(r.new_bound),
                Cell::linear(r.new_bound),
                Cell::text(r.new_kind.name()),
                Cell::opt(r.ratio_log10().ok()),
                Cell::opt(row.empirical.map(|e| e.0)),
                Cell::opt(acc),
                Cell::opt(fp_acc),
                Cell::text(row.flags.join(";")),
            ])
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(REPORT_COLUMNS);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}
