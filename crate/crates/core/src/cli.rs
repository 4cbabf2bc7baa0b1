//! Experiment runner behind the `conscontrol` binary.
//!
//! Every command writes a table. CSV output starts with `#` header lines (crate
//! version, config echo, optional timestamp) followed by a column line and one
//! line per row, flushed as soon as the row is known. JSON output is a single
//! document written at the end, including the rows gathered before a failure.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::gramian::{
    cost_sample, least_squares_line, minimal_norm_control, schrodinger_gramian, schrodinger_grid, smoothing_control,
    CostCurve, SystemKind,
};
use crate::resolvent::{
    best_bump, constants_from_observability, grid_m, lambda_grid, thin_grid, verify_resolvent, BumpFunction,
};
use crate::spectral::{duhamel_schrodinger, BoundaryCondition, ModalOperator, ModalState};
use crate::tensor::{random_diagonal_system, random_hermitian, verify_cost_invariance, MatrixSystem};
use crate::transmutation::{fast_control_pipeline, fundamental_kernel, kernel_grid, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONDITIONING: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

const MAX_MODES: usize = 2048;
const TENSOR_AUX_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Costcurve,
    Resolvent,
    Smoothing,
    Transmute,
    Tensor,
    Selftest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Settings that may come from a config file or from flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Length of the spatial interval.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub length: Option<f64>,
    /// Boundary condition at the uncontrolled end.
    #[arg(long, value_enum)]
    pub bc: Option<BoundaryCondition>,
    /// Number of modes.
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub modes: Option<usize>,
    #[arg(long = "Tmin")]
    #[serde(rename = "Tmin")]
    pub t_min: Option<f64>,
    #[arg(long = "Tmax")]
    #[serde(rename = "Tmax")]
    pub t_max: Option<f64>,
    /// Number of evenly spaced horizons in `[Tmin, Tmax]`.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Half-length of the kernel segment (transmute).
    #[arg(long = "kernel-L")]
    #[serde(rename = "kernel_L")]
    pub kernel_length: Option<f64>,
    /// Fraction of the horizon spent on smoothing (transmute).
    #[arg(long = "eps-split")]
    pub eps_split: Option<f64>,
    /// Smoothing parameter (smoothing, transmute).
    #[arg(long)]
    pub d: Option<f64>,
}

#[derive(Clone, Debug, Parser)]
#[command(
    name = "conscontrol",
    version,
    about = "Controllability experiments for conservative systems",
    allow_negative_numbers = true
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
    /// JSON file with any of the flag values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Add the wall-clock time to the output header.
    #[arg(long)]
    pub timestamp: bool,
}

/// Fully resolved and validated run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(rename = "L")]
    pub length: f64,
    pub bc: BoundaryCondition,
    #[serde(rename = "N")]
    pub modes: usize,
    #[serde(rename = "Tmin")]
    pub t_min: f64,
    #[serde(rename = "Tmax")]
    pub t_max: f64,
    pub samples: usize,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub seed: u64,
    #[serde(rename = "kernel_L")]
    pub kernel_length: f64,
    pub eps_split: f64,
    pub d: Option<f64>,
    pub timestamp: bool,
}

impl ExperimentConfig {
    /// Per-command defaults.
    pub fn defaults(command: Command) -> Self {
        let (modes, t_min, t_max, samples, format) = match command {
            Command::Costcurve => (64, 0.2, 0.5, 7, OutputFormat::Csv),
            Command::Resolvent => (16, 0.5, 2.0, 4, OutputFormat::Csv),
            Command::Smoothing => (32, 0.2, 1.0, 9, OutputFormat::Csv),
            Command::Transmute => (32, 0.6, 1.0, 3, OutputFormat::Csv),
            Command::Tensor => (6, 0.5, 2.0, 3, OutputFormat::Json),
            Command::Selftest => (8, 0.5, 0.5, 1, OutputFormat::Csv),
        };
        Self {
            command,
            length: 1.0,
            bc: BoundaryCondition::Dirichlet,
            modes,
            t_min,
            t_max,
            samples,
            out: None,
            format,
            seed: 0,
            kernel_length: 2.2,
            eps_split: 0.5,
            d: None,
            timestamp: false,
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = o.$field.clone() {
                    self.$field = v;
                }
            )*};
        }
        take!(
            length,
            bc,
            modes,
            t_min,
            t_max,
            samples,
            format,
            seed,
            kernel_length,
            eps_split
        );
        if o.out.is_some() {
            self.out.clone_from(&o.out);
        }
        if o.d.is_some() {
            self.d = o.d;
        }
    }

    /// Defaults, then the config file, then the flags.
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut cfg = Self::defaults(cli.command);
        if let Some(path) = &cli.config {
            cfg.apply(&read_overrides(path)?);
        }
        cfg.apply(&cli.overrides);
        cfg.timestamp = cli.timestamp;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("L", self.length)?;
        positive("Tmin", self.t_min)?;
        positive("Tmax", self.t_max)?;
        positive("kernel_L", self.kernel_length)?;
        if let Some(d) = self.d {
            positive("d", d)?;
        }
        if !(1..=MAX_MODES).contains(&self.modes) {
            return Err(Error::invalid(
                "N",
                format!("must lie in 1..={MAX_MODES}, got {}", self.modes),
            ));
        }
        if self.t_max < self.t_min {
            return Err(Error::invalid(
                "Tmax",
                format!("must be at least Tmin = {}", self.t_min),
            ));
        }
        if self.samples == 0 || (self.samples > 1 && self.t_max == self.t_min) {
            return Err(Error::invalid(
                "samples",
                "need at least one sample, and Tmax > Tmin for several",
            ));
        }
        if !(self.eps_split > 0.0 && self.eps_split < 1.0) {
            return Err(Error::invalid(
                "eps_split",
                format!("must lie in (0, 1), got {}", self.eps_split),
            ));
        }
        match self.command {
            Command::Costcurve => {
                if self.samples < 3 {
                    return Err(Error::invalid("samples", "a cost fit needs at least 3 samples"));
                }
                let cap = PI.min(self.length).powi(2);
                if self.t_max > cap {
                    return Err(Error::invalid("Tmax", format!("must not exceed min(pi, L)^2 = {cap}")));
                }
            }
            Command::Smoothing if self.t_max > 1.0 => {
                return Err(Error::invalid("Tmax", "smoothing horizons must not exceed 1"));
            }
            Command::Transmute => {
                let cap = 1f64.min(self.kernel_length).powi(2);
                if self.t_max > cap {
                    return Err(Error::invalid(
                        "Tmax",
                        format!("must not exceed min(1, kernel_L)^2 = {cap}"),
                    ));
                }
                if self.kernel_length <= 2.0 * self.length {
                    return Err(Error::invalid(
                        "kernel_L",
                        format!("must exceed 2L = {}", 2.0 * self.length),
                    ));
                }
            }
            Command::Tensor if self.modes * TENSOR_AUX_DIM > crate::tensor::MAX_PRODUCT_DIM => {
                return Err(Error::invalid("N", "tensor product dimension too large"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Evenly spaced horizons from `Tmin` to `Tmax`.
    pub fn horizons(&self) -> Vec<f64> {
        if self.samples == 1 {
            return vec![self.t_min];
        }
        let step = (self.t_max - self.t_min) / (self.samples - 1) as f64;
        (0..self.samples)
            .map(|k| {
                if k + 1 == self.samples {
                    self.t_max
                } else {
                    self.t_min + step * k as f64
                }
            })
            .collect()
    }

    fn operator(&self) -> Result<ModalOperator> {
        ModalOperator::new(self.length, self.bc, self.modes)
    }
}

fn read_overrides(path: &Path) -> Result<Overrides> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Exit status for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_conditioning() {
        return EXIT_CONDITIONING;
    }
    match err.root() {
        Error::Invariant(_) | Error::NonMonotoneCost { .. } => EXIT_INVARIANT,
        _ => EXIT_CONFIG,
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Flag(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Flag(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) => json!(v),
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Flag(b) => json!(b),
        }
    }
}

fn num(v: f64) -> Cell {
    Cell::Num(v)
}

fn int(v: usize) -> Cell {
    Cell::Int(v as i64)
}

/// Writes the header, streams rows and collects the summary.
struct Emitter<'a> {
    out: &'a mut dyn Write,
    format: OutputFormat,
    header: Map<String, Value>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
    summary: Map<String, Value>,
    failures: Vec<String>,
}

impl<'a> Emitter<'a> {
    fn new(out: &'a mut dyn Write, cfg: &ExperimentConfig) -> Result<Self> {
        let mut header = Map::new();
        header.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        header.insert("config".into(), serde_json::to_value(cfg)?);
        if cfg.timestamp {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            header.insert("timestamp".into(), json!(secs));
        }
        if cfg.format == OutputFormat::Csv {
            writeln!(out, "# conscontrol {}", env!("CARGO_PKG_VERSION"))?;
            writeln!(out, "# config {}", serde_json::to_string(cfg)?)?;
            if let Some(ts) = header.get("timestamp") {
                writeln!(out, "# timestamp {ts}")?;
            }
            out.flush()?;
        }
        Ok(Self {
            out,
            format: cfg.format,
            header,
            columns: Vec::new(),
            rows: Vec::new(),
            summary: Map::new(),
            failures: Vec::new(),
        })
    }

    fn columns(&mut self, columns: &[&'static str]) -> Result<()> {
        self.columns = columns.to_vec();
        if self.format == OutputFormat::Csv {
            writeln!(self.out, "{}", columns.join(","))?;
            self.out.flush()?;
        }
        Ok(())
    }

    fn row(&mut self, row: Vec<Cell>) -> Result<()> {
        debug_assert_eq!(row.len(), self.columns.len());
        if self.format == OutputFormat::Csv {
            let line: Vec<String> = row.iter().map(Cell::csv).collect();
            writeln!(self.out, "{}", line.join(","))?;
            self.out.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    /// Summary entry; a `# key k=v ...` line in CSV.
    fn summary(&mut self, key: &str, fields: &[(&str, Cell)]) -> Result<()> {
        if self.format == OutputFormat::Csv {
            let parts: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={}", v.csv())).collect();
            writeln!(self.out, "# {key} {}", parts.join(" "))?;
            self.out.flush()?;
        }
        let obj: Map<String, Value> = fields.iter().map(|(k, v)| (k.to_string(), v.json())).collect();
        self.summary.insert(key.into(), Value::Object(obj));
        Ok(())
    }

    fn fail(&mut self, msg: String) {
        self.failures.push(msg);
    }

    fn finish(self, error: Option<&Error>) -> Result<Vec<String>> {
        match self.format {
            OutputFormat::Csv => {
                if let Some(e) = error {
                    writeln!(self.out, "# error {e}")?;
                }
                for f in &self.failures {
                    writeln!(self.out, "# violation {f}")?;
                }
            }
            OutputFormat::Json => {
                let mut doc = self.header;
                doc.insert("columns".into(), json!(self.columns));
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        Value::Object(
                            self.columns
                                .iter()
                                .zip(r)
                                .map(|(c, v)| (c.to_string(), v.json()))
                                .collect(),
                        )
                    })
                    .collect();
                doc.insert("rows".into(), Value::Array(rows));
                doc.insert("summary".into(), Value::Object(self.summary));
                doc.insert("violations".into(), json!(self.failures));
                if let Some(e) = error {
                    doc.insert("error".into(), json!(e.to_string()));
                }
                serde_json::to_writer_pretty(&mut *self.out, &Value::Object(doc))?;
                writeln!(self.out)?;
            }
        }
        self.out.flush()?;
        Ok(self.failures)
    }
}

/// Runs a validated config, writing to `out`. Returns the invariant
/// violations found; an `Err` means the run could not complete.
pub fn run(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<Vec<String>> {
    let mut em = Emitter::new(out, cfg)?;
    let outcome = match cfg.command {
        Command::Costcurve => costcurve(cfg, &mut em),
        Command::Resolvent => resolvent(cfg, &mut em),
        Command::Smoothing => smoothing(cfg, &mut em),
        Command::Transmute => transmute(cfg, &mut em),
        Command::Tensor => tensor(cfg, &mut em),
        Command::Selftest => selftest(cfg, &mut em),
    };
    match outcome {
        Ok(()) => em.finish(None),
        Err(e) => {
            em.finish(Some(&e))?;
            Err(e)
        }
    }
}

/// Parses nothing; resolves `cli`, runs it and reports on stderr. Returns the exit code.
pub fn execute(cli: &Cli) -> i32 {
    let cfg = match ExperimentConfig::from_cli(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = match &cfg.out {
        Some(path) => match File::create(path) {
            Ok(f) => run(&cfg, &mut BufWriter::new(f)),
            Err(e) => {
                eprintln!("error: cannot create {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        },
        None => run(&cfg, &mut io::stdout().lock()),
    };
    match result {
        Ok(v) if v.is_empty() => EXIT_OK,
        Ok(v) => {
            for f in v {
                eprintln!("invariant violated: {f}");
            }
            EXIT_INVARIANT
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn random_state(rng: &mut ChaCha8Rng, modes: usize) -> ModalState {
    let c: Vec<f64> = (0..modes).map(|_| rng.random_range(-1.0..1.0)).collect();
    ModalState::from_real(&c, -1)
}

fn costcurve(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let op = cfg.operator()?;
    em.columns(&["T", "kappa", "log_kappa", "T_log_kappa", "cond"])?;
    let results: Vec<_> = cfg
        .horizons()
        .par_iter()
        .map(|&t| cost_sample(&op, SystemKind::Schrodinger, 1, t))
        .collect();
    let mut samples = Vec::with_capacity(results.len());
    for r in results {
        let s = r?;
        let lk = s.kappa.ln();
        em.row(vec![
            num(s.horizon),
            num(s.kappa),
            num(lk),
            num(s.horizon * lk),
            num(s.condition),
        ])?;
        samples.push(s);
    }
    let curve = CostCurve::from_samples(SystemKind::Schrodinger, 1, samples)?;
    let f = curve.fit;
    em.summary(
        "fit",
        &[
            ("rate", num(f.rate)),
            ("offset", num(f.offset)),
            ("rms", num(f.rms_residual)),
            (
                "window",
                Cell::Text(serde_json::to_value(f.window)?.as_str().unwrap_or_default().into()),
            ),
            ("t_lo", num(f.t_lo)),
            ("t_hi", num(f.t_hi)),
            ("used", int(f.used)),
        ],
    )
}

const RESOLVENT_SAMPLES: usize = 200;
const RESOLVENT_GRID: usize = 50;
const RESOLVENT_TOL: f64 = 1e-9;

fn resolvent(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let op = cfg.operator()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let full = lambda_grid(&op);
    let grid = thin_grid(&op, &full, RESOLVENT_GRID);
    em.columns(&[
        "T",
        "kappa",
        "K",
        "M",
        "m",
        "grid_M",
        "max_violation",
        "exact_violation",
        "predicted_cost",
        "bump_p",
    ])?;
    for t in cfg.horizons() {
        let g = schrodinger_gramian(&op, t, 1)?;
        let kappa = g.cost()?;
        let (big_m, m) = constants_from_observability(kappa, g.lambda_max(), t)?;
        let report = verify_resolvent(&op, 1, big_m, m, &grid, RESOLVENT_SAMPLES, &mut rng);
        if !report.holds(RESOLVENT_TOL) {
            em.fail(format!(
                "resolvent estimate fails at T = {t}, lambda = {}",
                report.worst_lambda
            ));
        }
        let sharp = grid_m(&op, 1, m, &full);
        let (pred, p) = match best_bump(sharp, m, t) {
            Ok((b, c)) => (c, b.p as i64),
            Err(Error::BelowThreshold { .. }) => (f64::NAN, 0),
            Err(e) => return Err(e),
        };
        if pred < kappa {
            em.fail(format!("predicted cost {pred} below kappa {kappa} at T = {t}"));
        }
        em.row(vec![
            num(t),
            num(kappa),
            num(g.lambda_max()),
            num(big_m),
            num(m),
            num(sharp),
            num(report.max_violation),
            num(report.exact_violation),
            num(pred),
            Cell::Int(p),
        ])?;
    }
    Ok(())
}

const SMOOTHING_TOL: f64 = 1e-10;

fn smoothing_parameter(cfg: &ExperimentConfig, op: &ModalOperator) -> f64 {
    cfg.d
        .unwrap_or_else(|| op.eigenvalues()[op.modes() / 2] * cfg.t_min * cfg.t_min)
}

fn smoothing(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let op = cfg.operator()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = random_state(&mut rng, op.modes());
    let d = smoothing_parameter(cfg, &op);
    em.columns(&["T", "threshold", "high_modes", "kappa", "energy", "max_high_terminal"])?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for t in cfg.horizons() {
        let s = smoothing_control(&op, t, d, &x, schrodinger_grid(&op, t))?;
        let hi = s
            .high_modes
            .iter()
            .map(|&n| s.terminal.coeffs[n].norm())
            .fold(0.0, f64::max);
        if hi > SMOOTHING_TOL {
            em.fail(format!("high modes not steered at T = {t}: {hi:e}"));
        }
        if s.kappa > 0.0 {
            xs.push((1.0 / t).ln());
            ys.push(s.kappa.ln());
        }
        em.row(vec![
            num(t),
            num(s.threshold),
            int(s.high_modes.len()),
            num(s.kappa),
            num(s.energy),
            num(hi),
        ])?;
    }
    let mut fields = vec![("d", num(d))];
    if xs.len() >= 2 {
        let (slope, offset, rms) = least_squares_line(&xs, &ys)?;
        fields.extend([("slope", num(slope)), ("offset", num(offset)), ("rms", num(rms))]);
    }
    em.summary("fit", &fields)
}

const PIPELINE_IDENTITY_TOL: f64 = 1e-4;
const PIPELINE_TERMINAL_TOL: f64 = 1e-3;

fn transmute(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let op = cfg.operator()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = random_state(&mut rng, op.modes());
    let pc = PipelineConfig {
        eps_split: cfg.eps_split,
        kernel_length: cfg.kernel_length,
        d: cfg.d,
        ..PipelineConfig::default()
    };
    em.columns(&[
        "T",
        "total_energy",
        "cost_ratio",
        "T_log_cost_ratio",
        "terminal_residual",
        "identity_error",
        "smoothing_energy",
        "transmuted_energy",
        "kernel_cost",
        "kernel_modes",
        "wave_h1_cost",
    ])?;
    for t in cfg.horizons() {
        let r = fast_control_pipeline(&op, t, &x, &pc)?.report;
        if r.identity_error > PIPELINE_IDENTITY_TOL {
            em.fail(format!(
                "transmutation identity error {:e} at T = {t}",
                r.identity_error
            ));
        }
        if r.terminal_residual > PIPELINE_TERMINAL_TOL {
            em.fail(format!("terminal residual {:e} at T = {t}", r.terminal_residual));
        }
        em.row(vec![
            num(t),
            num(r.total_energy),
            num(r.cost_ratio),
            num(t * r.cost_ratio.ln()),
            num(r.terminal_residual),
            num(r.identity_error),
            num(r.smoothing_energy),
            num(r.transmuted_energy),
            num(r.kernel_cost),
            int(r.kernel_modes),
            num(r.wave_h1_cost),
        ])?;
    }
    Ok(())
}

const TENSOR_TOL: f64 = 1e-10;

fn tensor(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let op = cfg.operator()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = MatrixSystem::from_modal(&op, 1);
    let aux = random_hermitian(&mut rng, TENSOR_AUX_DIM);
    em.columns(&[
        "T",
        "n",
        "m",
        "kappa_base",
        "kappa_tensor",
        "rel_diff",
        "rel_diff_admissibility",
    ])?;
    for t in cfg.horizons() {
        let r = verify_cost_invariance(&base, &aux, t)?;
        if !(r.rel_diff <= TENSOR_TOL) {
            em.fail(format!("tensor cost differs by {:e} at T = {t}", r.rel_diff));
        }
        em.row(vec![
            num(t),
            int(r.n),
            int(r.m),
            num(r.kappa_base),
            num(r.kappa_tensor),
            num(r.rel_diff),
            num(r.rel_diff_admissibility),
        ])?;
    }
    Ok(())
}

struct Check {
    name: &'static str,
    value: f64,
    bound: f64,
    /// `true` when the value must stay below the bound.
    upper: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, bound: f64) -> Self {
        Self {
            name,
            value,
            bound,
            upper: true,
        }
    }

    fn above(name: &'static str, value: f64, bound: f64) -> Self {
        Self {
            name,
            value,
            bound,
            upper: false,
        }
    }

    fn pass(&self) -> bool {
        if self.upper {
            self.value <= self.bound
        } else {
            self.value >= self.bound
        }
    }
}

fn selftest_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let op8 = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, 8)?;

    let x = random_state(&mut rng, 8);
    let g = schrodinger_gramian(&op8, 0.5, 1)?;
    let hum = minimal_norm_control(&g, &op8, &x, schrodinger_grid(&op8, 0.5))?;
    let end = duhamel_schrodinger(&op8, &x, &hum.signal)?;
    checks.push(Check::below(
        "hum_terminal",
        op8.sobolev_norm(&end) / op8.sobolev_norm(&x),
        1e-8,
    ));

    let op16 = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, 16)?;
    let ts: Vec<f64> = (0..7).map(|k| 0.2 + 0.05 * k as f64).collect();
    let curve = crate::gramian::cost_curve(&op16, SystemKind::Schrodinger, 1, &ts)?;
    checks.push(Check::above("cost_rate_low", curve.fit.rate, 0.125));
    checks.push(Check::below("cost_rate_high", curve.fit.rate, 8.0));

    let op4 = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, 4)?;
    let g4 = schrodinger_gramian(&op4, 1.0, 1)?;
    let kappa4 = g4.cost()?;
    let (big_m, m) = constants_from_observability(kappa4, g4.lambda_max(), 1.0)?;
    let full = lambda_grid(&op4);
    let r = verify_resolvent(&op4, 1, big_m, m, &thin_grid(&op4, &full, 20), 20, &mut rng);
    checks.push(Check::below(
        "resolvent_forward",
        r.max_violation.max(r.exact_violation),
        1e-9,
    ));
    let t_conv = 2.0;
    let kappa_conv = schrodinger_gramian(&op4, t_conv, 1)?.cost()?;
    let (_, pred) = best_bump(grid_m(&op4, 1, m, &full), m, t_conv)?;
    checks.push(Check::above("resolvent_converse", pred / kappa_conv, 1.0));

    let base = random_diagonal_system(&mut rng, 4, 4.0 * PI)?;
    let aux = random_hermitian(&mut rng, 3);
    let inv = verify_cost_invariance(&base, &aux, 1.0)?;
    checks.push(Check::below("tensor_invariance", inv.rel_diff, 1e-10));

    let (lk, tk, nk) = (2.2, 0.8, 12);
    let kernel = fundamental_kernel(lk, tk, nk, kernel_grid(lk, tk, nk)?)?;
    checks.push(Check::below(
        "kernel_terminal",
        kernel.terminal_max_coefficient(),
        1e-10,
    ));
    checks.push(Check::below("kernel_odd_part", kernel.odd_part(), 0.0));
    checks.push(Check::below(
        "kernel_cost_scaling",
        kernel.cost().ln() * tk / (lk * lk),
        16.0,
    ));

    let mut x = random_state(&mut rng, 8);
    for (n, a) in x.coeffs.iter_mut().enumerate() {
        *a /= (n + 1) as f64;
    }
    let out = fast_control_pipeline(&op8, 0.8, &x, &PipelineConfig::default())?;
    checks.push(Check::below("transmutation_identity", out.report.identity_error, 1e-4));
    checks.push(Check::below("pipeline_terminal", out.report.terminal_residual, 1e-3));

    let x = random_state(&mut rng, 16);
    let d = op16.eigenvalues()[8] * 0.04;
    let (mut xs, mut ys, mut hi) = (Vec::new(), Vec::new(), 0.0f64);
    for t in [0.2, 0.4, 0.6, 0.8, 1.0] {
        let s = smoothing_control(&op16, t, d, &x, schrodinger_grid(&op16, t))?;
        hi = s
            .high_modes
            .iter()
            .map(|&n| s.terminal.coeffs[n].norm())
            .fold(hi, f64::max);
        xs.push((1.0 / t).ln());
        ys.push(s.kappa.ln());
    }
    checks.push(Check::below("smoothing_high_terminal", hi, 1e-10));
    checks.push(Check::below("smoothing_slope", least_squares_line(&xs, &ys)?.0, 3.0));

    checks.push(Check::above("bump_family", BumpFunction::new(1)?.c_eps(), 0.0));
    Ok(checks)
}

fn selftest(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    em.columns(&["check", "value", "bound", "pass"])?;
    for c in selftest_checks(cfg.seed)? {
        if !c.pass() {
            em.fail(format!("{} = {:e} (bound {:e})", c.name, c.value, c.bound));
        }
        em.row(vec![
            Cell::Text(c.name.into()),
            num(c.value),
            num(c.bound),
            Cell::Flag(c.pass()),
        ])?;
    }
    Ok(())
}
