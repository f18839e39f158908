//! Command-line front end of the `eprsim` binary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::calibration::{self, Calibration, DetectorModel, Signals};
use crate::config::{RunConfig, CONFIG_ENV};
use crate::criteria::{analyze, AnalysisOptions, BlockSpec, CriteriaReport, CriteriaValues, Direction, Policy};
use crate::error::{Error, Result};
use crate::experiment::{Dataset, Experiment};
use crate::io::{read_records, write_dataset, write_report_csv, write_sweep_csv, SweepRow};
use crate::plot::{LinePlot, Series};
use crate::pulses::{self, DriveScheme};

#[derive(Debug, Parser)]
#[command(name = "eprsim", version, about = "Simulate and analyze EPR correlations between split spin-squeezed condensates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample shot records for a configuration.
    Simulate(SimulateArgs),
    /// Evaluate the criteria on a record file.
    Analyze(AnalyzeArgs),
    /// Simulate and analyze over a list of B rotation angles.
    SweepTheta(SweepArgs),
    /// Fit or simulate detector calibration data.
    #[command(subcommand)]
    Calibrate(CalibrateCommand),
    /// Off-resonant transfer report for a drive scheme.
    PulseCheck(PulseArgs),
    /// Render a sweep CSV as an SVG line plot.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration (JSON). Falls back to $EPRSIM_CONFIG, then built-in defaults.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output record file; stdout when omitted and the config names none.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_b: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub records: PathBuf,
    #[arg(long)]
    pub no_jitter_correction: bool,
    /// Headline values from all shots pooled instead of the block average.
    #[arg(long)]
    pub single_block: bool,
    /// Report the EPR criterion of one direction (A->B or B->A).
    #[arg(long)]
    pub direction: Option<Direction>,
    /// Analyze records from different configurations together.
    #[arg(long)]
    pub force: bool,
    /// Calibration JSON used to turn raw signals into atom numbers.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub block_z: usize,
    #[arg(long, default_value_t = 100)]
    pub block_y: usize,
    #[arg(long, default_value_t = 20)]
    pub block_x: usize,
    #[arg(long, default_value_t = 400)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    pub bootstrap_seed: u64,
    /// Report JSON; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Per-block CSV summary.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Comma-separated angles in radians; defaults to the config list.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub thetas: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sweep CSV; stdout when omitted and the config names none.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CalibrateCommand {
    /// Fit detectivities and the conversion factor.
    Fit(FitArgs),
    /// Write synthetic scan and superposition signals for a detector model.
    Simulate(CalSimArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Rabi-scan signals CSV (s1A,s2A,s1B,s2B).
    #[arg(long)]
    pub scan: PathBuf,
    /// Equal-superposition signals CSV.
    #[arg(long)]
    pub css: PathBuf,
    /// Starting guess for the atom number.
    #[arg(long)]
    pub n_nominal: f64,
    /// Readout noise per state, in atoms.
    #[arg(long, default_value_t = 0.0)]
    pub readout_sigma: f64,
    /// Fit both calibrations together instead of in sequence.
    #[arg(long)]
    pub joint: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalSimArgs {
    /// Detector model JSON.
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long, default_value_t = 1400)]
    pub n_atoms: u64,
    #[arg(long, default_value_t = 500)]
    pub scan_points: usize,
    #[arg(long, default_value_t = 1000)]
    pub css_shots: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub scan_out: PathBuf,
    #[arg(long)]
    pub css_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PulseArgs {
    /// Drive scheme JSON.
    #[arg(required_unless_present = "preset")]
    pub scheme: Option<PathBuf>,
    /// Built-in scheme: splitting or a-rotation.
    #[arg(long, conflicts_with = "scheme")]
    pub preset: Option<String>,
    /// Spurious-to-desired Rabi ratio for the a-rotation preset.
    #[arg(long, default_value_t = 1.0)]
    pub b_rabi_ratio: f64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also write the scheme used as JSON.
    #[arg(long)]
    pub dump_scheme: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Sweep CSV written by sweep-theta.
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

/// Process exit status for an error: 2 user error, 3 I/O, 4 internal.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 3,
        Error::NoConvergence(_) => 4,
        _ => 2,
    }
}

fn resolve_config(arg: &ConfigArg) -> Result<RunConfig> {
    match arg.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
        Some(path) => RunConfig::load(&path),
        None => Ok(RunConfig::default()),
    }
}

/// Writes via a temporary sibling so failures leave no partial file.
fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(std::fs::rename(&tmp, path)?),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn emit(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => write_file(p, |w| body(w)),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

/// Appends a timestamped line to `<path>.log`; outputs themselves carry no
/// timestamps so reruns stay byte-identical.
fn log_sidecar(path: Option<&Path>, message: &str) {
    let Some(path) = path else { return };
    let mut log = path.as_os_str().to_owned();
    log.push(".log");
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let args: Vec<String> = std::env::args().collect();
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(log) {
        let _ = writeln!(f, "{ts} {} :: {message}", args.join(" "));
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn read_signals(path: &Path) -> Result<Vec<Signals>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<(f64, f64, f64, f64)>().enumerate() {
        let (a, b, c, d) = row.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        out.push([a, b, c, d]);
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line: 0, message: format!("{other:?}") },
    }
}

pub fn write_signals<W: Write>(mut w: W, signals: &[Signals]) -> Result<()> {
    writeln!(w, "s1A,s2A,s1B,s2B")?;
    for s in signals {
        writeln!(w, "{},{},{},{}", s[0], s[1], s[2], s[3])?;
    }
    Ok(())
}

/// Output of `analyze`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisOutput {
    /// `block_average` or `single_block`.
    pub mode: String,
    pub values: CriteriaValues,
    pub errors: Option<CriteriaValues>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epr_se: Option<f64>,
    pub report: CriteriaReport,
}

pub fn analysis_output(report: CriteriaReport, single_block: bool, direction: Option<Direction>) -> AnalysisOutput {
    let (mode, values, errors) = match (single_block, report.blocks.average) {
        (false, Some(avg)) => ("block_average", avg, report.errors.map(|e| e.average)),
        _ => ("single_block", report.blocks.single_block.values, report.errors.map(|e| e.single_block)),
    };
    let pick = |v: &CriteriaValues, d: Direction| match d {
        Direction::AToB => v.epr_a_to_b,
        Direction::BToA => v.epr_b_to_a,
    };
    AnalysisOutput {
        mode: mode.into(),
        values,
        errors,
        direction,
        epr: direction.map(|d| pick(&values, d)),
        epr_se: direction.and_then(|d| errors.map(|e| pick(&e, d))),
        report,
    }
}

pub fn load_dataset(path: &Path, force: bool) -> Result<Dataset> {
    let file = File::open(path)?;
    read_records(BufReader::new(file))?.into_dataset(force)
}

/// Divides each state's value by `conversion * detectivity`.
pub fn apply_calibration(dataset: &mut Dataset, cal: &Calibration) {
    let k = cal.conversion;
    let d = cal.detectivity;
    for r in &mut dataset.records {
        r.n1a /= k * d[0];
        r.n2a /= k * d[1];
        r.n1b /= k * d[2];
        r.n2b /= k * d[3];
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let mut config = resolve_config(&args.config)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(t) = args.theta_b {
        config.theta_b = t;
    }
    config.validate()?;
    let out = args.output.clone().or_else(|| config.output.records.clone());
    let dataset = Experiment::prepare(&config)?.run(config.theta_b, config.seed)?;
    emit(out.as_deref(), |w| write_dataset(w, &dataset))?;
    log_sidecar(out.as_deref(), &format!("simulate: {} records, hash {}", dataset.records.len(), dataset.header.config_hash));
    Ok(())
}

fn run_analyze(args: &AnalyzeArgs) -> Result<()> {
    let mut dataset = load_dataset(&args.records, args.force)?;
    if let Some(path) = &args.calibration {
        let cal: Calibration = read_json(path)?;
        apply_calibration(&mut dataset, &cal);
    }
    let options = AnalysisOptions {
        policy: Policy { jitter_correction: !args.no_jitter_correction },
        block_spec: BlockSpec { z: args.block_z, y: args.block_y, x: args.block_x },
        bootstrap_resamples: args.bootstrap,
        bootstrap_seed: args.bootstrap_seed,
    };
    options.block_spec.validate()?;
    let report = analyze(&dataset.records, &options)?;
    let output = analysis_output(report, args.single_block, args.direction);
    if let Some(csv) = &args.csv {
        write_file(csv, |w| write_report_csv(w, &output.report))?;
    }
    emit(args.output.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &output)?;
        writeln!(w)?;
        Ok(())
    })?;
    log_sidecar(args.output.as_deref(), &format!("analyze: {} records", dataset.records.len()));
    Ok(())
}

/// Runs the sweep for a configuration; every angle uses the same seed.
pub fn sweep(config: &RunConfig, thetas: &[f64], seed: u64) -> Result<Vec<SweepRow>> {
    if thetas.is_empty() {
        return Err(Error::InvalidArgument("theta list is empty".into()));
    }
    let experiment = Experiment::prepare(config)?;
    let options = AnalysisOptions {
        block_spec: config.block,
        bootstrap_resamples: config.bootstrap_resamples,
        ..AnalysisOptions::default()
    };
    thetas
        .iter()
        .map(|&theta| {
            let records = experiment.sample(theta, seed)?;
            let report = analyze(&records, &options)?;
            let out = analysis_output(report, false, None);
            Ok(SweepRow { theta, values: out.values, errors: out.errors.unwrap_or_default() })
        })
        .collect()
}

pub fn sweep_plot(rows: &[SweepRow]) -> LinePlot {
    let series = |label: &str, f: fn(&CriteriaValues) -> f64| Series {
        label: label.into(),
        points: rows.iter().map(|r| (r.theta, f(&r.values))).collect(),
        errors: Some(rows.iter().map(|r| f(&r.errors)).collect()),
    };
    LinePlot {
        title: "Criteria versus rotation of B".into(),
        x_label: "theta (rad)".into(),
        y_label: "criterion".into(),
        series: vec![
            series("E_Ent", |v| v.ent),
            series("E_EPR B->A", |v| v.epr_b_to_a),
            series("E_Hei A", |v| v.hei_a),
        ],
        reference_y: Some(1.0),
    }
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let config = resolve_config(&args.config)?;
    let thetas = args.thetas.clone().unwrap_or_else(|| config.thetas.clone());
    let rows = sweep(&config, &thetas, args.seed.unwrap_or(config.seed))?;
    let csv = args.csv.clone().or_else(|| config.output.csv.clone());
    let svg = args.svg.clone().or_else(|| config.output.svg.clone());
    if let Some(path) = &svg {
        let text = sweep_plot(&rows).to_svg();
        write_file(path, |w| Ok(w.write_all(text.as_bytes())?))?;
    }
    emit(csv.as_deref(), |w| write_sweep_csv(w, &rows))?;
    log_sidecar(csv.as_deref(), &format!("sweep-theta: {} angles", rows.len()));
    Ok(())
}

/// Reads a sweep CSV back into rows (values and errors of the plotted columns).
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    #[derive(Deserialize)]
    struct Row {
        theta: f64,
        ent: f64,
        ent_se: f64,
        epr_b_to_a: f64,
        epr_b_to_a_se: f64,
        epr_a_to_b: f64,
        epr_a_to_b_se: f64,
        hei_a: f64,
        hei_a_se: f64,
        hei_b: f64,
        hei_b_se: f64,
        corr_z: f64,
        corr_y: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let mut rows = Vec::new();
    for (i, r) in reader.deserialize::<Row>().enumerate() {
        let r = r.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        rows.push(SweepRow {
            theta: r.theta,
            values: CriteriaValues {
                ent: r.ent,
                epr_b_to_a: r.epr_b_to_a,
                epr_a_to_b: r.epr_a_to_b,
                hei_a: r.hei_a,
                hei_b: r.hei_b,
                corr_z: r.corr_z,
                corr_y: r.corr_y,
                ..CriteriaValues::default()
            },
            errors: CriteriaValues {
                ent: r.ent_se,
                epr_b_to_a: r.epr_b_to_a_se,
                epr_a_to_b: r.epr_a_to_b_se,
                hei_a: r.hei_a_se,
                hei_b: r.hei_b_se,
                ..CriteriaValues::default()
            },
        });
    }
    if rows.is_empty() {
        return Err(Error::IncompleteDataset(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

fn run_calibrate(cmd: &CalibrateCommand) -> Result<()> {
    match cmd {
        CalibrateCommand::Fit(args) => {
            let scan = read_signals(&args.scan)?;
            let css = read_signals(&args.css)?;
            let cal = if args.joint {
                calibration::calibrate_joint(&scan, &css, args.n_nominal, args.readout_sigma)?
            } else {
                calibration::calibrate(&scan, &css, args.n_nominal, args.readout_sigma)?
            };
            emit(args.output.as_deref(), |w| {
                serde_json::to_writer_pretty(&mut *w, &cal)?;
                writeln!(w)?;
                Ok(())
            })?;
            log_sidecar(args.output.as_deref(), "calibrate fit");
        }
        CalibrateCommand::Simulate(args) => {
            let det: DetectorModel = read_json(&args.detector)?;
            det.validate()?;
            // distinct seeds for counts and readout noise of each data set
            let scan_counts = calibration::rabi_scan_counts(args.n_atoms, args.scan_points, args.seed)?;
            let scan = calibration::simulate_raw_signals(&scan_counts, &det, args.seed.wrapping_add(1))?;
            let css_counts = calibration::css_counts(args.n_atoms, args.css_shots, args.seed.wrapping_add(2))?;
            let css = calibration::simulate_raw_signals(&css_counts, &det, args.seed.wrapping_add(3))?;
            write_file(&args.scan_out, |w| write_signals(w, &scan))?;
            write_file(&args.css_out, |w| write_signals(w, &css))?;
        }
    }
    Ok(())
}

pub fn preset_scheme(name: &str, b_rabi_ratio: f64) -> Result<DriveScheme> {
    match name {
        "splitting" => pulses::splitting_scheme(2200.0, 9000.0, 70e-6),
        "a-rotation" => pulses::a_rotation_scheme(960e-6, 10_000.0, b_rabi_ratio),
        other => Err(Error::InvalidArgument(format!("unknown preset {other:?}; use splitting or a-rotation"))),
    }
}

fn run_pulse_check(args: &PulseArgs) -> Result<()> {
    let scheme = match (&args.scheme, &args.preset) {
        (Some(path), _) => read_json::<DriveScheme>(path)?,
        (None, Some(name)) => preset_scheme(name, args.b_rabi_ratio)?,
        (None, None) => return Err(Error::InvalidArgument("give a scheme file or --preset".into())),
    };
    scheme.validate()?;
    if let Some(path) = &args.dump_scheme {
        write_file(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &scheme)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    let rows = pulses::selectivity_report(&scheme)?;
    emit(args.output.as_deref(), |w| pulses::write_selectivity_csv(w, &rows))?;
    log_sidecar(args.output.as_deref(), "pulse-check");
    Ok(())
}

fn run_plot(args: &PlotArgs) -> Result<()> {
    let rows = read_sweep_csv(&args.input)?;
    let text = sweep_plot(&rows).to_svg();
    write_file(&args.output, |w| Ok(w.write_all(text.as_bytes())?))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Analyze(a) => run_analyze(a),
        Command::SweepTheta(a) => run_sweep(a),
        Command::Calibrate(c) => run_calibrate(c),
        Command::PulseCheck(a) => run_pulse_check(a),
        Command::Plot(a) => run_plot(a),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("eprsim: {e}");
            exit_code(&e)
        }
        Err(_) => 4,
    }
}
