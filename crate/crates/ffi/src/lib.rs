//! C ABI over `eprsim-core`.
//!
//! Every function returns an [`EprsimStatus`]; on failure the message is
//! available from [`eprsim_last_error_message`] on the same thread. Objects
//! are opaque handles released with their `_free` function. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`eprsim_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use eprsim_core::calibration::{self, Signals};
use eprsim_core::config::RunConfig;
use eprsim_core::criteria::{analyze, AnalysisOptions, BlockSpec, CriteriaReport, CriteriaValues, Policy};
use eprsim_core::experiment::{Dataset, Experiment};
use eprsim_core::io::{read_records, write_dataset};
use eprsim_core::pulses::{self, DriveScheme};
use eprsim_core::sampler::{Basis, ShotRecord};
use eprsim_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EprsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Parse = 4,
    Io = 5,
    IncompleteDataset = 6,
    UndefinedValue = 7,
    SizeLimit = 8,
    Calibration = 9,
    Integration = 10,
    NoConvergence = 11,
    Internal = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EprsimBasis {
    X = 0,
    MinusX = 1,
    Y = 2,
    Z = 3,
}

impl From<Basis> for EprsimBasis {
    fn from(b: Basis) -> Self {
        match b {
            Basis::X => EprsimBasis::X,
            Basis::MinusX => EprsimBasis::MinusX,
            Basis::Y => EprsimBasis::Y,
            Basis::Z => EprsimBasis::Z,
        }
    }
}

/// Run configuration handle.
pub struct EprsimConfig(RunConfig);

/// Shot-record dataset handle.
pub struct EprsimDataset(Dataset);

/// One shot. Counts are atom numbers per state.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EprsimShot {
    pub shot_id: u64,
    pub n1a: f64,
    pub n2a: f64,
    pub n1b: f64,
    pub n2b: f64,
    pub basis_a: EprsimBasis,
    pub basis_b: EprsimBasis,
    pub theta_b: f64,
    pub delta_t_s: f64,
    pub seed: u64,
}

impl From<&ShotRecord> for EprsimShot {
    fn from(r: &ShotRecord) -> Self {
        Self {
            shot_id: r.shot_id,
            n1a: r.n1a,
            n2a: r.n2a,
            n1b: r.n1b,
            n2b: r.n2b,
            basis_a: r.basis_a.into(),
            basis_b: r.basis_b.into(),
            theta_b: r.theta_b,
            delta_t_s: r.delta_t_s,
            seed: r.seed,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EprsimAnalysisOptions {
    pub jitter_correction: bool,
    pub block_z: usize,
    pub block_y: usize,
    pub block_x: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl From<EprsimAnalysisOptions> for AnalysisOptions {
    fn from(o: EprsimAnalysisOptions) -> Self {
        AnalysisOptions {
            policy: Policy { jitter_correction: o.jitter_correction },
            block_spec: BlockSpec { z: o.block_z, y: o.block_y, x: o.block_x },
            bootstrap_resamples: o.bootstrap_resamples,
            bootstrap_seed: o.bootstrap_seed,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EprsimCriteria {
    pub epr_a_to_b: f64,
    pub epr_b_to_a: f64,
    pub ent: f64,
    pub ent_reused_gains: f64,
    pub hei_a: f64,
    pub hei_b: f64,
    pub sx_a: f64,
    pub sx_b: f64,
    pub corr_z: f64,
    pub corr_y: f64,
}

impl From<CriteriaValues> for EprsimCriteria {
    fn from(v: CriteriaValues) -> Self {
        Self {
            epr_a_to_b: v.epr_a_to_b,
            epr_b_to_a: v.epr_b_to_a,
            ent: v.ent,
            ent_reused_gains: v.ent_reused_gains,
            hei_a: v.hei_a,
            hei_b: v.hei_b,
            sx_a: v.sx_a,
            sx_b: v.sx_b,
            corr_z: v.corr_z,
            corr_y: v.corr_y,
        }
    }
}

/// Headline numbers of an analysis. Without a complete block `has_average`
/// is false and the average fields are zero; without bootstrap errors the
/// error fields are zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EprsimAnalysis {
    pub n_blocks: usize,
    pub has_average: bool,
    pub average: EprsimCriteria,
    pub average_se: EprsimCriteria,
    pub single_block: EprsimCriteria,
    pub single_block_se: EprsimCriteria,
}

impl From<&CriteriaReport> for EprsimAnalysis {
    fn from(r: &CriteriaReport) -> Self {
        let errors = r.errors.as_ref();
        Self {
            n_blocks: r.blocks.n_blocks,
            has_average: r.blocks.average.is_some(),
            average: r.blocks.average.map(Into::into).unwrap_or_default(),
            average_se: errors.map(|e| e.average.into()).unwrap_or_default(),
            single_block: r.blocks.single_block.values.into(),
            single_block_se: errors.map(|e| e.single_block.into()).unwrap_or_default(),
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EprsimCalibration {
    pub conversion: f64,
    pub detectivity: [f64; 4],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(EprsimStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::Model(_) => EprsimStatus::InvalidArgument,
            Error::UndefinedValue(_) => EprsimStatus::UndefinedValue,
            Error::SizeLimit { .. } => EprsimStatus::SizeLimit,
            Error::IncompleteDataset(_) => EprsimStatus::IncompleteDataset,
            Error::Calibration(_) => EprsimStatus::Calibration,
            Error::Integration(_) => EprsimStatus::Integration,
            Error::NoConvergence(_) => EprsimStatus::NoConvergence,
            Error::Parse { .. } | Error::Json(_) => EprsimStatus::Parse,
            Error::Config(_) => EprsimStatus::Config,
            Error::Io(_) => EprsimStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(EprsimStatus::Io, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EprsimStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EprsimStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EprsimStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {msg}"));
            EprsimStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EprsimStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(EprsimStatus::Internal, "string contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn eprsim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn eprsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn eprsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eprsim_config_default(out: *mut *mut EprsimConfig) -> EprsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(EprsimConfig(RunConfig::default())));
        Ok(())
    })
}

/// Parses a JSON configuration; missing fields take their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eprsim_config_from_json(json: *const c_char, out: *mut *mut EprsimConfig) -> EprsimStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(EprsimConfig(RunConfig::from_json(text)?)));
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eprsim_config_to_json(config: *const EprsimConfig, out: *mut *mut c_char) -> EprsimStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_arg(out, "out")?;
        *out = c_string(serde_json::to_string_pretty(&cfg.0).map_err(Error::from)?)?;
        Ok(())
    })
}

/// SHA-256 of the configuration as hex.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eprsim_config_hash(config: *const EprsimConfig, out: *mut *mut c_char) -> EprsimStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_arg(out, "out")?;
        *out = c_string(cfg.0.hash())?;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eprsim_config_free(config: *mut EprsimConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Samples the configured schedule with B rotated by `theta_b` about x.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eprsim_simulate(
    config: *const EprsimConfig,
    seed: u64,
    theta_b: f64,
    out: *mut *mut EprsimDataset,
) -> EprsimStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_arg(out, "out")?;
        let dataset = Experiment::prepare(&cfg.0)?.run(theta_b, seed)?;
        *out = Box::into_raw(Box::new(EprsimDataset(dataset)));
        Ok(())
    })
}

/// Reads a line-delimited JSON record file. Files mixing configurations
/// are refused unless `force` is set.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eprsim_dataset_read(path: *const c_char, force: bool, out: *mut *mut EprsimDataset) -> EprsimStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let dataset = read_records(BufReader::new(File::open(path)?))?.into_dataset(force)?;
        *out = Box::into_raw(Box::new(EprsimDataset(dataset)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn eprsim_dataset_write(dataset: *const EprsimDataset, path: *const c_char) -> EprsimStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        write_dataset(BufWriter::new(File::create(path)?), &ds.0)?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eprsim_dataset_len(dataset: *const EprsimDataset, out: *mut usize) -> EprsimStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        *out_arg(out, "out")? = ds.0.records.len();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eprsim_dataset_shot(dataset: *const EprsimDataset, index: usize, out: *mut EprsimShot) -> EprsimStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out_arg(out, "out")?;
        let record = ds.0.records.get(index).ok_or_else(|| {
            Failure(EprsimStatus::InvalidArgument, format!("shot index {index} out of range ({} shots)", ds.0.records.len()))
        })?;
        *out = record.into();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eprsim_dataset_free(dataset: *mut EprsimDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Defaults: jitter correction on, blocks of 100 z / 100 y / 20 x shots,
/// 400 bootstrap resamples with seed 1.
#[no_mangle]
pub extern "C" fn eprsim_analysis_options_default() -> EprsimAnalysisOptions {
    let d = AnalysisOptions::default();
    EprsimAnalysisOptions {
        jitter_correction: d.policy.jitter_correction,
        block_z: d.block_spec.z,
        block_y: d.block_spec.y,
        block_x: d.block_spec.x,
        bootstrap_resamples: d.bootstrap_resamples,
        bootstrap_seed: d.bootstrap_seed,
    }
}

unsafe fn run_analysis(dataset: *const EprsimDataset, options: *const EprsimAnalysisOptions) -> Result<CriteriaReport, Failure> {
    let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
    let opts: AnalysisOptions = options.as_ref().copied().unwrap_or_else(|| eprsim_analysis_options_default()).into();
    opts.block_spec.validate()?;
    Ok(analyze(&ds.0.records, &opts)?)
}

/// Block analysis with bootstrap errors. `options` may be null for defaults.
///
/// # Safety
/// `dataset` must be a live handle, `options` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn eprsim_analyze(
    dataset: *const EprsimDataset,
    options: *const EprsimAnalysisOptions,
    out: *mut EprsimAnalysis,
) -> EprsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = (&run_analysis(dataset, options)?).into();
        Ok(())
    })
}

/// Full report, including per-block values and gains, as JSON.
///
/// # Safety
/// As for [`eprsim_analyze`].
#[no_mangle]
pub unsafe extern "C" fn eprsim_analyze_json(
    dataset: *const EprsimDataset,
    options: *const EprsimAnalysisOptions,
    out: *mut *mut c_char,
) -> EprsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let report = run_analysis(dataset, options)?;
        *out = c_string(serde_json::to_string(&report).map_err(Error::from)?)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eprsim_rabi_transfer(rabi_hz: f64, detuning_hz: f64, t_s: f64, out: *mut f64) -> EprsimStatus {
    guard(|| {
        *out_arg(out, "out")? = pulses::rabi_transfer(rabi_hz, detuning_hz, t_s)?;
        Ok(())
    })
}

unsafe fn scheme_arg(json: *const c_char) -> Result<DriveScheme, Failure> {
    let text = str_arg(json, "scheme_json")?;
    let scheme: DriveScheme = serde_json::from_str(text).map_err(Error::from)?;
    scheme.validate()?;
    Ok(scheme)
}

/// Total final population outside the levels of the desired tones.
///
/// # Safety
/// `scheme_json` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn eprsim_spurious_population(scheme_json: *const c_char, out: *mut f64) -> EprsimStatus {
    guard(|| {
        let scheme = scheme_arg(scheme_json)?;
        *out_arg(out, "out")? = pulses::spurious_population(&scheme)?;
        Ok(())
    })
}

/// Selectivity report of the undesired tones as CSV.
///
/// # Safety
/// `scheme_json` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn eprsim_pulse_report_csv(scheme_json: *const c_char, out: *mut *mut c_char) -> EprsimStatus {
    guard(|| {
        let scheme = scheme_arg(scheme_json)?;
        let out = out_arg(out, "out")?;
        let rows = pulses::selectivity_report(&scheme)?;
        let mut buf = Vec::new();
        pulses::write_selectivity_csv(&mut buf, &rows)?;
        *out = c_string(String::from_utf8(buf).map_err(|e| Failure(EprsimStatus::Internal, e.to_string()))?)?;
        Ok(())
    })
}

unsafe fn signal_rows<'a>(p: *const f64, rows: usize, what: &str) -> Result<&'a [Signals], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p.cast::<Signals>(), rows))
}

/// Fits detectivities from a Rabi scan and the conversion factor from
/// equal-superposition shots. Signals are row-major, four values per row
/// in the order 1A, 2A, 1B, 2B.
///
/// # Safety
/// `scan` must hold `4 * scan_rows` values, `css` `4 * css_rows` values,
/// and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn eprsim_calibrate(
    scan: *const f64,
    scan_rows: usize,
    css: *const f64,
    css_rows: usize,
    n_nominal: f64,
    readout_sigma_atoms: f64,
    joint: bool,
    out: *mut EprsimCalibration,
) -> EprsimStatus {
    guard(|| {
        let scan = signal_rows(scan, scan_rows, "scan")?;
        let css = signal_rows(css, css_rows, "css")?;
        let out = out_arg(out, "out")?;
        let cal = if joint {
            calibration::calibrate_joint(scan, css, n_nominal, readout_sigma_atoms)?
        } else {
            calibration::calibrate(scan, css, n_nominal, readout_sigma_atoms)?
        };
        *out = EprsimCalibration { conversion: cal.conversion, detectivity: cal.detectivity };
        Ok(())
    })
}
