//! Run configuration, snapshot and diagnostics files, run and sweep summaries.
//!
//! # Configuration format
//!
//! Configurations are TOML. Every key is optional; absent keys take the
//! defaults shown below, and unknown keys are rejected.
//!
//! ```toml
//! scheme = "explicit"          # or "entropy"
//! t_end = 100.0
//! snapshot_interval = 1.0
//! seed = 0
//! output_dir = "out"
//! snapshot_format = "csv"      # or "binary"
//!
//! [grid]
//! dim = 1
//! extent_min = 0.0
//! extent_max = 200.0
//! spacing = 0.1
//!
//! [model]
//! lambda = 1.0
//! m0 = 0.5
//!
//! [ic]
//! kind = "step"                # or "random_gaussian", "sinusoidal", "constant"
//! sigma = 5.0                  # lattice units (random_gaussian)
//! # seed = 7                   # random_gaussian; defaults to the run seed
//! # m0 = 0.5                   # random_gaussian mean; defaults to model.m0
//! u = 0.0                      # constant state
//! # m = 0.5                    # constant state; defaults to model.m0
//!
//! [explicit]
//! integrator = "rk45_adaptive" # or "rk4_fixed"
//! dt_init = 1e-3
//! rel_tol = 1e-9
//! abs_tol = 1e-12
//! dt_max = 1.0
//! box_tol = 1e-8
//! ecm_variable = "log"         # or "direct"
//!
//! [entropy]
//! tau = 0.01
//! picard_tol = 1e-10
//! picard_max_iter = 200
//! inner_m_tol = 1e-12
//! inner_m_max_iter = 200
//! linear_solver_tol = 1e-11
//! linear_max_iter = 10000
//! damping = 1.0
//! max_tau_halvings = 5
//! stabilise = true
//! entropy_constant = 1.0
//! ```
//!
//! Both scheme blocks may be present; `scheme` selects the one used by a
//! single run, and the cross-check uses both.
//!
//! # Snapshot CSV
//!
//! Header `x,u,m` (1D) or `x,y,u,m` (2D), one row per lattice point in
//! row-major order, every value written as `{:.16e}` (17 significant
//! digits, which reads back bit-exactly). File name `snap_t{time:012.4}.csv`.
//!
//! # Binary snapshot
//!
//! Little-endian: magic `ECMS`, `u32` version (1), `u32` dim, `u64` nx,
//! `u64` ny, `f64` time, then `nx * ny` values of `u` and `nx * ny` values
//! of `m` as `f64`. File name `snap_t{time:012.4}.bin`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::EntropyReport;
use crate::entropy_scheme::SchemeConfig;
use crate::error::{Error, Result};
use crate::explicit::{EcmVariable, ExplicitConfig, Integrator};
use crate::grid::{Grid, GridSpec};
use crate::ic::IcSpec;
use crate::model::{FieldPair, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    Csv,
    Binary,
}

/// Integrator settings of the explicit scheme; the horizon and snapshot
/// interval live at the top level of [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplicitBlock {
    pub integrator: Integrator,
    pub dt_init: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_max: f64,
    pub box_tol: f64,
    pub ecm_variable: EcmVariable,
}

impl Default for ExplicitBlock {
    fn default() -> Self {
        let d = ExplicitConfig::default();
        ExplicitBlock {
            integrator: d.integrator,
            dt_init: d.dt_init,
            rel_tol: d.rel_tol,
            abs_tol: d.abs_tol,
            dt_max: d.dt_max,
            box_tol: d.box_tol,
            ecm_variable: d.ecm_variable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub t_end: f64,
    pub snapshot_interval: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub snapshot_format: SnapshotFormat,
    pub grid: GridSpec,
    pub model: ModelParams,
    pub ic: IcSpec,
    pub explicit: ExplicitBlock,
    pub entropy: SchemeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: Scheme::Explicit,
            t_end: 100.0,
            snapshot_interval: 1.0,
            seed: 0,
            output_dir: PathBuf::from("out"),
            snapshot_format: SnapshotFormat::Csv,
            grid: GridSpec::default(),
            model: ModelParams::default(),
            ic: IcSpec::default(),
            explicit: ExplicitBlock::default(),
            entropy: SchemeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn explicit_config(&self) -> ExplicitConfig {
        let b = &self.explicit;
        ExplicitConfig {
            t_end: self.t_end,
            snapshot_interval: self.snapshot_interval,
            integrator: b.integrator,
            dt_init: b.dt_init,
            rel_tol: b.rel_tol,
            abs_tol: b.abs_tol,
            dt_max: b.dt_max,
            box_tol: b.box_tol,
            ecm_variable: b.ecm_variable,
        }
    }

    pub fn build_grid(&self) -> Result<Grid> {
        self.grid.build()
    }

    /// Checks every block; the entropy block only when it will be used.
    pub fn validate(&self) -> Result<()> {
        self.build_grid()?;
        self.model.validate()?;
        self.ic.validate()?;
        self.explicit_config().validate()?;
        if self.scheme == Scheme::Entropy {
            self.entropy.validate(&self.model)?;
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("configuration serialises");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }
}

/// Parses a `key=value` override; `value` is read as a TOML value, falling
/// back to a plain string.
fn parse_override(s: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{s}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty key path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{p}` is not a table")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Parses and validates a configuration from TOML text with overrides applied.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table =
        toml::from_str(text).map_err(|e| Error::Parse(format!("invalid configuration: {e}")))?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut table, &path, value)?;
    }
    let cfg: RunConfig = RunConfig::deserialize(table)
        .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, overrides).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_toml()).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn snapshot_file_name(time: f64, format: SnapshotFormat) -> String {
    let ext = match format {
        SnapshotFormat::Csv => "csv",
        SnapshotFormat::Binary => "bin",
    };
    format!("snap_t{time:012.4}.{ext}")
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `fields` at `time` as CSV into `dir` and returns the file path.
pub fn write_snapshot(fields: &FieldPair, time: f64, grid: &Grid, dir: &Path) -> Result<PathBuf> {
    fields.check_grid(grid)?;
    ensure_dir(dir)?;
    let path = dir.join(snapshot_file_name(time, SnapshotFormat::Csv));
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let header: &[&str] = if grid.dim() == 1 {
        &["x", "u", "m"]
    } else {
        &["x", "y", "u", "m"]
    };
    w.write_record(header).map_err(|e| csv_error(&path, e))?;
    let mut row = Vec::with_capacity(4);
    for k in 0..grid.len() {
        row.clear();
        for c in grid.point(k) {
            row.push(format!("{c:.16e}"));
        }
        row.push(format!("{:.16e}", fields.u[k]));
        row.push(format!("{:.16e}", fields.m[k]));
        w.write_record(&row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a CSV snapshot back as `(coordinates, fields)`.
pub fn read_snapshot(path: &Path) -> Result<(Vec<Vec<f64>>, FieldPair)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let dim = match header.iter().collect::<Vec<_>>().as_slice() {
        ["x", "u", "m"] => 1,
        ["x", "y", "u", "m"] => 2,
        other => {
            return Err(Error::Parse(format!(
                "{}: unexpected snapshot header {other:?}",
                path.display()
            )))
        }
    };
    let mut coords = Vec::new();
    let (mut u, mut m) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse(format!("{}: row {}: {e}", path.display(), line + 2)))?;
        if vals.len() != dim + 2 {
            return Err(Error::Parse(format!(
                "{}: row {} has {} columns, expected {}",
                path.display(),
                line + 2,
                vals.len(),
                dim + 2
            )));
        }
        coords.push(vals[..dim].to_vec());
        u.push(vals[dim]);
        m.push(vals[dim + 1]);
    }
    Ok((coords, FieldPair { u, m }))
}

const BINARY_MAGIC: &[u8; 4] = b"ECMS";
const BINARY_VERSION: u32 = 1;

pub fn write_snapshot_binary(
    fields: &FieldPair,
    time: f64,
    grid: &Grid,
    dir: &Path,
) -> Result<PathBuf> {
    fields.check_grid(grid)?;
    ensure_dir(dir)?;
    let path = dir.join(snapshot_file_name(time, SnapshotFormat::Binary));
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let (nx, ny) = grid.shape();
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(&path, e));
    write(BINARY_MAGIC)?;
    write(&BINARY_VERSION.to_le_bytes())?;
    write(&(grid.dim() as u32).to_le_bytes())?;
    write(&(nx as u64).to_le_bytes())?;
    write(&(ny as u64).to_le_bytes())?;
    write(&time.to_le_bytes())?;
    for v in fields.u.iter().chain(&fields.m) {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a binary snapshot as `(dim, (nx, ny), time, fields)`.
pub fn read_snapshot_binary(path: &Path) -> Result<(usize, (usize, usize), f64, FieldPair)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse(format!("{}: {msg}", path.display()));
    if bytes.len() < 36 || &bytes[..4] != BINARY_MAGIC {
        return Err(bad("not a binary snapshot"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(4) != BINARY_VERSION {
        return Err(bad("unsupported binary snapshot version"));
    }
    let dim = u32_at(8) as usize;
    let (nx, ny) = (u64_at(12) as usize, u64_at(20) as usize);
    let time = f64::from_bits(u64_at(28));
    let n = nx * ny;
    if bytes.len() != 36 + 16 * n {
        return Err(bad("truncated binary snapshot"));
    }
    let vals: Vec<f64> = bytes[36..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let fields = FieldPair {
        u: vals[..n].to_vec(),
        m: vals[n..].to_vec(),
    };
    Ok((dim, (nx, ny), time, fields))
}

/// Streaming writer for the diagnostics CSV (one [`EntropyReport`] per row).
pub struct DiagnosticsWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            ensure_dir(parent)?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(DiagnosticsWriter {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(BufWriter::new(file)),
        })
    }

    pub fn write(&mut self, report: &EntropyReport) -> Result<()> {
        self.inner
            .serialize(report)
            .map_err(|e| csv_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<EntropyReport>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(BufReader::new(file))
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Fitted front speed of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontSummary {
    pub fitted_speed: f64,
    pub residual: f64,
    pub window: (f64, f64),
    pub analytic_speed: f64,
    pub final_position: f64,
    /// Front displacement between the first and last snapshot.
    pub displacement: f64,
}

/// Summary written next to the snapshots of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub scheme: Scheme,
    pub lambda: f64,
    pub m0: f64,
    pub t_end: f64,
    pub snapshots: usize,
    pub steps: usize,
    pub min_u: f64,
    pub min_m: f64,
    pub max_rho: f64,
    /// `None` when no front could be tracked.
    pub front: Option<FrontSummary>,
    pub front_error: Option<String>,
    /// True when the front did not move.
    pub stationary_front: bool,
    /// Steps whose entropy-inequality residual was positive (entropy scheme only).
    pub positive_residual_steps: Option<usize>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// One λ of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub m0: f64,
    pub fitted_speed: Option<f64>,
    pub analytic_speed: f64,
    pub residual: Option<f64>,
    pub window: Option<(f64, f64)>,
    /// Failure message when the member run or its fit failed.
    pub error: Option<String>,
}

/// Writes the sweep records sorted by ascending λ to `dir/sweep_summary.json`.
pub fn write_sweep_summary(records: &[SweepRecord], dir: &Path) -> Result<PathBuf> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    write_json(&sorted, &dir.join("sweep_summary.json"))
}
