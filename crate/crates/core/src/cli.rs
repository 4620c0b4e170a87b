//! Command-line front end: single runs, λ sweeps, front analysis of stored
//! snapshots and the explicit/entropy cross-check.
//!
//! Exit codes: 0 on success, 1 on solver failure, 2 on usage or
//! configuration errors. Progress goes to standard error; results go to files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::EntropyReport;
use crate::entropy_scheme::{self, SchemeConfig};
use crate::error::{Error, Result};
use crate::explicit::{self, Snapshot};
use crate::grid::Grid;
use crate::io::{
    self, DiagnosticsWriter, FrontSummary, RunConfig, RunSummary, Scheme, SnapshotFormat,
    SweepRecord,
};
use crate::model::FieldPair;
use crate::waves::{self, WaveTrace, AZIMUTHAL_RAYS, DEFAULT_THRESHOLD};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "ECM_INVADE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ecm-invade", version, about = "Cell invasion into extracellular matrix")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set model.lambda=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation.
    Run(Common),
    /// Run the configuration for each λ and fit front speeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list of degradation rates.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        lambdas: Vec<f64>,
    },
    /// Fit the front speed from the snapshots of an earlier run.
    Waves {
        #[command(flatten)]
        common: Common,
        /// Snapshot directory (defaults to the run directory of the configuration).
        #[arg(long)]
        snapshots: Option<PathBuf>,
        /// Threshold on `u` defining the front.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Fit window `T_LO,T_HI` (defaults to the last half of the run).
        #[arg(long, value_delimiter = ',', value_name = "T_LO,T_HI")]
        window: Option<Vec<f64>>,
    },
    /// Compare the explicit and entropy schemes over a range of step sizes.
    Crosscheck {
        #[command(flatten)]
        common: Common,
        /// Comparison time.
        #[arg(long, default_value_t = 5.0)]
        t_end: f64,
        /// Comma-separated entropy-scheme step sizes, largest first.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1e-2, 5e-3, 2.5e-3])]
        taus: Vec<f64>,
    },
}

fn progress(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

/// Directory holding the outputs of one configuration.
pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join(format!("run-{}", cfg.hash()))
}

/// Front positions collected while a run streams its snapshots.
struct FrontTracker<'g> {
    grid: &'g Grid,
    times: Vec<f64>,
    positions: Vec<f64>,
    error: Option<String>,
    min_u: f64,
    min_m: f64,
    max_rho: f64,
    count: usize,
}

impl<'g> FrontTracker<'g> {
    fn new(grid: &'g Grid) -> Self {
        FrontTracker {
            grid,
            times: Vec::new(),
            positions: Vec::new(),
            error: None,
            min_u: f64::INFINITY,
            min_m: f64::INFINITY,
            max_rho: f64::NEG_INFINITY,
            count: 0,
        }
    }

    fn observe(&mut self, s: &Snapshot) {
        self.count += 1;
        let b = s.fields.bounds();
        self.min_u = self.min_u.min(b.min_u);
        self.min_m = self.min_m.min(b.min_m);
        self.max_rho = self.max_rho.max(b.max_rho);
        match waves::front_of(&s.fields.u, self.grid, DEFAULT_THRESHOLD) {
            Ok(x) => {
                self.times.push(s.time);
                self.positions.push(x);
            }
            Err(e) => {
                if self.error.is_none() {
                    self.error = Some(format!("t = {}: {e}", s.time));
                }
            }
        }
    }

    fn summary(&self, m0: f64) -> (Option<FrontSummary>, Option<String>, bool) {
        let analytic_speed = waves::analytic_min_speed(m0).unwrap_or(f64::NAN);
        let displacement = match (self.positions.first(), self.positions.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        };
        let stationary = displacement.abs() < self.grid.spacing();
        if self.error.is_some() || self.positions.is_empty() {
            let msg = self
                .error
                .clone()
                .unwrap_or_else(|| "no snapshots".to_string());
            return (None, Some(msg), stationary);
        }
        match WaveTrace::fit(
            self.times.clone(),
            self.positions.clone(),
            DEFAULT_THRESHOLD,
            None,
        ) {
            Ok(tr) => (
                Some(FrontSummary {
                    fitted_speed: tr.fitted_speed,
                    residual: tr.fit_residual,
                    window: tr.fit_window,
                    analytic_speed,
                    final_position: *self.positions.last().unwrap(),
                    displacement,
                }),
                None,
                stationary,
            ),
            Err(e) => (None, Some(e.to_string()), stationary),
        }
    }
}

fn write_snapshot_file(
    cfg: &RunConfig,
    fields: &FieldPair,
    time: f64,
    grid: &Grid,
    dir: &Path,
) -> Result<PathBuf> {
    match cfg.snapshot_format {
        SnapshotFormat::Csv => io::write_snapshot(fields, time, grid, dir),
        SnapshotFormat::Binary => io::write_snapshot_binary(fields, time, grid, dir),
    }
}

/// Runs one simulation, writing snapshots, `diagnostics.csv`, `config.toml`
/// and `run_summary.json` into [`run_dir`].
pub fn run_simulation(cfg: &RunConfig, quiet: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let grid = cfg.build_grid()?;
    let fields0 = cfg.ic.build(&grid, &cfg.model, cfg.seed)?;
    let dir = run_dir(cfg);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    io::save_config(cfg, &dir.join("config.toml"))?;
    let mut diag = DiagnosticsWriter::create(&dir.join("diagnostics.csv"))?;
    let mut tracker = FrontTracker::new(&grid);
    let every = (cfg.t_end / cfg.snapshot_interval / 10.0).ceil().max(1.0) as usize;

    let (steps, positive_residual_steps) = match cfg.scheme {
        Scheme::Explicit => {
            let stats = explicit::integrate_with(
                &fields0,
                &cfg.model,
                &grid,
                &cfg.explicit_config(),
                |s| {
                    write_snapshot_file(cfg, &s.fields, s.time, &grid, &dir)?;
                    diag.write(&EntropyReport::for_fields(s.time, &s.fields, &grid))?;
                    tracker.observe(s);
                    if tracker.count % every == 1 {
                        progress(quiet, format!("  t = {:.3}", s.time));
                    }
                    Ok(())
                },
            )?;
            (stats.accepted_steps, None)
        }
        Scheme::Entropy => {
            let mut positive = 0usize;
            let (stats, _) = entropy_scheme::run_with(
                &fields0,
                &cfg.model,
                &grid,
                &cfg.entropy,
                cfg.t_end,
                cfg.snapshot_interval,
                |s| {
                    write_snapshot_file(cfg, &s.fields, s.time, &grid, &dir)?;
                    tracker.observe(s);
                    if tracker.count % every == 1 {
                        progress(quiet, format!("  t = {:.3}", s.time));
                    }
                    Ok(())
                },
                |r| {
                    if r.inequality_residual > 0.0 {
                        positive += 1;
                    }
                    diag.write(r)
                },
            )?;
            (stats.steps, Some(positive))
        }
    };
    diag.finish()?;

    let (front, front_error, stationary_front) = tracker.summary(cfg.model.m0);
    let summary = RunSummary {
        config_hash: cfg.hash(),
        scheme: cfg.scheme,
        lambda: cfg.model.lambda,
        m0: cfg.model.m0,
        t_end: cfg.t_end,
        snapshots: tracker.count,
        steps,
        min_u: tracker.min_u,
        min_m: tracker.min_m,
        max_rho: tracker.max_rho,
        front,
        front_error,
        stationary_front,
        positive_residual_steps,
    };
    io::write_json(&summary, &dir.join("run_summary.json"))?;
    Ok(summary)
}

/// Runs the configuration once per λ (in parallel) and writes
/// `sweep_summary.json` into the output directory. Member failures are
/// recorded in their records and do not stop the sweep.
pub fn sweep(cfg: &RunConfig, lambdas: &[f64], quiet: bool) -> Result<Vec<SweepRecord>> {
    if lambdas.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda".into()));
    }
    let analytic_speed = waves::analytic_min_speed(cfg.model.m0)?;
    let members = lambdas
        .iter()
        .map(|&lambda| {
            let mut c = cfg.clone();
            c.model.lambda = lambda;
            c.validate().map(|_| c)
        })
        .collect::<Result<Vec<RunConfig>>>()?;
    let mut records: Vec<SweepRecord> = members
        .par_iter()
        .map(|c| {
            progress(quiet, format!("sweep: lambda = {}", c.model.lambda));
            let base = SweepRecord {
                lambda: c.model.lambda,
                m0: c.model.m0,
                fitted_speed: None,
                analytic_speed,
                residual: None,
                window: None,
                error: None,
            };
            match run_simulation(c, true) {
                Ok(RunSummary {
                    front: Some(f), ..
                }) => SweepRecord {
                    fitted_speed: Some(f.fitted_speed),
                    residual: Some(f.residual),
                    window: Some(f.window),
                    ..base
                },
                Ok(s) => SweepRecord {
                    error: Some(s.front_error.unwrap_or_else(|| "no front".into())),
                    ..base
                },
                Err(e) => SweepRecord {
                    error: Some(e.to_string()),
                    ..base
                },
            }
        })
        .collect();
    records.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    io::write_sweep_summary(&records, &cfg.output_dir)?;
    Ok(records)
}

/// Result of comparing the two schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub t_end: f64,
    pub taus: Vec<f64>,
    /// `sqrt(int (u_e - u_i)^2 + (m_e - m_i)^2)` at `t_end` for each step size.
    pub differences: Vec<f64>,
    /// `differences[k] / differences[k + 1]`.
    pub ratios: Vec<f64>,
    /// True when the differences decrease strictly with the step size.
    pub monotone: bool,
}

/// Discrete `L^2` distance between two field pairs.
pub fn l2_difference(a: &FieldPair, b: &FieldPair, grid: &Grid) -> f64 {
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).collect()
    };
    (grid.integrate(&sq(&a.u, &b.u)) + grid.integrate(&sq(&a.m, &b.m))).sqrt()
}

/// Runs the explicit scheme and the entropy scheme for each `tau` from the
/// configured initial data up to `t_end` and compares the final states.
pub fn crosscheck(cfg: &RunConfig, t_end: f64, taus: &[f64]) -> Result<CrosscheckReport> {
    if taus.len() < 2 {
        return Err(Error::Config("crosscheck needs at least two step sizes".into()));
    }
    if !(t_end > 0.0) {
        return Err(Error::Config(format!("crosscheck t_end must be positive, got {t_end}")));
    }
    let grid = cfg.build_grid()?;
    let fields0 = cfg.ic.build(&grid, &cfg.model, cfg.seed)?;
    let mut ecfg = cfg.explicit_config();
    ecfg.t_end = t_end;
    ecfg.snapshot_interval = t_end;
    let reference = explicit::integrate(&fields0, &cfg.model, &grid, &ecfg)?
        .snapshots
        .pop()
        .expect("final snapshot")
        .fields;
    let differences = taus
        .par_iter()
        .map(|&tau| {
            let scfg = SchemeConfig {
                tau,
                ..cfg.entropy.clone()
            };
            let run = entropy_scheme::run(&fields0, &cfg.model, &grid, &scfg, t_end, t_end)?;
            Ok(l2_difference(&reference, &run.final_state.fields, &grid))
        })
        .collect::<Result<Vec<f64>>>()?;
    let ratios: Vec<f64> = differences.windows(2).map(|w| w[0] / w[1]).collect();
    let monotone = differences.windows(2).all(|w| w[1] < w[0]);
    Ok(CrosscheckReport {
        t_end,
        taus: taus.to_vec(),
        differences,
        ratios,
        monotone,
    })
}

/// Time encoded in a snapshot file name, if it is one.
fn snapshot_time(path: &Path) -> Option<(f64, SnapshotFormat)> {
    let name = path.file_name()?.to_str()?;
    let rest = name.strip_prefix("snap_t")?;
    let (t, format) = if let Some(t) = rest.strip_suffix(".csv") {
        (t, SnapshotFormat::Csv)
    } else {
        (rest.strip_suffix(".bin")?, SnapshotFormat::Binary)
    };
    t.parse().ok().map(|t| (t, format))
}

/// Output of the `waves` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveAnalysis {
    pub trace: WaveTrace,
    pub analytic_speed: f64,
    /// Mean and standard deviation of the final front radius over rays (2D only).
    pub azimuthal: Option<(f64, f64)>,
}

/// Fits the front speed from the snapshots stored in `dir`.
pub fn analyse_snapshots(
    cfg: &RunConfig,
    dir: &Path,
    threshold: f64,
    window: Option<(f64, f64)>,
) -> Result<WaveAnalysis> {
    let grid = cfg.build_grid()?;
    let mut files: Vec<(f64, SnapshotFormat, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            snapshot_time(&path).map(|(t, f)| (t, f, path))
        })
        .collect();
    files.sort_by(|a, b| a.0.total_cmp(&b.0));
    if files.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no snapshots in {}",
            dir.display()
        )));
    }
    let mut snapshots = Vec::with_capacity(files.len());
    for (time, format, path) in &files {
        let fields = match format {
            SnapshotFormat::Csv => io::read_snapshot(path)?.1,
            SnapshotFormat::Binary => {
                let (_, _, t, f) = io::read_snapshot_binary(path)?;
                snapshots.push(Snapshot { time: t, fields: f });
                continue;
            }
        };
        snapshots.push(Snapshot {
            time: *time,
            fields,
        });
    }
    for s in &snapshots {
        s.fields.check_grid(&grid)?;
    }
    let trace = WaveTrace::from_snapshots(&snapshots, &grid, threshold, window)?;
    let azimuthal = if grid.dim() == 2 {
        let last = &snapshots.last().unwrap().fields;
        Some(waves::azimuthal_spread(&last.u, &grid, threshold, AZIMUTHAL_RAYS)?)
    } else {
        None
    };
    Ok(WaveAnalysis {
        trace,
        analytic_speed: waves::analytic_min_speed(cfg.model.m0)?,
        azimuthal,
    })
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = io::load_config(&common.config, &common.overrides)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Shape { .. } => 2,
        _ => 1,
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<i32> {
    configure_threads()?;
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            progress(common.quiet, format!("run: writing to {}", run_dir(&cfg).display()));
            let s = run_simulation(&cfg, common.quiet)?;
            match (&s.front, &s.front_error) {
                (Some(f), _) => progress(
                    common.quiet,
                    format!("front speed {:.5} (analytic {:.5})", f.fitted_speed, f.analytic_speed),
                ),
                (None, Some(e)) => progress(common.quiet, format!("no front fit: {e}")),
                _ => {}
            }
            Ok(0)
        }
        Command::Sweep { common, lambdas } => {
            let cfg = load(&common)?;
            let records = sweep(&cfg, &lambdas, common.quiet)?;
            for r in &records {
                match (r.fitted_speed, &r.error) {
                    (Some(c), _) => progress(common.quiet, format!("lambda {}: speed {c:.5}", r.lambda)),
                    (None, Some(e)) => progress(common.quiet, format!("lambda {}: failed: {e}", r.lambda)),
                    _ => {}
                }
            }
            Ok(if records.iter().all(|r| r.error.is_none()) { 0 } else { 1 })
        }
        Command::Waves {
            common,
            snapshots,
            threshold,
            window,
        } => {
            let cfg = load(&common)?;
            let dir = snapshots.unwrap_or_else(|| run_dir(&cfg));
            let window = match window.as_deref() {
                None => None,
                Some(&[lo, hi]) => Some((lo, hi)),
                Some(w) => {
                    return Err(Error::Config(format!(
                        "--window needs exactly two times, got {}",
                        w.len()
                    )))
                }
            };
            let analysis = analyse_snapshots(&cfg, &dir, threshold, window)?;
            let path = io::write_json(&analysis, &dir.join("waves.json"))?;
            progress(
                common.quiet,
                format!(
                    "front speed {:.5} (analytic {:.5}), written to {}",
                    analysis.trace.fitted_speed,
                    analysis.analytic_speed,
                    path.display()
                ),
            );
            Ok(0)
        }
        Command::Crosscheck {
            common,
            t_end,
            taus,
        } => {
            let cfg = load(&common)?;
            let report = crosscheck(&cfg, t_end, &taus)?;
            let path = io::write_json(&report, &cfg.output_dir.join("crosscheck.json"))?;
            for (tau, d) in report.taus.iter().zip(&report.differences) {
                progress(common.quiet, format!("tau {tau:e}: L2 difference {d:.6e}"));
            }
            progress(common.quiet, format!("ratios {:?}, written to {}", report.ratios, path.display()));
            Ok(if report.monotone { 0 } else { 1 })
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
