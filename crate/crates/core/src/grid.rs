//! Experiment grids: every (application, strategy, users, fps) cell runs on
//! its own kernel, so cells can execute in any order or in parallel.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{run_pipeline, RunInput, RunOutput};
use crate::config::ExperimentConfig;
use crate::error::{Result, SimError};
use crate::metrics::{summarize_run, RunLabel, RunSummary};
use crate::model::Application;
use crate::sim::Topology;
use crate::workloads::{build_pipeline, fanout_for, generate_requests, Calibration, LoadSpec};

pub const GRID_CSV: &str = "grid.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Executor {
    Sequential,
    /// Cells spread over the rayon pool; the same as `Sequential` when the
    /// crate is built without the `parallel` feature.
    #[default]
    Parallel,
}

/// Everything a cell needs besides its label.
#[derive(Debug, Clone)]
pub struct GridContext {
    pub calibration: Calibration,
    pub topology: Topology,
    pub seed: u64,
    pub arrival: crate::workloads::ArrivalPattern,
    pub event_budget: u64,
}

impl GridContext {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(GridContext {
            calibration: cfg.resolved_calibration()?,
            topology: cfg.topology(),
            seed: cfg.seed,
            arrival: cfg.load.arrival,
            event_budget: cfg.event_budget,
        })
    }
}

/// Cells in a fixed order: application, strategy, users, fps. Only the
/// video application is expanded over fps.
pub fn plan(cfg: &ExperimentConfig) -> Vec<RunLabel> {
    let mut cells = Vec::new();
    for &application in &cfg.applications {
        for &strategy in &cfg.strategies {
            for &users in &cfg.load.users {
                if application == Application::Video {
                    for &fps in &cfg.load.fps {
                        cells.push(RunLabel { application, strategy, users, fps: Some(fps) });
                    }
                } else {
                    cells.push(RunLabel { application, strategy, users, fps: None });
                }
            }
        }
    }
    cells
}

/// File stem for a cell, e.g. `video_mqtt_u10_f5`.
pub fn cell_name(label: &RunLabel) -> String {
    let mut name = format!("{}_{}_u{}", label.application, label.strategy.as_str(), label.users);
    if let Some(fps) = label.fps {
        name.push_str(&format!("_f{fps}"));
    }
    name
}

/// Runs one cell in memory.
pub fn run_cell(ctx: &GridContext, label: &RunLabel) -> Result<(RunOutput, RunSummary)> {
    let profile = ctx.calibration.profile(label.application)?;
    let load = LoadSpec { n_users: label.users, arrival: ctx.arrival, fps: label.fps, seed: ctx.seed };
    let requests = generate_requests(label.application, profile, &load)?;
    let pipeline = build_pipeline(label.application, profile, label.strategy, &ctx.calibration.backends)?;
    let mut input = RunInput::new(&pipeline, &ctx.topology, &ctx.calibration.backends, &requests);
    input.fanout = fanout_for(label.application, profile, &load)?;
    input.seed = ctx.seed;
    input.event_budget = ctx.event_budget;
    let out = run_pipeline(&input)?;
    let summary = summarize_run(label.clone(), &out.log, &out.ledger)?;
    Ok((out, summary))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never sees a half-written file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or_default()
    ));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cell_error(label: &RunLabel, e: SimError) -> SimError {
    SimError::Cell { cell: cell_name(label), source: Box::new(e) }
}

/// Runs a cell and writes its event log and summary into `dir`. A run that
/// stops early still leaves its partial log behind.
pub fn run_and_write(ctx: &GridContext, label: &RunLabel, dir: &Path) -> Result<RunSummary> {
    let stem = cell_name(label);
    match run_cell(ctx, label) {
        Ok((out, summary)) => {
            write_atomic(&dir.join(format!("{stem}.events.ndjson")), |w| out.log.write_ndjson(w))?;
            write_atomic(&dir.join(format!("{stem}.summary.json")), |w| {
                serde_json::to_writer_pretty(&mut *w, &summary)?;
                w.write_all(b"\n")?;
                Ok(())
            })?;
            Ok(summary)
        }
        Err(SimError::Aborted { cause, partial }) => {
            write_atomic(&dir.join(format!("{stem}.partial.ndjson")), |w| partial.write_ndjson(w))?;
            Err(cell_error(label, SimError::Aborted { cause, partial }))
        }
        Err(e) => Err(cell_error(label, e)),
    }
}

fn map_cells<T: Send>(
    executor: Executor,
    cells: &[RunLabel],
    f: impl Fn(&RunLabel) -> T + Sync + Send,
) -> Vec<T> {
    match executor {
        #[cfg(feature = "parallel")]
        Executor::Parallel => {
            use rayon::prelude::*;
            cells.par_iter().map(f).collect()
        }
        _ => cells.iter().map(f).collect(),
    }
}

/// Runs every cell in memory and returns the summaries in plan order.
pub fn run_grid(ctx: &GridContext, cells: &[RunLabel], executor: Executor) -> Result<Vec<RunSummary>> {
    map_cells(executor, cells, |label| run_cell(ctx, label).map(|(_, s)| s).map_err(|e| cell_error(label, e)))
        .into_iter()
        .collect()
}

/// Runs every cell, writing per-cell files and a `grid.csv` with one row
/// per completed cell in plan order. Returns the first failure after all
/// cells have been attempted.
pub fn run_grid_to_dir(ctx: &GridContext, cells: &[RunLabel], dir: &Path, executor: Executor) -> Result<GridReport> {
    fs::create_dir_all(dir)?;
    let results = map_cells(executor, cells, |label| run_and_write(ctx, label, dir));
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => failures.push(e),
        }
    }
    let grid = dir.join(GRID_CSV);
    write_atomic(&grid, |w| write_grid_csv(w, &summaries))?;
    Ok(GridReport { summaries, failures, grid })
}

#[derive(Debug)]
pub struct GridReport {
    pub summaries: Vec<RunSummary>,
    pub failures: Vec<SimError>,
    pub grid: PathBuf,
}

pub fn write_grid_csv(w: &mut dyn Write, summaries: &[RunSummary]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for s in summaries {
        csv.serialize(s.row())?;
    }
    if summaries.is_empty() {
        csv.write_record(GRID_COLUMNS)?;
    }
    csv.flush()?;
    Ok(())
}

/// Column names of `grid.csv`, in order.
pub const GRID_COLUMNS: [&str; 21] = [
    "application",
    "strategy",
    "users",
    "fps",
    "injected",
    "completed",
    "dropped",
    "in_flight",
    "drop_ratio",
    "mean_p",
    "mean_d",
    "mean_c_t",
    "mean_dat",
    "mean_nct",
    "processing_time",
    "cpu_percent",
    "memory_percent",
    "disk_read_kb",
    "disk_write_kb",
    "net_rx_kb",
    "net_tx_kb",
];

pub fn read_grid_csv<R: std::io::Read>(r: R) -> Result<Vec<crate::metrics::SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(GRID_COLUMNS.iter().copied()) {
        return Err(SimError::LogFormat { line: 1, msg: format!("unexpected grid header `{}`", headers.iter().collect::<Vec<_>>().join(",")) });
    }
    rdr.deserialize().enumerate().map(|(i, row)| row.map_err(|e| SimError::LogFormat { line: i + 2, msg: e.to_string() })).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Strategy;

    #[test]
    fn video_expands_over_fps_only() {
        let mut cfg = ExperimentConfig::default();
        cfg.applications = vec![Application::Video];
        cfg.load.fps = (1..=15).collect();
        assert_eq!(plan(&cfg).len(), 45);
        cfg.applications = vec![Application::Aeneas];
        cfg.strategies = vec![Strategy::Mqtt];
        cfg.load.users = vec![100];
        assert_eq!(plan(&cfg), vec![RunLabel { application: Application::Aeneas, strategy: Strategy::Mqtt, users: 100, fps: None }]);
    }

    #[test]
    fn names() {
        let l = RunLabel { application: Application::Video, strategy: Strategy::Mqtt, users: 10, fps: Some(5) };
        assert_eq!(cell_name(&l), "video_mqtt_u10_f5");
    }

    #[test]
    fn grid_csv_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.applications = vec![Application::Aeneas];
        cfg.load.users = vec![3];
        let ctx = GridContext::from_config(&cfg).unwrap();
        let summaries = run_grid(&ctx, &plan(&cfg), Executor::Sequential).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &summaries).unwrap();
        let rows = read_grid_csv(buf.as_slice()).unwrap();
        assert_eq!(rows, summaries.iter().map(RunSummary::row).collect::<Vec<_>>());
    }

    #[test]
    fn executors_agree() {
        let mut cfg = ExperimentConfig::default();
        cfg.load.users = vec![2, 4];
        cfg.load.fps = vec![1];
        let ctx = GridContext::from_config(&cfg).unwrap();
        let cells = plan(&cfg);
        assert_eq!(run_grid(&ctx, &cells, Executor::Sequential).unwrap(), run_grid(&ctx, &cells, Executor::Parallel).unwrap());
    }
}
