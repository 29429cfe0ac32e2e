use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use sdpbench::analyzer::{self, MetricMatrix, SuitabilityReport};
use sdpbench::config::{parse_list, ExperimentConfig};
use sdpbench::grid::{self, write_atomic, Executor, GridContext};
use sdpbench::metrics::{RunSummary, SummaryRow};
use sdpbench::model::{Application, Strategy};
use sdpbench::SimError;

const OUT_ENV: &str = "SDPBENCH_OUT";

#[derive(Parser)]
#[command(name = "sdpbench", version, about = "Serverless data pipeline emulator and suitability analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a grid of simulations and write logs, summaries and grid.csv.
    Run(RunArgs),
    /// Compute suitability indices from summaries or an external metric CSV.
    Analyze(AnalyzeArgs),
    /// Turn a grid.csv into one plot-data CSV per metric.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SdpChoice {
    Dft,
    Oss,
    Mqtt,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum AppChoice {
    Aeneas,
    Pocketsphinx,
    Video,
    All,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    sdp: Option<SdpChoice>,
    #[arg(long, value_enum)]
    app: Option<AppChoice>,
    /// User counts, e.g. `100`, `10,50,100` or `10..100:10`.
    #[arg(long)]
    users: Option<String>,
    /// Frame rates for the video application, e.g. `1..15`.
    #[arg(long)]
    fps: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; SDPBENCH_OUT takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run cells one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// grid.csv files, summary JSON files, directories holding either, or
    /// metric CSVs with columns application,scenario,metric,strategy,value.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    grid: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<SimError>().map(SimError::root) {
            Some(SimError::Config(_) | SimError::InvalidLoad(_) | SimError::InvalidPipeline(_) | SimError::LogFormat { .. } | SimError::Csv(_)) => 2,
            Some(SimError::Runaway { .. }) => 3,
            Some(SimError::MissingCells(_)) => 4,
            _ => 1,
        };
        Failure { code, error }
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn out_dir(flag: Option<PathBuf>, fallback: PathBuf) -> PathBuf {
    std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from).or(flag).unwrap_or(fallback)
}

fn list<T: TryFrom<u64>>(flag: &str, text: &str) -> Result<Vec<T>, Failure> {
    let values = parse_list(text).map_err(|e| fail(2, anyhow!("--{flag}: {e}")))?;
    values.into_iter().map(|v| T::try_from(v).map_err(|_| fail(2, anyhow!("--{flag}: {v} is out of range")))).collect()
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    match args.sdp {
        Some(SdpChoice::Dft) => cfg.strategies = vec![Strategy::Dft],
        Some(SdpChoice::Oss) => cfg.strategies = vec![Strategy::Oss],
        Some(SdpChoice::Mqtt) => cfg.strategies = vec![Strategy::Mqtt],
        Some(SdpChoice::All) => cfg.strategies = Strategy::ALL.to_vec(),
        None => {}
    }
    match args.app {
        Some(AppChoice::Aeneas) => cfg.applications = vec![Application::Aeneas],
        Some(AppChoice::Pocketsphinx) => cfg.applications = vec![Application::PocketSphinx],
        Some(AppChoice::Video) => cfg.applications = vec![Application::Video],
        Some(AppChoice::All) => cfg.applications = Application::ALL.to_vec(),
        None => {}
    }
    if let Some(u) = &args.users {
        cfg.load.users = list("users", u)?;
    }
    if let Some(f) = &args.fps {
        cfg.load.fps = list("fps", f)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = out_dir(args.out, cfg.out.clone());
    let ctx = GridContext::from_config(&cfg)?;
    let cells = grid::plan(&cfg);
    let executor = if args.sequential { Executor::Sequential } else { Executor::Parallel };
    info!("running {} cell(s) into {}", cells.len(), dir.display());

    let report = grid::run_grid_to_dir(&ctx, &cells, &dir, executor)?;
    for s in &report.summaries {
        info!(
            "{}: completed {}/{} dropped {} processing {:.1}s",
            grid::cell_name(&s.label),
            s.completed,
            s.injected,
            s.dropped,
            s.processing_time
        );
    }
    if let Some(first) = report.failures.into_iter().next() {
        return Err(first.into());
    }
    info!("wrote {}", report.grid.display());
    Ok(())
}

enum Input {
    Summaries(Vec<RunSummary>),
    Matrices(Vec<MetricMatrix>),
}

fn read_input(path: &Path) -> Result<Input, Failure> {
    if path.is_dir() {
        let grid_csv = path.join(grid::GRID_CSV);
        if grid_csv.is_file() {
            return read_input(&grid_csv);
        }
        let mut summaries = Vec::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".summary.json"))
            .collect();
        entries.sort();
        for p in entries {
            summaries.push(read_summary(&p)?);
        }
        return Ok(Input::Summaries(summaries));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(Input::Summaries(vec![read_summary(path)?])),
        _ => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let header = text.lines().find(|l| !l.starts_with('#')).unwrap_or_default();
            if header.trim().starts_with("application,scenario,") {
                Ok(Input::Matrices(analyzer::read_metric_csv(text.as_bytes())?))
            } else {
                let rows = grid::read_grid_csv(text.as_bytes())
                    .with_context(|| format!("parsing {}", path.display()))?;
                Ok(Input::Summaries(rows.into_iter().map(RunSummary::from).collect()))
            }
        }
    }
}

fn read_summary(path: &Path) -> Result<RunSummary, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| fail(2, anyhow!("{}: {e}", path.display())))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let mut summaries = Vec::new();
    let mut matrices = Vec::new();
    for p in &args.inputs {
        match read_input(p)? {
            Input::Summaries(s) => summaries.extend(s),
            Input::Matrices(m) => matrices.extend(m),
        }
    }
    if !summaries.is_empty() {
        matrices.extend(analyzer::matrices_from_summaries(&summaries)?);
    }
    if matrices.is_empty() {
        return Err(SimError::MissingCells(vec!["no metric data in the inputs".into()]).into());
    }
    let report: SuitabilityReport = analyzer::analyze(matrices);
    let dir = out_dir(args.out, PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let table = report.render();
    write_atomic(&dir.join("suitability.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    write_atomic(&dir.join("suitability.txt"), |w| Ok(w.write_all(table.as_bytes())?))?;
    print!("{table}");

    if !summaries.is_empty() {
        let means = analyzer::app_means(&summaries);
        let apps: std::collections::BTreeSet<_> = means.keys().map(|k| k.0).collect();
        if apps.len() == Application::ALL.len() {
            let avg = analyzer::cross_application_average(&means)?;
            let text = avg.render();
            write_atomic(&dir.join("averages.txt"), |w| Ok(w.write_all(text.as_bytes())?))?;
            print!("\n{text}");
        }
    }
    info!("wrote suitability report to {}", dir.display());
    Ok(())
}

type Column = fn(&SummaryRow) -> f64;
type Points<'a> = Vec<(u64, &'a SummaryRow)>;

/// Numeric grid columns that get a plot-data file each.
const PLOT_METRICS: [(&str, Column); 13] = [
    ("drop_ratio", |r| r.drop_ratio),
    ("mean_p", |r| r.mean_p),
    ("mean_d", |r| r.mean_d),
    ("mean_c_t", |r| r.mean_c_t),
    ("mean_dat", |r| r.mean_dat),
    ("mean_nct", |r| r.mean_nct),
    ("processing_time", |r| r.processing_time),
    ("cpu_percent", |r| r.cpu_percent),
    ("memory_percent", |r| r.memory_percent),
    ("disk_read_kb", |r| r.disk_read_kb),
    ("disk_write_kb", |r| r.disk_write_kb),
    ("net_rx_kb", |r| r.net_rx_kb),
    ("net_tx_kb", |r| r.net_tx_kb),
];

/// One plot series group: rows sharing everything but the load axis.
struct Series<'a> {
    stem: String,
    axis: &'static str,
    rows: Points<'a>,
}

fn series(rows: &[SummaryRow]) -> Vec<Series<'_>> {
    let mut by_users: BTreeMap<(Application, Option<u32>), Points> = BTreeMap::new();
    let mut by_fps: BTreeMap<(Application, usize), Points> = BTreeMap::new();
    for r in rows {
        by_users.entry((r.application, r.fps)).or_default().push((r.users as u64, r));
        if let Some(f) = r.fps {
            by_fps.entry((r.application, r.users)).or_default().push((u64::from(f), r));
        }
    }
    let mut out: Vec<Series> = by_users
        .into_iter()
        .map(|((app, fps), rows)| Series {
            stem: fps.map_or(app.to_string(), |f| format!("{app}_f{f}")),
            axis: "users",
            rows,
        })
        .collect();
    for ((app, users), rows) in by_fps {
        let levels: std::collections::BTreeSet<u64> = rows.iter().map(|r| r.0).collect();
        if levels.len() > 1 {
            out.push(Series { stem: format!("{app}_u{users}_by_fps"), axis: "fps", rows });
        }
    }
    out
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let file = fs::File::open(&args.grid).with_context(|| format!("opening {}", args.grid.display()))
        .map_err(|e| fail(2, e))?;
    let rows = grid::read_grid_csv(file).map_err(|e| fail(2, anyhow!("{}: {e}", args.grid.display())))?;
    if rows.is_empty() {
        bail_code(2, format!("{} has no rows", args.grid.display()))?;
    }
    let dir = out_dir(args.out, args.grid.parent().map_or_else(|| PathBuf::from("."), |p| p.join("plots")));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut written = 0;
    for s in series(&rows) {
        let mut present: BTreeMap<u64, [bool; 3]> = BTreeMap::new();
        for (load, r) in &s.rows {
            present.entry(*load).or_default()[r.strategy.index()] = true;
        }
        for (load, have) in &present {
            for st in Strategy::ALL.into_iter().filter(|st| !have[st.index()]) {
                warn!("{}: no {} value at {}={load}; leaving the cell empty", s.stem, st.label(), s.axis);
            }
        }
        let mut loads: BTreeMap<u64, [Option<f64>; 3]> = BTreeMap::new();
        for (metric, get) in PLOT_METRICS {
            loads.clear();
            for (load, r) in &s.rows {
                loads.entry(*load).or_default()[r.strategy.index()] = Some(get(r));
            }
            let path = dir.join(format!("{}_{metric}.csv", s.stem));
            write_atomic(&path, |w| {
                writeln!(w, "{},DFT,OSS,MQTT", s.axis)?;
                for (load, cells) in &loads {
                    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    writeln!(w, "{load},{},{},{}", cell(cells[0]), cell(cells[1]), cell(cells[2]))?;
                }
                Ok(())
            })?;
            written += 1;
        }
    }
    info!("wrote {written} plot-data file(s) to {}", dir.display());
    Ok(())
}

fn bail_code(code: u8, msg: String) -> Result<(), Failure> {
    Err(fail(code, anyhow!(msg)))
}
