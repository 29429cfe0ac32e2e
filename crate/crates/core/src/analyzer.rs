//! Strategy suitability analysis over per-application metric averages, and
//! cross-application averaging.
//!
//! For every metric the strategies with the lowest average are attributed
//! the "min" cell and those with the highest the "max" cell. A strategy's
//! suitability index is the share of metrics where it holds the min cell;
//! its not-suitability index is the share where it holds the max cell.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::metrics::RunSummary;
use crate::model::{Application, Strategy};

/// Relative gap under which two averages count as tied.
pub const TIE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ProcessingTime,
    Cpu,
    Memory,
    DiskRead,
    DiskWrite,
    NetReceive,
    NetTransmit,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::ProcessingTime,
        Metric::Cpu,
        Metric::Memory,
        Metric::DiskRead,
        Metric::DiskWrite,
        Metric::NetReceive,
        Metric::NetTransmit,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::ProcessingTime => "processing_time",
            Metric::Cpu => "cpu",
            Metric::Memory => "memory",
            Metric::DiskRead => "disk_read",
            Metric::DiskWrite => "disk_write",
            Metric::NetReceive => "net_receive",
            Metric::NetTransmit => "net_transmit",
        }
    }

    /// Row title used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            Metric::ProcessingTime => "Processing Time (s)",
            Metric::Cpu => "CPU Utilization (%)",
            Metric::Memory => "Memory Utilization (%)",
            Metric::DiskRead => "Disk Read (KB)",
            Metric::DiskWrite => "Disk Writes (KB)",
            Metric::NetReceive => "Network Receive (KB)",
            Metric::NetTransmit => "Network Transmit (KB)",
        }
    }

    /// The value of this metric in a run summary.
    pub fn of(self, s: &RunSummary) -> f64 {
        match self {
            Metric::ProcessingTime => s.processing_time,
            Metric::Cpu => s.cpu_percent,
            Metric::Memory => s.memory_percent,
            Metric::DiskRead => s.disk_read_kb,
            Metric::DiskWrite => s.disk_write_kb,
            Metric::NetReceive => s.net_rx_kb,
            Metric::NetTransmit => s.net_tx_kb,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[serde(rename = "users", alias = "users_scaling")]
    UsersScaling,
    #[serde(rename = "fps", alias = "fps_scaling")]
    FpsScaling,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::UsersScaling => "users",
            Scenario::FpsScaling => "fps",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "users" | "users_scaling" => Ok(Scenario::UsersScaling),
            "fps" | "fps_scaling" => Ok(Scenario::FpsScaling),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

/// Average value of each metric per strategy for one application and
/// scenario. Rows follow `Metric::ALL`, columns `Strategy::ALL`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub application: Application,
    pub scenario: Scenario,
    pub cells: [[f64; 3]; 7],
}

impl MetricMatrix {
    pub fn new(application: Application, scenario: Scenario, cells: [[f64; 3]; 7]) -> Self {
        MetricMatrix { application, scenario, cells }
    }

    pub fn get(&self, metric: Metric, strategy: Strategy) -> f64 {
        self.cells[metric.index()][strategy.index()]
    }

    pub fn row(&self, metric: Metric) -> [f64; 3] {
        self.cells[metric.index()]
    }

    /// Builds a matrix from sparse cells, failing with the list of
    /// absent `(metric, strategy)` pairs.
    pub fn from_cells(
        application: Application,
        scenario: Scenario,
        cells: &BTreeMap<(Metric, Strategy), f64>,
    ) -> Result<Self> {
        let mut out = [[0.0; 3]; 7];
        let mut missing = Vec::new();
        for m in Metric::ALL {
            for s in Strategy::ALL {
                match cells.get(&(m, s)) {
                    Some(v) => out[m.index()][s.index()] = *v,
                    None => missing.push(format!("{application}/{}/{m}/{}", scenario.as_str(), s.as_str())),
                }
            }
        }
        if missing.is_empty() {
            Ok(MetricMatrix::new(application, scenario, out))
        } else {
            Err(SimError::MissingCells(missing))
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub metric: Metric,
    pub argmin: Vec<Strategy>,
    pub argmax: Vec<Strategy>,
}

/// Min and max attribution per metric. Values within the tie tolerance of
/// an extreme share it. A row whose extremes are themselves tied puts every
/// strategy in both sets; otherwise a value near both extremes goes to the
/// closer one.
pub fn attribute_min_max(matrix: &MetricMatrix) -> Vec<Attribution> {
    Metric::ALL
        .into_iter()
        .map(|metric| {
            let row = matrix.row(metric);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if close(lo, hi) {
                return Attribution { metric, argmin: Strategy::ALL.to_vec(), argmax: Strategy::ALL.to_vec() };
            }
            let mut argmin = Vec::new();
            let mut argmax = Vec::new();
            for s in Strategy::ALL {
                let v = row[s.index()];
                match (close(v, lo), close(v, hi)) {
                    (true, true) if (v - lo) <= (hi - v) => argmin.push(s),
                    (true, true) => argmax.push(s),
                    (true, false) => argmin.push(s),
                    (false, true) => argmax.push(s),
                    (false, false) => {}
                }
            }
            Attribution { metric, argmin, argmax }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyScore {
    pub strategy: Strategy,
    pub min_count: usize,
    pub max_count: usize,
    pub suitability_index: u32,
    pub not_suitability_index: u32,
    pub net_score: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuitabilityResult {
    pub application: Application,
    pub scenario: Scenario,
    pub attributions: Vec<Attribution>,
    pub scores: Vec<StrategyScore>,
    pub selected: Strategy,
}

impl SuitabilityResult {
    pub fn score(&self, strategy: Strategy) -> &StrategyScore {
        &self.scores[strategy.index()]
    }
}

/// `round(count / 7 × 100)`.
pub fn index_percent(count: usize) -> u32 {
    (count as f64 / Metric::ALL.len() as f64 * 100.0).round() as u32
}

/// Counts attributions, computes both indices and picks a strategy.
///
/// Selection: strategies holding the most max cells are set aside (unless
/// that would remove all of them); among the rest the one with the most min
/// cells wins, then the fewest max cells, then holding the processing-time
/// min cell, then name order.
pub fn suitability_index(matrix: &MetricMatrix) -> SuitabilityResult {
    let attributions = attribute_min_max(matrix);
    let scores: Vec<StrategyScore> = Strategy::ALL
        .into_iter()
        .map(|strategy| {
            let min_count = attributions.iter().filter(|a| a.argmin.contains(&strategy)).count();
            let max_count = attributions.iter().filter(|a| a.argmax.contains(&strategy)).count();
            let suitability_index = index_percent(min_count);
            let not_suitability_index = index_percent(max_count);
            StrategyScore {
                strategy,
                min_count,
                max_count,
                suitability_index,
                not_suitability_index,
                net_score: suitability_index as i32 - not_suitability_index as i32,
            }
        })
        .collect();

    let worst = scores.iter().map(|s| s.max_count).max().unwrap_or(0);
    let mut pool: Vec<&StrategyScore> = scores.iter().filter(|s| s.max_count < worst).collect();
    if pool.is_empty() {
        pool = scores.iter().collect();
    }
    let fastest = &attributions[Metric::ProcessingTime.index()].argmin;
    let selected = pool
        .into_iter()
        .min_by(|a, b| {
            b.min_count
                .cmp(&a.min_count)
                .then(a.max_count.cmp(&b.max_count))
                .then(fastest.contains(&b.strategy).cmp(&fastest.contains(&a.strategy)))
                .then(a.strategy.as_str().cmp(b.strategy.as_str()))
        })
        .map(|s| s.strategy)
        .expect("three strategies");

    SuitabilityResult { application: matrix.application, scenario: matrix.scenario, attributions, scores, selected }
}

/// One strategy per application. Applications analysed under several
/// scenarios take the strategy selected most often, ties broken by the
/// net score summed over those scenarios, then name order.
pub fn select_suitable_sdp(results: &[SuitabilityResult]) -> BTreeMap<Application, Strategy> {
    let mut by_app: BTreeMap<Application, Vec<&SuitabilityResult>> = BTreeMap::new();
    for r in results {
        by_app.entry(r.application).or_default().push(r);
    }
    by_app
        .into_iter()
        .map(|(app, rs)| {
            let wins = |s: Strategy| rs.iter().filter(|r| r.selected == s).count();
            let net = |s: Strategy| rs.iter().map(|r| r.score(s).net_score).sum::<i32>();
            let best = Strategy::ALL
                .into_iter()
                .min_by(|a, b| {
                    wins(*b).cmp(&wins(*a)).then(net(*b).cmp(&net(*a))).then(a.as_str().cmp(b.as_str()))
                })
                .expect("three strategies");
            (app, best)
        })
        .collect()
}

/// Unweighted mean of each metric per strategy across applications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossAverage {
    pub applications: Vec<Application>,
    /// Rows follow `Metric::ALL`, columns `Strategy::ALL`; processing time
    /// in seconds.
    pub cells: [[f64; 3]; 7],
}

impl CrossAverage {
    pub fn get(&self, metric: Metric, strategy: Strategy) -> f64 {
        self.cells[metric.index()][strategy.index()]
    }

    /// Table layout with processing time converted to minutes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<26}{:>10}{:>10}{:>10}", "Metric", "DFT", "OSS", "MQTT");
        for m in Metric::ALL {
            let (title, scale, prec) = match m {
                Metric::ProcessingTime => ("Processing Time (m)", 1.0 / 60.0, 2),
                other => (other.title(), 1.0, 0),
            };
            let _ = write!(out, "{title:<26}");
            for s in Strategy::ALL {
                let _ = write!(out, "{:>10.prec$}", self.get(m, s) * scale);
            }
            out.push('\n');
        }
        out
    }
}

/// Averages per-application metric values. `values` maps each
/// (application, strategy) to its seven metrics; every application present
/// must cover all three strategies.
pub fn cross_application_average(values: &BTreeMap<(Application, Strategy), [f64; 7]>) -> Result<CrossAverage> {
    let apps: BTreeSet<Application> = values.keys().map(|k| k.0).collect();
    let missing: Vec<String> = apps
        .iter()
        .flat_map(|a| Strategy::ALL.into_iter().map(move |s| (*a, s)))
        .filter(|k| !values.contains_key(k))
        .map(|(a, s)| format!("{a}/{}", s.as_str()))
        .collect();
    if apps.is_empty() {
        return Err(SimError::MissingCells(vec!["no applications".into()]));
    }
    if !missing.is_empty() {
        return Err(SimError::MissingCells(missing));
    }
    let mut cells = [[0.0; 3]; 7];
    for m in Metric::ALL {
        for s in Strategy::ALL {
            let sum: f64 = apps.iter().map(|a| values[&(*a, s)][m.index()]).sum();
            cells[m.index()][s.index()] = sum / apps.len() as f64;
        }
    }
    Ok(CrossAverage { applications: apps.into_iter().collect(), cells })
}

fn summary_metrics(s: &RunSummary) -> [f64; 7] {
    Metric::ALL.map(|m| m.of(s))
}

fn mean_metrics<'a>(rows: impl Iterator<Item = &'a RunSummary>) -> Option<[f64; 7]> {
    let mut acc = [0.0; 7];
    let mut n = 0usize;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(summary_metrics(r)) {
            *a += v;
        }
        n += 1;
    }
    (n > 0).then(|| acc.map(|a| a / n as f64))
}

/// Most frequent value; ties go to the smallest.
fn modal<T: Ord + Copy>(values: impl Iterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let top = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == top).map(|(v, _)| v)
}

fn matrix_from_rows(app: Application, scenario: Scenario, rows: &[&RunSummary]) -> Result<MetricMatrix> {
    let mut cells = BTreeMap::new();
    for s in Strategy::ALL {
        if let Some(means) = mean_metrics(rows.iter().copied().filter(|r| r.label.strategy == s)) {
            for m in Metric::ALL {
                cells.insert((m, s), means[m.index()]);
            }
        }
    }
    MetricMatrix::from_cells(app, scenario, &cells)
}

/// Metric matrices from simulator summaries, averaging over load levels.
///
/// The users scenario uses every summary of an application at its most
/// common fps setting. When several fps settings are present an fps
/// scenario is added, restricted to the most common user count.
pub fn matrices_from_summaries(summaries: &[RunSummary]) -> Result<Vec<MetricMatrix>> {
    let mut by_app: BTreeMap<Application, Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        by_app.entry(s.label.application).or_default().push(s);
    }
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for (app, rows) in by_app {
        let fps_values: BTreeSet<Option<u32>> = rows.iter().map(|r| r.label.fps).collect();
        let fps = modal(rows.iter().map(|r| r.label.fps)).flatten();
        let users_rows: Vec<&RunSummary> = rows.iter().copied().filter(|r| r.label.fps == fps).collect();
        let mut push = |m: Result<MetricMatrix>| match m {
            Ok(m) => out.push(m),
            Err(SimError::MissingCells(c)) => missing.extend(c),
            Err(e) => missing.push(e.to_string()),
        };
        push(matrix_from_rows(app, Scenario::UsersScaling, &users_rows));
        if fps_values.len() > 1 {
            let users = modal(rows.iter().filter(|r| r.label.fps.is_some()).map(|r| r.label.users));
            let fps_rows: Vec<&RunSummary> =
                rows.iter().copied().filter(|r| r.label.fps.is_some() && Some(r.label.users) == users).collect();
            push(matrix_from_rows(app, Scenario::FpsScaling, &fps_rows));
        }
    }
    if !missing.is_empty() {
        // Report each absent (application, strategy) pair once.
        let pairs: BTreeSet<String> =
            missing.iter().map(|c| c.split('/').enumerate().filter(|(i, _)| *i != 2).map(|(_, p)| p).collect::<Vec<_>>().join("/")).collect();
        return Err(SimError::MissingCells(pairs.into_iter().collect()));
    }
    Ok(out)
}

/// Per-(application, strategy) metric means for cross-application
/// averaging, over every summary supplied.
pub fn app_means(summaries: &[RunSummary]) -> BTreeMap<(Application, Strategy), [f64; 7]> {
    let keys: BTreeSet<(Application, Strategy)> =
        summaries.iter().map(|s| (s.label.application, s.label.strategy)).collect();
    keys.into_iter()
        .filter_map(|k| {
            mean_metrics(summaries.iter().filter(|s| (s.label.application, s.label.strategy) == k)).map(|v| (k, v))
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct MetricRecord {
    application: String,
    scenario: String,
    metric: String,
    strategy: String,
    value: f64,
}

/// Reads an external metric table with header
/// `application,scenario,metric,strategy,value`.
pub fn read_metric_csv<R: Read>(reader: R) -> Result<Vec<MetricMatrix>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let mut groups: BTreeMap<(Application, Scenario), BTreeMap<(Metric, Strategy), f64>> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<MetricRecord>().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let bad = |msg: String| SimError::LogFormat { line, msg };
        let app: Application = rec.application.parse().map_err(bad)?;
        let scenario: Scenario = rec.scenario.parse().map_err(bad)?;
        let metric: Metric = rec.metric.parse().map_err(bad)?;
        let strategy: Strategy = rec.strategy.parse().map_err(bad)?;
        if !rec.value.is_finite() {
            return Err(bad(format!("non-finite value {}", rec.value)));
        }
        groups.entry((app, scenario)).or_default().insert((metric, strategy), rec.value);
    }
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for ((app, scenario), cells) in &groups {
        match MetricMatrix::from_cells(*app, *scenario, cells) {
            Ok(m) => out.push(m),
            Err(SimError::MissingCells(c)) => missing.extend(c),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(SimError::MissingCells(missing));
    }
    Ok(out)
}

/// Writes matrices in the external CSV layout.
pub fn write_metric_csv<W: std::io::Write>(writer: W, matrices: &[MetricMatrix]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["application", "scenario", "metric", "strategy", "value"])?;
    for mx in matrices {
        for m in Metric::ALL {
            for s in Strategy::ALL {
                w.write_record([
                    mx.application.as_str(),
                    mx.scenario.as_str(),
                    m.as_str(),
                    s.as_str(),
                    &mx.get(m, s).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Full analysis output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuitabilityReport {
    pub matrices: Vec<MetricMatrix>,
    pub results: Vec<SuitabilityResult>,
    pub selected: BTreeMap<Application, Strategy>,
}

pub fn analyze(matrices: Vec<MetricMatrix>) -> SuitabilityReport {
    let results: Vec<SuitabilityResult> = matrices.iter().map(suitability_index).collect();
    let selected = select_suitable_sdp(&results);
    SuitabilityReport { matrices, results, selected }
}

fn names(set: &[Strategy]) -> String {
    set.iter().map(|s| s.label()).collect::<Vec<_>>().join("/")
}

fn top_index(result: &SuitabilityResult, pick: impl Fn(&StrategyScore) -> (usize, u32)) -> String {
    let best = result.scores.iter().map(|s| pick(s).0).max().unwrap_or(0);
    if best == 0 {
        return "-".into();
    }
    result
        .scores
        .iter()
        .filter(|s| pick(s).0 == best)
        .map(|s| format!("{} ({}%)", s.strategy.label(), pick(s).1))
        .collect::<Vec<_>>()
        .join(" ")
}

impl SuitabilityReport {
    /// Text table with a min and a max column per (application, scenario).
    pub fn render(&self) -> String {
        let cols: Vec<String> = self
            .results
            .iter()
            .flat_map(|r| {
                let head = format!("{}/{}", r.application, r.scenario.as_str());
                [format!("{head} min"), format!("{head} max")]
            })
            .collect();
        let mut grid: Vec<(String, Vec<String>)> = Vec::new();
        for m in Metric::ALL {
            let cells = self
                .results
                .iter()
                .flat_map(|r| {
                    let a = &r.attributions[m.index()];
                    [names(&a.argmin), names(&a.argmax)]
                })
                .collect();
            grid.push((m.title().to_string(), cells));
        }
        grid.push((
            "Suitability index (%)".into(),
            self.results
                .iter()
                .flat_map(|r| {
                    [top_index(r, |s| (s.min_count, s.suitability_index)), top_index(r, |s| (s.max_count, s.not_suitability_index))]
                })
                .collect(),
        ));
        grid.push((
            "Suitable SDP".into(),
            self.results
                .iter()
                .flat_map(|r| [self.selected.get(&r.application).map_or("-", |s| s.label()).to_string(), String::new()])
                .collect(),
        ));

        let first = grid.iter().map(|(t, _)| t.len()).max().unwrap_or(0).max(7);
        let widths: Vec<usize> = (0..cols.len())
            .map(|i| grid.iter().map(|(_, c)| c[i].len()).chain([cols[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<first$}", "Metric");
        for (c, w) in cols.iter().zip(&widths) {
            let _ = write!(out, " | {c:<w$}");
        }
        out.push('\n');
        for (title, cells) in &grid {
            let _ = write!(out, "{title:<first$}");
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(out, " | {c:<w$}");
            }
            out.push('\n');
        }
        out
    }
}
