//! Per-request time decomposition and per-run summaries, computed from a
//! finished event log and resource ledger.
//!
//! For a completed request: `P` sums its function executions, `D` spans
//! arrival to completion, `C_T = D − P`, `DAT` sums its storage residencies
//! and `NCT = C_T − DAT`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::ledger::{cpu_utilization, memory_utilization, ResourceLedger};
use crate::log::{EventKind, EventLog, SimEvent};
use crate::model::{Application, RequestId, Seconds, Strategy, TierKind, UnitId};

/// Bytes per reported kilobyte.
pub const KB: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTimings {
    pub request_id: RequestId,
    pub p: Seconds,
    pub d: Seconds,
    pub c_t: Seconds,
    pub dat: Seconds,
    pub nct: Seconds,
    /// Set when function executions of this request overlapped in time, so
    /// `P` may exceed `D` and `C_T` was clamped at zero.
    pub overlap: bool,
}

fn request_events(log: &EventLog, request: RequestId) -> Vec<&SimEvent> {
    log.for_request(request).collect()
}

fn span(events: &[&SimEvent]) -> Result<(Seconds, Seconds)> {
    let arrived = events.iter().find(|e| e.kind == EventKind::RequestArrived);
    let done = events.iter().find(|e| e.kind == EventKind::RequestCompleted);
    match (arrived, done) {
        (Some(a), Some(c)) => Ok((a.timestamp, c.timestamp)),
        _ => Err(SimError::NotCompleted(events.first().map_or(RequestId(u64::MAX), |e| e.request_id))),
    }
}

/// Sums `close − open` over matched event pairs sharing unit and subject.
fn paired_sum(events: &[&SimEvent], open: &EventKind, close: &EventKind) -> Seconds {
    let mut starts: HashMap<(Option<UnitId>, &str), Vec<Seconds>> = HashMap::new();
    let mut total = 0.0;
    for e in events {
        let key = (e.unit_id, e.subject.as_str());
        if &e.kind == open {
            starts.entry(key).or_default().push(e.timestamp);
        } else if &e.kind == close {
            if let Some(t0) = starts.get_mut(&key).and_then(Vec::pop) {
                total += e.timestamp - t0;
            }
        }
    }
    total
}

fn function_intervals(events: &[&SimEvent]) -> Vec<(Seconds, Seconds)> {
    let mut starts: HashMap<(Option<UnitId>, &str), Seconds> = HashMap::new();
    let mut out = Vec::new();
    for e in events {
        match e.kind {
            EventKind::FunctionStart => {
                starts.insert((e.unit_id, e.subject.as_str()), e.timestamp);
            }
            EventKind::FunctionEnd => {
                if let Some(t0) = starts.remove(&(e.unit_id, e.subject.as_str())) {
                    out.push((t0, e.timestamp));
                }
            }
            _ => {}
        }
    }
    out
}

fn overlapping(mut intervals: Vec<(Seconds, Seconds)>) -> bool {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    intervals.windows(2).any(|w| w[1].0 < w[0].1 - crate::model::TIME_RESOLUTION)
}

/// `P(r)`: total function execution time of the request.
pub fn computation_time(log: &EventLog, request: RequestId) -> Result<Seconds> {
    let events = request_events(log, request);
    span(&events).map_err(|_| SimError::NotCompleted(request))?;
    Ok(paired_sum(&events, &EventKind::FunctionStart, &EventKind::FunctionEnd))
}

/// `D(r)`: completion at the sink minus arrival at the source.
pub fn total_duration(log: &EventLog, request: RequestId) -> Result<Seconds> {
    let events = request_events(log, request);
    let (a, c) = span(&events).map_err(|_| SimError::NotCompleted(request))?;
    Ok(c - a)
}

/// `C_T(r) = D(r) − P(r)`, clamped at zero.
pub fn communication_time(log: &EventLog, request: RequestId) -> Result<Seconds> {
    Ok(request_timings(log, request)?.c_t)
}

/// `DAT(r)`: total residency of the request's units in storage.
pub fn disk_access_time(log: &EventLog, request: RequestId) -> Result<Seconds> {
    let events = request_events(log, request);
    span(&events).map_err(|_| SimError::NotCompleted(request))?;
    Ok(paired_sum(&events, &EventKind::StorageArrive, &EventKind::StorageDepart))
}

/// `NCT(r) = C_T(r) − DAT(r)`, clamped at zero.
pub fn network_communication_time(log: &EventLog, request: RequestId) -> Result<Seconds> {
    Ok(request_timings(log, request)?.nct)
}

pub fn request_timings(log: &EventLog, request: RequestId) -> Result<RequestTimings> {
    timings_from(request, &request_events(log, request))
}

fn timings_from(request: RequestId, events: &[&SimEvent]) -> Result<RequestTimings> {
    let (a, c) = span(events).map_err(|_| SimError::NotCompleted(request))?;
    let intervals = function_intervals(events);
    let p: Seconds = intervals.iter().map(|(s, e)| e - s).sum();
    let d = c - a;
    let dat = paired_sum(events, &EventKind::StorageArrive, &EventKind::StorageDepart);
    let c_t = (d - p).max(0.0);
    Ok(RequestTimings {
        request_id: request,
        p,
        d,
        c_t,
        dat,
        nct: (c_t - dat).max(0.0),
        overlap: overlapping(intervals),
    })
}

/// Timings for every completed request in the log, in request-id order.
pub fn all_timings(log: &EventLog) -> Result<Vec<RequestTimings>> {
    let mut by_request: BTreeMap<RequestId, Vec<&SimEvent>> = BTreeMap::new();
    for e in log.events() {
        by_request.entry(e.request_id).or_default().push(e);
    }
    by_request
        .iter()
        .filter(|(_, ev)| ev.iter().any(|e| e.kind == EventKind::RequestCompleted))
        .map(|(id, ev)| timings_from(*id, ev))
        .collect()
}

/// Identifies one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLabel {
    pub application: Application,
    pub strategy: Strategy,
    pub users: usize,
    #[serde(default)]
    pub fps: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub label: RunLabel,
    pub injected: usize,
    pub completed: usize,
    pub dropped: usize,
    pub in_flight: usize,
    /// `dropped / injected`, counted per request.
    pub drop_ratio: f64,
    pub mean_p: Seconds,
    pub mean_d: Seconds,
    pub mean_c_t: Seconds,
    pub mean_dat: Seconds,
    pub mean_nct: Seconds,
    /// Last completion minus first arrival.
    pub processing_time: Seconds,
    /// Unweighted mean over the three tiers.
    pub cpu_percent: f64,
    pub memory_percent: f64,
    pub disk_read_kb: f64,
    pub disk_write_kb: f64,
    pub net_rx_kb: f64,
    pub net_tx_kb: f64,
    pub timings: Vec<RequestTimings>,
}

/// One CSV line of a grid file. Column names are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub application: Application,
    pub strategy: Strategy,
    pub users: usize,
    pub fps: Option<u32>,
    pub injected: usize,
    pub completed: usize,
    pub dropped: usize,
    pub in_flight: usize,
    pub drop_ratio: f64,
    pub mean_p: f64,
    pub mean_d: f64,
    pub mean_c_t: f64,
    pub mean_dat: f64,
    pub mean_nct: f64,
    pub processing_time: f64,
    pub cpu_percent: f64,
    pub memory_percent: f64,
    pub disk_read_kb: f64,
    pub disk_write_kb: f64,
    pub net_rx_kb: f64,
    pub net_tx_kb: f64,
}

impl RunSummary {
    pub fn row(&self) -> SummaryRow {
        SummaryRow {
            application: self.label.application,
            strategy: self.label.strategy,
            users: self.label.users,
            fps: self.label.fps,
            injected: self.injected,
            completed: self.completed,
            dropped: self.dropped,
            in_flight: self.in_flight,
            drop_ratio: self.drop_ratio,
            mean_p: self.mean_p,
            mean_d: self.mean_d,
            mean_c_t: self.mean_c_t,
            mean_dat: self.mean_dat,
            mean_nct: self.mean_nct,
            processing_time: self.processing_time,
            cpu_percent: self.cpu_percent,
            memory_percent: self.memory_percent,
            disk_read_kb: self.disk_read_kb,
            disk_write_kb: self.disk_write_kb,
            net_rx_kb: self.net_rx_kb,
            net_tx_kb: self.net_tx_kb,
        }
    }
}

impl From<SummaryRow> for RunSummary {
    /// A summary without per-request timings, as read back from a grid file.
    fn from(r: SummaryRow) -> Self {
        RunSummary {
            label: RunLabel { application: r.application, strategy: r.strategy, users: r.users, fps: r.fps },
            injected: r.injected,
            completed: r.completed,
            dropped: r.dropped,
            in_flight: r.in_flight,
            drop_ratio: r.drop_ratio,
            mean_p: r.mean_p,
            mean_d: r.mean_d,
            mean_c_t: r.mean_c_t,
            mean_dat: r.mean_dat,
            mean_nct: r.mean_nct,
            processing_time: r.processing_time,
            cpu_percent: r.cpu_percent,
            memory_percent: r.memory_percent,
            disk_read_kb: r.disk_read_kb,
            disk_write_kb: r.disk_write_kb,
            net_rx_kb: r.net_rx_kb,
            net_tx_kb: r.net_tx_kb,
            timings: Vec::new(),
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Aggregates a finished run. Request counts come from the log itself:
/// a request is dropped when any of its units was dropped and it never
/// completed.
pub fn summarize_run(label: RunLabel, log: &EventLog, ledger: &ResourceLedger) -> Result<RunSummary> {
    let mut arrived: BTreeMap<RequestId, Seconds> = BTreeMap::new();
    let mut completed: BTreeMap<RequestId, Seconds> = BTreeMap::new();
    let mut dropped = std::collections::BTreeSet::new();
    for e in log.events() {
        match e.kind {
            EventKind::RequestArrived => {
                arrived.insert(e.request_id, e.timestamp);
            }
            EventKind::RequestCompleted => {
                completed.insert(e.request_id, e.timestamp);
            }
            EventKind::UnitDropped { .. } => {
                dropped.insert(e.request_id);
            }
            _ => {}
        }
    }
    let dropped = dropped.iter().filter(|id| !completed.contains_key(id)).count();
    let injected = arrived.len();
    let timings = all_timings(log)?;

    let first = arrived.values().copied().fold(f64::INFINITY, f64::min);
    let last = completed.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let processing_time = if first.is_finite() && last.is_finite() { last - first } else { 0.0 };

    let mut cpu = 0.0;
    let mut mem = 0.0;
    let (mut rd, mut wr, mut rx, mut tx) = (0u64, 0u64, 0u64, 0u64);
    let has_window = ledger.window().1 > ledger.window().0;
    for kind in TierKind::ALL {
        if has_window {
            cpu += cpu_utilization(ledger, kind)?;
        }
        mem += memory_utilization(ledger, kind)?;
        let u = ledger.usage(kind);
        rd += u.disk_read_bytes;
        wr += u.disk_write_bytes;
        rx += u.net_rx_bytes;
        tx += u.net_tx_bytes;
    }

    Ok(RunSummary {
        label,
        injected,
        completed: completed.len(),
        dropped,
        in_flight: injected - completed.len() - dropped,
        drop_ratio: if injected == 0 { 0.0 } else { dropped as f64 / injected as f64 },
        mean_p: mean(timings.iter().map(|t| t.p)),
        mean_d: mean(timings.iter().map(|t| t.d)),
        mean_c_t: mean(timings.iter().map(|t| t.c_t)),
        mean_dat: mean(timings.iter().map(|t| t.dat)),
        mean_nct: mean(timings.iter().map(|t| t.nct)),
        processing_time,
        cpu_percent: cpu / 3.0,
        memory_percent: mem / 3.0,
        disk_read_kb: rd as f64 / KB,
        disk_write_kb: wr as f64 / KB,
        net_rx_kb: rx as f64 / KB,
        net_tx_kb: tx as f64 / KB,
        timings,
    })
}
