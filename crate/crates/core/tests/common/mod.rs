//! Helpers shared by the integration tests: random small instances and
//! brute-force scans of raw event logs that do not reuse the metrics code.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use sdpbench::backend::{run_pipeline, BackendParams, RunInput, RunOutput};
use sdpbench::faas::execute;
use sdpbench::log::{EventKind, EventLog, SimEvent};
use sdpbench::model::{
    Application, Capacity, PipelineSpec, RequestId, RequestRecord, RequestStatus, Strategy, UnitId,
};
use sdpbench::sim::Topology;
use sdpbench::workloads::{build_pipeline, Calibration, GeneratedRequest};

pub const EPS: f64 = 1e-9;

pub struct Instance {
    pub strategy: Strategy,
    pub pipeline: PipelineSpec,
    pub params: BackendParams,
    pub requests: Vec<GeneratedRequest>,
    pub fanout: usize,
    pub seed: u64,
}

impl Instance {
    pub fn run(&self, topology: &Topology) -> RunOutput {
        let mut input = RunInput::new(&self.pipeline, topology, &self.params, &self.requests);
        input.fanout = self.fanout;
        input.seed = self.seed;
        run_pipeline(&input).expect("instance runs")
    }
}

/// A pipeline of at most three stages with random service models, one to
/// five requests and random backend limits. Flow-queue instances keep one
/// replica per stage and ample queue room so a single-server replay applies.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let cal = Calibration::embedded();
    let app = [Application::Aeneas, Application::PocketSphinx, Application::Video][rng.random_range(0..3)];
    let strategy = if rng.random_bool(0.5) { Strategy::Dft } else { Strategy::Mqtt };
    let mut params = cal.backends.clone();
    match strategy {
        Strategy::Dft => {
            params.flow_queue.capacity = 1_000;
            params.flow_queue.backpressure_threshold = 1_000;
            params.flow_queue.compress_ratio = rng.random_range(0.2..1.0);
        }
        _ => {
            params.pubsub.topic_capacity =
                if rng.random_bool(0.5) { Capacity::Unbounded } else { Capacity::Bounded(rng.random_range(1..6)) };
            params.pubsub.gateway_capacity =
                if rng.random_bool(0.5) { Capacity::Unbounded } else { Capacity::Bounded(rng.random_range(1..4)) };
            params.pubsub.topic_max_bytes = None;
        }
    }
    let mut pipeline = build_pipeline(app, cal.profile(app).unwrap(), strategy, &params).unwrap();
    for f in &mut pipeline.stages {
        f.base_time = rng.random_range(0.01..2.0);
        f.per_byte_time = if rng.random_bool(0.5) { rng.random_range(0.0..1e-6) } else { 0.0 };
        f.output_ratio = rng.random_range(0.05..1.5);
        f.replicas = if strategy == Strategy::Dft { 1 } else { rng.random_range(1..=2) };
    }
    let n = rng.random_range(1..=5);
    let rate: f64 = rng.random_range(0.2..5.0);
    let burst = rng.random_bool(0.3);
    let mut clock = 0.0;
    let requests = (0..n)
        .map(|i| {
            if !burst {
                clock += -rng.random_range(1e-6f64..1.0).ln() / rate;
            }
            GeneratedRequest {
                record: RequestRecord {
                    request_id: RequestId(i as u64),
                    arrival_at_source: clock,
                    completion_at_sink: None,
                    status: RequestStatus::InFlight,
                },
                unit_size: rng.random_range(10_000..5_000_000),
            }
        })
        .collect();
    let fanout = if app == Application::Video { rng.random_range(2..=4) } else { 1 };
    Instance { strategy, pipeline, params, requests, fanout, seed: rng.random() }
}

pub fn completed_requests(log: &EventLog) -> Vec<RequestId> {
    let mut ids: Vec<RequestId> =
        log.events().iter().filter(|e| e.kind == EventKind::RequestCompleted).map(|e| e.request_id).collect();
    ids.sort();
    ids
}

fn events_of(log: &EventLog, r: RequestId) -> Vec<&SimEvent> {
    log.events().iter().filter(|e| e.request_id == r).collect()
}

/// For every closing event, walks back to the most recent unmatched opening
/// event with the same unit and subject.
fn brute_pairs(events: &[&SimEvent], open: &EventKind, close: &EventKind) -> f64 {
    let mut used = vec![false; events.len()];
    let mut total = 0.0;
    for (j, e) in events.iter().enumerate() {
        if &e.kind != close {
            continue;
        }
        for i in (0..j).rev() {
            let o = events[i];
            if !used[i] && &o.kind == open && o.unit_id == e.unit_id && o.subject == e.subject {
                used[i] = true;
                total += e.timestamp - o.timestamp;
                break;
            }
        }
    }
    total
}

pub fn brute_p(log: &EventLog, r: RequestId) -> f64 {
    brute_pairs(&events_of(log, r), &EventKind::FunctionStart, &EventKind::FunctionEnd)
}

pub fn brute_dat(log: &EventLog, r: RequestId) -> f64 {
    brute_pairs(&events_of(log, r), &EventKind::StorageArrive, &EventKind::StorageDepart)
}

pub fn brute_d(log: &EventLog, r: RequestId) -> f64 {
    let ev = events_of(log, r);
    let at = |k: EventKind| ev.iter().find(|e| e.kind == k).map(|e| e.timestamp).unwrap();
    at(EventKind::RequestCompleted) - at(EventKind::RequestArrived)
}

/// Time the request's payloads spent on links.
pub fn brute_link_time(log: &EventLog, r: RequestId) -> f64 {
    events_of(log, r)
        .iter()
        .map(|e| match e.kind {
            EventKind::NetTransfer { started_at, .. } => e.timestamp - started_at,
            _ => 0.0,
        })
        .sum()
}

/// Dequeue times a single FIFO server per flow queue would produce, given
/// the logged queue arrivals. Returns `(unit, queue, expected, logged)`.
pub fn replay_flow_queues(
    log: &EventLog,
    pipeline: &PipelineSpec,
    requests: &[GeneratedRequest],
) -> Vec<(UnitId, String, f64, f64)> {
    let size_of_request: HashMap<RequestId, u64> = requests.iter().map(|r| (r.record.request_id, r.unit_size)).collect();
    let mut out = Vec::new();
    for (stage, spec) in pipeline.stages.iter().enumerate() {
        let queue = spec.input_storage.as_deref().expect("flow-queue stage has a queue");
        let arrivals: Vec<&SimEvent> =
            log.events().iter().filter(|e| e.kind == EventKind::StorageArrive && e.subject == queue).collect();
        let departs: HashMap<UnitId, f64> = log
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::StorageDepart && e.subject == queue)
            .map(|e| (e.unit_id.unwrap(), e.timestamp))
            .collect();
        let mut free_at = f64::NEG_INFINITY;
        for a in arrivals {
            let unit = a.unit_id.unwrap();
            let mut size = size_of_request[&a.request_id];
            for earlier in &pipeline.stages[..stage] {
                size = execute(earlier, size).1;
            }
            let start = a.timestamp.max(free_at);
            free_at = start + execute(spec, size).0;
            out.push((unit, queue.to_string(), start, departs.get(&unit).copied().unwrap_or(f64::NAN)));
        }
    }
    out
}
