//! The three intermediate-data strategies. Each backend drives one
//! pipeline over one request stream on a fresh kernel and returns the
//! event log plus the resource ledger.

pub mod flow_queue;
pub mod object_store;
pub mod pubsub;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use flow_queue::{FlowQueue, PriorityScheme};
pub use object_store::{Bucket, ObjectStore};
pub use pubsub::{PublishOutcome, Topic};

use crate::error::{Result, SimError};
use crate::faas::FaasEngine;
use crate::kernel::DEFAULT_EVENT_BUDGET;
use crate::ledger::ResourceLedger;
use crate::log::{EventKind, EventLog};
use crate::model::{
    validate_pipeline, Capacity, DataUnit, IdAllocator, PipelineSpec, RequestId, RequestRecord, RequestStatus,
    Seconds, Strategy, TierKind,
};
use crate::sim::{Network, Recorder, Topology};
use crate::workloads::GeneratedRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowQueueParams {
    pub capacity: usize,
    pub backpressure_threshold: usize,
    pub priority: PriorityScheme,
    /// CPU seconds charged per unit per processor.
    pub processor_overhead: Seconds,
    /// Edge compression ratio; the fog decompresses back to full size.
    pub compress_ratio: f64,
}

impl Default for FlowQueueParams {
    fn default() -> Self {
        FlowQueueParams {
            capacity: 100,
            backpressure_threshold: 100,
            priority: PriorityScheme::Fifo,
            processor_overhead: 0.05,
            compress_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectStoreParams {
    /// CPU seconds the storage server spends per put or get.
    pub request_overhead: Seconds,
    /// Probability a result lands in the first of several sink buckets.
    pub p_success: f64,
}

impl Default for ObjectStoreParams {
    fn default() -> Self {
        ObjectStoreParams { request_overhead: 0.02, p_success: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PubSubParams {
    pub topic_capacity: Capacity,
    /// Broker-side byte limit per topic, if any.
    pub topic_max_bytes: Option<u64>,
    pub gateway_capacity: Capacity,
    pub gateway_max_bytes: Option<u64>,
    /// CPU seconds per publish or delivery on the broker.
    pub broker_overhead: Seconds,
    /// CPU seconds per dispatch in the connector.
    pub connector_overhead: Seconds,
}

impl Default for PubSubParams {
    fn default() -> Self {
        PubSubParams {
            topic_capacity: Capacity::Bounded(64),
            topic_max_bytes: None,
            gateway_capacity: Capacity::Bounded(32),
            gateway_max_bytes: None,
            broker_overhead: 0.005,
            connector_overhead: 0.005,
        }
    }
}

/// Resident memory of long-running services, bytes per tier (edge, fog, cloud).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryBaseline {
    pub faas: [u64; 3],
    pub dft: [u64; 3],
    pub oss: [u64; 3],
    pub mqtt: [u64; 3],
}

impl Default for MemoryBaseline {
    fn default() -> Self {
        const MB: u64 = 1_000_000;
        MemoryBaseline {
            faas: [0, 600 * MB, 600 * MB],
            dft: [300 * MB, 1200 * MB, 1200 * MB],
            oss: [50 * MB, 400 * MB, 400 * MB],
            mqtt: [20 * MB, 150 * MB, 0],
        }
    }
}

impl MemoryBaseline {
    pub fn for_strategy(&self, strategy: Strategy) -> [u64; 3] {
        let own = match strategy {
            Strategy::Dft => self.dft,
            Strategy::Oss => self.oss,
            Strategy::Mqtt => self.mqtt,
        };
        [0, 1, 2].map(|i| own[i] + self.faas[i])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendParams {
    pub flow_queue: FlowQueueParams,
    pub object_store: ObjectStoreParams,
    pub pubsub: PubSubParams,
    pub memory_baseline: MemoryBaseline,
}

/// Everything one run needs.
#[derive(Debug, Clone)]
pub struct RunInput<'a> {
    pub pipeline: &'a PipelineSpec,
    pub topology: &'a Topology,
    pub params: &'a BackendParams,
    pub requests: &'a [GeneratedRequest],
    /// Units produced by a fan-out function per input unit.
    pub fanout: usize,
    pub seed: u64,
    pub event_budget: u64,
}

impl<'a> RunInput<'a> {
    pub fn new(
        pipeline: &'a PipelineSpec,
        topology: &'a Topology,
        params: &'a BackendParams,
        requests: &'a [GeneratedRequest],
    ) -> Self {
        RunInput { pipeline, topology, params, requests, fanout: 1, seed: 0, event_budget: DEFAULT_EVENT_BUDGET }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub injected: usize,
    pub completed: usize,
    pub dropped: usize,
    pub in_flight: usize,
    pub broker_drops: usize,
    pub gateway_drops: usize,
    /// Highest occupancy observed per storage unit.
    pub max_occupancy: BTreeMap<String, usize>,
    /// Highest concurrent replica use per function.
    pub max_replicas_in_use: BTreeMap<String, u32>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub log: EventLog,
    pub ledger: ResourceLedger,
    pub requests: Vec<RequestRecord>,
    pub stats: RunStats,
    /// True when some function split a unit, so per-request function
    /// intervals may overlap.
    pub fan_out: bool,
}

/// Runs the backend matching `input.pipeline.strategy`.
pub fn run_pipeline(input: &RunInput<'_>) -> Result<RunOutput> {
    let violations = validate_pipeline(input.pipeline);
    if !violations.is_empty() {
        return Err(SimError::InvalidPipeline(violations));
    }
    let topo = input.topology.violations();
    if !topo.is_empty() {
        return Err(SimError::InvalidPipeline(topo));
    }
    if input.requests.is_empty() {
        return Err(SimError::InvalidLoad("no requests to inject".into()));
    }
    match input.pipeline.strategy {
        Strategy::Dft => flow_queue::run_dft_pipeline(input),
        Strategy::Oss => object_store::run_oss_pipeline(input),
        Strategy::Mqtt => pubsub::run_mqtt_pipeline(input),
    }
}

#[derive(Debug)]
struct RequestState {
    record: RequestRecord,
    /// Units of this request still travelling towards the sink.
    outstanding: usize,
}

/// Bookkeeping shared by all backends: ids, the recorder, the network and
/// the function engine, plus request lifecycle tracking.
#[derive(Debug)]
pub(crate) struct Core {
    pub rec: Recorder,
    pub net: Network,
    pub ids: IdAllocator,
    pub faas: FaasEngine,
    requests: BTreeMap<RequestId, RequestState>,
    pub stats: RunStats,
    pub fan_out: bool,
}

impl Core {
    pub fn new(input: &RunInput<'_>, gateway: Capacity, gateway_bytes: Option<u64>) -> Result<Self> {
        let mut rec = Recorder::new(ResourceLedger::new(input.topology.tier_array()?));
        let baseline = input.params.memory_baseline.for_strategy(input.pipeline.strategy);
        for kind in TierKind::ALL {
            rec.ledger.mem_alloc(kind, 0.0, baseline[kind.index()]);
        }
        let next_id = input.requests.iter().map(|r| r.record.request_id.0 + 1).max().unwrap_or(0);
        Ok(Core {
            rec,
            net: Network::new(input.topology),
            ids: IdAllocator::starting_at(next_id),
            faas: FaasEngine::new(&input.pipeline.stages, gateway, gateway_bytes),
            requests: BTreeMap::new(),
            stats: RunStats::default(),
            fan_out: false,
        })
    }

    /// Registers the request and returns its initial data unit.
    pub fn arrive(&mut self, now: Seconds, req: &GeneratedRequest) -> Result<DataUnit> {
        let id = req.record.request_id;
        self.rec.emit(now, EventKind::RequestArrived, id, None, "")?;
        let mut record = req.record.clone();
        record.arrival_at_source = now;
        record.status = RequestStatus::InFlight;
        self.requests.insert(id, RequestState { record, outstanding: 1 });
        self.stats.injected += 1;
        Ok(DataUnit { unit_id: self.ids.unit(), request_id: id, size: req.unit_size, stage_index: 0, created_at: now })
    }

    /// The output of a stage: same unit, new size and stage position.
    pub fn advance(unit: &DataUnit, size: u64, stage: usize) -> DataUnit {
        DataUnit { size, stage_index: stage, ..unit.clone() }
    }

    /// Splits a function's output into `count` fresh units.
    pub fn split(&mut self, now: Seconds, parent: &DataUnit, total: u64, count: usize, stage: usize) -> Vec<DataUnit> {
        let count = count.max(1);
        self.fan_out |= count > 1;
        if let Some(r) = self.requests.get_mut(&parent.request_id) {
            r.outstanding += count - 1;
        }
        let each = (total / count as u64).max(1);
        (0..count)
            .map(|_| DataUnit {
                unit_id: self.ids.unit(),
                request_id: parent.request_id,
                size: each,
                stage_index: stage,
                created_at: now,
            })
            .collect()
    }

    /// Stores a unit in a cloud sink; completes the request once its last
    /// outstanding unit lands.
    pub fn deliver(&mut self, now: Seconds, unit: &DataUnit, sink: &str) -> Result<()> {
        self.rec.disk_write(now, unit, TierKind::Cloud, sink)?;
        let state = self.requests.get_mut(&unit.request_id).ok_or(SimError::UnknownRequest(unit.request_id))?;
        state.outstanding = state.outstanding.saturating_sub(1);
        if state.outstanding == 0 && state.record.status == RequestStatus::InFlight {
            state.record.status = RequestStatus::Completed;
            state.record.completion_at_sink = Some(now);
            self.stats.completed += 1;
            self.rec.emit(now, EventKind::RequestCompleted, unit.request_id, None, "")?;
        }
        Ok(())
    }

    /// Marks the owning request dropped. The `UnitDropped` event has
    /// already been logged by whoever discarded the unit.
    pub fn lose(&mut self, unit: &DataUnit) -> Result<()> {
        let state = self.requests.get_mut(&unit.request_id).ok_or(SimError::UnknownRequest(unit.request_id))?;
        state.outstanding = state.outstanding.saturating_sub(1);
        if state.record.status == RequestStatus::InFlight {
            state.record.status = RequestStatus::Dropped;
            self.stats.dropped += 1;
        }
        Ok(())
    }

    pub fn note_occupancy(&mut self, name: &str, occupancy: usize) {
        let slot = self.stats.max_occupancy.entry(name.to_string()).or_default();
        *slot = (*slot).max(occupancy);
    }

    /// Wraps a mid-run failure together with the log written so far.
    pub fn abort(&mut self, cause: SimError) -> SimError {
        SimError::Aborted { cause: Box::new(cause), partial: Box::new(std::mem::take(&mut self.rec.log)) }
    }

    pub fn finish(mut self) -> RunOutput {
        let start = self.requests.values().map(|r| r.record.arrival_at_source).fold(f64::INFINITY, f64::min);
        let end = self.rec.log.events().iter().map(|e| e.timestamp).fold(f64::NEG_INFINITY, f64::max);
        if start.is_finite() && end.is_finite() {
            self.rec.ledger.set_window(start, end);
        }
        self.stats.in_flight =
            self.requests.values().filter(|r| r.record.status == RequestStatus::InFlight).count();
        for id in 0..self.faas.len() {
            self.stats.max_replicas_in_use.insert(self.faas.spec(id).name.clone(), self.faas.max_in_flight(id));
        }
        RunOutput {
            log: self.rec.log,
            ledger: self.rec.ledger,
            requests: self.requests.into_values().map(|r| r.record).collect(),
            stats: self.stats,
            fan_out: self.fan_out,
        }
    }
}
