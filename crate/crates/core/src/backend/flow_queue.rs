//! Data-flow-tool strategy: an edge agent forwards compressed units to a
//! fog flow engine whose processors are chained by bounded priority
//! queues with backpressure. Nothing is ever dropped.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Core, RunInput, RunOutput};
use crate::error::{Result, SimError};
use crate::faas::{Invocation, InvokeOutcome};
use crate::kernel::Kernel;
use crate::log::EventKind;
use crate::model::{DataUnit, InvocationMode, Seconds, StorageRole, TierKind};
use crate::sim::Recorder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityScheme {
    #[default]
    Fifo,
    SmallestFirst,
    OldestFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    Deferred,
}

#[derive(Debug, Clone)]
struct Entry {
    unit: DataUnit,
    arrived_at: Seconds,
    seq: u64,
}

/// A bounded connection queue between two processors.
///
/// Occupancy counts waiting units, units taken by the consuming processor
/// but not yet committed downstream, and slots reserved by producers whose
/// output is still in transit.
#[derive(Debug, Clone)]
pub struct FlowQueue {
    pub name: String,
    pub tier: TierKind,
    pub capacity: usize,
    pub backpressure_threshold: usize,
    pub priority: PriorityScheme,
    entries: Vec<Entry>,
    in_service: usize,
    reserved: usize,
    next_seq: u64,
    max_occupancy: usize,
}

impl FlowQueue {
    pub fn new(name: impl Into<String>, tier: TierKind, capacity: usize, threshold: usize, priority: PriorityScheme) -> Self {
        FlowQueue {
            name: name.into(),
            tier,
            capacity,
            backpressure_threshold: threshold.min(capacity),
            priority,
            entries: Vec::new(),
            in_service: 0,
            reserved: 0,
            next_seq: 0,
            max_occupancy: 0,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.entries.len() + self.in_service + self.reserved
    }

    pub fn waiting(&self) -> usize {
        self.entries.len()
    }

    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    /// True while upstream admission is not suspended.
    pub fn admits(&self) -> bool {
        self.occupancy() < self.backpressure_threshold
    }

    /// Claims a slot for a unit that will be enqueued later.
    pub fn reserve(&mut self) -> bool {
        if !self.admits() {
            return false;
        }
        self.reserved += 1;
        self.track();
        true
    }

    pub fn enqueue(&mut self, rec: &mut Recorder, now: Seconds, unit: DataUnit) -> Result<Admission> {
        if !self.admits() {
            return Ok(Admission::Deferred);
        }
        self.push(rec, now, unit)?;
        Ok(Admission::Admitted)
    }

    /// Enqueues into a slot claimed earlier with `reserve`.
    pub fn enqueue_reserved(&mut self, rec: &mut Recorder, now: Seconds, unit: DataUnit) -> Result<()> {
        debug_assert!(self.reserved > 0);
        self.reserved -= 1;
        self.push(rec, now, unit)
    }

    fn push(&mut self, rec: &mut Recorder, now: Seconds, unit: DataUnit) -> Result<()> {
        rec.unit_event(now, EventKind::StorageArrive, &unit, &self.name)?;
        rec.ledger.mem_alloc(self.tier, now, unit.size);
        self.entries.push(Entry { unit, arrived_at: now, seq: self.next_seq });
        self.next_seq += 1;
        self.track();
        Ok(())
    }

    /// Removes the next unit per the priority scheme. Its slot stays taken
    /// until `commit`.
    pub fn dequeue(&mut self, rec: &mut Recorder, now: Seconds) -> Result<DataUnit> {
        let key = |e: &Entry| match self.priority {
            PriorityScheme::Fifo => (0, e.arrived_at, e.seq),
            PriorityScheme::SmallestFirst => (e.unit.size, e.arrived_at, e.seq),
            PriorityScheme::OldestFirst => (0, e.unit.created_at, e.seq),
        };
        let idx = (0..self.entries.len())
            .min_by(|&a, &b| {
                let (ka, kb) = (key(&self.entries[a]), key(&self.entries[b]));
                ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
            })
            .ok_or_else(|| SimError::EmptyQueue(self.name.clone()))?;
        let entry = self.entries.remove(idx);
        rec.unit_event(now, EventKind::StorageDepart, &entry.unit, &self.name)?;
        rec.ledger.mem_free(self.tier, now, entry.unit.size);
        self.in_service += 1;
        Ok(entry.unit)
    }

    /// The consumer finished with a dequeued unit; frees its slot.
    pub fn commit(&mut self) {
        debug_assert!(self.in_service > 0);
        self.in_service -= 1;
    }

    fn track(&mut self) {
        self.max_occupancy = self.max_occupancy.max(self.occupancy());
    }
}

#[derive(Debug)]
enum Action {
    Arrive(usize),
    FogArrive { unit: DataUnit, sent_at: Seconds, wire: u64 },
    FunctionDone { stage: usize, unit: DataUnit, output: u64 },
    CloudArrive { unit: DataUnit, sent_at: Seconds },
}

struct Dft<'a> {
    core: Core,
    input: &'a RunInput<'a>,
    queues: Vec<FlowQueue>,
    /// Edge agent units waiting for room at the first fog queue, with the
    /// time they were handed to the agent.
    outbox: VecDeque<(DataUnit, Seconds)>,
    /// Outputs a processor could not yet place downstream.
    spill: Vec<VecDeque<DataUnit>>,
    spill_names: Vec<String>,
    running: Vec<u32>,
    sink: String,
}

pub(crate) fn run_dft_pipeline(input: &RunInput<'_>) -> Result<RunOutput> {
    let spec = input.pipeline;
    let params = &input.params.flow_queue;
    let mut queues = Vec::with_capacity(spec.stages.len());
    for f in &spec.stages {
        let name = f.input_storage.clone().unwrap_or_else(|| format!("{}-queue", f.name));
        let capacity = match spec.storage(&name).map(|s| s.capacity) {
            Some(crate::model::Capacity::Bounded(n)) => n,
            _ => params.capacity,
        };
        let tier = spec.storage(&name).map_or(f.tier_placement, |s| s.tier_placement);
        queues.push(FlowQueue::new(name, tier, capacity, params.backpressure_threshold, params.priority));
    }
    let sink = spec
        .sinks()
        .next()
        .map(|s| s.name.clone())
        .ok_or_else(|| SimError::Config("pipeline has no sink".into()))?;
    let n = spec.stages.len();
    let mut sim = Dft {
        core: Core::new(input, crate::model::Capacity::Unbounded, None)?,
        input,
        queues,
        outbox: VecDeque::new(),
        spill: vec![VecDeque::new(); n],
        spill_names: spec.stages.iter().map(|f| format!("{}:out", f.name)).collect(),
        running: vec![0; n],
        sink,
    };
    let mut kernel = Kernel::with_budget(input.event_budget);
    for (i, r) in input.requests.iter().enumerate() {
        kernel.schedule(r.record.arrival_at_source, Action::Arrive(i))?;
    }
    if let Err(e) = kernel.run_until_idle(|k, t, a| sim.handle(k, t, a)) {
        return Err(sim.core.abort(e));
    }
    for q in &sim.queues {
        sim.core.note_occupancy(&q.name, q.max_occupancy());
    }
    debug_assert!(spec.storage(&sim.sink).is_some_and(|s| s.role == StorageRole::Sink));
    Ok(sim.core.finish())
}

impl Dft<'_> {
    fn overhead(&mut self, tier: TierKind, processors: u32) {
        let per = self.input.params.flow_queue.processor_overhead;
        self.core.rec.ledger.add_cpu(tier, per * f64::from(processors));
    }

    fn handle(&mut self, k: &mut Kernel<Action>, t: Seconds, action: Action) -> Result<()> {
        match action {
            Action::Arrive(i) => {
                let unit = self.core.arrive(t, &self.input.requests[i])?;
                // receive + compress
                self.overhead(TierKind::Edge, 2);
                self.outbox.push_back((unit, t));
                self.flush_outbox(k, t)
            }
            Action::FogArrive { unit, sent_at, wire } => {
                self.core.rec.net_transfer(sent_at, t, &unit, wire, TierKind::Edge, TierKind::Fog)?;
                // decompress
                self.overhead(TierKind::Fog, 1);
                self.queues[0].enqueue_reserved(&mut self.core.rec, t, unit)?;
                self.try_start(k, t, 0)
            }
            Action::FunctionDone { stage, unit, output } => self.function_done(k, t, stage, unit, output),
            Action::CloudArrive { unit, sent_at } => {
                self.core.rec.net_transfer(sent_at, t, &unit, unit.size, TierKind::Fog, TierKind::Cloud)?;
                // receive + store
                self.overhead(TierKind::Cloud, 2);
                let sink = self.sink.clone();
                self.core.deliver(t, &unit, &sink)
            }
        }
    }

    fn flush_outbox(&mut self, k: &mut Kernel<Action>, t: Seconds) -> Result<()> {
        let ratio = self.input.params.flow_queue.compress_ratio;
        while !self.outbox.is_empty() && self.queues[0].reserve() {
            let (unit, queued_at) = self.outbox.pop_front().expect("non-empty");
            let wire = DataUnit::scaled_size(unit.size, ratio);
            let at = self.core.net.send(t, TierKind::Edge, TierKind::Fog, wire)?;
            k.schedule(at, Action::FogArrive { unit, sent_at: queued_at, wire })?;
        }
        Ok(())
    }

    fn downstream_admits(&self, stage: usize) -> bool {
        stage + 1 >= self.queues.len() || self.queues[stage + 1].admits()
    }

    fn try_start(&mut self, k: &mut Kernel<Action>, t: Seconds, stage: usize) -> Result<()> {
        let replicas = self.core.faas.spec(stage).replicas;
        while self.running[stage] < replicas
            && self.spill[stage].is_empty()
            && self.queues[stage].waiting() > 0
            && self.downstream_admits(stage)
        {
            if stage + 1 < self.queues.len() {
                self.queues[stage + 1].reserve();
            }
            let unit = self.queues[stage].dequeue(&mut self.core.rec, t)?;
            self.overhead(TierKind::Fog, 1);
            let inv = Invocation {
                function: stage,
                unit,
                mode: InvocationMode::Sync,
                enqueued_at: t,
                token: 0,
                record_wait: false,
            };
            let InvokeOutcome::Assigned(inv) = self.core.faas.invoke(&mut self.core.rec, t, inv)? else {
                return Err(SimError::Config(format!("processor for stage {stage} outran its function replicas")));
            };
            let exec = self.core.faas.begin(&mut self.core.rec, t, stage, &inv.unit)?;
            self.running[stage] += 1;
            k.schedule(exec.end, Action::FunctionDone { stage, unit: inv.unit, output: exec.output_size })?;
        }
        Ok(())
    }

    fn function_done(&mut self, k: &mut Kernel<Action>, t: Seconds, stage: usize, unit: DataUnit, output: u64) -> Result<()> {
        self.core.faas.finish(&mut self.core.rec, t, stage, &unit)?;
        self.core.faas.release(&mut self.core.rec, t, stage)?;
        self.running[stage] -= 1;

        let spec = self.core.faas.spec(stage);
        let outputs = if spec.fans_out {
            self.core.split(t, &unit, output, self.input.fanout, stage + 1)
        } else {
            vec![Core::advance(&unit, output, stage + 1)]
        };
        let next = stage + 1;
        if next < self.queues.len() {
            let mut outputs = outputs.into_iter();
            if let Some(first) = outputs.next() {
                self.queues[next].enqueue_reserved(&mut self.core.rec, t, first)?;
            }
            for extra in outputs {
                if self.spill[stage].is_empty() && self.queues[next].admits() {
                    self.queues[next].enqueue(&mut self.core.rec, t, extra)?;
                } else {
                    self.core.rec.unit_event(t, EventKind::StorageArrive, &extra, &self.spill_names[stage])?;
                    self.core.rec.ledger.mem_alloc(TierKind::Fog, t, extra.size);
                    self.spill[stage].push_back(extra);
                }
            }
            self.try_start(k, t, next)?;
        } else {
            for out in outputs {
                let at = self.core.net.send(t, TierKind::Fog, TierKind::Cloud, out.size)?;
                k.schedule(at, Action::CloudArrive { unit: out, sent_at: t })?;
            }
        }

        self.queues[stage].commit();
        if stage == 0 {
            self.flush_outbox(k, t)?;
        } else {
            self.flush_spill(k, t, stage - 1)?;
        }
        self.try_start(k, t, stage)
    }

    /// Moves spilled outputs of `stage` into the next queue as room allows.
    fn flush_spill(&mut self, k: &mut Kernel<Action>, t: Seconds, stage: usize) -> Result<()> {
        let next = stage + 1;
        while !self.spill[stage].is_empty() && self.queues[next].admits() {
            let unit = self.spill[stage].pop_front().expect("non-empty");
            self.core.rec.unit_event(t, EventKind::StorageDepart, &unit, &self.spill_names[stage])?;
            self.core.rec.ledger.mem_free(TierKind::Fog, t, unit.size);
            self.queues[next].enqueue(&mut self.core.rec, t, unit)?;
        }
        self.try_start(k, t, next)?;
        self.try_start(k, t, stage)
    }
}
