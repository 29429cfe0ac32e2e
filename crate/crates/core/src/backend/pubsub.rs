//! Publish/subscribe strategy: a fog broker holds one topic per stage, a
//! connector service feeds each topic to its function through the
//! gateway, and functions publish their output to the next topic.
//! Full buffers drop the newest unit.

use std::collections::VecDeque;

use super::{Core, RunInput, RunOutput};
use crate::error::{Result, SimError};
use crate::faas::{Invocation, InvokeOutcome};
use crate::kernel::Kernel;
use crate::log::{DropCause, EventKind};
use crate::model::{Capacity, DataUnit, InvocationMode, Seconds, StorageKind, TierKind};
use crate::sim::Recorder;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PublishOutcome {
    Accepted,
    Dropped,
}

#[derive(Debug, Clone)]
pub struct Topic {
    pub name: String,
    pub tier: TierKind,
    pub capacity: Capacity,
    pub max_bytes: Option<u64>,
    pending: VecDeque<DataUnit>,
    bytes: u64,
    drop_count: usize,
    max_len: usize,
}

impl Topic {
    pub fn new(name: impl Into<String>, tier: TierKind, capacity: Capacity, max_bytes: Option<u64>) -> Self {
        Topic { name: name.into(), tier, capacity, max_bytes, pending: VecDeque::new(), bytes: 0, drop_count: 0, max_len: 0 }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn drop_count(&self) -> usize {
        self.drop_count
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Buffers `unit`, or drops it if the buffer is full.
    pub fn publish(&mut self, rec: &mut Recorder, now: Seconds, unit: DataUnit) -> Result<PublishOutcome> {
        let fits = self.capacity.admits(self.pending.len()) && self.max_bytes.is_none_or(|m| self.bytes + unit.size <= m);
        if !fits {
            rec.unit_event(now, EventKind::UnitDropped { cause: DropCause::Broker }, &unit, &self.name)?;
            self.drop_count += 1;
            return Ok(PublishOutcome::Dropped);
        }
        rec.unit_event(now, EventKind::StorageArrive, &unit, &self.name)?;
        rec.ledger.mem_alloc(self.tier, now, unit.size);
        self.bytes += unit.size;
        self.pending.push_back(unit);
        self.max_len = self.max_len.max(self.pending.len());
        Ok(PublishOutcome::Accepted)
    }

    /// Delivers the oldest buffered unit to the subscriber.
    pub fn pop(&mut self, rec: &mut Recorder, now: Seconds) -> Result<DataUnit> {
        let unit = self.pending.pop_front().ok_or_else(|| SimError::EmptyQueue(self.name.clone()))?;
        rec.unit_event(now, EventKind::StorageDepart, &unit, &self.name)?;
        rec.ledger.mem_free(self.tier, now, unit.size);
        self.bytes -= unit.size;
        Ok(unit)
    }
}

#[derive(Debug)]
enum Action {
    Arrive(usize),
    Publish { unit: DataUnit, topic: usize, from: TierKind, sent_at: Seconds },
    /// Broker to connector hop finished.
    Relay { unit: DataUnit, stage: usize, sent_at: Seconds },
    /// Connector to gateway hop finished.
    Invoke { unit: DataUnit, stage: usize, sent_at: Seconds },
    FunctionDone { unit: DataUnit, stage: usize, output: u64 },
    SinkArrive { unit: DataUnit, from: TierKind, sent_at: Seconds },
}

struct Mqtt<'a> {
    core: Core,
    input: &'a RunInput<'a>,
    /// One topic per stage, then optionally a results topic.
    topics: Vec<Topic>,
    connector_busy: Vec<bool>,
    sink: (String, TierKind),
}

pub(crate) fn run_mqtt_pipeline(input: &RunInput<'_>) -> Result<RunOutput> {
    let spec = input.pipeline;
    let params = &input.params.pubsub;
    let mut topics = Vec::new();
    for f in &spec.stages {
        let name = f
            .input_storage
            .as_deref()
            .ok_or_else(|| SimError::Config(format!("function `{}` has no input topic", f.name)))?;
        let s = spec.storage(name).ok_or_else(|| SimError::Unknown { kind: "topic", name: name.to_string() })?;
        topics.push(Topic::new(&s.name, s.tier_placement, s.capacity, params.topic_max_bytes));
    }
    let consumed = |name: &str| spec.stages.iter().any(|f| f.input_storage.as_deref() == Some(name));
    if let Some(s) = spec.storage_units.iter().find(|s| s.kind == StorageKind::Topic && !consumed(&s.name)) {
        topics.push(Topic::new(&s.name, s.tier_placement, s.capacity, params.topic_max_bytes));
    }
    let sink = spec
        .sinks()
        .next()
        .map(|s| (s.name.clone(), s.tier_placement))
        .ok_or_else(|| SimError::Config("pipeline has no sink".into()))?;
    let mut sim = Mqtt {
        core: Core::new(input, params.gateway_capacity, params.gateway_max_bytes)?,
        input,
        connector_busy: vec![false; spec.stages.len()],
        topics,
        sink,
    };
    let mut kernel = Kernel::with_budget(input.event_budget);
    for (i, r) in input.requests.iter().enumerate() {
        kernel.schedule(r.record.arrival_at_source, Action::Arrive(i))?;
    }
    if let Err(e) = kernel.run_until_idle(|k, t, a| sim.handle(k, t, a)) {
        return Err(sim.core.abort(e));
    }
    for topic in &sim.topics {
        sim.core.note_occupancy(&topic.name, topic.max_len());
    }
    Ok(sim.core.finish())
}

impl Mqtt<'_> {
    fn stages(&self) -> usize {
        self.connector_busy.len()
    }

    fn broker_cpu(&mut self) {
        let tier = self.topics[0].tier;
        self.core.rec.ledger.add_cpu(tier, self.input.params.pubsub.broker_overhead);
    }

    fn handle(&mut self, k: &mut Kernel<Action>, t: Seconds, action: Action) -> Result<()> {
        match action {
            Action::Arrive(i) => {
                let unit = self.core.arrive(t, &self.input.requests[i])?;
                self.send_to_topic(k, t, unit, 0, TierKind::Edge)
            }
            Action::Publish { unit, topic, from, sent_at } => {
                let tier = self.topics[topic].tier;
                self.core.rec.net_transfer(sent_at, t, &unit, unit.size, from, tier)?;
                self.broker_cpu();
                match self.topics[topic].publish(&mut self.core.rec, t, unit.clone())? {
                    PublishOutcome::Dropped => {
                        self.core.stats.broker_drops += 1;
                        self.core.lose(&unit)
                    }
                    PublishOutcome::Accepted if topic >= self.stages() => {
                        // the sink consumer is always subscribed and idle
                        let unit = self.topics[topic].pop(&mut self.core.rec, t)?;
                        self.broker_cpu();
                        let to = self.sink.1;
                        let at = self.core.net.send(t, tier, to, unit.size)?;
                        k.schedule(at, Action::SinkArrive { unit, from: tier, sent_at: t })?;
                        Ok(())
                    }
                    PublishOutcome::Accepted => self.dispatch(k, t, topic),
                }
            }
            Action::Relay { unit, stage, sent_at } => {
                let tier = self.topics[stage].tier;
                self.core.rec.net_transfer(sent_at, t, &unit, unit.size, tier, tier)?;
                let to = self.core.faas.spec(stage).tier_placement;
                let at = self.core.net.send(t, tier, to, unit.size)?;
                k.schedule(at, Action::Invoke { unit, stage, sent_at: t })?;
                Ok(())
            }
            Action::Invoke { unit, stage, sent_at } => {
                let from = self.topics[stage].tier;
                let to = self.core.faas.spec(stage).tier_placement;
                self.core.rec.net_transfer(sent_at, t, &unit, unit.size, from, to)?;
                self.connector_busy[stage] = false;
                let inv = Invocation {
                    function: stage,
                    unit,
                    mode: InvocationMode::Async,
                    enqueued_at: t,
                    token: 0,
                    record_wait: true,
                };
                match self.core.faas.invoke(&mut self.core.rec, t, inv)? {
                    InvokeOutcome::Assigned(inv) => self.begin(k, t, stage, inv.unit)?,
                    InvokeOutcome::Queued => {}
                    InvokeOutcome::Rejected(inv) => {
                        self.core.stats.gateway_drops += 1;
                        self.core.lose(&inv.unit)?;
                    }
                }
                self.dispatch(k, t, stage)
            }
            Action::FunctionDone { unit, stage, output } => {
                self.core.faas.finish(&mut self.core.rec, t, stage, &unit)?;
                if let Some(next) = self.core.faas.release(&mut self.core.rec, t, stage)? {
                    self.begin(k, t, stage, next.unit)?;
                }
                let outputs = if self.core.faas.spec(stage).fans_out {
                    self.core.split(t, &unit, output, self.input.fanout, stage + 1)
                } else {
                    vec![Core::advance(&unit, output, stage + 1)]
                };
                let from = self.core.faas.spec(stage).tier_placement;
                for out in outputs {
                    self.send_to_topic(k, t, out, stage + 1, from)?;
                }
                self.dispatch(k, t, stage)
            }
            Action::SinkArrive { unit, from, sent_at } => {
                let (sink, to) = self.sink.clone();
                self.core.rec.net_transfer(sent_at, t, &unit, unit.size, from, to)?;
                self.core.deliver(t, &unit, &sink)
            }
        }
    }

    /// Publishes to `topic`, or straight to the sink past the last topic.
    fn send_to_topic(&mut self, k: &mut Kernel<Action>, t: Seconds, unit: DataUnit, topic: usize, from: TierKind) -> Result<()> {
        if topic < self.topics.len() {
            let at = self.core.net.send(t, from, self.topics[topic].tier, unit.size)?;
            k.schedule(at, Action::Publish { unit, topic, from, sent_at: t })?;
        } else {
            let at = self.core.net.send(t, from, self.sink.1, unit.size)?;
            k.schedule(at, Action::SinkArrive { unit, from, sent_at: t })?;
        }
        Ok(())
    }

    /// The connector for `stage` forwards one unit if it is idle, the topic
    /// has data and the gateway has room.
    fn dispatch(&mut self, k: &mut Kernel<Action>, t: Seconds, stage: usize) -> Result<()> {
        if self.connector_busy[stage] || self.topics[stage].is_empty() || !self.core.faas.can_accept(stage) {
            return Ok(());
        }
        let unit = self.topics[stage].pop(&mut self.core.rec, t)?;
        self.broker_cpu();
        let tier = self.topics[stage].tier;
        self.core.rec.ledger.add_cpu(tier, self.input.params.pubsub.connector_overhead);
        self.connector_busy[stage] = true;
        let at = self.core.net.send(t, tier, tier, unit.size)?;
        k.schedule(at, Action::Relay { unit, stage, sent_at: t })?;
        Ok(())
    }

    fn begin(&mut self, k: &mut Kernel<Action>, t: Seconds, stage: usize, unit: DataUnit) -> Result<()> {
        let exec = self.core.faas.begin(&mut self.core.rec, t, stage, &unit)?;
        k.schedule(exec.end, Action::FunctionDone { unit, stage, output: exec.output_size })?;
        Ok(())
    }
}
