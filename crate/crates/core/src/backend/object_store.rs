//! Object-storage strategy: buckets act as persistent queues and a put
//! into a watched bucket synchronously triggers the next function.
//!
//! Every invocation in a chain is synchronous, so a replica stays held
//! until the unit it launched has reached the sink. Units split by a
//! fan-out function are sent on one at a time for the same reason.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Core, RunInput, RunOutput};
use crate::error::{Result, SimError};
use crate::faas::{FunctionId, Invocation, InvokeOutcome};
use crate::kernel::{rng_stream, Kernel};
use crate::log::EventKind;
use crate::model::{
    Capacity, DataUnit, InvocationMode, Seconds, StorageKind, StorageRole, TierKind, UnitId,
};
use crate::sim::Recorder;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotificationEvent {
    Inserted,
    Accessed,
    Deleted,
    Copied,
}

/// Webhook binding from a bucket event to a function.
#[derive(Debug, Clone, PartialEq)]
pub struct WebhookTrigger {
    pub event: NotificationEvent,
    pub target: FunctionId,
}

#[derive(Debug, Clone)]
pub struct Bucket {
    pub name: String,
    pub tier: TierKind,
    pub role: StorageRole,
    pub triggers: Vec<WebhookTrigger>,
    objects: BTreeMap<UnitId, (DataUnit, Seconds)>,
}

impl Bucket {
    pub fn new(name: impl Into<String>, tier: TierKind, role: StorageRole) -> Self {
        Bucket { name: name.into(), tier, role, triggers: Vec::new(), objects: BTreeMap::new() }
    }

    /// Binds `event` to `target`, replacing an existing binding for it.
    pub fn watch(&mut self, event: NotificationEvent, target: FunctionId) {
        self.triggers.retain(|t| t.event != event);
        self.triggers.push(WebhookTrigger { event, target });
    }

    pub fn trigger(&self, event: NotificationEvent) -> Option<FunctionId> {
        self.triggers.iter().find(|t| t.event == event).map(|t| t.target)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

/// Result of a put: when the object is durable and who to notify.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PutReceipt {
    pub stored_at: Seconds,
    pub notify: Option<FunctionId>,
}

#[derive(Debug, Clone, Default)]
pub struct ObjectStore {
    buckets: Vec<Bucket>,
}

impl ObjectStore {
    pub fn new(buckets: Vec<Bucket>) -> Self {
        ObjectStore { buckets }
    }

    pub fn bucket(&self, name: &str) -> Result<&Bucket> {
        self.buckets
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| SimError::Unknown { kind: "bucket", name: name.to_string() })
    }

    fn bucket_mut(&mut self, name: &str) -> Result<&mut Bucket> {
        self.buckets
            .iter_mut()
            .find(|b| b.name == name)
            .ok_or_else(|| SimError::Unknown { kind: "bucket", name: name.to_string() })
    }

    /// Starts writing `unit` at `now`. Intermediate buckets open a storage
    /// residency; the write takes `size / write_rate`.
    pub fn put_object(&mut self, rec: &mut Recorder, now: Seconds, bucket: &str, unit: DataUnit, write_rate: f64) -> Result<PutReceipt> {
        let b = self.bucket_mut(bucket)?;
        if b.role == StorageRole::Intermediate {
            rec.unit_event(now, EventKind::StorageArrive, &unit, &b.name)?;
        }
        rec.disk_write(now, &unit, b.tier, &b.name)?;
        let stored_at = now + unit.size as f64 / write_rate;
        let notify = b.trigger(NotificationEvent::Inserted);
        b.objects.insert(unit.unit_id, (unit, stored_at));
        Ok(PutReceipt { stored_at, notify })
    }

    /// Time a get of the stored object takes.
    pub fn read_time(&self, bucket: &str, unit: UnitId, read_rate: f64) -> Result<Seconds> {
        let b = self.bucket(bucket)?;
        let (u, _) = b.objects.get(&unit).ok_or_else(|| SimError::MissingObject { bucket: bucket.to_string(), unit })?;
        Ok(u.size as f64 / read_rate)
    }

    /// Completes a get at `now`: logs the read and closes the residency.
    pub fn get_object(&mut self, rec: &mut Recorder, now: Seconds, bucket: &str, unit: UnitId) -> Result<DataUnit> {
        let b = self.bucket_mut(bucket)?;
        let (u, _) = b.objects.remove(&unit).ok_or_else(|| SimError::MissingObject { bucket: bucket.to_string(), unit })?;
        rec.disk_read(now, &u, b.tier, &b.name)?;
        if b.role == StorageRole::Intermediate {
            rec.unit_event(now, EventKind::StorageDepart, &u, &b.name)?;
        }
        Ok(u)
    }
}

#[derive(Debug)]
enum Action {
    Arrive(usize),
    PutArrive { unit: DataUnit, bucket: String, from: TierKind, sent_at: Seconds },
    Notify { unit: DataUnit, stage: usize },
    GetDone { unit: DataUnit, stage: usize },
    CallArrive { unit: DataUnit, stage: usize, sent_at: Seconds },
    FunctionDone { unit: DataUnit, stage: usize, output: u64 },
    SinkArrive { unit: DataUnit, sink: String, from: TierKind, sent_at: Seconds },
}

/// Replicas a unit's journey is holding, and the fan-out it belongs to.
#[derive(Debug, Default)]
struct Chain {
    held: Vec<FunctionId>,
    parent: Option<usize>,
}

#[derive(Debug)]
struct Fanout {
    chain: Chain,
    from_stage: usize,
    pending: VecDeque<DataUnit>,
    open: usize,
}

struct Oss<'a> {
    core: Core,
    input: &'a RunInput<'a>,
    store: ObjectStore,
    chains: BTreeMap<UnitId, Chain>,
    fanouts: Vec<Fanout>,
    sinks: Vec<(String, TierKind)>,
    routing: ChaCha8Rng,
}

pub(crate) fn run_oss_pipeline(input: &RunInput<'_>) -> Result<RunOutput> {
    let spec = input.pipeline;
    let mut buckets = Vec::new();
    for s in &spec.storage_units {
        if s.kind != StorageKind::Bucket {
            continue;
        }
        let mut b = Bucket::new(&s.name, s.tier_placement, s.role);
        if let Some(target) = spec.stages.iter().position(|f| f.input_storage.as_deref() == Some(s.name.as_str())) {
            b.watch(NotificationEvent::Inserted, target);
        }
        buckets.push(b);
    }
    let sinks = spec.sinks().map(|s| (s.name.clone(), s.tier_placement)).collect();
    let mut sim = Oss {
        core: Core::new(input, Capacity::Unbounded, None)?,
        input,
        store: ObjectStore::new(buckets),
        chains: BTreeMap::new(),
        fanouts: Vec::new(),
        sinks,
        routing: rng_stream(input.seed, "routing"),
    };
    let mut kernel = Kernel::with_budget(input.event_budget);
    for (i, r) in input.requests.iter().enumerate() {
        kernel.schedule(r.record.arrival_at_source, Action::Arrive(i))?;
    }
    if let Err(e) = kernel.run_until_idle(|k, t, a| sim.handle(k, t, a)) {
        return Err(sim.core.abort(e));
    }
    Ok(sim.core.finish())
}

impl Oss<'_> {
    fn tier(&self, name: &str) -> Result<&crate::model::Tier> {
        let kind = self.store.bucket(name)?.tier;
        self.input.topology.tier(kind)
    }

    fn overhead(&mut self, tier: TierKind) {
        self.core.rec.ledger.add_cpu(tier, self.input.params.object_store.request_overhead);
    }

    fn handle(&mut self, k: &mut Kernel<Action>, t: Seconds, action: Action) -> Result<()> {
        match action {
            Action::Arrive(i) => {
                let unit = self.core.arrive(t, &self.input.requests[i])?;
                self.chains.insert(unit.unit_id, Chain::default());
                self.hand_to_stage(k, t, unit, 0, TierKind::Edge, t)
            }
            Action::PutArrive { unit, bucket, from, sent_at } => {
                let to = self.store.bucket(&bucket)?.tier;
                self.core.rec.net_transfer(sent_at, t, &unit, unit.size, from, to)?;
                self.overhead(to);
                let rate = self.tier(&bucket)?.disk_write_rate;
                let receipt = self.store.put_object(&mut self.core.rec, t, &bucket, unit.clone(), rate)?;
                let stage = receipt
                    .notify
                    .ok_or_else(|| SimError::Config(format!("bucket `{bucket}` feeds the chain but has no trigger")))?;
                k.schedule(receipt.stored_at, Action::Notify { unit, stage })?;
                Ok(())
            }
            Action::Notify { unit, stage } => {
                let inv = Invocation {
                    function: stage,
                    unit,
                    mode: InvocationMode::Sync,
                    enqueued_at: t,
                    token: 0,
                    // the object is still resident in its bucket while it waits
                    record_wait: false,
                };
                match self.core.faas.invoke(&mut self.core.rec, t, inv)? {
                    InvokeOutcome::Assigned(inv) => self.start_assigned(k, t, inv),
                    InvokeOutcome::Queued => Ok(()),
                    InvokeOutcome::Rejected(_) => Err(SimError::Config("object-store gateway rejected an invocation".into())),
                }
            }
            Action::GetDone { unit, stage } => {
                let bucket = self.input.pipeline.stages[stage].input_storage.clone().expect("triggered stage");
                let tier = self.store.bucket(&bucket)?.tier;
                self.overhead(tier);
                let unit = self.store.get_object(&mut self.core.rec, t, &bucket, unit.unit_id)?;
                self.begin(k, t, stage, unit)
            }
            Action::CallArrive { unit, stage, sent_at } => {
                let from = self.input.pipeline.stages[stage - 1].tier_placement;
                let to = self.input.pipeline.stages[stage].tier_placement;
                self.core.rec.net_transfer(sent_at, t, &unit, unit.size, from, to)?;
                let inv = Invocation {
                    function: stage,
                    unit,
                    mode: InvocationMode::Sync,
                    enqueued_at: t,
                    token: 0,
                    record_wait: true,
                };
                match self.core.faas.invoke(&mut self.core.rec, t, inv)? {
                    InvokeOutcome::Assigned(inv) => self.start_assigned(k, t, inv),
                    InvokeOutcome::Queued => Ok(()),
                    InvokeOutcome::Rejected(_) => Err(SimError::Config("object-store gateway rejected an invocation".into())),
                }
            }
            Action::FunctionDone { unit, stage, output } => {
                self.core.faas.finish(&mut self.core.rec, t, stage, &unit)?;
                let fans_out = self.core.faas.spec(stage).fans_out;
                if fans_out {
                    let chain = self.chains.remove(&unit.unit_id).unwrap_or_default();
                    let frames = self.core.split(t, &unit, output, self.input.fanout, stage + 1);
                    let name = format!("{}:out", self.core.faas.spec(stage).name);
                    for f in &frames {
                        self.core.rec.unit_event(t, EventKind::StorageArrive, f, &name)?;
                    }
                    let open = frames.len();
                    self.fanouts.push(Fanout { chain, from_stage: stage, pending: frames.into(), open });
                    self.next_frame(k, t, self.fanouts.len() - 1)
                } else {
                    let out = Core::advance(&unit, output, stage + 1);
                    let from = self.core.faas.spec(stage).tier_placement;
                    self.hand_to_stage(k, t, out, stage + 1, from, t)
                }
            }
            Action::SinkArrive { unit, sink, from, sent_at } => {
                let to = self.store.bucket(&sink)?.tier;
                self.core.rec.net_transfer(sent_at, t, &unit, unit.size, from, to)?;
                self.overhead(to);
                self.core.deliver(t, &unit, &sink)?;
                // the cloud put returned: unwind the synchronous chain
                let chain = self.chains.remove(&unit.unit_id).unwrap_or_default();
                self.unwind(k, t, chain)
            }
        }
    }

    /// Sends `unit` on to `stage`: through its trigger bucket, by direct
    /// call, or to a sink after the last stage.
    fn hand_to_stage(&mut self, k: &mut Kernel<Action>, t: Seconds, unit: DataUnit, stage: usize, from: TierKind, sent_at: Seconds) -> Result<()> {
        let stages = &self.input.pipeline.stages;
        if stage >= stages.len() {
            let (sink, tier) = self.pick_sink();
            let at = self.core.net.send(t, from, tier, unit.size)?;
            k.schedule(at, Action::SinkArrive { unit, sink, from, sent_at })?;
            return Ok(());
        }
        match &stages[stage].input_storage {
            Some(bucket) => {
                let tier = self.store.bucket(bucket)?.tier;
                let at = self.core.net.send(t, from, tier, unit.size)?;
                k.schedule(at, Action::PutArrive { unit, bucket: bucket.clone(), from, sent_at })?;
            }
            None if stage == 0 => {
                return Err(SimError::Config("the first object-store stage must read from a bucket".into()));
            }
            None => {
                let at = self.core.net.send(t, from, stages[stage].tier_placement, unit.size)?;
                k.schedule(at, Action::CallArrive { unit, stage, sent_at })?;
            }
        }
        Ok(())
    }

    fn pick_sink(&mut self) -> (String, TierKind) {
        let p = self.input.params.object_store.p_success;
        let idx = if self.sinks.len() > 1 && !self.routing.random_bool(p.clamp(0.0, 1.0)) { 1 } else { 0 };
        self.sinks[idx].clone()
    }

    fn start_assigned(&mut self, k: &mut Kernel<Action>, t: Seconds, inv: Invocation) -> Result<()> {
        if inv.record_wait {
            return self.begin(k, t, inv.function, inv.unit);
        }
        let bucket = self.input.pipeline.stages[inv.function].input_storage.clone().expect("triggered stage");
        let rate = self.tier(&bucket)?.disk_read_rate;
        let read = self.store.read_time(&bucket, inv.unit.unit_id, rate)?;
        k.schedule(t + read, Action::GetDone { unit: inv.unit, stage: inv.function })?;
        Ok(())
    }

    fn begin(&mut self, k: &mut Kernel<Action>, t: Seconds, stage: usize, unit: DataUnit) -> Result<()> {
        let exec = self.core.faas.begin(&mut self.core.rec, t, stage, &unit)?;
        self.chains.entry(unit.unit_id).or_default().held.push(stage);
        k.schedule(exec.end, Action::FunctionDone { unit, stage, output: exec.output_size })?;
        Ok(())
    }

    fn next_frame(&mut self, k: &mut Kernel<Action>, t: Seconds, fanout: usize) -> Result<()> {
        let stage = self.fanouts[fanout].from_stage;
        let Some(frame) = self.fanouts[fanout].pending.pop_front() else {
            return Ok(());
        };
        let name = format!("{}:out", self.core.faas.spec(stage).name);
        self.core.rec.unit_event(t, EventKind::StorageDepart, &frame, &name)?;
        self.chains.insert(frame.unit_id, Chain { held: Vec::new(), parent: Some(fanout) });
        let from = self.core.faas.spec(stage).tier_placement;
        self.hand_to_stage(k, t, frame, stage + 1, from, t)
    }

    /// Releases a finished chain's replicas, most downstream first, and
    /// lets a parent fan-out continue.
    fn unwind(&mut self, k: &mut Kernel<Action>, t: Seconds, chain: Chain) -> Result<()> {
        for &fid in chain.held.iter().rev() {
            if let Some(inv) = self.core.faas.release(&mut self.core.rec, t, fid)? {
                self.start_assigned(k, t, inv)?;
            }
        }
        if let Some(parent) = chain.parent {
            let f = &mut self.fanouts[parent];
            f.open -= 1;
            if !f.pending.is_empty() {
                return self.next_frame(k, t, parent);
            }
            if f.open == 0 {
                let done = std::mem::take(&mut f.chain);
                return self.unwind(k, t, done);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::ResourceLedger;
    use crate::model::{RequestId, Tier};

    fn recorder() -> Recorder {
        Recorder::new(ResourceLedger::new(TierKind::ALL.map(|kind| Tier {
            kind,
            cpu_cores: 1,
            mem_capacity: 1 << 30,
            disk_read_rate: 1e8,
            disk_write_rate: 1e8,
        })))
    }

    fn unit(id: u64, size: u64) -> DataUnit {
        DataUnit { unit_id: UnitId(id), request_id: RequestId(id), size, stage_index: 0, created_at: 0.0 }
    }

    #[test]
    fn put_into_unwatched_bucket() {
        let mut rec = recorder();
        let mut store = ObjectStore::new(vec![Bucket::new("b", TierKind::Fog, StorageRole::Intermediate)]);
        let r = store.put_object(&mut rec, 0.0, "b", unit(1, 1_000_000), 1e8).unwrap();
        assert_eq!(r.notify, None);
        assert_eq!(rec.ledger.usage(TierKind::Fog).disk_write_bytes, 1_000_000);
    }

    #[test]
    fn watched_bucket_notifies_target() {
        let mut rec = recorder();
        let mut b = Bucket::new("b", TierKind::Fog, StorageRole::Intermediate);
        b.watch(NotificationEvent::Inserted, 3);
        let mut store = ObjectStore::new(vec![b]);
        let r = store.put_object(&mut rec, 1.0, "b", unit(1, 100), 100.0).unwrap();
        assert_eq!(r, PutReceipt { stored_at: 2.0, notify: Some(3) });
    }

    #[test]
    fn missing_bucket_and_object() {
        let mut rec = recorder();
        let mut store = ObjectStore::new(vec![Bucket::new("b", TierKind::Fog, StorageRole::Intermediate)]);
        assert!(store.put_object(&mut rec, 0.0, "nope", unit(1, 1), 1.0).is_err());
        assert!(matches!(store.get_object(&mut rec, 0.0, "b", UnitId(7)), Err(SimError::MissingObject { .. })));
    }

    #[test]
    fn get_round_trip_and_read_time() {
        let mut rec = recorder();
        let mut store = ObjectStore::new(vec![Bucket::new("b", TierKind::Fog, StorageRole::Intermediate)]);
        store.put_object(&mut rec, 0.0, "b", unit(1, 1_000_000), 1e8).unwrap();
        assert!((store.read_time("b", UnitId(1), 100e6).unwrap() - 0.01).abs() < 1e-15);
        let back = store.get_object(&mut rec, 0.5, "b", UnitId(1)).unwrap();
        assert_eq!(back.size, 1_000_000);
        assert!(store.bucket("b").unwrap().is_empty());
        let kinds: Vec<_> = rec.log.events().iter().map(|e| e.kind.clone()).collect();
        assert!(matches!(kinds.last(), Some(EventKind::StorageDepart)));
        assert_eq!(rec.ledger.usage(TierKind::Fog).disk_read_bytes, 1_000_000);
    }
}
