//! Serverless platform model: per-function replicas behind a gateway
//! queue, with a linear service-time model.
//!
//! The engine does not schedule anything itself. `invoke` and `release`
//! hand back invocations that own a replica; the backend decides when the
//! execution begins (after an object fetch, for instance) and schedules
//! the matching `finish`.

use std::collections::VecDeque;

use crate::error::Result;
use crate::log::{DropCause, EventKind};
use crate::model::{Capacity, DataUnit, FunctionSpec, InvocationMode, Seconds};
use crate::sim::Recorder;

pub type FunctionId = usize;

/// Pure service-time model: `(duration, output size)`.
pub fn execute(spec: &FunctionSpec, input_size: u64) -> (Seconds, u64) {
    let duration = spec.base_time + spec.per_byte_time * input_size as f64;
    (duration, DataUnit::scaled_size(input_size, spec.output_ratio))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub function: FunctionId,
    pub unit: DataUnit,
    pub mode: InvocationMode,
    pub enqueued_at: Seconds,
    /// Backend continuation key.
    pub token: u64,
    /// Log the gateway wait as a storage residency. Off when the caller
    /// already has the unit parked in another storage unit.
    pub record_wait: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InvokeOutcome {
    /// A replica is reserved for this invocation from now on.
    Assigned(Invocation),
    Queued,
    Rejected(Invocation),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Execution {
    pub function: FunctionId,
    pub start: Seconds,
    pub end: Seconds,
    pub output_size: u64,
}

#[derive(Debug, Clone)]
pub struct GatewayQueue {
    pub capacity: Capacity,
    pub max_bytes: Option<u64>,
    pending: VecDeque<Invocation>,
    pending_bytes: u64,
}

impl GatewayQueue {
    pub fn new(capacity: Capacity, max_bytes: Option<u64>) -> Self {
        GatewayQueue { capacity, max_bytes, pending: VecDeque::new(), pending_bytes: 0 }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    fn admits(&self, bytes: u64) -> bool {
        self.capacity.admits(self.pending.len())
            && self.max_bytes.is_none_or(|max| self.pending_bytes + bytes <= max)
    }
}

#[derive(Debug, Clone)]
struct FunctionState {
    spec: FunctionSpec,
    in_flight: u32,
    max_in_flight: u32,
    gateway: GatewayQueue,
    gateway_name: String,
}

#[derive(Debug, Clone)]
pub struct FaasEngine {
    functions: Vec<FunctionState>,
}

impl FaasEngine {
    pub fn new(specs: &[FunctionSpec], capacity: Capacity, max_bytes: Option<u64>) -> Self {
        let functions = specs
            .iter()
            .map(|spec| FunctionState {
                spec: spec.clone(),
                in_flight: 0,
                max_in_flight: 0,
                gateway: GatewayQueue::new(capacity, max_bytes),
                gateway_name: format!("gateway:{}", spec.name),
            })
            .collect();
        FaasEngine { functions }
    }

    pub fn spec(&self, id: FunctionId) -> &FunctionSpec {
        &self.functions[id].spec
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn in_flight(&self, id: FunctionId) -> u32 {
        self.functions[id].in_flight
    }

    /// Highest concurrent replica use seen for the function.
    pub fn max_in_flight(&self, id: FunctionId) -> u32 {
        self.functions[id].max_in_flight
    }

    pub fn pending(&self, id: FunctionId) -> usize {
        self.functions[id].gateway.len()
    }

    pub fn gateway_name(&self, id: FunctionId) -> &str {
        &self.functions[id].gateway_name
    }

    /// True if an invocation submitted now would not be rejected on count.
    pub fn can_accept(&self, id: FunctionId) -> bool {
        let f = &self.functions[id];
        (f.in_flight < f.spec.replicas && f.gateway.is_empty()) || f.gateway.capacity.admits(f.gateway.len())
    }

    pub fn invoke(&mut self, rec: &mut Recorder, now: Seconds, inv: Invocation) -> Result<InvokeOutcome> {
        let f = &mut self.functions[inv.function];
        if f.in_flight < f.spec.replicas && f.gateway.is_empty() {
            f.in_flight += 1;
            f.max_in_flight = f.max_in_flight.max(f.in_flight);
            return Ok(InvokeOutcome::Assigned(inv));
        }
        if f.gateway.admits(inv.unit.size) {
            if inv.record_wait {
                rec.unit_event(now, EventKind::StorageArrive, &inv.unit, &f.gateway_name)?;
            }
            rec.ledger.mem_alloc(f.spec.tier_placement, now, inv.unit.size);
            f.gateway.pending_bytes += inv.unit.size;
            f.gateway.pending.push_back(inv);
            return Ok(InvokeOutcome::Queued);
        }
        rec.unit_event(now, EventKind::UnitDropped { cause: DropCause::Gateway }, &inv.unit, &f.gateway_name)?;
        Ok(InvokeOutcome::Rejected(inv))
    }

    /// Starts executing on a reserved replica. Emits `FunctionStart` and
    /// charges CPU and memory to the function's tier.
    pub fn begin(&mut self, rec: &mut Recorder, now: Seconds, id: FunctionId, unit: &DataUnit) -> Result<Execution> {
        let spec = &self.functions[id].spec;
        let (duration, output_size) = execute(spec, unit.size);
        rec.unit_event(now, EventKind::FunctionStart, unit, &spec.name)?;
        rec.ledger.add_cpu(spec.tier_placement, duration);
        rec.ledger.mem_alloc(spec.tier_placement, now, spec.mem_footprint);
        Ok(Execution { function: id, start: now, end: now + duration, output_size })
    }

    /// Emits `FunctionEnd`. The replica stays reserved until `release`.
    pub fn finish(&mut self, rec: &mut Recorder, now: Seconds, id: FunctionId, unit: &DataUnit) -> Result<()> {
        let spec = &self.functions[id].spec;
        rec.unit_event(now, EventKind::FunctionEnd, unit, &spec.name)?;
        rec.ledger.mem_free(spec.tier_placement, now, spec.mem_footprint);
        Ok(())
    }

    /// Frees a replica. If an invocation was waiting it takes the replica
    /// and is returned (FIFO per function).
    pub fn release(&mut self, rec: &mut Recorder, now: Seconds, id: FunctionId) -> Result<Option<Invocation>> {
        let f = &mut self.functions[id];
        debug_assert!(f.in_flight > 0);
        f.in_flight -= 1;
        let Some(inv) = f.gateway.pending.pop_front() else {
            return Ok(None);
        };
        f.gateway.pending_bytes -= inv.unit.size;
        rec.ledger.mem_free(f.spec.tier_placement, now, inv.unit.size);
        if inv.record_wait {
            rec.unit_event(now, EventKind::StorageDepart, &inv.unit, &f.gateway_name)?;
        }
        f.in_flight += 1;
        Ok(Some(inv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::ResourceLedger;
    use crate::model::{RequestId, Tier, TierKind, UnitId};

    fn recorder() -> Recorder {
        Recorder::new(ResourceLedger::new(TierKind::ALL.map(|kind| Tier {
            kind,
            cpu_cores: 4,
            mem_capacity: 1 << 30,
            disk_read_rate: 1e8,
            disk_write_rate: 1e8,
        })))
    }

    fn unit(id: u64, size: u64) -> DataUnit {
        DataUnit { unit_id: UnitId(100 + id), request_id: RequestId(id), size, stage_index: 0, created_at: 0.0 }
    }

    fn inv(id: u64, mode: InvocationMode) -> Invocation {
        Invocation { function: 0, unit: unit(id, 10), mode, enqueued_at: 0.0, token: id, record_wait: true }
    }

    #[test]
    fn service_time_model() {
        let mut f = FunctionSpec::new("f", TierKind::Fog, 1.0);
        assert_eq!(execute(&f, 123_456).0, 1.0);
        f.base_time = 0.5;
        f.per_byte_time = 1e-6;
        assert!((execute(&f, 1_000_000).0 - 1.5).abs() < 1e-12);
        f.output_ratio = 0.1;
        assert_eq!(execute(&f, 1_000_000).1, 100_000);
    }

    #[test]
    fn idle_replica_starts_immediately() {
        let mut rec = recorder();
        let mut e = FaasEngine::new(&[FunctionSpec::new("f", TierKind::Fog, 2.0)], Capacity::Unbounded, None);
        let out = e.invoke(&mut rec, 3.0, inv(0, InvocationMode::Sync)).unwrap();
        let InvokeOutcome::Assigned(i) = out else { panic!("{out:?}") };
        let exec = e.begin(&mut rec, 3.0, 0, &i.unit).unwrap();
        assert_eq!((exec.start, exec.end), (3.0, 5.0));
    }

    #[test]
    fn busy_replica_defers_start() {
        let mut rec = recorder();
        let mut e = FaasEngine::new(&[FunctionSpec::new("f", TierKind::Fog, 10.0)], Capacity::Unbounded, None);
        let InvokeOutcome::Assigned(first) = e.invoke(&mut rec, 0.0, inv(0, InvocationMode::Async)).unwrap() else {
            panic!()
        };
        e.begin(&mut rec, 0.0, 0, &first.unit).unwrap();
        assert_eq!(e.invoke(&mut rec, 4.0, inv(1, InvocationMode::Async)).unwrap(), InvokeOutcome::Queued);
        e.finish(&mut rec, 10.0, 0, &first.unit).unwrap();
        let next = e.release(&mut rec, 10.0, 0).unwrap().unwrap();
        assert_eq!(next.token, 1);
        let exec = e.begin(&mut rec, 10.0, 0, &next.unit).unwrap();
        assert_eq!(exec.start, 10.0);
        // waiting was logged as a gateway residency [4, 10]
        let gw: Vec<_> = rec.log.events().iter().filter(|ev| ev.subject == "gateway:f").map(|ev| ev.timestamp).collect();
        assert_eq!(gw, vec![4.0, 10.0]);
    }

    #[test]
    fn full_gateway_rejects() {
        let mut rec = recorder();
        let mut e = FaasEngine::new(&[FunctionSpec::new("f", TierKind::Fog, 1.0)], Capacity::Bounded(0), None);
        assert!(matches!(e.invoke(&mut rec, 0.0, inv(0, InvocationMode::Async)).unwrap(), InvokeOutcome::Assigned(_)));
        assert!(!e.can_accept(0));
        assert!(matches!(e.invoke(&mut rec, 0.0, inv(1, InvocationMode::Async)).unwrap(), InvokeOutcome::Rejected(_)));
        assert!(matches!(rec.log.events().last().unwrap().kind, EventKind::UnitDropped { cause: DropCause::Gateway }));
    }

    #[test]
    fn byte_limit_rejects_heavy_payloads() {
        let mut rec = recorder();
        let mut e = FaasEngine::new(&[FunctionSpec::new("f", TierKind::Fog, 1.0)], Capacity::Bounded(10), Some(15));
        e.invoke(&mut rec, 0.0, inv(0, InvocationMode::Async)).unwrap();
        assert_eq!(e.invoke(&mut rec, 0.0, inv(1, InvocationMode::Async)).unwrap(), InvokeOutcome::Queued);
        assert!(matches!(e.invoke(&mut rec, 0.0, inv(2, InvocationMode::Async)).unwrap(), InvokeOutcome::Rejected(_)));
    }

    #[test]
    fn replica_cap_and_fifo() {
        let mut rec = recorder();
        let mut spec = FunctionSpec::new("f", TierKind::Fog, 1.0);
        spec.replicas = 2;
        let mut e = FaasEngine::new(&[spec], Capacity::Unbounded, None);
        let mut assigned = 0;
        for i in 0..5 {
            if let InvokeOutcome::Assigned(_) = e.invoke(&mut rec, 0.0, inv(i, InvocationMode::Async)).unwrap() {
                assigned += 1;
            }
        }
        assert_eq!(assigned, 2);
        assert_eq!(e.max_in_flight(0), 2);
        let order: Vec<u64> = (0..3).map(|_| e.release(&mut rec, 1.0, 0).unwrap().unwrap().token).collect();
        assert_eq!(order, vec![2, 3, 4]);
    }
}
