//! Plumbing shared by the backends: the infrastructure topology and the
//! recorder that writes the event log and the resource ledger together.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::ledger::ResourceLedger;
use crate::log::{EventKind, EventLog};
use crate::model::{DataUnit, NetworkLink, RequestId, Seconds, Tier, TierKind, Violation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub tiers: Vec<Tier>,
    pub links: Vec<NetworkLink>,
}

impl Topology {
    /// Edge gateway, one fog cluster and a cloud VM joined by 1 Gbit/s links.
    pub fn testbed() -> Self {
        const MB: f64 = 1e6;
        const GB: u64 = 1_000_000_000;
        let tier = |kind, cpu_cores, mem_capacity, rd: f64, wr: f64| Tier {
            kind,
            cpu_cores,
            mem_capacity,
            disk_read_rate: rd * MB,
            disk_write_rate: wr * MB,
        };
        let link = |from, to, latency| NetworkLink { from, to, bandwidth: 125e6, latency };
        Topology {
            tiers: vec![
                tier(TierKind::Edge, 4, GB, 20.0, 10.0),
                tier(TierKind::Fog, 4, 8 * GB, 40.0, 20.0),
                tier(TierKind::Cloud, 4, 8 * GB, 200.0, 150.0),
            ],
            links: vec![
                link(TierKind::Edge, TierKind::Fog, 0.001),
                link(TierKind::Fog, TierKind::Edge, 0.001),
                link(TierKind::Fog, TierKind::Cloud, 0.010),
                link(TierKind::Cloud, TierKind::Fog, 0.010),
                link(TierKind::Fog, TierKind::Fog, 0.0005),
            ],
        }
    }

    pub fn tier(&self, kind: TierKind) -> Result<&Tier> {
        self.tiers
            .iter()
            .find(|t| t.kind == kind)
            .ok_or_else(|| SimError::Unknown { kind: "tier", name: kind.to_string() })
    }

    pub fn link(&self, from: TierKind, to: TierKind) -> Result<&NetworkLink> {
        self.links
            .iter()
            .find(|l| l.from == from && l.to == to)
            .ok_or_else(|| SimError::Unknown { kind: "link", name: format!("{from}->{to}") })
    }

    pub fn tier_array(&self) -> Result<[Tier; 3]> {
        Ok([
            self.tier(TierKind::Edge)?.clone(),
            self.tier(TierKind::Fog)?.clone(),
            self.tier(TierKind::Cloud)?.clone(),
        ])
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for kind in TierKind::ALL {
            match self.tiers.iter().filter(|t| t.kind == kind).count() {
                1 => {}
                n => out.push(Violation::Tier(kind, format!("expected exactly one tier spec, found {n}"))),
            }
        }
        for t in &self.tiers {
            out.extend(t.violations());
        }
        for l in &self.links {
            out.extend(l.violations());
        }
        for (from, to) in [
            (TierKind::Edge, TierKind::Fog),
            (TierKind::Fog, TierKind::Cloud),
            (TierKind::Fog, TierKind::Fog),
        ] {
            if self.link(from, to).is_err() {
                out.push(Violation::Link(from, to, "required link missing".into()));
            }
        }
        out
    }
}

/// Writes the event log and keeps the ledger in step with it.
#[derive(Debug)]
pub struct Recorder {
    pub log: EventLog,
    pub ledger: ResourceLedger,
}

impl Recorder {
    pub fn new(ledger: ResourceLedger) -> Self {
        Recorder { log: EventLog::new(), ledger }
    }

    pub fn emit(&mut self, at: Seconds, kind: EventKind, request: RequestId, unit: Option<&DataUnit>, subject: &str) -> Result<()> {
        self.log.append(at, kind, request, unit.map(|u| u.unit_id), subject).map(|_| ())
    }

    pub fn unit_event(&mut self, at: Seconds, kind: EventKind, unit: &DataUnit, subject: &str) -> Result<()> {
        self.emit(at, kind, unit.request_id, Some(unit), subject)
    }

    /// Logs a completed transfer of `bytes` on behalf of `unit` that
    /// occupied `[started, arrived]`.
    pub fn net_transfer(
        &mut self,
        started: Seconds,
        arrived: Seconds,
        unit: &DataUnit,
        bytes: u64,
        from: TierKind,
        to: TierKind,
    ) -> Result<()> {
        self.ledger.transfer(from, to, bytes);
        let subject = format!("{from}->{to}");
        self.unit_event(arrived, EventKind::NetTransfer { bytes, from, to, started_at: started }, unit, &subject)
    }

    pub fn disk_write(&mut self, at: Seconds, unit: &DataUnit, tier: TierKind, subject: &str) -> Result<()> {
        self.ledger.disk_write(tier, unit.size);
        self.unit_event(at, EventKind::DiskWrite { bytes: unit.size, tier }, unit, subject)
    }

    pub fn disk_read(&mut self, at: Seconds, unit: &DataUnit, tier: TierKind, subject: &str) -> Result<()> {
        self.ledger.disk_read(tier, unit.size);
        self.unit_event(at, EventKind::DiskRead { bytes: unit.size, tier }, unit, subject)
    }
}

#[derive(Debug, Clone)]
struct LinkState {
    link: NetworkLink,
    busy_until: Seconds,
}

/// Directed links modelled as FIFO servers: a payload waits for the link
/// to finish serializing earlier payloads, then pays its own
/// serialization time plus propagation latency.
#[derive(Debug, Clone)]
pub struct Network {
    links: BTreeMap<(TierKind, TierKind), LinkState>,
}

impl Network {
    pub fn new(topology: &Topology) -> Self {
        let links = topology
            .links
            .iter()
            .map(|l| ((l.from, l.to), LinkState { link: l.clone(), busy_until: f64::NEG_INFINITY }))
            .collect();
        Network { links }
    }

    /// Sends `bytes` at `now` and returns the arrival time.
    pub fn send(&mut self, now: Seconds, from: TierKind, to: TierKind, bytes: u64) -> Result<Seconds> {
        let state = self
            .links
            .get_mut(&(from, to))
            .ok_or_else(|| SimError::Unknown { kind: "link", name: format!("{from}->{to}") })?;
        let start = now.max(state.busy_until);
        state.busy_until = start + bytes as f64 / state.link.bandwidth;
        Ok(state.busy_until + state.link.latency)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topology() -> Topology {
        Topology {
            tiers: TierKind::ALL
                .map(|kind| Tier { kind, cpu_cores: 1, mem_capacity: 1, disk_read_rate: 1.0, disk_write_rate: 1.0 })
                .to_vec(),
            links: vec![
                NetworkLink { from: TierKind::Edge, to: TierKind::Fog, bandwidth: 100.0, latency: 0.5 },
                NetworkLink { from: TierKind::Fog, to: TierKind::Cloud, bandwidth: 10.0, latency: 0.0 },
                NetworkLink { from: TierKind::Fog, to: TierKind::Fog, bandwidth: 10.0, latency: 0.0 },
            ],
        }
    }

    #[test]
    fn idle_link_costs_latency_plus_serialization() {
        let mut net = Network::new(&topology());
        assert_eq!(net.send(1.0, TierKind::Edge, TierKind::Fog, 100).unwrap(), 2.5);
    }

    #[test]
    fn busy_link_serializes_fifo() {
        let mut net = Network::new(&topology());
        assert_eq!(net.send(0.0, TierKind::Fog, TierKind::Cloud, 10).unwrap(), 1.0);
        assert_eq!(net.send(0.0, TierKind::Fog, TierKind::Cloud, 10).unwrap(), 2.0);
        assert_eq!(net.send(5.0, TierKind::Fog, TierKind::Cloud, 10).unwrap(), 6.0);
    }

    #[test]
    fn missing_link_is_an_error() {
        let mut net = Network::new(&topology());
        assert!(net.send(0.0, TierKind::Cloud, TierKind::Edge, 1).is_err());
        assert!(topology().violations().is_empty());
    }
}
