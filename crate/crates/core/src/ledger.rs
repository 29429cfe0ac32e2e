//! Per-tier resource accounting: CPU busy time, memory over time, disk and
//! network byte counters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{Seconds, Tier, TierKind};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TierUsage {
    pub cpu_busy_seconds: f64,
    pub mem_current: u64,
    pub mem_peak: u64,
    pub disk_read_bytes: u64,
    pub disk_write_bytes: u64,
    pub net_rx_bytes: u64,
    pub net_tx_bytes: u64,
    /// Piecewise-constant memory trace: `(time, bytes from then on)`.
    #[serde(skip)]
    mem_trace: Vec<(Seconds, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceLedger {
    tiers: [Tier; 3],
    usage: [TierUsage; 3],
    link_bytes: BTreeMap<(TierKind, TierKind), u64>,
    window: (Seconds, Seconds),
}

impl ResourceLedger {
    /// `tiers` must be ordered edge, fog, cloud.
    pub fn new(tiers: [Tier; 3]) -> Self {
        ResourceLedger {
            tiers,
            usage: Default::default(),
            link_bytes: BTreeMap::new(),
            window: (0.0, 0.0),
        }
    }

    pub fn tier(&self, kind: TierKind) -> &Tier {
        &self.tiers[kind.index()]
    }

    pub fn usage(&self, kind: TierKind) -> &TierUsage {
        &self.usage[kind.index()]
    }

    pub fn window(&self) -> (Seconds, Seconds) {
        self.window
    }

    pub fn set_window(&mut self, start: Seconds, end: Seconds) {
        self.window = (start, end);
    }

    pub fn add_cpu(&mut self, kind: TierKind, seconds: f64) {
        self.usage[kind.index()].cpu_busy_seconds += seconds;
    }

    pub fn mem_alloc(&mut self, kind: TierKind, at: Seconds, bytes: u64) {
        let u = &mut self.usage[kind.index()];
        u.mem_current += bytes;
        u.mem_peak = u.mem_peak.max(u.mem_current);
        push_trace(&mut u.mem_trace, at, u.mem_current);
    }

    pub fn mem_free(&mut self, kind: TierKind, at: Seconds, bytes: u64) {
        let u = &mut self.usage[kind.index()];
        u.mem_current = u.mem_current.saturating_sub(bytes);
        push_trace(&mut u.mem_trace, at, u.mem_current);
    }

    pub fn disk_read(&mut self, kind: TierKind, bytes: u64) {
        self.usage[kind.index()].disk_read_bytes += bytes;
    }

    pub fn disk_write(&mut self, kind: TierKind, bytes: u64) {
        self.usage[kind.index()].disk_write_bytes += bytes;
    }

    pub fn transfer(&mut self, from: TierKind, to: TierKind, bytes: u64) {
        self.usage[from.index()].net_tx_bytes += bytes;
        self.usage[to.index()].net_rx_bytes += bytes;
        *self.link_bytes.entry((from, to)).or_default() += bytes;
    }

    pub fn link_bytes(&self, from: TierKind, to: TierKind) -> u64 {
        self.link_bytes.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn total_disk_bytes(&self) -> u64 {
        self.usage.iter().map(|u| u.disk_read_bytes + u.disk_write_bytes).sum()
    }

    pub fn total_net_bytes(&self) -> u64 {
        self.link_bytes.values().sum()
    }

    /// Time-weighted mean of resident memory over `[start, end]`.
    pub fn mean_memory(&self, kind: TierKind, start: Seconds, end: Seconds) -> f64 {
        let trace = &self.usage[kind.index()].mem_trace;
        if end <= start {
            return trace.iter().take_while(|(t, _)| *t <= start).last().map_or(0.0, |p| p.1 as f64);
        }
        let mut area = 0.0;
        let mut level = 0u64;
        let mut cursor = start;
        for &(t, bytes) in trace {
            if t <= start {
                level = bytes;
                continue;
            }
            if t >= end {
                break;
            }
            area += level as f64 * (t - cursor);
            cursor = t;
            level = bytes;
        }
        area += level as f64 * (end - cursor);
        area / (end - start)
    }
}

fn push_trace(trace: &mut Vec<(Seconds, u64)>, at: Seconds, bytes: u64) {
    match trace.last_mut() {
        Some(last) if last.0 == at => last.1 = bytes,
        _ => trace.push((at, bytes)),
    }
}

/// `100 × busy / (cores × window)`, clamped to `[0, 100]`.
pub fn cpu_utilization(ledger: &ResourceLedger, tier: TierKind) -> Result<f64> {
    let (start, end) = ledger.window();
    if !(end > start) {
        return Err(SimError::EmptyWindow { start, end });
    }
    let cores = f64::from(ledger.tier(tier).cpu_cores.max(1));
    let pct = 100.0 * ledger.usage(tier).cpu_busy_seconds / (cores * (end - start));
    Ok(pct.clamp(0.0, 100.0))
}

/// Time-weighted mean of `mem_current / mem_capacity`, in percent.
pub fn memory_utilization(ledger: &ResourceLedger, tier: TierKind) -> Result<f64> {
    let cap = ledger.tier(tier).mem_capacity;
    if cap == 0 {
        return Err(SimError::ZeroCapacity);
    }
    let (start, end) = ledger.window();
    Ok(100.0 * ledger.mean_memory(tier, start, end) / cap as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GB: u64 = 1_000_000_000;

    fn tiers(cores: u32, mem: u64) -> [Tier; 3] {
        TierKind::ALL.map(|kind| Tier {
            kind,
            cpu_cores: cores,
            mem_capacity: mem,
            disk_read_rate: 1e8,
            disk_write_rate: 1e8,
        })
    }

    #[test]
    fn cpu_definition() {
        let mut l = ResourceLedger::new(tiers(1, GB));
        l.set_window(0.0, 10.0);
        l.add_cpu(TierKind::Fog, 4.0);
        assert!((cpu_utilization(&l, TierKind::Fog).unwrap() - 40.0).abs() < 1e-12);
        assert_eq!(cpu_utilization(&l, TierKind::Edge).unwrap(), 0.0);

        let mut l = ResourceLedger::new(tiers(4, GB));
        l.set_window(0.0, 10.0);
        l.add_cpu(TierKind::Cloud, 20.0);
        assert!((cpu_utilization(&l, TierKind::Cloud).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn cpu_zero_window_is_error() {
        let mut l = ResourceLedger::new(tiers(1, GB));
        l.set_window(3.0, 3.0);
        assert!(cpu_utilization(&l, TierKind::Fog).is_err());
    }

    #[test]
    fn constant_memory() {
        let mut l = ResourceLedger::new(tiers(1, 8 * GB));
        l.mem_alloc(TierKind::Fog, 0.0, 2 * GB);
        l.set_window(0.0, 10.0);
        assert!((memory_utilization(&l, TierKind::Fog).unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn half_window_memory() {
        let mut l = ResourceLedger::new(tiers(1, 8 * GB));
        l.mem_alloc(TierKind::Fog, 5.0, 4 * GB);
        l.set_window(0.0, 10.0);
        assert!((memory_utilization(&l, TierKind::Fog).unwrap() - 25.0).abs() < 1e-9);
        assert_eq!(l.usage(TierKind::Fog).mem_peak, 4 * GB);
    }

    #[test]
    fn zero_capacity_is_error() {
        let l = ResourceLedger::new(tiers(1, 0));
        assert!(matches!(memory_utilization(&l, TierKind::Edge), Err(SimError::ZeroCapacity)));
    }

    #[test]
    fn network_symmetry() {
        let mut l = ResourceLedger::new(tiers(1, GB));
        l.transfer(TierKind::Edge, TierKind::Fog, 100);
        l.transfer(TierKind::Fog, TierKind::Fog, 7);
        assert_eq!(l.usage(TierKind::Edge).net_tx_bytes, 100);
        assert_eq!(l.usage(TierKind::Fog).net_rx_bytes, 107);
        assert_eq!(l.link_bytes(TierKind::Edge, TierKind::Fog), 100);
        assert_eq!(l.total_net_bytes(), 107);
    }
}
