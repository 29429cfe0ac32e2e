//! Deterministic discrete-event scheduler.
//!
//! The kernel owns only the virtual clock and the pending-event heap. The
//! model it drives lives outside it, so a handler can borrow the model and
//! the kernel mutably at the same time.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::model::Seconds;

pub const DEFAULT_EVENT_BUDGET: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(pub u64);

#[derive(Debug)]
struct ScheduledEvent<A> {
    fire_at: Seconds,
    seq: u64,
    action: A,
}

impl<A> PartialEq for ScheduledEvent<A> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<A> Eq for ScheduledEvent<A> {}

impl<A> PartialOrd for ScheduledEvent<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for ScheduledEvent<A> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.fire_at.total_cmp(&self.fire_at).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug)]
pub struct Kernel<A> {
    clock: Seconds,
    heap: BinaryHeap<ScheduledEvent<A>>,
    next_seq: u64,
    fired: u64,
    budget: u64,
}

impl<A> Default for Kernel<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> Kernel<A> {
    pub fn new() -> Self {
        Self::with_budget(DEFAULT_EVENT_BUDGET)
    }

    pub fn with_budget(budget: u64) -> Self {
        Kernel { clock: 0.0, heap: BinaryHeap::new(), next_seq: 0, fired: 0, budget }
    }

    pub fn now(&self) -> Seconds {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    /// Schedules `action` at absolute virtual time `at`. Events sharing a
    /// timestamp fire in insertion order.
    pub fn schedule(&mut self, at: Seconds, action: A) -> Result<EventHandle> {
        if !(at >= self.clock) {
            return Err(SimError::ScheduleInPast { at, now: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(ScheduledEvent { fire_at: at, seq, action });
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: Seconds, action: A) -> Result<EventHandle> {
        self.schedule(self.clock + delay, action)
    }

    /// Pops the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(Seconds, A)> {
        let ev = self.heap.pop()?;
        self.clock = ev.fire_at;
        self.fired += 1;
        Some((ev.fire_at, ev.action))
    }

    /// Fires events until none remain. Returns the final clock value.
    pub fn run_until_idle<F>(&mut self, mut handler: F) -> Result<Seconds>
    where
        F: FnMut(&mut Self, Seconds, A) -> Result<()>,
    {
        if self.heap.is_empty() {
            return Err(SimError::EmptySchedule);
        }
        let start = self.fired;
        while let Some((t, action)) = self.pop() {
            if self.fired - start > self.budget {
                return Err(SimError::Runaway { budget: self.budget, clock: t });
            }
            handler(self, t, action)?;
        }
        Ok(self.clock)
    }
}

/// Derives an independent RNG for a named component from the run seed, so
/// adding a component never shifts another component's draws.
pub fn rng_stream(seed: u64, label: &str) -> ChaCha8Rng {
    // FNV-1a over the label, then a splitmix64 finalizer with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}
