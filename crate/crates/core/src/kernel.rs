//! Virtual-time event scheduler and labeled randomness.
//!
//! Events are ordered by `(fire_time, seq)`; `seq` is a monotone counter
//! assigned at scheduling time, so two events at the same instant fire in the
//! order they were scheduled. Nothing here reads the wall clock.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::KernelError;

/// Generator behind every labeled stream.
pub type StreamRng = ChaCha8Rng;

/// Handle returned by [`Kernel::schedule`]; permits cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(pub u64);

/// A fired (or pending) event.
#[derive(Debug, Clone)]
pub struct Event<E> {
    pub fire_time: f64,
    pub seq: u64,
    pub kind: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub scheduled: u64,
    pub fired: u64,
    pub cancelled: u64,
}

/// Deterministic per-label random streams derived from one global seed.
///
/// Asking for the same label twice resumes the stream rather than restarting it.
#[derive(Debug, Clone)]
pub struct RngStreams {
    seed: u64,
    streams: BTreeMap<String, StreamRng>,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&mut self, label: &str) -> &mut StreamRng {
        if !self.streams.contains_key(label) {
            let rng = StreamRng::seed_from_u64(derive_seed(self.seed, label));
            self.streams.insert(label.to_owned(), rng);
        }
        self.streams.get_mut(label).expect("stream just inserted")
    }
}

/// FNV-1a over the label, folded into the seed through splitmix64.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Scheduling surface handed to simulation components.
///
/// Components schedule their own event type; [`Mapped`] lifts it into the
/// kernel's event type.
pub trait Context<E> {
    fn now(&self) -> f64;
    fn schedule_in(&mut self, delay: f64, ev: E) -> EventHandle;
    fn cancel(&mut self, handle: EventHandle) -> bool;
    fn rng(&mut self, label: &str) -> &mut StreamRng;
}

pub struct Kernel<E> {
    now: f64,
    next_seq: u64,
    queue: BinaryHeap<Event<E>>,
    pending: HashSet<u64>,
    stats: KernelStats,
    rngs: RngStreams,
}

impl<E> Kernel<E> {
    pub fn new(seed: u64) -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: HashSet::new(),
            stats: KernelStats::default(),
            rngs: RngStreams::new(seed),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn stats(&self) -> KernelStats {
        self.stats
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn rng_stream(&mut self, label: &str) -> &mut StreamRng {
        self.rngs.stream(label)
    }

    pub fn schedule(&mut self, fire_time: f64, kind: E) -> Result<EventHandle, KernelError> {
        if !(fire_time >= self.now) {
            return Err(KernelError::InPast {
                at: fire_time,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_time,
            seq,
            kind,
        });
        self.pending.insert(seq);
        self.stats.scheduled += 1;
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` seconds from now. Negative or NaN delays are clamped to zero.
    pub fn schedule_after(&mut self, delay: f64, kind: E) -> EventHandle {
        let delay = if delay > 0.0 { delay } else { 0.0 };
        self.schedule(self.now + delay, kind)
            .expect("non-negative delay is never in the past")
    }

    /// Returns false when the event already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.pending.remove(&handle.0) {
            self.stats.cancelled += 1;
            true
        } else {
            false
        }
    }

    /// Pops the next live event with `fire_time <= t_end`, advancing `now` to it.
    pub fn next_event(&mut self, t_end: f64) -> Option<Event<E>> {
        loop {
            let top = self.queue.peek()?;
            if top.fire_time > t_end {
                return None;
            }
            let ev = self.queue.pop().expect("peeked");
            if !self.pending.remove(&ev.seq) {
                continue; // cancelled
            }
            self.now = ev.fire_time;
            self.stats.fired += 1;
            return Some(ev);
        }
    }

    /// Advances `now` without firing anything. Callers drain events first.
    pub fn advance_to(&mut self, t: f64) -> Result<(), KernelError> {
        if t < self.now {
            return Err(KernelError::InPast { at: t, now: self.now });
        }
        self.now = t;
        Ok(())
    }

    /// Fires every event with `fire_time <= t_end` in order, including events
    /// scheduled by the handler itself, then sets `now = t_end`.
    pub fn run_until<F>(&mut self, t_end: f64, mut handler: F) -> Result<usize, KernelError>
    where
        F: FnMut(&mut Kernel<E>, Event<E>),
    {
        if t_end < self.now {
            return Err(KernelError::InPast {
                at: t_end,
                now: self.now,
            });
        }
        let mut fired = 0;
        while let Some(ev) = self.next_event(t_end) {
            handler(self, ev);
            fired += 1;
        }
        self.now = t_end;
        Ok(fired)
    }
}

impl<E> Context<E> for Kernel<E> {
    fn now(&self) -> f64 {
        self.now
    }

    fn schedule_in(&mut self, delay: f64, ev: E) -> EventHandle {
        self.schedule_after(delay, ev)
    }

    fn cancel(&mut self, handle: EventHandle) -> bool {
        Kernel::cancel(self, handle)
    }

    fn rng(&mut self, label: &str) -> &mut StreamRng {
        self.rngs.stream(label)
    }
}

/// Adapts a `Kernel<Outer>` into a `Context<Inner>` through a wrapping function.
pub struct Mapped<'a, Outer, F> {
    kernel: &'a mut Kernel<Outer>,
    wrap: F,
}

impl<'a, Outer, F> Mapped<'a, Outer, F> {
    pub fn new(kernel: &'a mut Kernel<Outer>, wrap: F) -> Self {
        Self { kernel, wrap }
    }
}

impl<'a, Outer, Inner, F> Context<Inner> for Mapped<'a, Outer, F>
where
    F: Fn(Inner) -> Outer,
{
    fn now(&self) -> f64 {
        self.kernel.now
    }

    fn schedule_in(&mut self, delay: f64, ev: Inner) -> EventHandle {
        let outer = (self.wrap)(ev);
        self.kernel.schedule_after(delay, outer)
    }

    fn cancel(&mut self, handle: EventHandle) -> bool {
        self.kernel.cancel(handle)
    }

    fn rng(&mut self, label: &str) -> &mut StreamRng {
        self.kernel.rngs.stream(label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn schedule_fires_at_time() {
        let mut k = Kernel::new(1);
        k.schedule(5.0, "a").unwrap();
        let ev = k.next_event(f64::INFINITY).unwrap();
        assert_eq!(ev.fire_time, 5.0);
        assert_eq!(k.now(), 5.0);
    }

    #[test]
    fn equal_times_fire_by_seq() {
        let mut k = Kernel::new(1);
        let a = k.schedule(5.0, 'a').unwrap();
        let b = k.schedule(5.0, 'b').unwrap();
        assert!(a.0 < b.0);
        let mut order = Vec::new();
        k.run_until(10.0, |_, ev| order.push(ev.kind)).unwrap();
        assert_eq!(order, vec!['a', 'b']);
    }

    #[test]
    fn past_schedule_rejected() {
        let mut k: Kernel<()> = Kernel::new(1);
        k.advance_to(2.0).unwrap();
        assert!(matches!(k.schedule(1.0, ()), Err(KernelError::InPast { .. })));
    }

    #[test]
    fn run_until_empty_advances_clock() {
        let mut k: Kernel<()> = Kernel::new(1);
        assert_eq!(k.run_until(100.0, |_, _| {}).unwrap(), 0);
        assert_eq!(k.now(), 100.0);
    }

    #[test]
    fn run_until_stops_at_horizon() {
        let mut k = Kernel::new(1);
        for t in [1.0, 2.0, 3.0] {
            k.schedule(t, ()).unwrap();
        }
        assert_eq!(k.run_until(2.0, |_, _| {}).unwrap(), 2);
        assert_eq!(k.pending_count(), 1);
    }

    #[test]
    fn handler_may_schedule_children() {
        let mut k = Kernel::new(1);
        k.schedule(1.0, 0u8).unwrap();
        let mut seen = Vec::new();
        let n = k
            .run_until(2.0, |k, ev| {
                seen.push((ev.fire_time, ev.kind));
                if ev.kind == 0 {
                    k.schedule(1.5, 1).unwrap();
                }
            })
            .unwrap();
        assert_eq!(n, 2);
        assert_eq!(seen, vec![(1.0, 0), (1.5, 1)]);
    }

    #[test]
    fn cancellation_accounting() {
        let mut k = Kernel::new(1);
        let h = k.schedule(1.0, ()).unwrap();
        k.schedule(2.0, ()).unwrap();
        k.schedule(9.0, ()).unwrap();
        assert!(k.cancel(h));
        assert!(!k.cancel(h));
        k.run_until(5.0, |_, _| {}).unwrap();
        let s = k.stats();
        assert_eq!(s.scheduled, s.fired + s.cancelled + k.pending_count() as u64);
        assert_eq!((s.fired, s.cancelled, k.pending_count()), (1, 1, 1));
    }

    #[test]
    fn stream_resumes_within_run() {
        let mut r = RngStreams::new(42);
        let first: u64 = r.stream("chain0.miner3").gen();
        let second: u64 = r.stream("chain0.miner3").gen();
        let mut fresh = RngStreams::new(42);
        let a: u64 = fresh.stream("chain0.miner3").gen();
        let b: u64 = fresh.stream("chain0.miner3").gen();
        assert_eq!((first, second), (a, b));
        assert_ne!(first, second);
    }

    #[test]
    fn labels_give_distinct_streams() {
        let mut r = RngStreams::new(42);
        let a: Vec<u32> = (0..8).map(|_| r.stream("a").gen()).collect();
        let b: Vec<u32> = (0..8).map(|_| r.stream("b").gen()).collect();
        assert_ne!(a, b);
    }
}
