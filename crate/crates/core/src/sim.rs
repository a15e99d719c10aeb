//! Simulation clock, event queue and named random streams.
//!
//! Events are ordered by `(time, seq)` where `seq` is the order in which they
//! were scheduled, so equal-time events always fire in schedule order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Simulated time in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn from_secs(secs: f64) -> Self {
        assert!(
            secs.is_finite() && secs >= 0.0,
            "simulation time must be finite and non-negative, got {secs}"
        );
        SimTime(secs)
    }

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: f64) -> SimTime {
        SimTime::from_secs(self.0 + rhs)
    }
}

impl Sub for SimTime {
    type Output = f64;
    fn sub(self, rhs: SimTime) -> f64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

/// Handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

/// A scheduled unit of work.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<P> {
    pub time: SimTime,
    pub seq: u64,
    pub payload: P,
}

struct Entry<P>(SimEvent<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .cmp(&self.0.time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Deterministic future-event list with a monotone clock.
pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    live: HashSet<u64>,
    next_seq: u64,
    now: SimTime,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            live: HashSet::new(),
            next_seq: 0,
            now: SimTime::ZERO,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events still pending (cancelled ones excluded).
    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    /// Enqueue `payload` at `time`.
    ///
    /// Panics if `time` is earlier than the current clock: scheduling into the
    /// past is a logic error and aborts the run.
    pub fn schedule(&mut self, time: SimTime, payload: P) -> EventHandle {
        assert!(
            time >= self.now,
            "event scheduled in the past: t={time} < now={}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.live.insert(seq);
        self.heap.push(Entry(SimEvent { time, seq, payload }));
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: f64, payload: P) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, payload)
    }

    /// Pops the minimal `(time, seq)` event and moves the clock to it.
    /// `None` means the simulation is complete.
    pub fn advance(&mut self) -> Option<SimEvent<P>> {
        while let Some(Entry(ev)) = self.heap.pop() {
            if self.live.remove(&ev.seq) {
                self.now = ev.time;
                return Some(ev);
            }
        }
        None
    }

    /// Time of the next live event without removing it.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(Entry(ev)) = self.heap.peek() {
            if self.live.contains(&ev.seq) {
                return Some(ev.time);
            }
            self.heap.pop();
        }
        None
    }

    /// Returns `true` if the event was pending and is now cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0)
    }
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A named random stream derived from `(master seed, label)`.
///
/// Each simulated component draws from its own stream so that a change in one
/// component's draw count leaves every other component's draws untouched.
#[derive(Clone)]
pub struct RngStream {
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let seed = splitmix64(master_seed ^ splitmix64(fnv1a(&label)));
        RngStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            label,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream").field("label", &self.label).finish()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs(s)
    }

    #[test]
    fn dequeues_in_time_order() {
        let mut q = EventQueue::new();
        q.schedule(t(5.0), "five");
        q.schedule(t(3.0), "three");
        assert_eq!(q.advance().unwrap().payload, "three");
        assert_eq!(q.now(), t(3.0));
        assert_eq!(q.advance().unwrap().payload, "five");
        assert!(q.advance().is_none());
    }

    #[test]
    fn equal_times_fire_in_schedule_order() {
        let mut q = EventQueue::new();
        q.schedule(t(7.0), 'A');
        q.schedule(t(7.0), 'B');
        assert_eq!(q.advance().unwrap().payload, 'A');
        assert_eq!(q.advance().unwrap().payload, 'B');
    }

    #[test]
    fn advance_sets_clock() {
        let mut q = EventQueue::new();
        q.schedule(t(1.0), ());
        q.schedule(t(2.0), ());
        let ev = q.advance().unwrap();
        assert_eq!(ev.time, t(1.0));
        assert_eq!(q.now(), t(1.0));
    }

    #[test]
    fn empty_queue_signals_completion() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert!(q.advance().is_none());
        assert!(q.is_empty());
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut q = EventQueue::new();
        let h = q.schedule(t(1.0), 1);
        q.schedule(t(2.0), 2);
        assert!(q.cancel(h));
        assert_eq!(q.advance().unwrap().payload, 2);
        assert!(q.advance().is_none());
    }

    #[test]
    fn cancel_after_fire_or_twice_is_false() {
        let mut q = EventQueue::new();
        let h = q.schedule(t(1.0), ());
        q.advance();
        assert!(!q.cancel(h));

        let h2 = q.schedule(t(2.0), ());
        assert!(q.cancel(h2));
        assert!(!q.cancel(h2));
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn scheduling_in_the_past_aborts() {
        let mut q = EventQueue::new();
        q.schedule(t(4.0), ());
        q.advance();
        q.schedule(t(3.0), ());
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let mut a = RngStream::new(7, "mobility");
        let mut b = RngStream::new(7, "mobility");
        let xs: Vec<u64> = (0..8).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.gen()).collect();
        assert_eq!(xs, ys);

        let mut c = RngStream::new(7, "mac-3");
        let zs: Vec<u64> = (0..8).map(|_| c.gen()).collect();
        assert_ne!(xs, zs);

        let mut d = RngStream::new(8, "mobility");
        let ws: Vec<u64> = (0..8).map(|_| d.gen()).collect();
        assert_ne!(xs, ws);
    }

    proptest! {
        #[test]
        fn delivered_times_are_non_decreasing(times in proptest::collection::vec(0.0f64..100.0, 1..200)) {
            let mut q = EventQueue::new();
            for (i, &s) in times.iter().enumerate() {
                q.schedule(t(s), i);
            }
            let mut last = (SimTime::ZERO, 0u64);
            let mut n = 0;
            while let Some(ev) = q.advance() {
                prop_assert!((ev.time, ev.seq) >= last);
                last = (ev.time, ev.seq);
                n += 1;
            }
            prop_assert_eq!(n, times.len());
        }

        #[test]
        fn interleaved_scheduling_keeps_order(ops in proptest::collection::vec((0.0f64..5.0, any::<bool>()), 1..100)) {
            // schedule relative to the moving clock, occasionally popping
            let mut q = EventQueue::new();
            let mut fired = Vec::new();
            for (delay, pop) in ops {
                q.schedule_in(delay, ());
                if pop {
                    if let Some(ev) = q.advance() {
                        fired.push(ev.time);
                    }
                }
            }
            while let Some(ev) = q.advance() {
                fired.push(ev.time);
            }
            prop_assert!(fired.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
