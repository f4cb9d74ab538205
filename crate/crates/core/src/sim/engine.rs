//! Discrete-event queue ordered by (time, ordinal).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug)]
struct Scheduled<E> {
    time: f64,
    ordinal: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.ordinal.cmp(&self.ordinal))
    }
}

#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    now: f64,
    next_ordinal: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), now: 0.0, next_ordinal: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Schedules `event` at `time` milliseconds. Times in the past are
    /// clamped to now so the clock never runs backwards.
    pub fn schedule(&mut self, time: f64, event: E) -> u64 {
        let ordinal = self.next_ordinal;
        self.next_ordinal += 1;
        let time = if time < self.now || time.is_nan() { self.now } else { time };
        self.heap.push(Scheduled { time, ordinal, event });
        ordinal
    }

    pub fn schedule_in(&mut self, delay: f64, event: E) -> u64 {
        self.schedule(self.now + delay.max(0.0), event)
    }

    /// Pops the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(f64, u64, E)> {
        let s = self.heap.pop()?;
        self.now = s.time;
        Some((s.time, s.ordinal, s.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
