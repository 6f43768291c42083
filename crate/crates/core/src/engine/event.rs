//! Time-ordered event queue with a stable sequence tiebreak.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("cannot schedule at t={at} before current time {now}")]
pub struct ScheduleInPast {
    pub at: f64,
    pub now: f64,
}

#[derive(Debug)]
pub struct Event<E> {
    pub time: f64,
    pub sequence: u64,
    pub kind: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // Reversed so the max-heap pops the earliest (time, sequence).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Event<E>>,
    next_sequence: u64,
    now: f64,
    horizon: f64,
}

impl<E> EventQueue<E> {
    /// Events later than `horizon` are accepted but never returned.
    pub fn new(horizon: f64) -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_sequence: 0,
            now: 0.0,
            horizon,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: f64, kind: E) -> Result<(), ScheduleInPast> {
        if time < self.now || time.is_nan() {
            return Err(ScheduleInPast { at: time, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Event { time, sequence, kind });
        Ok(())
    }

    /// Events still queued, in no particular order.
    pub fn pending(&self) -> impl Iterator<Item = &Event<E>> {
        self.heap.iter()
    }

    /// Pops the next event within the horizon and advances the clock to it.
    pub fn pop(&mut self) -> Option<Event<E>> {
        if self.heap.peek()?.time > self.horizon {
            return None;
        }
        let ev = self.heap.pop()?;
        self.now = ev.time;
        Some(ev)
    }
}
