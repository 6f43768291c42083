//! Drop-tail interface queue with routing-packet priority.
//!
//! Control packets sit in front of every data packet and keep FIFO order
//! among themselves. When the buffer is full an incoming data packet is
//! discarded; an incoming control packet evicts the data packet at the tail,
//! or is discarded itself when nothing but control packets are queued.

use std::collections::VecDeque;

pub trait QueueItem {
    fn is_control(&self) -> bool;
}

#[derive(Debug, PartialEq)]
pub enum EnqueueOutcome<T> {
    Accepted,
    /// The incoming packet was discarded.
    DroppedIncoming(T),
    /// The incoming control packet was admitted by evicting this data packet.
    DroppedTailData(T),
}

#[derive(Debug, Clone)]
pub struct InterfaceQueue<T> {
    slots: VecDeque<T>,
    controls: usize,
    capacity: usize,
    /// End of the transmission currently on the air.
    pub busy_until: f64,
}

impl<T: QueueItem> InterfaceQueue<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            slots: VecDeque::with_capacity(capacity),
            controls: 0,
            capacity,
            busy_until: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.slots.iter()
    }

    pub fn enqueue(&mut self, item: T) -> EnqueueOutcome<T> {
        let full = self.slots.len() >= self.capacity;
        if item.is_control() {
            let mut outcome = EnqueueOutcome::Accepted;
            if full {
                if self.controls == self.slots.len() {
                    return EnqueueOutcome::DroppedIncoming(item);
                }
                let evicted = self.slots.pop_back().expect("full queue has a tail");
                outcome = EnqueueOutcome::DroppedTailData(evicted);
            }
            self.slots.insert(self.controls, item);
            self.controls += 1;
            outcome
        } else {
            if full {
                return EnqueueOutcome::DroppedIncoming(item);
            }
            self.slots.push_back(item);
            EnqueueOutcome::Accepted
        }
    }

    pub fn dequeue(&mut self) -> Option<T> {
        let item = self.slots.pop_front()?;
        if item.is_control() {
            self.controls -= 1;
        }
        Some(item)
    }

    /// Removes every queued item, front to back.
    pub fn drain(&mut self) -> Vec<T> {
        self.controls = 0;
        self.slots.drain(..).collect()
    }

    /// Capacity bound and control-before-data ordering.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.slots.len() > self.capacity {
            return Err(format!(
                "queue length {} exceeds capacity {}",
                self.slots.len(),
                self.capacity
            ));
        }
        let mut seen_data = false;
        let mut controls = 0;
        for item in &self.slots {
            if item.is_control() {
                controls += 1;
                if seen_data {
                    return Err("control packet queued behind a data packet".into());
                }
            } else {
                seen_data = true;
            }
        }
        if controls != self.controls {
            return Err(format!(
                "control count {} disagrees with queue contents {}",
                self.controls, controls
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    enum P {
        C(u32),
        D(u32),
    }

    impl QueueItem for P {
        fn is_control(&self) -> bool {
            matches!(self, P::C(_))
        }
    }

    fn contents(q: &InterfaceQueue<P>) -> Vec<P> {
        q.iter().copied().collect()
    }

    #[test]
    fn data_into_empty_queue() {
        let mut q = InterfaceQueue::new(50);
        assert_eq!(q.enqueue(P::D(1)), EnqueueOutcome::Accepted);
        assert_eq!(contents(&q), vec![P::D(1)]);
    }

    #[test]
    fn control_goes_behind_controls_ahead_of_data() {
        let mut q = InterfaceQueue::new(50);
        q.enqueue(P::C(1));
        q.enqueue(P::D(2));
        assert_eq!(q.enqueue(P::C(3)), EnqueueOutcome::Accepted);
        assert_eq!(contents(&q), vec![P::C(1), P::C(3), P::D(2)]);
    }

    #[test]
    fn full_of_data_drops_incoming_data() {
        let mut q = InterfaceQueue::new(50);
        for i in 0..50 {
            q.enqueue(P::D(i));
        }
        let before = contents(&q);
        assert_eq!(q.enqueue(P::D(99)), EnqueueOutcome::DroppedIncoming(P::D(99)));
        assert_eq!(contents(&q), before);
    }

    #[test]
    fn full_queue_control_evicts_tail_data() {
        let mut q = InterfaceQueue::new(3);
        q.enqueue(P::D(1));
        q.enqueue(P::D(2));
        q.enqueue(P::C(3));
        assert_eq!(q.enqueue(P::C(4)), EnqueueOutcome::DroppedTailData(P::D(2)));
        assert_eq!(contents(&q), vec![P::C(3), P::C(4), P::D(1)]);
        assert_eq!(q.enqueue(P::C(5)), EnqueueOutcome::DroppedTailData(P::D(1)));
        assert_eq!(q.enqueue(P::C(6)), EnqueueOutcome::DroppedIncoming(P::C(6)));
        assert_eq!(contents(&q), vec![P::C(3), P::C(4), P::C(5)]);
    }

    /// Straightforward list model of the discipline.
    fn reference_enqueue(model: &mut Vec<P>, cap: usize, item: P) -> Option<P> {
        if model.len() < cap {
            if item.is_control() {
                let pos = model.iter().take_while(|p| p.is_control()).count();
                model.insert(pos, item);
            } else {
                model.push(item);
            }
            return None;
        }
        if !item.is_control() {
            return Some(item);
        }
        match model.last() {
            Some(last) if !last.is_control() => {
                let evicted = model.pop();
                let pos = model.iter().take_while(|p| p.is_control()).count();
                model.insert(pos, item);
                evicted
            }
            _ => Some(item),
        }
    }

    proptest! {
        #[test]
        fn matches_reference_model(cap in 1usize..8, ops in prop::collection::vec((0u8..3, any::<bool>()), 0..200)) {
            let mut q = InterfaceQueue::new(cap);
            let mut model = Vec::new();
            for (i, (op, control)) in ops.into_iter().enumerate() {
                let id = i as u32;
                if op == 0 {
                    let got = q.dequeue();
                    let want = if model.is_empty() { None } else { Some(model.remove(0)) };
                    prop_assert_eq!(got, want);
                } else {
                    let item = if control { P::C(id) } else { P::D(id) };
                    let dropped = match q.enqueue(item) {
                        EnqueueOutcome::Accepted => None,
                        EnqueueOutcome::DroppedIncoming(p) | EnqueueOutcome::DroppedTailData(p) => Some(p),
                    };
                    prop_assert_eq!(dropped, reference_enqueue(&mut model, cap, item));
                }
                prop_assert_eq!(contents(&q), model.clone());
                prop_assert!(q.check_invariants().is_ok());
            }
        }
    }
}
