//! Discrete-event queue on a virtual nanosecond clock.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

struct Scheduled<E> {
    t_ns: i64,
    order: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.t_ns, self.order) == (other.t_ns, other.order)
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // reversed: BinaryHeap is a max-heap, we pop the earliest
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t_ns, other.order).cmp(&(self.t_ns, self.order))
    }
}

/// Events pop in time order; events at the same instant pop in insertion order.
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    next_order: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), next_order: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t_ns: i64, event: E) {
        self.heap.push(Scheduled { t_ns, order: self.next_order, event });
        self.next_order += 1;
    }

    pub fn pop(&mut self) -> Option<(i64, E)> {
        self.heap.pop().map(|s| (s.t_ns, s.event))
    }

    pub fn peek_time(&self) -> Option<i64> {
        self.heap.peek().map(|s| s.t_ns)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_then_insertion_order() {
        let mut q = EventQueue::new();
        q.push(5, "c");
        q.push(1, "a");
        q.push(5, "d");
        q.push(1, "b");
        assert_eq!(q.peek_time(), Some(1));
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(order, [(1, "a"), (1, "b"), (5, "c"), (5, "d")]);
        assert!(q.is_empty());
    }
}
