//! Bounded FIFO between rollout engines and the trainer.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

#[derive(Debug)]
struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    peak: usize,
    pushed: u64,
}

/// Multi-producer, single-consumer queue with backpressure. Producers block
/// while the queue holds `capacity` items; nothing is ever dropped.
#[derive(Debug)]
pub struct TrajectoryQueue<T> {
    capacity: usize,
    state: Mutex<State<T>>,
    not_full: Condvar,
    not_empty: Condvar,
}

/// Result of [`TrajectoryQueue::pull_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pulled<T> {
    pub items: Vec<T>,
    /// Set when the queue was closed before `b_min` items arrived.
    pub shutdown: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Push {
    Accepted,
    /// `try_push` only: the queue is at capacity.
    Full,
    Closed,
}

impl<T> TrajectoryQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "queue capacity must be positive");
        TrajectoryQueue {
            capacity,
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                peak: 0,
                pushed: 0,
            }),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest size ever observed.
    pub fn peak(&self) -> usize {
        self.lock().peak
    }

    pub fn total_pushed(&self) -> u64 {
        self.lock().pushed
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    fn append(&self, st: &mut State<T>, item: T) {
        st.items.push_back(item);
        st.pushed += 1;
        st.peak = st.peak.max(st.items.len());
        assert!(st.items.len() <= self.capacity, "queue overflow");
        self.not_empty.notify_all();
    }

    /// Appends `item`, waiting while the queue is full. Returns the item
    /// back if the queue is closed first.
    pub fn push(&self, item: T) -> Result<(), T> {
        let mut st = self.lock();
        while st.items.len() >= self.capacity && !st.closed {
            st = self.not_full.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        if st.closed {
            return Err(item);
        }
        self.append(&mut st, item);
        Ok(())
    }

    pub fn try_push(&self, item: T) -> (Push, Option<T>) {
        let mut st = self.lock();
        if st.closed {
            return (Push::Closed, Some(item));
        }
        if st.items.len() >= self.capacity {
            return (Push::Full, Some(item));
        }
        self.append(&mut st, item);
        (Push::Accepted, None)
    }

    /// Waits for at least `b_min` items, then takes everything available up
    /// to `b_max`, oldest first.
    pub fn pull_batch(&self, b_min: usize, b_max: usize) -> Pulled<T> {
        self.pull_inner(b_min, b_max, None)
    }

    /// As [`pull_batch`](Self::pull_batch) but gives up after `timeout`,
    /// returning an empty batch without the shutdown flag.
    pub fn pull_batch_timeout(&self, b_min: usize, b_max: usize, timeout: Duration) -> Pulled<T> {
        self.pull_inner(b_min, b_max, Some(timeout))
    }

    fn pull_inner(&self, b_min: usize, b_max: usize, timeout: Option<Duration>) -> Pulled<T> {
        assert!(1 <= b_min && b_min <= b_max, "need 1 <= b_min <= b_max");
        let deadline = timeout.map(|t| std::time::Instant::now() + t);
        let mut st = self.lock();
        while st.items.len() < b_min && !st.closed {
            match deadline {
                None => st = self.not_empty.wait(st).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let now = std::time::Instant::now();
                    if now >= d {
                        return Pulled {
                            items: Vec::new(),
                            shutdown: false,
                        };
                    }
                    st = self.not_empty.wait_timeout(st, d - now).unwrap_or_else(|e| e.into_inner()).0;
                }
            }
        }
        if st.items.len() < b_min {
            return Pulled {
                items: Vec::new(),
                shutdown: true,
            };
        }
        let n = st.items.len().min(b_max);
        let items: Vec<T> = st.items.drain(..n).collect();
        self.not_full.notify_all();
        Pulled { items, shutdown: false }
    }

    /// Removes every queued item regardless of bounds.
    pub fn drain_all(&self) -> Vec<T> {
        let mut st = self.lock();
        let items = st.items.drain(..).collect();
        self.not_full.notify_all();
        items
    }

    /// Wakes all waiters; later pushes are refused.
    pub fn close(&self) {
        let mut st = self.lock();
        st.closed = true;
        self.not_full.notify_all();
        self.not_empty.notify_all();
    }
}
