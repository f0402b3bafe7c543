//! Discrete-event kernel.
//!
//! The engine owns the simulation clock, a timestamp-ordered event queue and
//! the single random stream every stochastic draw in a run consumes. Events
//! with equal timestamps dequeue in insertion order, so a run is a pure
//! function of its scenario and seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::EngineError;

/// The random generator shared by every draw in a run.
pub type SimRng = ChaCha12Rng;

/// Builds the run's random stream from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Milliseconds since simulation start.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, ms: u64) -> SimTime {
        SimTime(self.0 + ms)
    }
}

impl Sub for SimTime {
    type Output = u64;

    fn sub(self, other: SimTime) -> u64 {
        self.0 - other.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Handle returned by [`Engine::schedule`], usable for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ticket {
    slot: u32,
    seq: u64,
}

/// A dequeued event together with its ordering key.
#[derive(Debug)]
pub struct Scheduled<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub event: E,
}

/// Anything that reacts to events popped from an [`Engine`].
pub trait Process<E> {
    fn process(&mut self, engine: &mut Engine<E>, event: Scheduled<E>);
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Key {
    fire_at: SimTime,
    seq: u64,
    slot: u32,
}

impl Ord for Key {
    // Reversed so the max-heap yields the earliest (fire_at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Slot<E> {
    seq: u64,
    event: Option<E>,
}

pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Key>,
    // Payloads live in a slab so cancellation is O(1); a cancelled slot keeps
    // its place until its key is popped.
    slots: Vec<Slot<E>>,
    free: Vec<u32>,
    live: usize,
    processed: u64,
    rng: SimRng,
}

impl<E> Engine<E> {
    pub fn new(seed: u64) -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            slots: Vec::new(),
            free: Vec::new(),
            live: 0,
            processed: 0,
            rng: seeded_rng(seed),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    /// Number of scheduled events that have neither fired nor been cancelled.
    pub fn pending(&self) -> usize {
        self.live
    }

    pub fn is_idle(&self) -> bool {
        self.live == 0
    }

    /// Events handed to a processor so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> Result<Ticket, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::PastEvent {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let slot = match self.free.pop() {
            Some(idx) => {
                self.slots[idx as usize] = Slot {
                    seq,
                    event: Some(event),
                };
                idx
            }
            None => {
                self.slots.push(Slot {
                    seq,
                    event: Some(event),
                });
                (self.slots.len() - 1) as u32
            }
        };
        self.queue.push(Key { fire_at, seq, slot });
        self.live += 1;
        Ok(Ticket { slot, seq })
    }

    /// Schedules `event` `delay` milliseconds from now. Never fails.
    pub fn schedule_after(&mut self, delay: u64, event: E) -> Ticket {
        let at = self.now + delay;
        match self.schedule(at, event) {
            Ok(t) => t,
            Err(_) => unreachable!("now + delay is never in the past"),
        }
    }

    /// Removes a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, ticket: Ticket) -> bool {
        match self.slots.get_mut(ticket.slot as usize) {
            Some(slot) if slot.seq == ticket.seq && slot.event.is_some() => {
                slot.event = None;
                self.live -= 1;
                if self.queue.len() > 2 * self.live + 4096 {
                    self.compact();
                }
                true
            }
            _ => false,
        }
    }

    /// Drops the keys of cancelled events so they stop costing heap work.
    fn compact(&mut self) {
        let mut keys = std::mem::take(&mut self.queue).into_vec();
        keys.retain(|k| {
            let alive = self.slots[k.slot as usize].event.is_some();
            if !alive {
                self.free.push(k.slot);
            }
            alive
        });
        self.queue = BinaryHeap::from(keys);
    }

    /// Pops the next live event and advances the clock to it.
    pub fn pop(&mut self) -> Option<Scheduled<E>> {
        while let Some(key) = self.queue.pop() {
            let slot = &mut self.slots[key.slot as usize];
            let event = slot.event.take();
            self.free.push(key.slot);
            if let Some(event) = event {
                debug_assert!(key.fire_at >= self.now);
                self.now = key.fire_at;
                self.live -= 1;
                return Some(Scheduled {
                    fire_at: key.fire_at,
                    seq: key.seq,
                    event,
                });
            }
        }
        None
    }

    /// Processes events in order until `stop` holds, returning the clock.
    /// `stop` is checked before every event, so a predicate that is already
    /// true returns immediately.
    pub fn run_until<W, F>(&mut self, world: &mut W, mut stop: F) -> Result<SimTime, EngineError>
    where
        W: Process<E>,
        F: FnMut(&W) -> bool,
    {
        loop {
            if stop(world) {
                return Ok(self.now);
            }
            match self.pop() {
                Some(ev) => {
                    self.processed += 1;
                    world.process(self, ev);
                }
                None => return Err(EngineError::Starved { at: self.now }),
            }
        }
    }

    /// Processes every remaining event.
    pub fn drain<W: Process<E>>(&mut self, world: &mut W) -> SimTime {
        while let Some(ev) = self.pop() {
            self.processed += 1;
            world.process(self, ev);
        }
        self.now
    }
}
