//! Neighbor management.
//!
//! Each node owns one [`NeighborManager`]. The protocol calls its hooks when
//! the node joins, drops a neighbor, hears an INV, mines a block or accepts a
//! block onto its main chain. Two policies ship: a fixed random neighbor set,
//! and an adaptive policy that periodically reconnects to the peers whose
//! announcements arrive soonest after block creation.

use std::collections::HashMap;

use rand::Rng;

use crate::engine::SimRng;
use crate::error::ConfigError;
use crate::protocol::{BlockId, NodeId};

/// One INV as seen by its receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InvObservation {
    pub sender: NodeId,
    pub block: BlockId,
    /// INV arrival time minus block creation time.
    pub elapsed_ms: u64,
}

/// What a manager may look at when choosing neighbors.
pub struct SelectionContext<'a> {
    pub node: NodeId,
    pub n_nodes: usize,
    pub k: usize,
    pub rng: &'a mut SimRng,
}

pub trait NeighborManager: Send {
    /// Neighbors the node starts with.
    fn on_join(&mut self, ctx: SelectionContext<'_>) -> Result<Vec<NodeId>, ConfigError>;

    fn on_disconnect(&mut self, _peer: NodeId) {}

    fn on_inv(&mut self, _obs: InvObservation) {}

    fn on_block_mined(&mut self, _block: BlockId) {}

    /// Returns true when the manager wants [`NeighborManager::refresh`] called.
    fn on_block_accepted(&mut self, _block: BlockId) -> bool {
        false
    }

    /// A replacement neighbor set, or `None` to keep the current one.
    fn refresh(&mut self, _ctx: SelectionContext<'_>) -> Option<Vec<NodeId>> {
        None
    }
}

/// Appends uniform picks, excluding `node` and anything already chosen,
/// until `chosen` holds `k` ids.
fn random_fill<R: Rng + ?Sized>(
    chosen: &mut Vec<NodeId>,
    node: NodeId,
    n_nodes: usize,
    k: usize,
    rng: &mut R,
) {
    debug_assert!(k < n_nodes);
    while chosen.len() < k {
        let pick = rng.random_range(0..n_nodes as NodeId);
        if pick != node && !chosen.contains(&pick) {
            chosen.push(pick);
        }
    }
}

/// `k` distinct uniform picks from all nodes, excluding `node`.
pub fn static_random_select<R: Rng + ?Sized>(
    node: NodeId,
    n_nodes: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<NodeId>, ConfigError> {
    if k >= n_nodes {
        return Err(ConfigError::invalid(format!(
            "cannot pick {k} distinct neighbors among {n_nodes} nodes"
        )));
    }
    let mut out = Vec::with_capacity(k);
    random_fill(&mut out, node, n_nodes, k, rng);
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Weighted {
    num: f64,
    den: f64,
}

/// Per-sender weighted mean of INV delays within the current window.
///
/// The newest observation has weight 1 and every older one is multiplied by
/// `lambda` each time a newer one arrives; `lambda = 1` is the plain mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBoard {
    lambda: f64,
    scores: HashMap<NodeId, Weighted>,
    blocks_in_window: u32,
}

impl ScoreBoard {
    pub fn new(lambda: f64) -> Self {
        ScoreBoard {
            lambda,
            scores: HashMap::new(),
            blocks_in_window: 0,
        }
    }

    pub fn record_inv(&mut self, obs: InvObservation) {
        let w = self.scores.entry(obs.sender).or_default();
        w.num = self.lambda * w.num + obs.elapsed_ms as f64;
        w.den = self.lambda * w.den + 1.0;
    }

    pub fn score(&self, sender: NodeId) -> Option<f64> {
        self.scores.get(&sender).map(|w| w.num / w.den)
    }

    /// Scored senders, best (lowest) first; ties broken by id.
    pub fn ranked(&self) -> Vec<(NodeId, f64)> {
        let mut v: Vec<(NodeId, f64)> = self
            .scores
            .iter()
            .map(|(&s, w)| (s, w.num / w.den))
            .collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn note_block(&mut self) -> u32 {
        self.blocks_in_window += 1;
        self.blocks_in_window
    }

    pub fn blocks_in_window(&self) -> u32 {
        self.blocks_in_window
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn reset(&mut self) {
        self.scores.clear();
        self.blocks_in_window = 0;
    }
}

/// Keeps the `k − 1` best-scored senders and fills the rest with uniform
/// picks (at least one), then clears the window.
pub fn refresh_neighbors<R: Rng + ?Sized>(
    node: NodeId,
    board: &mut ScoreBoard,
    n_nodes: usize,
    k: usize,
    rng: &mut R,
) -> Vec<NodeId> {
    let keep = k.saturating_sub(1);
    let mut chosen: Vec<NodeId> = board
        .ranked()
        .into_iter()
        .map(|(s, _)| s)
        .filter(|&s| s != node && (s as usize) < n_nodes)
        .take(keep)
        .collect();
    random_fill(&mut chosen, node, n_nodes, k, rng);
    board.reset();
    chosen
}

/// Fixed random neighbors for the whole run.
#[derive(Debug, Default)]
pub struct StaticRandom;

impl NeighborManager for StaticRandom {
    fn on_join(&mut self, ctx: SelectionContext<'_>) -> Result<Vec<NodeId>, ConfigError> {
        static_random_select(ctx.node, ctx.n_nodes, ctx.k, ctx.rng)
    }
}

/// Reconnects every `window` accepted blocks to the fastest announcers.
#[derive(Debug)]
pub struct Adaptive {
    board: ScoreBoard,
    window: u32,
    log_observations: bool,
}

impl Adaptive {
    pub fn new(lambda: f64, window: u32, log_observations: bool) -> Self {
        Adaptive {
            board: ScoreBoard::new(lambda),
            window,
            log_observations,
        }
    }

    pub fn board(&self) -> &ScoreBoard {
        &self.board
    }
}

impl NeighborManager for Adaptive {
    fn on_join(&mut self, ctx: SelectionContext<'_>) -> Result<Vec<NodeId>, ConfigError> {
        static_random_select(ctx.node, ctx.n_nodes, ctx.k, ctx.rng)
    }

    fn on_inv(&mut self, obs: InvObservation) {
        if self.log_observations {
            self.board.record_inv(obs);
        }
    }

    fn on_block_accepted(&mut self, _block: BlockId) -> bool {
        self.board.note_block() >= self.window
    }

    fn refresh(&mut self, ctx: SelectionContext<'_>) -> Option<Vec<NodeId>> {
        Some(refresh_neighbors(
            ctx.node,
            &mut self.board,
            ctx.n_nodes,
            ctx.k,
            ctx.rng,
        ))
    }
}
