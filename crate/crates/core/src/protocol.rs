//! Node behaviour: chain view, longest-chain rule, mining lifecycle and the
//! INV / GETDATA / BLOCK exchange.
//!
//! A node that adopts a new tip announces it with an INV to each of its own
//! outbound neighbors. A receiver that does not have the block and has not
//! asked for it yet answers with GETDATA, and the announcer replies with the
//! block body. INV and GETDATA are modelled as zero-byte messages, so only
//! block bodies pay a transmission cost.

use std::collections::HashMap;

use fixedbitset::FixedBitSet;

use crate::engine::{Engine, Process, Scheduled, SimRng, SimTime, Ticket};
use crate::error::ConfigError;
use crate::metrics::{
    fork_rate, timeseries_buckets, BlockRow, Diagnostics, Group, PropagationRecord,
    PropagationTracker, RunReport,
};
use crate::mining::{BlockTiming, NodeCapacity};
use crate::strategy::{InvObservation, NeighborManager, SelectionContext};
use crate::topology::{Endpoint, NetworkModel, RegionId, RelayOverlay};

pub type NodeId = u32;

/// Dense block index; id 0 is the genesis block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub id: BlockId,
    /// `None` only for genesis.
    pub parent: Option<BlockId>,
    /// `None` only for genesis.
    pub creator: Option<NodeId>,
    pub created_at: SimTime,
    pub height: u32,
    pub size: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Message {
    /// Carries the creation time so receivers can score the announcement
    /// before they hold the block.
    Inv {
        block: BlockId,
        created_at: SimTime,
    },
    GetData {
        block: BlockId,
    },
    Block {
        block: BlockId,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    BlockMined {
        node: NodeId,
        parent: BlockId,
    },
    Arrival {
        from: NodeId,
        to: NodeId,
        msg: Message,
    },
    NeighborRefresh {
        node: NodeId,
    },
}

/// One entry of the optional message trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SentMessage {
    pub sent_at: SimTime,
    pub arrives_at: SimTime,
    pub from: NodeId,
    pub to: NodeId,
    pub msg: Message,
    pub size: u64,
}

#[derive(Debug)]
pub struct NodeState {
    pub id: NodeId,
    pub region: RegionId,
    pub capacity: NodeCapacity,
    pub neighbors: Vec<NodeId>,
    pub relay_member: bool,
    pub tip: BlockId,
    pending_mining: Option<Ticket>,
    known: FixedBitSet,
    connected: FixedBitSet,
    requested: FixedBitSet,
    // parent -> bodies waiting for it
    orphans: HashMap<BlockId, Vec<BlockId>>,
}

impl NodeState {
    fn new(id: NodeId, region: RegionId, capacity: NodeCapacity) -> Self {
        let mut known = FixedBitSet::with_capacity(64);
        known.insert(0);
        let connected = known.clone();
        NodeState {
            id,
            region,
            capacity,
            neighbors: Vec::new(),
            relay_member: false,
            tip: BlockId::GENESIS,
            pending_mining: None,
            known,
            connected,
            requested: FixedBitSet::with_capacity(64),
            orphans: HashMap::new(),
        }
    }

    pub fn knows(&self, b: BlockId) -> bool {
        self.known.contains(b.index())
    }

    /// Body held and every ancestor held too.
    pub fn has_connected(&self, b: BlockId) -> bool {
        self.connected.contains(b.index())
    }

    pub fn known_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.known.ones().map(|i| BlockId(i as u32))
    }

    fn endpoint(&self) -> Endpoint {
        Endpoint {
            region: self.region,
            relay: self.relay_member,
        }
    }
}

/// Everything needed to place one node in the world.
pub struct NodeSetup {
    pub region: RegionId,
    pub capacity: NodeCapacity,
    pub degree: usize,
    pub manager: Box<dyn NeighborManager>,
}

pub struct WorldConfig {
    pub block_size: u64,
    pub trace_messages: bool,
    pub capture_receptions: bool,
}

pub struct World {
    nodes: Vec<NodeState>,
    managers: Vec<Box<dyn NeighborManager>>,
    degrees: Vec<usize>,
    blocks: Vec<Block>,
    network: NetworkModel,
    relay: RelayOverlay,
    timing: Box<dyn BlockTiming>,
    block_size: u64,
    mining_enabled: bool,
    tracker: PropagationTracker,
    trace: Option<Vec<SentMessage>>,
    diag: Diagnostics,
}

impl World {
    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.index()]
    }

    /// Blocks mined so far, forks included.
    pub fn blocks_mined(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn trace(&self) -> Option<&[SentMessage]> {
        self.trace.as_deref()
    }

    pub fn records(&self) -> Option<&[PropagationRecord]> {
        self.tracker.records()
    }

    pub fn relay(&self) -> &RelayOverlay {
        &self.relay
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diag
    }

    fn send(&mut self, engine: &mut Engine<Event>, from: NodeId, to: NodeId, msg: Message) {
        let size = match msg {
            Message::Block { block } => self.blocks[block.index()].size,
            _ => 0,
        };
        let now = engine.now();
        let arrives_at = self.network.message_arrival_time(
            now,
            size,
            self.nodes[from as usize].endpoint(),
            self.nodes[to as usize].endpoint(),
            engine.rng(),
        );
        if let Some(t) = &mut self.trace {
            t.push(SentMessage {
                sent_at: now,
                arrives_at,
                from,
                to,
                msg,
                size,
            });
        }
        let scheduled = engine.schedule(arrives_at, Event::Arrival { from, to, msg });
        debug_assert!(scheduled.is_ok());
    }

    fn schedule_mining(&mut self, engine: &mut Engine<Event>, node: NodeId) {
        if !self.mining_enabled {
            return;
        }
        let n = &self.nodes[node as usize];
        let (capacity, parent) = (n.capacity, n.tip);
        let interval = self.timing.sample_interval(capacity, engine.rng());
        let ticket = engine.schedule_after(interval, Event::BlockMined { node, parent });
        self.nodes[node as usize].pending_mining = Some(ticket);
    }

    fn restart_mining(&mut self, engine: &mut Engine<Event>, node: NodeId) {
        if let Some(t) = self.nodes[node as usize].pending_mining.take() {
            engine.cancel(t);
        }
        self.schedule_mining(engine, node);
    }

    /// Stops all mining: pending attempts are cancelled and tip changes no
    /// longer start new ones.
    pub fn stop_mining(&mut self, engine: &mut Engine<Event>) {
        self.mining_enabled = false;
        for n in &mut self.nodes {
            if let Some(t) = n.pending_mining.take() {
                engine.cancel(t);
            }
        }
    }

    /// INV to every outbound neighbor except `except`; relay members also
    /// announce across the overlay unless the block came over it.
    fn announce(
        &mut self,
        engine: &mut Engine<Event>,
        node: NodeId,
        block: BlockId,
        except: Option<NodeId>,
    ) {
        let created_at = self.blocks[block.index()].created_at;
        let msg = Message::Inv { block, created_at };
        let neighbors = std::mem::take(&mut self.nodes[node as usize].neighbors);
        for &peer in &neighbors {
            if Some(peer) != except {
                self.send(engine, node, peer, msg);
            }
        }
        let via_overlay = except.is_some_and(|s| self.relay.contains(s));
        if self.nodes[node as usize].relay_member && !via_overlay {
            let members = self.relay.members().to_vec();
            for peer in members {
                if peer != node && Some(peer) != except && !neighbors.contains(&peer) {
                    self.send(engine, node, peer, msg);
                }
            }
        }
        self.nodes[node as usize].neighbors = neighbors;
    }

    fn on_mine_success(&mut self, engine: &mut Engine<Event>, node: NodeId, parent: BlockId) {
        let now = engine.now();
        let idx = node as usize;
        self.nodes[idx].pending_mining = None;
        debug_assert_eq!(self.nodes[idx].tip, parent, "stale mining event fired");
        let id = BlockId(self.blocks.len() as u32);
        let height = self.blocks[parent.index()].height + 1;
        self.blocks.push(Block {
            id,
            parent: Some(parent),
            creator: Some(node),
            created_at: now,
            height,
            size: self.block_size,
        });
        self.tracker.on_block_created(id, now);
        self.tracker.on_reception(id, node, now);
        let n = &mut self.nodes[idx];
        n.known.grow_and_insert(id.index());
        n.connected.grow_and_insert(id.index());
        n.tip = id;
        self.managers[idx].on_block_mined(id);
        self.announce(engine, node, id, None);
        self.schedule_mining(engine, node);
    }

    fn on_inv(
        &mut self,
        engine: &mut Engine<Event>,
        node: NodeId,
        sender: NodeId,
        block: BlockId,
        created_at: SimTime,
    ) {
        let now = engine.now();
        self.managers[node as usize].on_inv(InvObservation {
            sender,
            block,
            elapsed_ms: now.saturating_sub(created_at),
        });
        let n = &mut self.nodes[node as usize];
        if !n.knows(block) && !n.requested.contains(block.index()) {
            n.requested.grow_and_insert(block.index());
            self.send(engine, node, sender, Message::GetData { block });
        }
    }

    fn on_getdata(
        &mut self,
        engine: &mut Engine<Event>,
        node: NodeId,
        sender: NodeId,
        block: BlockId,
    ) {
        if self.nodes[node as usize].knows(block) {
            self.send(engine, node, sender, Message::Block { block });
        } else {
            self.diag.getdata_for_unknown_block += 1;
        }
    }

    fn on_block(
        &mut self,
        engine: &mut Engine<Event>,
        node: NodeId,
        sender: NodeId,
        block: BlockId,
    ) {
        let now = engine.now();
        let idx = node as usize;
        if self.nodes[idx].knows(block) {
            self.diag.duplicate_blocks += 1;
            return;
        }
        self.nodes[idx].known.grow_and_insert(block.index());
        self.tracker.on_reception(block, node, now);

        let parent = self.blocks[block.index()]
            .parent
            .expect("genesis is never transmitted");
        if !self.nodes[idx].has_connected(parent) {
            self.diag.orphans_received += 1;
            let n = &mut self.nodes[idx];
            n.orphans.entry(parent).or_default().push(block);
            if !n.knows(parent) && !n.requested.contains(parent.index()) {
                n.requested.grow_and_insert(parent.index());
                self.send(engine, node, sender, Message::GetData { block: parent });
            }
            return;
        }

        let best = self.connect(idx, block);
        let tip = self.nodes[idx].tip;
        if self.blocks[best.index()].height > self.blocks[tip.index()].height {
            self.nodes[idx].tip = best;
            self.restart_mining(engine, node);
            self.announce(engine, node, best, Some(sender));
            if self.managers[idx].on_block_accepted(best) {
                engine.schedule_after(0, Event::NeighborRefresh { node });
            }
        }
    }

    /// Marks `block` and any waiting descendants connected; returns the
    /// highest of them (first connected wins ties).
    fn connect(&mut self, idx: usize, block: BlockId) -> BlockId {
        let mut best = block;
        let mut stack = vec![block];
        while let Some(b) = stack.pop() {
            let n = &mut self.nodes[idx];
            n.connected.grow_and_insert(b.index());
            if self.blocks[b.index()].height > self.blocks[best.index()].height {
                best = b;
            }
            if let Some(children) = n.orphans.remove(&b) {
                stack.extend(children.into_iter().rev());
            }
        }
        best
    }

    fn on_refresh(&mut self, engine: &mut Engine<Event>, node: NodeId) {
        let idx = node as usize;
        let ctx = SelectionContext {
            node,
            n_nodes: self.nodes.len(),
            k: self.degrees[idx],
            rng: engine.rng(),
        };
        if let Some(next) = self.managers[idx].refresh(ctx) {
            let old = std::mem::replace(&mut self.nodes[idx].neighbors, next);
            for peer in old {
                if !self.nodes[idx].neighbors.contains(&peer) {
                    self.managers[idx].on_disconnect(peer);
                }
            }
            self.diag.neighbor_refreshes += 1;
        }
    }

    /// Head of the longest chain in the global block tree; the earliest
    /// mined block wins a height tie.
    pub fn main_chain_head(&self) -> BlockId {
        let mut best = BlockId::GENESIS;
        for b in &self.blocks {
            if b.height > self.blocks[best.index()].height {
                best = b.id;
            }
        }
        best
    }

    /// Builds the report. `from` labels the groups tracked during the run.
    pub fn report(&self, engine: &Engine<Event>) -> RunReport {
        let head = self.main_chain_head();
        let mut on_main = vec![false; self.blocks.len()];
        let mut cur = Some(head);
        while let Some(b) = cur {
            on_main[b.index()] = true;
            cur = self.blocks[b.index()].parent;
        }
        let rows: Vec<BlockRow> = self.blocks[1..]
            .iter()
            .map(|b| BlockRow {
                block_id: b.id.0,
                height: b.height,
                creator: b.creator.expect("mined block has a creator"),
                created_at_ms: b.created_at.as_millis(),
                half_time_ms: self.tracker.half_time(b.id, 0),
                on_main_chain: on_main[b.id.index()],
            })
            .collect();
        let halves: Vec<(BlockId, Option<u64>)> = rows
            .iter()
            .map(|r| (BlockId(r.block_id), r.half_time_ms))
            .collect();
        let main_len = self.blocks[head.index()].height as usize;
        let group_medians = self
            .tracker
            .labels()
            .iter()
            .enumerate()
            .map(|(g, label)| (label.clone(), self.tracker.group_median(g, 1)))
            .collect();
        let mut diagnostics = self.diag.clone();
        diagnostics.events_processed = engine.processed();
        RunReport {
            t_mbp_ms: self.tracker.group_median(0, 1),
            fork_rate: fork_rate(rows.len(), main_len),
            blocks_mined: rows.len(),
            main_chain_length: main_len,
            undefined_half_times: rows.iter().filter(|r| r.half_time_ms.is_none()).count(),
            group_medians,
            end_time_ms: engine.now().as_millis(),
            diagnostics,
            buckets: timeseries_buckets(&halves, 100),
            blocks: rows,
        }
    }
}

impl Process<Event> for World {
    fn process(&mut self, engine: &mut Engine<Event>, ev: Scheduled<Event>) {
        match ev.event {
            Event::BlockMined { node, parent } => self.on_mine_success(engine, node, parent),
            Event::Arrival { from, to, msg } => match msg {
                Message::Inv { block, created_at } => {
                    self.on_inv(engine, to, from, block, created_at)
                }
                Message::GetData { block } => self.on_getdata(engine, to, from, block),
                Message::Block { block } => self.on_block(engine, to, from, block),
            },
            Event::NeighborRefresh { node } => self.on_refresh(engine, node),
        }
    }
}

/// An engine and the world it drives.
pub struct Simulation {
    pub engine: Engine<Event>,
    pub world: World,
}

impl Simulation {
    /// Places the nodes and lets each pick its neighbors (in id order). Then
    /// `overlay` draws the relay members and the tracked node groups, whose
    /// first entry must be all nodes, and every node starts mining on
    /// genesis.
    pub fn new<F>(
        mut engine: Engine<Event>,
        setups: Vec<NodeSetup>,
        network: NetworkModel,
        timing: Box<dyn BlockTiming>,
        overlay: F,
        config: WorldConfig,
    ) -> Result<Self, ConfigError>
    where
        F: FnOnce(&mut SimRng) -> Result<(RelayOverlay, Vec<Group>), ConfigError>,
    {
        let n = setups.len();
        if n == 0 {
            return Err(ConfigError::invalid("no nodes"));
        }
        for s in &setups {
            if s.region.index() >= network.regions().len() {
                return Err(ConfigError::UnknownRegion(format!("#{}", s.region.0)));
            }
        }
        let mut nodes = Vec::with_capacity(n);
        let mut managers = Vec::with_capacity(n);
        let mut degrees = Vec::with_capacity(n);
        for (i, s) in setups.into_iter().enumerate() {
            nodes.push(NodeState::new(i as NodeId, s.region, s.capacity));
            managers.push(s.manager);
            degrees.push(s.degree);
        }
        // A lone node has nobody to talk to.
        if n > 1 {
            for (i, (node, manager)) in nodes.iter_mut().zip(managers.iter_mut()).enumerate() {
                node.neighbors = manager.on_join(SelectionContext {
                    node: i as NodeId,
                    n_nodes: n,
                    k: degrees[i],
                    rng: engine.rng(),
                })?;
            }
        }
        let (relay, groups) = overlay(engine.rng())?;
        for &m in relay.members() {
            nodes[m as usize].relay_member = true;
        }
        let genesis = Block {
            id: BlockId::GENESIS,
            parent: None,
            creator: None,
            created_at: SimTime::ZERO,
            height: 0,
            size: 0,
        };
        let mut tracker = PropagationTracker::new(n, &groups, config.capture_receptions);
        tracker.on_block_created(BlockId::GENESIS, SimTime::ZERO);
        let mut world = World {
            nodes,
            managers,
            degrees,
            blocks: vec![genesis],
            network,
            relay,
            timing,
            block_size: config.block_size,
            mining_enabled: true,
            tracker,
            trace: config.trace_messages.then(Vec::new),
            diag: Diagnostics::default(),
        };
        for i in 0..n {
            world.schedule_mining(&mut engine, i as NodeId);
        }
        Ok(Simulation { engine, world })
    }

    /// Runs until `count` blocks in total have been mined.
    pub fn mine_until(&mut self, count: usize) -> Result<SimTime, crate::error::EngineError> {
        self.engine
            .run_until(&mut self.world, |w| w.blocks_mined() >= count)
    }

    /// Stops mining and delivers every in-flight message.
    pub fn quiesce(&mut self) -> SimTime {
        self.world.stop_mining(&mut self.engine);
        self.engine.drain(&mut self.world)
    }

    pub fn report(&self) -> RunReport {
        self.world.report(&self.engine)
    }
}
