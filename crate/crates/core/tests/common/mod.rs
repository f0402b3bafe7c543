#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use blockprop::engine::Engine;
use blockprop::metrics::Group;
use blockprop::mining::{MiningModel, NodeCapacity};
use blockprop::protocol::{Block, BlockId, NodeSetup, Simulation, World, WorldConfig};
use blockprop::scenario::{Degree, Scenario};
use blockprop::strategy::StaticRandom;
use blockprop::topology::{NetworkDataset, NetworkModel, RegionId, RelayOverlay};

/// A small, fork-heavy scenario on the shipped dataset.
pub fn small(n: usize, k: usize, interval_ms: u64, blocks: usize) -> Scenario {
    let mut sc = Scenario::preset("dogecoin").expect("preset");
    sc.name = format!("small-{n}");
    sc.n_nodes = n;
    sc.degree = Degree::Constant { k };
    sc.target_interval_ms = interval_ms;
    sc.stop_blocks = blocks;
    sc
}

/// Longest chain length by walking parent links from every block.
pub fn oracle_main_chain(blocks: &[Block]) -> (usize, BTreeSet<BlockId>) {
    let depth = |b: &Block| {
        let mut d = 0usize;
        let mut cur = b.parent;
        while let Some(p) = cur {
            d += 1;
            cur = blocks[p.index()].parent;
        }
        d
    };
    let mut best = (0usize, BlockId::GENESIS);
    for b in blocks {
        let d = depth(b);
        if d > best.0 {
            best = (d, b.id);
        }
    }
    let mut on_chain = BTreeSet::new();
    let mut cur = Some(best.1);
    while let Some(id) = cur {
        if id != BlockId::GENESIS {
            on_chain.insert(id);
        }
        cur = blocks[id.index()].parent;
    }
    (best.0, on_chain)
}

pub fn oracle_fork_rate(blocks: &[Block]) -> f64 {
    let mined = blocks.len() - 1;
    let (_, on_chain) = oracle_main_chain(blocks);
    let off = blocks[1..]
        .iter()
        .filter(|b| !on_chain.contains(&b.id))
        .count();
    off as f64 / mined as f64
}

/// Whether every ancestor of `b` is in `have`.
pub fn fully_known(blocks: &[Block], have: &BTreeSet<BlockId>, b: BlockId) -> bool {
    let mut cur = Some(b);
    while let Some(id) = cur {
        if !have.contains(&id) {
            return false;
        }
        cur = blocks[id.index()].parent;
    }
    true
}

/// Nodes reachable from `src` along outbound neighbor edges.
pub fn reachable(world: &World, src: u32) -> BTreeSet<u32> {
    let mut seen = BTreeSet::from([src]);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in &world.nodes()[u as usize].neighbors {
            if seen.insert(v) {
                q.push_back(v);
            }
        }
    }
    seen
}

/// Two miners in one region with the given capacities, one link each way.
pub fn two_miners(seed: u64, caps: [f64; 2], interval_ms: u64, block_size: u64) -> Simulation {
    let network = NetworkModel::from_dataset(&NetworkDataset::builtin(), 10.0).expect("dataset");
    let capacities: Vec<NodeCapacity> = caps
        .iter()
        .map(|&c| NodeCapacity::new(c).expect("positive"))
        .collect();
    let timing = MiningModel::new(&capacities, interval_ms).expect("timing");
    let setups = capacities
        .iter()
        .map(|&capacity| NodeSetup {
            region: RegionId(0),
            capacity,
            degree: 1,
            manager: Box::new(StaticRandom),
        })
        .collect();
    Simulation::new(
        Engine::new(seed),
        setups,
        network,
        Box::new(timing),
        |_| {
            Ok((
                RelayOverlay::empty(2),
                vec![Group {
                    label: "all".into(),
                    members: vec![0, 1],
                }],
            ))
        },
        WorldConfig {
            block_size,
            trace_messages: false,
            capture_receptions: false,
        },
    )
    .expect("two-node world")
}
