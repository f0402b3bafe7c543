//! Propagation and fork statistics.
//!
//! A block's half time is the delay from its creation until ⌈N/2⌉ distinct
//! nodes hold its body, the creator included. The run's median propagation
//! time is the median of those half times over all blocks that got that far.
//! Restricting both the receivers and the threshold to a node subset gives
//! the per-group medians.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::SimTime;
use crate::protocol::{BlockId, NodeId};

/// Every first reception of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationRecord {
    pub block: BlockId,
    pub created_at: SimTime,
    pub reception_times: BTreeMap<NodeId, SimTime>,
}

/// Nodes needed to count as "half": ⌈n/2⌉.
pub fn half_threshold(n: usize) -> usize {
    n.div_ceil(2)
}

fn kth_elapsed<I>(created_at: SimTime, times: I, k: usize) -> Option<u64>
where
    I: Iterator<Item = SimTime>,
{
    if k == 0 {
        return None;
    }
    let mut v: Vec<u64> = times.map(|t| t.saturating_sub(created_at)).collect();
    if v.len() < k {
        return None;
    }
    v.sort_unstable();
    Some(v[k - 1])
}

pub fn block_half_time(rec: &PropagationRecord, n_nodes: usize) -> Option<u64> {
    kth_elapsed(
        rec.created_at,
        rec.reception_times.values().copied(),
        half_threshold(n_nodes),
    )
}

/// Half time counting only receivers in `group`.
pub fn group_half_time(rec: &PropagationRecord, group: &[NodeId]) -> Option<u64> {
    kth_elapsed(
        rec.created_at,
        group
            .iter()
            .filter_map(|n| rec.reception_times.get(n).copied()),
        half_threshold(group.len()),
    )
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid] as f64
    } else {
        (v[mid - 1] as f64 + v[mid] as f64) / 2.0
    })
}

fn median_defined(values: &[Option<u64>]) -> Option<f64> {
    let defined: Vec<u64> = values.iter().flatten().copied().collect();
    median(&defined)
}

/// Median over blocks of the group-restricted half time. `None` for an
/// empty group.
pub fn grouped_median(records: &[PropagationRecord], group: &[NodeId]) -> Option<f64> {
    if group.is_empty() {
        return None;
    }
    let halves: Vec<Option<u64>> = records.iter().map(|r| group_half_time(r, group)).collect();
    median_defined(&halves)
}

/// Fraction of mined blocks that are not on the final main chain.
pub fn fork_rate(total_blocks: usize, main_chain_length: usize) -> f64 {
    if total_blocks == 0 {
        return 0.0;
    }
    debug_assert!(main_chain_length <= total_blocks);
    (total_blocks - main_chain_length) as f64 / total_blocks as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketRow {
    /// 1-based.
    pub bucket: usize,
    pub first_block: u32,
    pub last_block: u32,
    pub blocks: usize,
    pub defined: usize,
    pub mean_half_time_ms: Option<f64>,
    pub partial: bool,
}

/// Mean half time over consecutive runs of `bucket` blocks in mining order.
pub fn timeseries_buckets(half_times: &[(BlockId, Option<u64>)], bucket: usize) -> Vec<BucketRow> {
    assert!(bucket > 0);
    half_times
        .chunks(bucket)
        .enumerate()
        .map(|(i, chunk)| {
            let defined: Vec<u64> = chunk.iter().filter_map(|(_, h)| *h).collect();
            let mean = if defined.is_empty() {
                None
            } else {
                Some(defined.iter().sum::<u64>() as f64 / defined.len() as f64)
            };
            BucketRow {
                bucket: i + 1,
                first_block: chunk[0].0 .0,
                last_block: chunk[chunk.len() - 1].0 .0,
                blocks: chunk.len(),
                defined: defined.len(),
                mean_half_time_ms: mean,
                partial: chunk.len() < bucket,
            }
        })
        .collect()
}

/// A labelled node subset tracked during the run.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub label: String,
    pub members: Vec<NodeId>,
}

/// Online half-time bookkeeping for every tracked group.
///
/// Keeping only counters avoids storing N reception times per block; full
/// records can be captured as well for small runs.
#[derive(Debug)]
pub struct PropagationTracker {
    labels: Vec<String>,
    sizes: Vec<usize>,
    thresholds: Vec<u32>,
    node_masks: Vec<u32>,
    created_at: Vec<SimTime>,
    counts: Vec<u32>,
    half_times: Vec<Option<u64>>,
    records: Option<Vec<PropagationRecord>>,
}

impl PropagationTracker {
    /// `groups[0]` should be the all-nodes group.
    pub fn new(n_nodes: usize, groups: &[Group], capture: bool) -> Self {
        assert!(groups.len() <= 32, "at most 32 groups");
        let mut node_masks = vec![0u32; n_nodes];
        for (g, grp) in groups.iter().enumerate() {
            for &n in &grp.members {
                node_masks[n as usize] |= 1 << g;
            }
        }
        PropagationTracker {
            labels: groups.iter().map(|g| g.label.clone()).collect(),
            sizes: groups.iter().map(|g| g.members.len()).collect(),
            thresholds: groups
                .iter()
                .map(|g| half_threshold(g.members.len()) as u32)
                .collect(),
            node_masks,
            created_at: Vec::new(),
            counts: Vec::new(),
            half_times: Vec::new(),
            records: capture.then(Vec::new),
        }
    }

    fn groups(&self) -> usize {
        self.labels.len()
    }

    /// Registers a block; ids must be dense and registered in order.
    pub fn on_block_created(&mut self, block: BlockId, created_at: SimTime) {
        let idx = block.index();
        assert_eq!(idx, self.created_at.len(), "blocks registered out of order");
        self.created_at.push(created_at);
        let g = self.groups();
        self.counts.extend(std::iter::repeat_n(0, g));
        self.half_times.extend(std::iter::repeat_n(None, g));
        if let Some(r) = &mut self.records {
            r.push(PropagationRecord {
                block,
                created_at,
                reception_times: BTreeMap::new(),
            });
        }
    }

    /// First time `node` holds the body of `block`.
    pub fn on_reception(&mut self, block: BlockId, node: NodeId, at: SimTime) {
        let idx = block.index();
        let g = self.groups();
        let mask = self.node_masks[node as usize];
        let created = self.created_at[idx];
        for gi in 0..g {
            if mask & (1 << gi) == 0 {
                continue;
            }
            let c = &mut self.counts[idx * g + gi];
            *c += 1;
            if *c == self.thresholds[gi] {
                self.half_times[idx * g + gi] = Some(at - created);
            }
        }
        if let Some(r) = &mut self.records {
            let prev = r[idx].reception_times.insert(node, at);
            debug_assert!(prev.is_none(), "double reception");
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn group_size(&self, group: usize) -> usize {
        self.sizes[group]
    }

    pub fn half_time(&self, block: BlockId, group: usize) -> Option<u64> {
        self.half_times[block.index() * self.groups() + group]
    }

    /// Number of group members that received `block`.
    pub fn reach(&self, block: BlockId, group: usize) -> u32 {
        self.counts[block.index() * self.groups() + group]
    }

    pub fn records(&self) -> Option<&[PropagationRecord]> {
        self.records.as_deref()
    }

    pub fn take_records(&mut self) -> Option<Vec<PropagationRecord>> {
        self.records.take()
    }

    /// Median half time for `group` over blocks `from..` (skipping genesis
    /// when `from = 1`). `None` for an empty group or no defined half times.
    pub fn group_median(&self, group: usize, from: usize) -> Option<f64> {
        if self.sizes[group] == 0 {
            return None;
        }
        let g = self.groups();
        let v: Vec<Option<u64>> = (from..self.created_at.len())
            .map(|b| self.half_times[b * g + group])
            .collect();
        median_defined(&v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockRow {
    pub block_id: u32,
    pub height: u32,
    pub creator: NodeId,
    pub created_at_ms: u64,
    pub half_time_ms: Option<u64>,
    pub on_main_chain: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub events_processed: u64,
    pub getdata_for_unknown_block: u64,
    pub duplicate_blocks: u64,
    pub orphans_received: u64,
    pub neighbor_refreshes: u64,
}

/// Finished statistics for one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub t_mbp_ms: Option<f64>,
    pub fork_rate: f64,
    pub blocks_mined: usize,
    pub main_chain_length: usize,
    pub undefined_half_times: usize,
    pub group_medians: BTreeMap<String, Option<f64>>,
    pub end_time_ms: u64,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub blocks: Vec<BlockRow>,
    #[serde(skip)]
    pub buckets: Vec<BucketRow>,
}

impl RunReport {
    pub fn group_median(&self, label: &str) -> Option<f64> {
        self.group_medians.get(label).copied().flatten()
    }
}
