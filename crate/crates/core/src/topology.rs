//! Regional network model.
//!
//! Every node lives in a region. A transfer from region A to region B runs at
//! `min(upstream(A), downstream(B))`, multiplied by the relay factor when both
//! endpoints belong to the relay overlay, and additionally pays a propagation
//! delay drawn from a Pareto distribution around the table's mean for that
//! ordered region pair. There is no contention: concurrent transfers from one
//! node do not share bandwidth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::ConfigError;

/// Name of the dataset shipped with the crate.
pub const BUILTIN_DATASET: &str = "network-2015";

const BUILTIN_DATASET_TEXT: &str = include_str!("../data/network-2015.toml");

/// Default bandwidth factor between relay members.
pub const DEFAULT_RELAY_MULTIPLIER: f64 = 10.0;

/// Target coefficient of variation of propagation delays.
pub const DELAY_CV: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(pub u8);

impl RegionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub name: String,
    /// bits/s
    pub upstream_bps: f64,
    /// bits/s
    pub downstream_bps: f64,
}

/// Rounds a non-negative quantity to the nearest integer, halves up.
pub(crate) fn round_half_up(x: f64) -> u64 {
    debug_assert!(x >= 0.0);
    (x + 0.5).floor() as u64
}

/// Pareto law with a given mean and a 20% coefficient of variation.
///
/// For shape `a`, CV² = 1 / (a(a − 2)), so CV = 0.2 gives a(a − 2) = 25 and
/// a = 1 + √26. The scale follows from mean = scale·a/(a − 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParetoDelay {
    scale: f64,
    shape: f64,
}

impl ParetoDelay {
    pub fn shape_for_cv(cv: f64) -> f64 {
        1.0 + (1.0 + 1.0 / (cv * cv)).sqrt()
    }

    pub fn from_mean(mean_ms: f64) -> Self {
        let shape = Self::shape_for_cv(DELAY_CV);
        ParetoDelay {
            scale: mean_ms * (shape - 1.0) / shape,
            shape,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// Inverse survival function; `u` in (0, 1].
    pub fn quantile(&self, u: f64) -> f64 {
        self.scale * u.powf(-1.0 / self.shape)
    }

    /// Continuous draw in milliseconds.
    pub fn sample_f64<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // random() is in [0, 1); flip it into (0, 1].
        let u = 1.0 - rng.random::<f64>();
        self.quantile(u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        round_half_up(self.sample_f64(rng))
    }
}

/// Mean one-way delays between ordered region pairs, in milliseconds.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyTable {
    regions: usize,
    mean_ms: Vec<f64>,
    laws: Vec<ParetoDelay>,
}

impl LatencyTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ConfigError> {
        let n = rows.len();
        let mut mean_ms = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ConfigError::invalid(format!(
                    "delay row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &d) in row.iter().enumerate() {
                if !(d.is_finite() && d > 0.0) {
                    return Err(ConfigError::invalid(format!(
                        "mean delay from region {i} to region {j} must be positive, got {d}"
                    )));
                }
                mean_ms.push(d);
            }
        }
        let laws = mean_ms.iter().map(|&m| ParetoDelay::from_mean(m)).collect();
        Ok(LatencyTable {
            regions: n,
            mean_ms,
            laws,
        })
    }

    pub fn mean(&self, from: RegionId, to: RegionId) -> f64 {
        self.mean_ms[from.index() * self.regions + to.index()]
    }

    pub fn law(&self, from: RegionId, to: RegionId) -> &ParetoDelay {
        &self.laws[from.index() * self.regions + to.index()]
    }
}

/// Relay overlay: members exchange blocks at multiplied bandwidth.
#[derive(Clone, Debug, PartialEq)]
pub struct RelayOverlay {
    is_member: Vec<bool>,
    members: Vec<u32>,
    multiplier: f64,
}

impl RelayOverlay {
    pub fn new(n_nodes: usize, members: &[u32], multiplier: f64) -> Result<Self, ConfigError> {
        if !(multiplier.is_finite() && multiplier >= 1.0) {
            return Err(ConfigError::invalid(format!(
                "relay multiplier must be >= 1, got {multiplier}"
            )));
        }
        let mut is_member = vec![false; n_nodes];
        for &m in members {
            let slot = is_member.get_mut(m as usize).ok_or_else(|| {
                ConfigError::invalid(format!("relay member {m} is not a node id"))
            })?;
            *slot = true;
        }
        let members = (0..n_nodes as u32)
            .filter(|&i| is_member[i as usize])
            .collect();
        Ok(RelayOverlay {
            is_member,
            members,
            multiplier,
        })
    }

    pub fn empty(n_nodes: usize) -> Self {
        RelayOverlay {
            is_member: vec![false; n_nodes],
            members: Vec::new(),
            multiplier: DEFAULT_RELAY_MULTIPLIER,
        }
    }

    pub fn contains(&self, node: u32) -> bool {
        self.is_member.get(node as usize).copied().unwrap_or(false)
    }

    /// Members in ascending id order.
    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }
}

/// One side of a transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Endpoint {
    pub region: RegionId,
    pub relay: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    regions: Vec<Region>,
    latency: LatencyTable,
    relay_multiplier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub name: String,
    pub upstream_bps: f64,
    pub downstream_bps: f64,
    pub mean_delay_ms: Vec<f64>,
}

/// On-disk form of a network dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkDataset {
    pub region: Vec<RegionSpec>,
}

impl NetworkDataset {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_DATASET_TEXT).expect("shipped dataset parses")
    }
}

impl NetworkModel {
    pub fn new(
        regions: Vec<Region>,
        latency: LatencyTable,
        relay_multiplier: f64,
    ) -> Result<Self, ConfigError> {
        if regions.is_empty() {
            return Err(ConfigError::invalid("network model has no regions"));
        }
        if regions.len() > u8::MAX as usize {
            return Err(ConfigError::invalid("too many regions"));
        }
        if latency.regions != regions.len() {
            return Err(ConfigError::invalid(format!(
                "delay table covers {} regions, {} declared",
                latency.regions,
                regions.len()
            )));
        }
        for (i, r) in regions.iter().enumerate() {
            if regions[..i].iter().any(|o| o.name == r.name) {
                return Err(ConfigError::invalid(format!(
                    "duplicate region `{}`",
                    r.name
                )));
            }
            for (what, bw) in [
                ("upstream", r.upstream_bps),
                ("downstream", r.downstream_bps),
            ] {
                if !(bw.is_finite() && bw > 0.0) {
                    return Err(ConfigError::invalid(format!(
                        "{what} bandwidth of `{}` must be positive, got {bw}",
                        r.name
                    )));
                }
            }
        }
        if !(relay_multiplier.is_finite() && relay_multiplier >= 1.0) {
            return Err(ConfigError::invalid(format!(
                "relay multiplier must be >= 1, got {relay_multiplier}"
            )));
        }
        Ok(NetworkModel {
            regions,
            latency,
            relay_multiplier,
        })
    }

    pub fn from_dataset(ds: &NetworkDataset, relay_multiplier: f64) -> Result<Self, ConfigError> {
        let regions = ds
            .region
            .iter()
            .map(|r| Region {
                name: r.name.clone(),
                upstream_bps: r.upstream_bps,
                downstream_bps: r.downstream_bps,
            })
            .collect();
        let latency =
            LatencyTable::new(ds.region.iter().map(|r| r.mean_delay_ms.clone()).collect())?;
        Self::new(regions, latency, relay_multiplier)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn latency(&self) -> &LatencyTable {
        &self.latency
    }

    pub fn relay_multiplier(&self) -> f64 {
        self.relay_multiplier
    }

    pub fn region_id(&self, name: &str) -> Result<RegionId, ConfigError> {
        self.regions
            .iter()
            .position(|r| r.name == name)
            .map(|i| RegionId(i as u8))
            .ok_or_else(|| ConfigError::UnknownRegion(name.to_string()))
    }

    fn check(&self, r: RegionId) -> Result<(), ConfigError> {
        if r.index() < self.regions.len() {
            Ok(())
        } else {
            Err(ConfigError::UnknownRegion(format!("#{}", r.0)))
        }
    }

    /// Transfer rate in bits/s from `sender_region` to `receiver_region`.
    pub fn link_bandwidth(
        &self,
        sender_region: RegionId,
        receiver_region: RegionId,
        sender_in_relay: bool,
        receiver_in_relay: bool,
    ) -> Result<f64, ConfigError> {
        self.check(sender_region)?;
        self.check(receiver_region)?;
        Ok(self.bandwidth(
            Endpoint {
                region: sender_region,
                relay: sender_in_relay,
            },
            Endpoint {
                region: receiver_region,
                relay: receiver_in_relay,
            },
        ))
    }

    fn bandwidth(&self, from: Endpoint, to: Endpoint) -> f64 {
        let up = self.regions[from.region.index()].upstream_bps;
        let down = self.regions[to.region.index()].downstream_bps;
        let base = up.min(down);
        if from.relay && to.relay {
            base * self.relay_multiplier
        } else {
            base
        }
    }

    pub fn sample_delay<R: Rng + ?Sized>(&self, from: RegionId, to: RegionId, rng: &mut R) -> u64 {
        self.latency.law(from, to).sample(rng)
    }

    /// Milliseconds needed to push `size` bytes over the link.
    pub fn transmission_ms(&self, size: u64, from: Endpoint, to: Endpoint) -> u64 {
        if size == 0 {
            return 0;
        }
        let bits = size as f64 * 8.0;
        round_half_up(bits * 1000.0 / self.bandwidth(from, to))
    }

    /// Send time plus transmission time plus a sampled propagation delay.
    pub fn message_arrival_time<R: Rng + ?Sized>(
        &self,
        send_at: SimTime,
        size: u64,
        sender: Endpoint,
        receiver: Endpoint,
        rng: &mut R,
    ) -> SimTime {
        let transmission = self.transmission_ms(size, sender, receiver);
        let delay = self.sample_delay(sender.region, receiver.region, rng);
        send_at + transmission + delay
    }
}
