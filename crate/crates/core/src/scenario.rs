//! Scenario files and the built-in presets.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "dogecoin"
//! n_nodes = 600
//! block_size = 8192            # bytes
//! target_interval_ms = 60000
//! stop_blocks = 10000
//! capacity_mean = 100.0
//! seed = 1
//! network = "network-2015"     # built-in dataset, or a path (relative to this file)
//!
//! [degree]
//! kind = "constant"            # or kind = "cdf", cdf = [P(D<=1), P(D<=2), ...]
//! k = 8
//!
//! [region_weights]             # must sum to 1
//! europe = 0.4879
//! north_america = 0.3924
//!
//! [strategy]
//! kind = "static"              # or "adaptive"
//! lambda = 1.0                 # recency decay of INV scores, in (0, 1]
//! refresh_window = 10          # accepted blocks between neighbor refreshes
//! log_observations = true
//!
//! [relay]
//! participation_rate = 0.0     # fraction of nodes in the relay overlay
//! multiplier = 10.0            # bandwidth factor between overlay members
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::topology::{NetworkDataset, NetworkModel, BUILTIN_DATASET, DEFAULT_RELAY_MULTIPLIER};

pub const PRESETS: [&str; 3] = ["bitcoin", "litecoin", "dogecoin"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degree {
    Constant {
        k: usize,
    },
    /// `cdf[d - 1]` is P(degree <= d).
    Cdf {
        cdf: Vec<f64>,
    },
}

impl Degree {
    pub fn max(&self) -> usize {
        match self {
            Degree::Constant { k } => *k,
            Degree::Cdf { cdf } => cdf.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Static,
    Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_window")]
    pub refresh_window: u32,
    #[serde(default = "default_true")]
    pub log_observations: bool,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_window() -> u32 {
    10
}

fn default_true() -> bool {
    true
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Static,
            lambda: default_lambda(),
            refresh_window: default_window(),
            log_observations: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayConfig {
    #[serde(default)]
    pub participation_rate: f64,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
}

fn default_multiplier() -> f64 {
    DEFAULT_RELAY_MULTIPLIER
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            participation_rate: 0.0,
            multiplier: DEFAULT_RELAY_MULTIPLIER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n_nodes: usize,
    pub block_size: u64,
    pub target_interval_ms: u64,
    pub stop_blocks: usize,
    pub capacity_mean: f64,
    #[serde(default)]
    pub seed: u64,
    pub network: String,
    pub degree: Degree,
    pub region_weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub relay: RelayConfig,
}

/// A rule violation, tagged with the key it concerns.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub key: &'static str,
    pub message: String,
}

fn violation(key: &'static str, message: impl Into<String>) -> Violation {
    Violation {
        key,
        message: message.into(),
    }
}

fn weights(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

impl Scenario {
    fn coin(
        name: &str,
        n_nodes: usize,
        target_interval_ms: u64,
        block_size: u64,
        region_weights: BTreeMap<String, f64>,
    ) -> Scenario {
        Scenario {
            name: name.to_string(),
            n_nodes,
            block_size,
            target_interval_ms,
            stop_blocks: 10_000,
            capacity_mean: 100.0,
            seed: 1,
            network: BUILTIN_DATASET.to_string(),
            degree: Degree::Constant { k: 8 },
            region_weights,
            strategy: StrategyConfig::default(),
            relay: RelayConfig::default(),
        }
    }

    /// The three built-in coin networks.
    pub fn preset(name: &str) -> Option<Scenario> {
        match name {
            "bitcoin" => Some(Self::coin(
                "bitcoin",
                6000,
                600_000,
                534 * 1024,
                weights(&[
                    ("europe", 0.5159),
                    ("north_america", 0.3869),
                    ("asia", 0.0574),
                    ("australia", 0.0166),
                    ("japan", 0.0119),
                    ("south_america", 0.0113),
                ]),
            )),
            // 6.11 KiB = 6256.64 bytes
            "litecoin" => Some(Self::coin(
                "litecoin",
                800,
                150_000,
                6257,
                weights(&[
                    ("europe", 0.4791),
                    ("north_america", 0.3661),
                    ("asia", 0.1022),
                    ("australia", 0.0139),
                    ("japan", 0.0238),
                    ("south_america", 0.0149),
                ]),
            )),
            "dogecoin" => Some(Self::coin(
                "dogecoin",
                600,
                60_000,
                8 * 1024,
                weights(&[
                    ("europe", 0.4879),
                    ("north_america", 0.3924),
                    ("asia", 0.0697),
                    ("australia", 0.0182),
                    ("japan", 0.0106),
                    ("south_america", 0.0212),
                ]),
            )),
            _ => None,
        }
    }

    /// Checks every field-level invariant. Region names are checked against
    /// the dataset separately, see [`Scenario::network_model`].
    pub fn validate(&self) -> Result<(), Violation> {
        if self.n_nodes == 0 {
            return Err(violation("n_nodes", "n_nodes must be at least 1"));
        }
        if self.n_nodes > u32::MAX as usize {
            return Err(violation("n_nodes", "too many nodes"));
        }
        if self.block_size == 0 {
            return Err(violation("block_size", "block_size must be positive"));
        }
        if self.target_interval_ms == 0 {
            return Err(violation(
                "target_interval_ms",
                "target_interval_ms must be positive",
            ));
        }
        if self.stop_blocks == 0 {
            return Err(violation("stop_blocks", "stop_blocks must be at least 1"));
        }
        if !(self.capacity_mean.is_finite() && self.capacity_mean > 0.0) {
            return Err(violation("capacity_mean", "capacity_mean must be positive"));
        }
        match &self.degree {
            Degree::Constant { k } => {
                if *k == 0 {
                    return Err(violation("k", "degree must be at least 1"));
                }
            }
            Degree::Cdf { cdf } => {
                if cdf.is_empty() {
                    return Err(violation("cdf", "degree cdf is empty"));
                }
                let mut prev = 0.0;
                for &p in cdf {
                    if !(p.is_finite() && (prev..=1.0).contains(&p)) {
                        return Err(violation(
                            "cdf",
                            "degree cdf must be non-decreasing within [0, 1]",
                        ));
                    }
                    prev = p;
                }
                if (prev - 1.0).abs() > 1e-9 {
                    return Err(violation("cdf", "degree cdf must end at 1"));
                }
            }
        }
        if self.n_nodes > 1 && self.degree.max() >= self.n_nodes {
            return Err(violation(
                "degree",
                format!(
                    "degree {} needs more than {} nodes",
                    self.degree.max(),
                    self.n_nodes
                ),
            ));
        }
        if self.region_weights.is_empty() {
            return Err(violation("region_weights", "no region weights given"));
        }
        for (name, &w) in &self.region_weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(violation(
                    "region_weights",
                    format!("weight of `{name}` must be non-negative"),
                ));
            }
        }
        let total: f64 = self.region_weights.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(violation(
                "region_weights",
                format!("region weights sum to {total}, expected 1"),
            ));
        }
        let s = &self.strategy;
        if !(s.lambda > 0.0 && s.lambda <= 1.0) {
            return Err(violation("lambda", "lambda must be in (0, 1]"));
        }
        if s.refresh_window == 0 {
            return Err(violation(
                "refresh_window",
                "refresh_window must be at least 1",
            ));
        }
        let r = &self.relay;
        if !(0.0..=1.0).contains(&r.participation_rate) {
            return Err(violation(
                "participation_rate",
                format!("participation_rate {} outside [0, 1]", r.participation_rate),
            ));
        }
        if !(r.multiplier.is_finite() && r.multiplier >= 1.0) {
            return Err(violation("multiplier", "relay multiplier must be >= 1"));
        }
        Ok(())
    }

    /// Exactly ⌊rate·N⌋.
    pub fn relay_member_count(&self) -> usize {
        (self.relay.participation_rate * self.n_nodes as f64).floor() as usize
    }

    fn dataset(&self) -> Result<NetworkDataset, ScenarioError> {
        if self.network == BUILTIN_DATASET {
            return Ok(NetworkDataset::builtin());
        }
        let path = Path::new(&self.network);
        let text = std::fs::read_to_string(path)
            .map_err(|_| ScenarioError::MissingDataset(self.network.clone()))?;
        NetworkDataset::parse(&text).map_err(|e| ScenarioError::Parse {
            origin: self.network.clone(),
            message: e.to_string(),
        })
    }

    /// Loads the network dataset and checks the region weights against it.
    /// Returns the model and each dataset region's weight, in dataset order.
    pub fn network_model(&self) -> Result<(NetworkModel, Vec<f64>), ScenarioError> {
        let ds = self.dataset()?;
        let model = NetworkModel::from_dataset(&ds, self.relay.multiplier).map_err(|e| {
            ScenarioError::Invalid {
                origin: self.network.clone(),
                line: None,
                message: e.to_string(),
            }
        })?;
        for name in self.region_weights.keys() {
            if model.region_id(name).is_err() {
                return Err(ScenarioError::Invalid {
                    origin: self.name.clone(),
                    line: None,
                    message: format!("region `{name}` is not in network `{}`", self.network),
                });
            }
        }
        let w = model
            .regions()
            .iter()
            .map(|r| self.region_weights.get(&r.name).copied().unwrap_or(0.0))
            .collect();
        Ok((model, w))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// 1-based line of the first `key = ...` assignment in `text`.
fn locate_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
                || l.trim_end() == format!("[{key}]")
        })
        .map(|i| i + 1)
}

/// Parses and validates scenario text. Relative dataset paths are resolved
/// against `base_dir`.
pub fn parse_scenario(
    text: &str,
    origin: &str,
    base_dir: Option<&Path>,
) -> Result<Scenario, ScenarioError> {
    let mut sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    if let Err(v) = sc.validate() {
        return Err(ScenarioError::Invalid {
            origin: origin.to_string(),
            line: locate_key(text, v.key),
            message: v.message,
        });
    }
    if sc.network != BUILTIN_DATASET {
        let p = PathBuf::from(&sc.network);
        if p.is_relative() {
            if let Some(base) = base_dir {
                let joined = base.join(p);
                sc.network = std::path::absolute(&joined)
                    .unwrap_or(joined)
                    .to_string_lossy()
                    .into_owned();
            }
        }
    }
    sc.network_model().map_err(|e| match e {
        ScenarioError::Invalid { message, .. } if message.starts_with("region `") => {
            ScenarioError::Invalid {
                origin: origin.to_string(),
                line: locate_key(text, "region_weights"),
                message,
            }
        }
        other => other,
    })?;
    Ok(sc)
}

/// Reads a scenario file, or a preset when `path` names one.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    if !path.exists() {
        if let Some(sc) = path.to_str().and_then(Scenario::preset) {
            return Ok(sc);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, &path.display().to_string(), path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_reference_parameters() {
        let b = Scenario::preset("bitcoin").unwrap();
        assert_eq!(
            (b.n_nodes, b.target_interval_ms, b.block_size),
            (6000, 600_000, 546_816)
        );
        let l = Scenario::preset("litecoin").unwrap();
        assert_eq!(
            (l.n_nodes, l.target_interval_ms, l.block_size),
            (800, 150_000, 6257)
        );
        let d = Scenario::preset("dogecoin").unwrap();
        assert_eq!(
            (d.n_nodes, d.target_interval_ms, d.block_size),
            (600, 60_000, 8192)
        );
        for name in PRESETS {
            let sc = Scenario::preset(name).unwrap();
            assert_eq!(sc.stop_blocks, 10_000);
            sc.validate().unwrap();
            sc.network_model().unwrap();
        }
        assert!(Scenario::preset("monero").is_none());
    }

    #[test]
    fn bad_weights_reported_with_line() {
        let mut sc = Scenario::preset("dogecoin").unwrap();
        sc.region_weights = weights(&[("europe", 0.5), ("asia", 0.4)]);
        let text = sc.to_toml();
        let err = parse_scenario(&text, "t.toml", None).unwrap_err();
        match err {
            ScenarioError::Invalid { line, message, .. } => {
                assert!(message.contains("sum to"));
                let l = line.expect("line located");
                assert!(text.lines().nth(l - 1).unwrap().contains("region_weights"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn participation_above_one_rejected() {
        let mut sc = Scenario::preset("dogecoin").unwrap();
        sc.relay.participation_rate = 1.2;
        let text = sc.to_toml();
        let err = parse_scenario(&text, "t.toml", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("participation_rate"), "{msg}");
        assert!(msg.starts_with("t.toml:"), "{msg}");
    }

    #[test]
    fn unknown_region_rejected() {
        let mut sc = Scenario::preset("dogecoin").unwrap();
        sc.region_weights = weights(&[("atlantis", 1.0)]);
        let err = parse_scenario(&sc.to_toml(), "t.toml", None).unwrap_err();
        assert!(err.to_string().contains("atlantis"));
    }

    #[test]
    fn missing_dataset_is_distinct() {
        let mut sc = Scenario::preset("dogecoin").unwrap();
        sc.network = "/nonexistent/net.toml".into();
        let err = parse_scenario(&sc.to_toml(), "t.toml", None).unwrap_err();
        assert!(matches!(err, ScenarioError::MissingDataset(_)));
    }

    #[test]
    fn syntax_error_is_parse_error() {
        let err = parse_scenario("n_nodes = = 3", "t.toml", None).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }));
        let err = parse_scenario("n_nodes = 3\n", "t.toml", None).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }), "missing fields");
    }

    #[test]
    fn degree_must_fit_network() {
        let mut sc = Scenario::preset("dogecoin").unwrap();
        sc.n_nodes = 3;
        sc.degree = Degree::Constant { k: 5 };
        assert_eq!(sc.validate().unwrap_err().key, "degree");
        sc.n_nodes = 1;
        sc.validate().unwrap();
        sc.n_nodes = 10;
        sc.degree = Degree::Cdf {
            cdf: vec![0.2, 0.1, 1.0],
        };
        assert_eq!(sc.validate().unwrap_err().key, "cdf");
        sc.degree = Degree::Cdf {
            cdf: vec![0.2, 0.5, 1.0],
        };
        sc.validate().unwrap();
    }

    #[test]
    fn relay_count_is_floor() {
        let mut sc = Scenario::preset("bitcoin").unwrap();
        sc.relay.participation_rate = 0.05;
        assert_eq!(sc.relay_member_count(), 300);
        sc.n_nodes = 99;
        assert_eq!(sc.relay_member_count(), 4);
    }

    #[test]
    fn relative_dataset_resolved_against_scenario_dir() {
        let dir = tempfile::tempdir().unwrap();
        let ds = NetworkDataset::builtin();
        std::fs::write(dir.path().join("net.toml"), toml::to_string(&ds).unwrap()).unwrap();
        let mut sc = Scenario::preset("dogecoin").unwrap();
        sc.network = "net.toml".into();
        let loaded = parse_scenario(&sc.to_toml(), "t.toml", Some(dir.path())).unwrap();
        assert!(Path::new(&loaded.network).is_absolute());
        assert!(loaded.network.ends_with("net.toml"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn toml_round_trip(
                n in 2usize..5000,
                k in 1usize..10,
                rate in 0.0f64..=1.0,
                lambda in 0.01f64..=1.0,
                adaptive in any::<bool>(),
                // TOML integers are signed 64-bit.
                seed in 0..=i64::MAX as u64,
            ) {
                prop_assume!(k < n);
                let mut sc = Scenario::preset("litecoin").unwrap();
                sc.n_nodes = n;
                sc.degree = Degree::Constant { k };
                sc.relay.participation_rate = rate;
                sc.strategy.lambda = lambda;
                sc.strategy.kind = if adaptive { StrategyKind::Adaptive } else { StrategyKind::Static };
                sc.seed = seed;
                let once = parse_scenario(&sc.to_toml(), "a", None).unwrap();
                prop_assert_eq!(&once, &sc);
                let twice = parse_scenario(&once.to_toml(), "b", None).unwrap();
                prop_assert_eq!(twice, once);
            }
        }
    }
}
