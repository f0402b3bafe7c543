//! Run orchestration and report output.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::engine::{Engine, SimRng};
use crate::error::{ConfigError, RunError};
use crate::metrics::{Group, RunReport};
use crate::mining::{sample_capacities, MiningModel};
use crate::protocol::{NodeId, NodeSetup, Simulation, WorldConfig};
use crate::scenario::{Degree, Scenario, StrategyKind};
use crate::strategy::{Adaptive, NeighborManager, StaticRandom};
use crate::topology::{RegionId, RelayOverlay};

pub const GROUP_ALL: &str = "all";
pub const GROUP_RELAY: &str = "relay";
pub const GROUP_NON_RELAY: &str = "non_relay";

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Keep every sent message (small runs only).
    pub trace_messages: bool,
    /// Keep every block's full reception map (small runs only).
    pub capture_receptions: bool,
}

fn sample_degree<R: Rng + ?Sized>(degree: &Degree, rng: &mut R) -> usize {
    match degree {
        Degree::Constant { k } => *k,
        Degree::Cdf { cdf } => {
            let u: f64 = rng.random();
            cdf.iter().position(|&p| u < p).unwrap_or(cdf.len() - 1) + 1
        }
    }
}

fn manager_for(sc: &Scenario) -> Box<dyn NeighborManager> {
    match sc.strategy.kind {
        StrategyKind::Static => Box::new(StaticRandom),
        StrategyKind::Adaptive => Box::new(Adaptive::new(
            sc.strategy.lambda,
            sc.strategy.refresh_window,
            sc.strategy.log_observations,
        )),
    }
}

fn relay_members(sc: &Scenario, rng: &mut SimRng) -> Vec<u32> {
    let m = sc.relay_member_count();
    let mut v: Vec<u32> = rand::seq::index::sample(rng, sc.n_nodes, m)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    v.sort_unstable();
    v
}

/// Builds a ready-to-run simulation.
///
/// Random draws, in order: node regions, capacities, degrees, neighbor
/// sets, relay members, first mining attempts. Relay members come after the
/// topology so that runs differing only in participation share it.
pub fn build(sc: &Scenario, seed: u64, opts: RunOptions) -> Result<Simulation, RunError> {
    sc.validate()
        .map_err(|v| ConfigError::Invalid(format!("{}: {}", v.key, v.message)))?;
    let (network, weights) = sc.network_model()?;
    let mut engine = Engine::new(seed);
    let rng = engine.rng();
    let regions = WeightedIndex::new(&weights)
        .map_err(|e| ConfigError::invalid(format!("region weights: {e}")))?;
    let node_regions: Vec<RegionId> = (0..sc.n_nodes)
        .map(|_| RegionId(regions.sample(rng) as u8))
        .collect();
    let capacities = sample_capacities(sc.n_nodes, sc.capacity_mean, rng)?;
    let degrees: Vec<usize> = (0..sc.n_nodes)
        .map(|_| sample_degree(&sc.degree, rng))
        .collect();
    let timing = MiningModel::new(&capacities, sc.target_interval_ms)?;

    let setups = (0..sc.n_nodes)
        .map(|i| NodeSetup {
            region: node_regions[i],
            capacity: capacities[i],
            degree: degrees[i],
            manager: manager_for(sc),
        })
        .collect();

    let n = sc.n_nodes;
    let multiplier = sc.relay.multiplier;
    let with_relay_groups = sc.relay.participation_rate > 0.0;
    let sc_relay = sc.clone();
    Simulation::new(
        engine,
        setups,
        network,
        Box::new(timing),
        move |rng| {
            let members = relay_members(&sc_relay, rng);
            let overlay = RelayOverlay::new(n, &members, multiplier)?;
            let mut groups = vec![Group {
                label: GROUP_ALL.into(),
                members: (0..n as NodeId).collect(),
            }];
            if with_relay_groups {
                groups.push(Group {
                    label: GROUP_RELAY.into(),
                    members: members.clone(),
                });
                groups.push(Group {
                    label: GROUP_NON_RELAY.into(),
                    members: (0..n as NodeId).filter(|i| !overlay.contains(*i)).collect(),
                });
            }
            Ok((overlay, groups))
        },
        WorldConfig {
            block_size: sc.block_size,
            trace_messages: opts.trace_messages,
            capture_receptions: opts.capture_receptions,
        },
    )
    .map_err(RunError::from)
}

/// Mines `stop_blocks` blocks, then lets every in-flight message land.
pub fn run_simulation(sim: &mut Simulation, stop_blocks: usize) -> Result<RunReport, RunError> {
    sim.mine_until(stop_blocks)?;
    sim.quiesce();
    Ok(sim.report())
}

pub fn run(sc: &Scenario, seed: u64) -> Result<RunReport, RunError> {
    let mut sim = build(sc, seed, RunOptions::default())?;
    run_simulation(&mut sim, sc.stop_blocks)
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    scenario: &'a Scenario,
    #[serde(flatten)]
    report: &'a RunReport,
}

/// JSON summary echoing the resolved scenario and seed.
pub fn summary_json(sc: &Scenario, seed: u64, report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(&Summary {
        seed,
        scenario: sc,
        report,
    })
    .expect("summary serializes");
    s.push('\n');
    s
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn blocks_csv(report: &RunReport) -> String {
    to_csv(&report.blocks)
}

pub fn buckets_csv(report: &RunReport) -> String {
    to_csv(&report.buckets)
}

/// SHA-256 over the summary and both CSV dumps, hex encoded.
pub fn digest(sc: &Scenario, seed: u64, report: &RunReport) -> String {
    let mut h = Sha256::new();
    h.update(summary_json(sc, seed, report));
    h.update(blocks_csv(report));
    h.update(buckets_csv(report));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: PathBuf, contents: &str) -> Result<(), RunError> {
    std::fs::write(&path, contents).map_err(|source| RunError::Output { path, source })
}

/// Writes `summary.json`, `blocks.csv` and `buckets.csv` into `dir`.
pub fn write_run(dir: &Path, sc: &Scenario, seed: u64, report: &RunReport) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|source| RunError::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(dir.join("summary.json"), &summary_json(sc, seed, report))?;
    write_file(dir.join("blocks.csv"), &blocks_csv(report))?;
    write_file(dir.join("buckets.csv"), &buckets_csv(report))
}

/// Fields a sweep may vary.
pub const SWEEPABLE: [&str; 4] = ["participation_rate", "strategy", "lambda", "degree"];

/// Returns a copy of `base` with `param` set to `value`.
pub fn apply_param(base: &Scenario, param: &str, value: &str) -> Result<Scenario, RunError> {
    let bad = |reason: &str| RunError::BadValue {
        param: param.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    };
    let mut sc = base.clone();
    match param {
        "participation_rate" => {
            sc.relay.participation_rate = value.parse().map_err(|_| bad("not a number"))?
        }
        "lambda" => sc.strategy.lambda = value.parse().map_err(|_| bad("not a number"))?,
        "degree" => {
            sc.degree = Degree::Constant {
                k: value.parse().map_err(|_| bad("not an integer"))?,
            }
        }
        "strategy" => {
            sc.strategy.kind = match value {
                "static" => StrategyKind::Static,
                "adaptive" => StrategyKind::Adaptive,
                _ => return Err(bad("expected `static` or `adaptive`")),
            }
        }
        _ => return Err(RunError::UnknownParameter(param.to_string())),
    }
    sc.validate().map_err(|v| bad(&v.message))?;
    Ok(sc)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub dir: Option<String>,
    #[serde(skip)]
    pub scenario: Scenario,
    #[serde(skip)]
    pub report: RunReport,
    pub t_mbp_ms: Option<f64>,
    pub fork_rate: f64,
    pub group_medians: std::collections::BTreeMap<String, Option<f64>>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    param: &'a str,
    values: &'a [String],
    seeds: &'a [u64],
    runs: &'a [SweepRun],
}

/// One run per (value, seed). Every value reuses the same seed list, so run
/// `i` of each value starts from the same random stream.
pub fn sweep(
    base: &Scenario,
    param: &str,
    values: &[String],
    seeds: &[u64],
    out_dir: Option<&Path>,
    workers: usize,
) -> Result<Vec<SweepRun>, RunError> {
    if !SWEEPABLE.contains(&param) {
        return Err(RunError::UnknownParameter(param.to_string()));
    }
    if values.is_empty() {
        return Err(RunError::EmptySweep);
    }
    let seeds: Vec<u64> = if seeds.is_empty() {
        vec![base.seed]
    } else {
        seeds.to_vec()
    };
    let mut jobs = Vec::new();
    for v in values {
        let sc = apply_param(base, param, v)?;
        for &seed in &seeds {
            let dir = out_dir.map(|d| d.join(format!("{param}={v}")).join(format!("seed-{seed}")));
            jobs.push((v.clone(), seed, sc.clone(), dir));
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRun, RunError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((value, seed, sc, dir)) = jobs.get(i) else {
                    break;
                };
                let res = run(sc, *seed).and_then(|report| {
                    if let Some(d) = dir {
                        write_run(d, sc, *seed, &report)?;
                    }
                    Ok(SweepRun {
                        value: value.clone(),
                        seed: *seed,
                        dir: dir.as_ref().map(|d| d.display().to_string()),
                        scenario: sc.clone(),
                        t_mbp_ms: report.t_mbp_ms,
                        fork_rate: report.fork_rate,
                        group_medians: report.group_medians.clone(),
                        report,
                    })
                });
                results.lock().expect("no worker panicked")[i] = Some(res);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>, _>>()?;

    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(|source| RunError::Output {
            path: d.to_path_buf(),
            source,
        })?;
        let manifest = Manifest {
            scenario: &base.name,
            param,
            values,
            seeds: &seeds,
            runs: &runs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_file(d.join("manifest.json"), &text)?;
    }
    Ok(runs)
}
