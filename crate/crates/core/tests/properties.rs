mod common;

use std::collections::{BTreeSet, HashMap};

use blockprop::protocol::{BlockId, Message};
use blockprop::runner::{self, blocks_csv, build, digest, run_simulation, RunOptions};
use blockprop::scenario::StrategyKind;
use blockprop::RunError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fully_known, oracle_fork_rate, oracle_main_chain, reachable, small, two_miners};

const TRACED: RunOptions = RunOptions {
    trace_messages: true,
    capture_receptions: true,
};

#[test]
fn same_seed_same_digest() {
    let sc = small(40, 4, 3_000, 120);
    let a = runner::run(&sc, 11).unwrap();
    let b = runner::run(&sc, 11).unwrap();
    let c = runner::run(&sc, 12).unwrap();
    assert_eq!(digest(&sc, 11, &a), digest(&sc, 11, &b));
    assert_ne!(digest(&sc, 11, &a), digest(&sc, 12, &c));
}

#[test]
fn quiescent_tips_match_dag_oracle() {
    let (mut forks, mut orphans) = (0.0, 0);
    for seed in 0..12 {
        let sc = small(20, 4, 1_500, 60);
        let mut sim = build(&sc, seed, TRACED).unwrap();
        let report = run_simulation(&mut sim, sc.stop_blocks).unwrap();
        forks += report.fork_rate;
        orphans += report.diagnostics.orphans_received;
        let world = &sim.world;
        let blocks = world.blocks();
        let (global_height, _) = oracle_main_chain(blocks);
        let head_creator = blocks
            .iter()
            .find(|b| b.height as usize == global_height)
            .and_then(|b| b.creator)
            .unwrap();
        let must_reach = reachable(world, head_creator);

        for node in world.nodes() {
            let known: BTreeSet<BlockId> = node.known_blocks().collect();
            let mut best_height = 0;
            for &b in &known {
                let complete = fully_known(blocks, &known, b);
                assert!(
                    complete,
                    "seed {seed}: node {} left with an orphan",
                    node.id
                );
                assert_eq!(node.has_connected(b), complete);
                best_height = best_height.max(blocks[b.index()].height);
            }
            assert!(known.contains(&node.tip));
            assert_eq!(
                blocks[node.tip.index()].height,
                best_height,
                "seed {seed}: node {} tip is not a highest fully known block",
                node.id
            );
            if must_reach.contains(&node.id) {
                assert_eq!(
                    best_height as usize, global_height,
                    "seed {seed}: node {}",
                    node.id
                );
            }
        }
    }
    // The instances must actually exercise fork and backfill handling.
    assert!(
        forks > 0.0 && orphans > 0,
        "forks {forks} orphans {orphans}"
    );
}

#[test]
fn one_to_three_capacity_pair_mines_three_quarters() {
    let mut sim = two_miners(5, [1.0, 3.0], 600_000, 1024);
    sim.mine_until(10_000).unwrap();
    let strong = sim.world.blocks()[1..]
        .iter()
        .filter(|b| b.creator == Some(1))
        .count();
    let share = strong as f64 / 10_000.0;
    assert!((share - 0.75).abs() <= 0.02, "share {share}");
}

#[test]
fn fork_rate_and_main_chain_match_oracle_on_random_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let n = rng.random_range(5..30);
        let k = rng.random_range(1..5.min(n - 1) + 1);
        let interval = rng.random_range(500..5_000);
        let blocks = rng.random_range(20..80);
        let seed = rng.random();
        let sc = small(n, k, interval, blocks);
        let mut sim = build(&sc, seed, TRACED).unwrap();
        let report = run_simulation(&mut sim, sc.stop_blocks).unwrap();
        let all = sim.world.blocks();
        assert_eq!(report.fork_rate, oracle_fork_rate(all), "case {case}");
        let (height, chain) = oracle_main_chain(all);
        assert_eq!(report.main_chain_length, height);
        for row in &report.blocks {
            assert_eq!(row.on_main_chain, chain.contains(&BlockId(row.block_id)));
        }
    }
}

#[test]
fn message_traces_respect_fanout_and_dedup() {
    for seed in 0..8 {
        let sc = small(25, 3, 1_000, 50);
        let mut sim = build(&sc, seed, TRACED).unwrap();
        run_simulation(&mut sim, sc.stop_blocks).unwrap();
        let world = &sim.world;
        let trace = world.trace().unwrap();

        let mut bodies = HashMap::new();
        let mut invs = HashMap::new();
        for m in trace {
            match m.msg {
                Message::Block { block } => {
                    *bodies.entry((m.to, block)).or_insert(0) += 1;
                    assert_eq!(m.size, sc.block_size);
                }
                Message::Inv { block, .. } => {
                    *invs.entry((m.from, m.to, block)).or_insert(0) += 1;
                    assert_eq!(m.size, 0);
                }
                Message::GetData { .. } => assert_eq!(m.size, 0),
            }
            assert!(m.arrives_at >= m.sent_at);
            assert_ne!(m.from, m.to);
        }
        assert!(
            bodies.values().all(|&c| c == 1),
            "a block body was sent twice"
        );
        assert!(invs.values().all(|&c| c == 1), "an INV was repeated");

        for b in &world.blocks()[1..] {
            let creator = b.creator.unwrap();
            let sent = trace
                .iter()
                .filter(|m| {
                    m.from == creator
                        && m.sent_at == b.created_at
                        && matches!(m.msg, Message::Inv { block, .. } if block == b.id)
                })
                .count();
            assert_eq!(sent, world.nodes()[creator as usize].neighbors.len());
        }
    }
}

#[test]
fn single_node_run_has_zero_propagation_and_no_forks() {
    let sc = small(1, 8, 10_000, 30);
    let report = runner::run(&sc, 3).unwrap();
    assert_eq!(report.t_mbp_ms, Some(0.0));
    assert_eq!(report.fork_rate, 0.0);
    assert_eq!(report.main_chain_length, 30);
}

#[test]
fn capacity_scale_does_not_change_the_run() {
    let mut sc = small(30, 4, 2_000, 80);
    let a = runner::run(&sc, 8).unwrap();
    sc.capacity_mean = 400.0;
    let b = runner::run(&sc, 8).unwrap();
    assert_eq!(blocks_csv(&a), blocks_csv(&b));
}

#[test]
fn relay_member_count_is_floored() {
    for (p, expect) in [(0.33, 6), (0.049, 0), (0.05, 1), (1.0, 20)] {
        let mut sc = small(20, 4, 1_000, 1);
        sc.relay.participation_rate = p;
        let sim = build(&sc, 1, RunOptions::default()).unwrap();
        assert_eq!(sim.world.relay().members().len(), expect, "p = {p}");
        let flagged = sim.world.nodes().iter().filter(|n| n.relay_member).count();
        assert_eq!(flagged, expect);
    }
}

#[test]
fn all_nodes_group_equals_t_mbp() {
    let mut sc = small(50, 4, 5_000, 100);
    sc.relay.participation_rate = 0.2;
    let report = runner::run(&sc, 4).unwrap();
    assert_eq!(report.group_median("all"), report.t_mbp_ms);
    assert!(report.group_median("relay").is_some());
    assert!(report.group_median("non_relay").is_some());
}

#[test]
fn adaptive_neighbor_sets_stay_well_formed() {
    let mut sc = small(30, 5, 2_000, 120);
    sc.strategy.kind = StrategyKind::Adaptive;
    let mut sim = build(&sc, 6, RunOptions::default()).unwrap();
    let report = run_simulation(&mut sim, sc.stop_blocks).unwrap();
    assert!(report.diagnostics.neighbor_refreshes > 0);
    for node in sim.world.nodes() {
        let set: BTreeSet<_> = node.neighbors.iter().copied().collect();
        assert_eq!(set.len(), 5);
        assert!(!set.contains(&node.id));
    }
}

#[test]
fn sweep_rejects_bad_requests() {
    let sc = small(10, 3, 1_000, 5);
    let vals = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert!(matches!(
        runner::sweep(&sc, "block_size", &vals(&["1"]), &[], None, 1),
        Err(RunError::UnknownParameter(_))
    ));
    assert!(matches!(
        runner::sweep(&sc, "lambda", &[], &[], None, 1),
        Err(RunError::EmptySweep)
    ));
    assert!(matches!(
        runner::sweep(&sc, "lambda", &vals(&["fast"]), &[], None, 1),
        Err(RunError::BadValue { .. })
    ));
    assert!(matches!(
        runner::sweep(&sc, "participation_rate", &vals(&["1.5"]), &[], None, 1),
        Err(RunError::BadValue { .. })
    ));
}

#[test]
fn sweep_writes_one_directory_per_run_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small(15, 3, 2_000, 10);
    let values = vec!["0".to_string(), "0.4".to_string()];
    let runs = runner::sweep(
        &sc,
        "participation_rate",
        &values,
        &[1, 2],
        Some(dir.path()),
        2,
    )
    .unwrap();
    assert_eq!(runs.len(), 4);
    for r in &runs {
        let d = dir
            .path()
            .join(format!("participation_rate={}", r.value))
            .join(format!("seed-{}", r.seed));
        for f in ["summary.json", "blocks.csv", "buckets.csv"] {
            assert!(d.join(f).is_file(), "{}", d.join(f).display());
        }
        let solo = runner::run(&r.scenario, r.seed).unwrap();
        assert_eq!(solo.t_mbp_ms, r.t_mbp_ms);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 4);
}
