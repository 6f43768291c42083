//! Static networks settle on the clusters a centralized greedy pass would pick.

use std::collections::BTreeSet;

use cbrp_sim::clustering::Role;
use cbrp_sim::config::generate_initial_placement;
use cbrp_sim::geometry::NodeId;
use cbrp_sim::{run_simulation, ConfigBuilder, Protocol, ScenarioConfig, SimOptions};

fn static_cfg(nodes: usize, side: u32, seed: u64, protocol: Protocol) -> ScenarioConfig {
    let mut b = ConfigBuilder::new();
    let (n, s, seed) = (nodes.to_string(), side.to_string(), seed.to_string());
    for (k, v) in [
        ("node_count", n.as_str()),
        ("area_width", s.as_str()),
        ("area_height", s.as_str()),
        ("mobility", "static"),
        ("flow_count", "1"),
        ("sim_duration", "40"),
        ("rng_seed", seed.as_str()),
        ("protocol", protocol.as_str()),
    ] {
        b.set(k, v, "test").unwrap();
    }
    b.build().unwrap()
}

/// Visit nodes by ascending id; a node heads unless a lower head is in range.
fn greedy_heads(cfg: &ScenarioConfig) -> BTreeSet<usize> {
    let pos = generate_initial_placement(cfg);
    let mut heads = BTreeSet::new();
    for v in 0..pos.len() {
        if heads.iter().all(|&h: &usize| pos[h].distance(&pos[v]) > cfg.tx_range) {
            heads.insert(v);
        }
    }
    heads
}

#[test]
fn heads_match_greedy_lowest_id() {
    for seed in 0..30 {
        let nodes = 5 + (seed as usize * 7) % 26;
        let side = 300 + (seed as u32 * 137) % 700;
        for p in [Protocol::Cbrp, Protocol::CrossCbrp] {
            let cfg = static_cfg(nodes, side, seed, p);
            let out = run_simulation(&cfg, SimOptions::default()).unwrap();
            let want = greedy_heads(&cfg);
            let got: BTreeSet<usize> = out
                .final_roles
                .iter()
                .enumerate()
                .filter(|(_, r)| **r == Role::ClusterHead)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(got, want, "seed {seed}, {nodes} nodes, {side} m, {p}");

            let pos = &out.initial_positions;
            for (i, role) in out.final_roles.iter().enumerate() {
                if *role != Role::Member {
                    continue;
                }
                let in_range: BTreeSet<NodeId> = want
                    .iter()
                    .filter(|&&h| pos[h].distance(&pos[i]) <= cfg.tx_range)
                    .map(|&h| NodeId(h as u32))
                    .collect();
                assert_eq!(out.final_heads[i], in_range, "seed {seed} node {i}");
            }
        }
    }
}
