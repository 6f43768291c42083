//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

// Negated comparisons are deliberate: a NaN mean must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::process::Command;
use std::time::Instant;

use cbrp_sim::channel::ChannelModel;
use cbrp_sim::clustering::{aggregate_mobility, relative_mobility, Role};
use cbrp_sim::config::{generate_initial_placement, MobilityModel};
use cbrp_sim::geometry::NodeId;
use cbrp_sim::rng::{stream_rng, Stream};
use cbrp_sim::runner::{run_plan, ExperimentPlan, PlanResult, RunOptions, SweepAxis};
use cbrp_sim::{run_simulation, ConfigBuilder, Protocol, ScenarioConfig, SimOptions, SimOutcome};

const BOTH: [Protocol; 2] = [Protocol::Cbrp, Protocol::CrossCbrp];

type Verdict = Result<String, String>;

fn desk(extra: &[(&str, &str)]) -> ScenarioConfig {
    let mut b = ConfigBuilder::new();
    let base = [
        ("node_count", "25"),
        ("area_width", "500"),
        ("area_height", "500"),
        ("flow_count", "10"),
        ("packet_rate", "4"),
    ];
    for (k, v) in base.iter().chain(extra) {
        b.set(k, v, "acceptance").unwrap();
    }
    b.build().unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
}

fn criterion_1() -> Verdict {
    let rm = |a: f64, b: f64| relative_mobility(a, b).unwrap();
    let cases = [
        (rm(3.7, 3.7), 0.0),
        (rm(100.0 * 2.5e-6, 2.5e-6), 20.0),
        (rm(0.1, 1.0), -10.0),
        (aggregate_mobility(&[]), 0.0),
        (aggregate_mobility(&[0.0, 0.0, 0.0]), 0.0),
        (aggregate_mobility(&[3.0, -4.0]), 12.5),
    ];
    for (i, (got, want)) in cases.iter().enumerate() {
        let ok = if *want == 0.0 { got.abs() < 1e-12 } else { close(*got, *want, 1e-9) };
        if !ok {
            return Err(format!("case {i}: got {got}, want {want}"));
        }
    }
    let mut rng = stream_rng(0, Stream::Fading, 0);
    for n in [2.0, 3.0, 4.0] {
        let ch = ChannelModel { d0: 1.0, l_d0: 1.0, n, fading_enabled: false };
        for x in [1.0, 7.5, 125.0, 250.0, 1234.5] {
            let a = ch.received_power(1.0, x, &mut rng).unwrap();
            let b = ch.received_power(1.0, 2.0 * x, &mut rng).unwrap();
            if !close(a / b, 2f64.powf(n), 1e-9) {
                return Err(format!("n={n} x={x}: ratio {}", a / b));
            }
        }
    }
    let ch = ChannelModel { d0: 1.0, l_d0: 1.0, n: 2.0, fading_enabled: false };
    let pr = ch.received_power(1.0, 250.0, &mut rng).unwrap();
    if !close(pr, 1.6e-5, 1e-9) {
        return Err(format!("pr at 250 m = {pr}"));
    }
    Ok("6 formula cases, ratio law at n=2,3,4".into())
}

fn criterion_2() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_simrun"))
            .args(["--protocol", "both", "--seed", "7"])
            .args(["--node_count", "25", "--area", "500x500", "--flow_count", "10"])
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "simrun exited with {}: {}",
                status.status,
                String::from_utf8_lossy(&status.stderr)
            ));
        }
        csvs.push(fs::read(out.join("runs.csv")).map_err(|e| e.to_string())?);
    }
    if csvs[0] != csvs[1] {
        return Err("runs.csv differs between executions".into());
    }
    let rows = String::from_utf8_lossy(&csvs[0]).lines().count() - 1;
    Ok(format!("{rows} rows, {} bytes identical", csvs[0].len()))
}

fn cluster_structure(out: &SimOutcome) -> Vec<(Role, BTreeSet<NodeId>)> {
    out.final_roles.iter().copied().zip(out.final_heads.iter().cloned()).collect()
}

fn criterion_3(violations: &mut Vec<String>) -> Verdict {
    let mut outs = Vec::new();
    for p in BOTH {
        let mut cfg = desk(&[("mobility", "static")]).with_protocol(p);
        cfg.traffic_start = cfg.formation_grace;
        assert_eq!(cfg.mobility, MobilityModel::Static);
        let out = run_simulation(&cfg, SimOptions::default()).map_err(|e| e.to_string())?;
        violations.extend(out.ledger.violations.iter().cloned());
        let late = out.ledger.role_changes.iter().filter(|c| c.time > cfg.formation_grace).count();
        if out.report.ch_changes != 0 || late != 0 {
            return Err(format!("{p}: ch_changes {} and {late} late role changes", out.report.ch_changes));
        }
        outs.push(out);
    }
    if cluster_structure(&outs[0]) != cluster_structure(&outs[1]) {
        return Err("cluster sets differ between variants".into());
    }
    let heads = outs[0].final_roles.iter().filter(|r| **r == Role::ClusterHead).count();
    Ok(format!("0 changes in both variants, identical {heads}-head structure"))
}

fn sweep(axis: SweepAxis, values: &[f64], extra: &[(&str, &str)]) -> Result<PlanResult, String> {
    let plan = ExperimentPlan {
        base: desk(extra),
        axis,
        values: values.to_vec(),
        protocols: BOTH.to_vec(),
        seeds: (0..5).collect(),
    };
    run_plan(&plan, &RunOptions::default()).map_err(|e| e.to_string())
}

fn means(r: &PlanResult, metric: &str, speed: f64, rate: f64) -> (f64, f64) {
    let m = |p| {
        r.summary
            .cell(p, speed, rate)
            .and_then(|c| c.mean(metric))
            .unwrap_or(f64::NAN)
    };
    (m(Protocol::Cbrp), m(Protocol::CrossCbrp))
}

const SPEEDS: [f64; 3] = [10.0, 20.0, 30.0];
const RATES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

fn criterion_4(r: &PlanResult) -> Verdict {
    let rows: Vec<(f64, f64)> = SPEEDS.iter().map(|&s| means(r, "ch_changes", s, 4.0)).collect();
    let text = format!("{rows:?}");
    for (i, (cbrp, cross)) in rows.iter().enumerate() {
        if !(cross < cbrp) {
            return Err(format!("speed {}: cross {cross} >= cbrp {cbrp}; all {text}", SPEEDS[i]));
        }
    }
    for w in rows.windows(2) {
        if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
            return Err(format!("ch_changes decrease with speed: {text}"));
        }
    }
    Ok(format!("(cbrp, cross) by speed {text}"))
}

fn criterion_5(r: &PlanResult) -> Verdict {
    let mut text = Vec::new();
    for s in SPEEDS {
        for metric in ["pdr", "throughput_bps"] {
            let (cbrp, cross) = means(r, metric, s, 4.0);
            if !(cross >= cbrp) {
                return Err(format!("speed {s} {metric}: cross {cross} < cbrp {cbrp}"));
            }
            text.push(format!("{s}/{metric}: {cbrp:.4} vs {cross:.4}"));
        }
    }
    Ok(text.join("; "))
}

fn criterion_6(r: &PlanResult) -> Verdict {
    let ch: Vec<(f64, f64)> = RATES.iter().map(|&q| means(r, "ch_changes", 20.0, q)).collect();
    let pdr: Vec<(f64, f64)> = RATES.iter().map(|&q| means(r, "pdr", 20.0, q)).collect();
    for w in ch.windows(2) {
        if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
            return Err(format!("ch_changes decrease with rate: {ch:?}"));
        }
    }
    if let Some((i, _)) = ch.iter().enumerate().find(|(_, (a, b))| !(b <= a)) {
        return Err(format!("rate {}: cross above cbrp {ch:?}", RATES[i]));
    }
    for w in pdr.windows(2) {
        if w[1].0 > w[0].0 || w[1].1 > w[0].1 {
            return Err(format!("pdr increases with rate: {pdr:?}"));
        }
    }
    Ok(format!("ch {ch:?} pdr {pdr:?}"))
}

/// Breadth-first reachability over the range disc.
fn connected(pos: &[cbrp_sim::geometry::Position], range: f64) -> bool {
    let mut seen = vec![false; pos.len()];
    let mut q = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = q.pop_front() {
        for v in 0..pos.len() {
            if !seen[v] && pos[u].distance(&pos[v]) <= range {
                seen[v] = true;
                q.push_back(v);
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn criterion_7(violations: &mut Vec<String>) -> Verdict {
    let mut topologies = 0;
    let mut routes = 0;
    let mut seed = 0u64;
    while topologies < 50 {
        let n = 4 + (seed % 12) as usize;
        let mut b = ConfigBuilder::new();
        let n_str = n.to_string();
        let flows = (n / 2).min(3).to_string();
        let seed_str = seed.to_string();
        for (k, v) in [
            ("node_count", n_str.as_str()),
            ("area_width", "600"),
            ("area_height", "600"),
            ("mobility", "static"),
            ("flow_count", flows.as_str()),
            ("packet_rate", "2"),
            ("sim_duration", "60"),
            ("rng_seed", seed_str.as_str()),
        ] {
            b.set(k, v, "acceptance").unwrap();
        }
        let mut cfg = b.build().unwrap();
        cfg.traffic_start = cfg.formation_grace;
        seed += 1;
        let pos = generate_initial_placement(&cfg);
        if !connected(&pos, cfg.tx_range) {
            continue;
        }
        topologies += 1;
        for p in BOTH {
            let c = cfg.with_protocol(p);
            let out = run_simulation(&c, SimOptions::default()).map_err(|e| e.to_string())?;
            violations.extend(out.ledger.violations.iter().cloned());
            for (t, hops) in &out.installed_routes {
                routes += 1;
                let ends = (hops.first().copied(), hops.last().copied());
                if !out.flows.iter().any(|f| ends == (Some(f.src), Some(f.dst))) {
                    return Err(format!("seed {}: route {hops:?} at {t} matches no flow", c.rng_seed));
                }
                let unique: BTreeSet<_> = hops.iter().collect();
                if unique.len() != hops.len() {
                    return Err(format!("seed {}: route {hops:?} repeats a node", c.rng_seed));
                }
                for w in hops.windows(2) {
                    if pos[w[0].index()].distance(&pos[w[1].index()]) > c.tx_range {
                        return Err(format!("seed {}: route {hops:?} uses missing link {:?}", c.rng_seed, w));
                    }
                }
            }
            // A packet emitted just before the horizon may still be on the
            // air; it is neither delivered nor lost.
            let r = &out.report;
            let resolved = r.data_sent - r.in_flight;
            let drops = r.drop_queue + r.drop_no_route + r.drop_forwarding;
            if r.data_delivered != resolved || drops != 0 || r.in_flight > out.flows.len() as u64 {
                return Err(format!(
                    "seed {} {p}: pdr {:?}, sent {}, delivered {}, in flight {}",
                    c.rng_seed, r.pdr, r.data_sent, r.data_delivered, r.in_flight
                ));
            }
        }
    }
    Ok(format!("{topologies} topologies, {routes} routes checked, every resolved packet delivered"))
}

fn criterion_9(violations: &mut Vec<String>) -> Verdict {
    let mut compared = 0;
    for p in BOTH {
        for s in SPEEDS {
            let speed = s.to_string();
            let base = desk(&[("max_speed", speed.as_str())]).with_protocol(p).with_seed(0);
            let mut loud = base.clone();
            loud.tx_power *= 1000.0;
            let a = run_simulation(&base, SimOptions::default()).map_err(|e| e.to_string())?;
            let b = run_simulation(&loud, SimOptions::default()).map_err(|e| e.to_string())?;
            violations.extend(a.ledger.violations.iter().chain(&b.ledger.violations).cloned());
            if a.ledger.role_changes != b.ledger.role_changes {
                let at = a
                    .ledger
                    .role_changes
                    .iter()
                    .zip(&b.ledger.role_changes)
                    .position(|(x, y)| x != y);
                return Err(format!("{p} speed {s}: sequences diverge at {at:?}"));
            }
            compared += a.ledger.role_changes.len();
        }
    }
    Ok(format!("{compared} role changes identical across 6 runs"))
}

fn outcome_violations(r: &PlanResult) -> Vec<String> {
    r.outcomes.iter().flat_map(|o| o.ledger.violations.iter().cloned()).collect()
}

fn main() {
    let mut lines: Vec<(u32, Verdict, f64)> = Vec::new();
    let mut violations: Vec<String> = Vec::new();
    let mut sim_failures: Vec<String> = Vec::new();
    // `setup` is time already spent on shared sweeps.
    let timed = |id: u32, setup: f64, f: &mut dyn FnMut() -> Verdict, lines: &mut Vec<(u32, Verdict, f64)>| {
        let t = Instant::now();
        let v = f();
        let secs = setup + t.elapsed().as_secs_f64();
        let (tag, msg) = match &v {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("criterion {id}: {tag} ({secs:.1} s) {msg}");
        lines.push((id, v, secs));
    };

    timed(1, 0.0, &mut criterion_1, &mut lines);
    timed(2, 0.0, &mut criterion_2, &mut lines);
    timed(3, 0.0, &mut || criterion_3(&mut violations), &mut lines);

    let t = Instant::now();
    let speed = sweep(SweepAxis::MaxSpeed, &SPEEDS, &[]);
    let speed_secs = t.elapsed().as_secs_f64();
    match &speed {
        Ok(r) => violations.extend(outcome_violations(r)),
        Err(e) => sim_failures.push(e.clone()),
    }
    let failed = |e: &String| -> Verdict { Err(format!("sweep failed: {e}")) };
    timed(4, speed_secs, &mut || speed.as_ref().map_or_else(failed, criterion_4), &mut lines);
    timed(5, 0.0, &mut || speed.as_ref().map_or_else(failed, criterion_5), &mut lines);

    let t = Instant::now();
    let rate = sweep(SweepAxis::PacketRate, &RATES, &[("max_speed", "20")]);
    let rate_secs = t.elapsed().as_secs_f64();
    match &rate {
        Ok(r) => violations.extend(outcome_violations(r)),
        Err(e) => sim_failures.push(e.clone()),
    }
    timed(6, rate_secs, &mut || rate.as_ref().map_or_else(failed, criterion_6), &mut lines);

    timed(7, 0.0, &mut || criterion_7(&mut violations), &mut lines);
    timed(
        8,
        0.0,
        &mut || {
            if !sim_failures.is_empty() {
                Err(format!("runs aborted: {sim_failures:?}"))
            } else if let Some(v) = violations.first() {
                Err(format!("{} violations, first: {v}", violations.len()))
            } else {
                Ok("zero violations across criteria 2 to 7".into())
            }
        },
        &mut lines,
    );
    timed(9, 0.0, &mut || criterion_9(&mut Vec::new()), &mut lines);

    let failed: Vec<u32> = lines.iter().filter(|l| l.1.is_err()).map(|l| l.0).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        lines.len() - failed.len(),
        lines.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
