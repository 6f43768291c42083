use proptest::prelude::*;

use cbrp_sim::{run_simulation, ConfigBuilder, Protocol, SimOptions};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_runs_conserve_packets(
        nodes in 4usize..24,
        side in 200u32..900,
        speed in 1.0f64..30.0,
        rate in prop::sample::select(vec![1.0, 4.0, 16.0]),
        seed in any::<u64>(),
        cross in any::<bool>(),
    ) {
        let mut b = ConfigBuilder::new();
        let protocol = if cross { Protocol::CrossCbrp } else { Protocol::Cbrp };
        let (n, s, v, r, sd) = (nodes.to_string(), side.to_string(), speed.to_string(), rate.to_string(), seed.to_string());
        let flows = (nodes / 2).to_string();
        for (k, val) in [
            ("node_count", n.as_str()),
            ("area_width", s.as_str()),
            ("area_height", s.as_str()),
            ("max_speed", v.as_str()),
            ("packet_rate", r.as_str()),
            ("flow_count", flows.as_str()),
            ("sim_duration", "40"),
            ("queue_capacity", "8"),
            ("rng_seed", sd.as_str()),
            ("protocol", protocol.as_str()),
        ] {
            b.set(k, val, "test").unwrap();
        }
        let out = run_simulation(&b.build().unwrap(), SimOptions::default()).unwrap();
        prop_assert!(out.ledger.violations.is_empty(), "{:?}", out.ledger.violations);
        let r = &out.report;
        prop_assert_eq!(
            r.data_delivered + r.drop_queue + r.drop_no_route + r.drop_forwarding + r.in_flight,
            r.data_sent
        );
        for (_, hops) in &out.installed_routes {
            let mut sorted = hops.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), hops.len());
        }
    }
}
