//! Run counters, per-run reports and cross-replication summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::clustering::Role;
use crate::config::{Protocol, ScenarioConfig};
use crate::engine::packet::PacketKind;
use crate::geometry::NodeId;
use crate::routing::DropCause;

#[derive(Debug, Clone, PartialEq)]
pub struct RoleChange {
    pub time: f64,
    pub node: NodeId,
    pub old: Role,
    pub new: Role,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLedger {
    pub ch_changes: u64,
    pub data_sent: u64,
    pub data_delivered: u64,
    pub delivered_bytes: u64,
    pub hello_sent: u64,
    pub rreq_sent: u64,
    pub rrep_sent: u64,
    pub latencies: Vec<f64>,
    pub drop_queue: u64,
    pub drop_no_route: u64,
    pub drop_forwarding: u64,
    /// Control packets lost to a full queue or a vanished next hop.
    pub control_dropped: u64,
    pub rrep_dropped: u64,
    pub routes_installed: u64,
    pub routes_broken: u64,
    pub role_changes: Vec<RoleChange>,
    pub violations: Vec<String>,
}

impl MetricsLedger {
    /// Every role transition is logged; only head gains and losses after
    /// the grace period count as churn.
    pub fn record_role_change(&mut self, node: NodeId, old: Role, new: Role, now: f64, formation_grace: f64) {
        debug_assert_ne!(old, new);
        self.role_changes.push(RoleChange { time: now, node, old, new });
        let head_flip = (old == Role::ClusterHead) != (new == Role::ClusterHead);
        if head_flip && now > formation_grace {
            self.ch_changes += 1;
        }
    }

    pub fn record_transmission(&mut self, kind: PacketKind) {
        match kind {
            PacketKind::Hello => self.hello_sent += 1,
            PacketKind::RouteRequest => self.rreq_sent += 1,
            PacketKind::RouteReply => self.rrep_sent += 1,
            PacketKind::Data => {}
        }
    }

    pub fn record_delivery(&mut self, size_bytes: usize, latency: f64) {
        self.data_delivered += 1;
        self.delivered_bytes += size_bytes as u64;
        self.latencies.push(latency);
    }

    pub fn record_drop(&mut self, cause: DropCause) {
        match cause {
            DropCause::Queue => self.drop_queue += 1,
            DropCause::NoRoute => self.drop_no_route += 1,
            DropCause::ForwardingFailure => self.drop_forwarding += 1,
        }
    }

    pub fn control_packets_sent(&self) -> u64 {
        self.hello_sent + self.rreq_sent + self.rrep_sent
    }

    pub fn dropped(&self) -> u64 {
        self.drop_queue + self.drop_no_route + self.drop_forwarding
    }

    pub fn violation(&mut self, now: f64, what: impl Into<String>) {
        self.violations.push(format!("t={now}: {}", what.into()));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub protocol: Protocol,
    pub seed: u64,
    pub max_speed: f64,
    pub packet_rate: f64,
    pub sim_duration: f64,
    pub fingerprint: String,
    pub ch_changes: u64,
    /// `None` when nothing was sent.
    pub pdr: Option<f64>,
    pub throughput_bps: f64,
    pub throughput_pps: f64,
    pub overhead_pkts: u64,
    pub mean_delay_s: Option<f64>,
    pub data_sent: u64,
    pub data_delivered: u64,
    pub drop_queue: u64,
    pub drop_no_route: u64,
    pub drop_forwarding: u64,
    pub in_flight: u64,
    pub violations: Vec<String>,
}

pub const RUNS_HEADER: &str = "protocol,seed,max_speed,packet_rate,ch_changes,pdr,throughput_bps,throughput_pps,overhead_pkts,mean_delay_s,data_sent,data_delivered,drop_queue,drop_no_route,drop_forwarding,in_flight";

const NA: &str = "NA";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| format!("{x}"))
}

pub fn finalize(ledger: &MetricsLedger, cfg: &ScenarioConfig, in_flight: u64) -> RunReport {
    let pdr = (ledger.data_sent > 0).then(|| ledger.data_delivered as f64 / ledger.data_sent as f64);
    let mean_delay_s =
        (!ledger.latencies.is_empty()).then(|| ledger.latencies.iter().sum::<f64>() / ledger.latencies.len() as f64);
    RunReport {
        protocol: cfg.protocol,
        seed: cfg.rng_seed,
        max_speed: cfg.max_speed,
        packet_rate: cfg.packet_rate,
        sim_duration: cfg.sim_duration,
        fingerprint: cfg.fingerprint(),
        ch_changes: ledger.ch_changes,
        pdr,
        throughput_bps: ledger.delivered_bytes as f64 * 8.0 / cfg.sim_duration,
        throughput_pps: ledger.data_delivered as f64 / cfg.sim_duration,
        overhead_pkts: ledger.control_packets_sent(),
        mean_delay_s,
        data_sent: ledger.data_sent,
        data_delivered: ledger.data_delivered,
        drop_queue: ledger.drop_queue,
        drop_no_route: ledger.drop_no_route,
        drop_forwarding: ledger.drop_forwarding,
        in_flight,
        violations: ledger.violations.clone(),
    }
}

impl RunReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.protocol.as_str(),
            self.seed,
            self.max_speed,
            self.packet_rate,
            self.ch_changes,
            opt(self.pdr),
            self.throughput_bps,
            self.throughput_pps,
            self.overhead_pkts,
            opt(self.mean_delay_s),
            self.data_sent,
            self.data_delivered,
            self.drop_queue,
            self.drop_no_route,
            self.drop_forwarding,
            self.in_flight,
        )
    }

    /// Inverse of [`csv_row`](Self::csv_row). Fields not in the CSV come back empty.
    pub fn parse_csv_row(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 16 {
            return Err(format!("expected 16 fields, got {}", f.len()));
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad number {s:?}"))
        }
        fn onum(s: &str) -> Result<Option<f64>, String> {
            if s == NA {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        }
        Ok(Self {
            protocol: f[0].parse::<Protocol>()?,
            seed: num(f[1])?,
            max_speed: num(f[2])?,
            packet_rate: num(f[3])?,
            sim_duration: f64::NAN,
            fingerprint: String::new(),
            ch_changes: num(f[4])?,
            pdr: onum(f[5])?,
            throughput_bps: num(f[6])?,
            throughput_pps: num(f[7])?,
            overhead_pkts: num(f[8])?,
            mean_delay_s: onum(f[9])?,
            data_sent: num(f[10])?,
            data_delivered: num(f[11])?,
            drop_queue: num(f[12])?,
            drop_no_route: num(f[13])?,
            drop_forwarding: num(f[14])?,
            in_flight: num(f[15])?,
            violations: Vec::new(),
        })
    }

    /// The values summarized across replications, in column order.
    pub fn metric_values(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("ch_changes", Some(self.ch_changes as f64)),
            ("pdr", self.pdr),
            ("throughput_bps", Some(self.throughput_bps)),
            ("throughput_pps", Some(self.throughput_pps)),
            ("overhead_pkts", Some(self.overhead_pkts as f64)),
            ("mean_delay_s", self.mean_delay_s),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` below two samples.
    pub stddev: Option<f64>,
    pub n: usize,
}

pub fn stat(values: &[f64]) -> Stat {
    let n = values.len();
    if n == 0 {
        return Stat { mean: None, stddev: None, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stddev = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Stat {
        mean: Some(mean),
        stddev,
        n,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub protocol: Protocol,
    pub max_speed: f64,
    pub packet_rate: f64,
    pub metrics: Vec<(&'static str, Stat)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedRow {
    pub max_speed: f64,
    pub packet_rate: f64,
    pub seed: u64,
    pub metric: &'static str,
    pub cbrp: f64,
    pub cross: f64,
}

impl PairedRow {
    pub fn delta(&self) -> f64 {
        self.cross - self.cbrp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSummary {
    pub max_speed: f64,
    pub packet_rate: f64,
    pub metric: &'static str,
    pub mean_delta: f64,
    /// Change of the Cross-CBRP mean relative to the CBRP mean, in percent.
    pub change_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    pub cells: Vec<CellSummary>,
    pub paired: Vec<PairedRow>,
    pub paired_summary: Vec<PairedSummary>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AggregateError {
    #[error("no reports to aggregate")]
    Empty,
    #[error("reports come from different scenarios: {0} vs {1}")]
    Heterogeneous(String, String),
}

fn cell_key(r: &RunReport) -> (u64, u64) {
    (r.max_speed.to_bits(), r.packet_rate.to_bits())
}

/// Means and deviations per (protocol, speed, rate) cell, plus paired deltas
/// where both variants ran the same seed.
pub fn aggregate(reports: &[RunReport]) -> Result<SummaryReport, AggregateError> {
    let first = reports.first().ok_or(AggregateError::Empty)?;
    if let Some(r) = reports.iter().find(|r| r.fingerprint != first.fingerprint) {
        return Err(AggregateError::Heterogeneous(first.fingerprint.clone(), r.fingerprint.clone()));
    }
    let mut groups: BTreeMap<((u64, u64), Protocol), Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((cell_key(r), r.protocol)).or_default().push(r);
    }
    let mut cells = Vec::new();
    for ((_, protocol), runs) in &groups {
        let names = runs[0].metric_values().map(|(n, _)| n);
        let metrics = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let vals: Vec<f64> = runs.iter().filter_map(|r| r.metric_values()[i].1).collect();
                (*name, stat(&vals))
            })
            .collect();
        cells.push(CellSummary {
            protocol: *protocol,
            max_speed: runs[0].max_speed,
            packet_rate: runs[0].packet_rate,
            metrics,
        });
    }
    sort_cells(&mut cells);

    let mut paired = Vec::new();
    // (cell, seed) -> [cbrp, cross]
    type Pair<'a> = [Option<&'a RunReport>; 2];
    let mut by_seed: BTreeMap<((u64, u64), u64), Pair> = BTreeMap::new();
    for r in reports {
        let slot = match r.protocol {
            Protocol::Cbrp => 0,
            Protocol::CrossCbrp => 1,
        };
        by_seed.entry((cell_key(r), r.seed)).or_default()[slot] = Some(r);
    }
    for ((_, seed), pair) in &by_seed {
        let [Some(a), Some(b)] = pair else { continue };
        for (i, (metric, va)) in a.metric_values().into_iter().enumerate() {
            if let (Some(va), Some(vb)) = (va, b.metric_values()[i].1) {
                paired.push(PairedRow {
                    max_speed: a.max_speed,
                    packet_rate: a.packet_rate,
                    seed: *seed,
                    metric,
                    cbrp: va,
                    cross: vb,
                });
            }
        }
    }
    paired.sort_by(|x, y| {
        x.max_speed
            .total_cmp(&y.max_speed)
            .then(x.packet_rate.total_cmp(&y.packet_rate))
            .then(x.seed.cmp(&y.seed))
    });

    let mut grouped: BTreeMap<((u64, u64), &'static str), Vec<&PairedRow>> = BTreeMap::new();
    for p in &paired {
        grouped
            .entry(((p.max_speed.to_bits(), p.packet_rate.to_bits()), p.metric))
            .or_default()
            .push(p);
    }
    let mut paired_summary: Vec<PairedSummary> = grouped
        .into_values()
        .map(|rows| {
            let n = rows.len() as f64;
            let mean_a = rows.iter().map(|p| p.cbrp).sum::<f64>() / n;
            let mean_b = rows.iter().map(|p| p.cross).sum::<f64>() / n;
            PairedSummary {
                max_speed: rows[0].max_speed,
                packet_rate: rows[0].packet_rate,
                metric: rows[0].metric,
                mean_delta: rows.iter().map(|p| p.delta()).sum::<f64>() / n,
                change_pct: (mean_a != 0.0).then(|| 100.0 * (mean_b - mean_a) / mean_a),
            }
        })
        .collect();
    paired_summary.sort_by(|x, y| {
        x.max_speed
            .total_cmp(&y.max_speed)
            .then(x.packet_rate.total_cmp(&y.packet_rate))
            .then(metric_rank(x.metric).cmp(&metric_rank(y.metric)))
    });
    Ok(SummaryReport {
        cells,
        paired,
        paired_summary,
    })
}

fn metric_rank(m: &str) -> usize {
    ["ch_changes", "pdr", "throughput_bps", "throughput_pps", "overhead_pkts", "mean_delay_s"]
        .iter()
        .position(|x| *x == m)
        .unwrap_or(usize::MAX)
}

fn sort_cells(cells: &mut [CellSummary]) {
    cells.sort_by(|a, b| {
        a.max_speed
            .total_cmp(&b.max_speed)
            .then(a.packet_rate.total_cmp(&b.packet_rate))
            .then(a.protocol.as_str().cmp(b.protocol.as_str()))
    });
}

impl CellSummary {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| *n == metric).and_then(|(_, s)| s.mean)
    }
}

impl SummaryReport {
    pub fn cell(&self, protocol: Protocol, max_speed: f64, packet_rate: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.protocol == protocol && c.max_speed == max_speed && c.packet_rate == packet_rate)
    }

    /// One row per (cell, metric): `protocol,max_speed,packet_rate,metric,n,mean,stddev`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("protocol,max_speed,packet_rate,metric,n,mean,stddev\n");
        for c in &self.cells {
            for (name, st) in &c.metrics {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    c.protocol.as_str(),
                    c.max_speed,
                    c.packet_rate,
                    name,
                    st.n,
                    opt(st.mean),
                    st.stddev.map_or_else(|| "n/a".to_string(), |x| format!("{x}")),
                );
            }
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<11} {:>9} {:>6} {:>16} {:>16} {:>16} {:>14} {:>16}",
            "protocol", "max_speed", "rate", "ch_changes", "pdr", "throughput_bps", "overhead", "mean_delay_s"
        );
        let cell = |st: &Stat| match (st.mean, st.stddev) {
            (Some(m), Some(d)) => format!("{m:.4}±{d:.3}"),
            (Some(m), None) => format!("{m:.4}"),
            _ => NA.to_string(),
        };
        for c in &self.cells {
            let get = |name: &str| {
                c.metrics
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map_or_else(|| NA.to_string(), |(_, st)| cell(st))
            };
            let _ = writeln!(
                s,
                "{:<11} {:>9} {:>6} {:>16} {:>16} {:>16} {:>14} {:>16}",
                c.protocol.as_str(),
                c.max_speed,
                c.packet_rate,
                get("ch_changes"),
                get("pdr"),
                get("throughput_bps"),
                get("overhead_pkts"),
                get("mean_delay_s"),
            );
        }
        if !self.paired_summary.is_empty() {
            let _ = writeln!(s, "\npaired comparison (cross-cbrp minus cbrp, same seeds)");
            let _ = writeln!(
                s,
                "{:>9} {:>6} {:<15} {:>14} {:>10}",
                "max_speed", "rate", "metric", "mean_delta", "change_%"
            );
            for p in &self.paired_summary {
                let _ = writeln!(
                    s,
                    "{:>9} {:>6} {:<15} {:>14.4} {:>10}",
                    p.max_speed,
                    p.packet_rate,
                    p.metric,
                    p.mean_delta,
                    p.change_pct.map_or_else(|| NA.to_string(), |x| format!("{x:.1}")),
                );
            }
        }
        s
    }

    /// Per-seed deltas: `max_speed,packet_rate,seed,metric,cbrp,cross_cbrp,delta`.
    pub fn paired_csv(&self) -> String {
        let mut s = String::from("max_speed,packet_rate,seed,metric,cbrp,cross_cbrp,delta\n");
        for p in &self.paired {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                p.max_speed,
                p.packet_rate,
                p.seed,
                p.metric,
                p.cbrp,
                p.cross,
                p.delta()
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigBuilder;

    fn cfg() -> ScenarioConfig {
        ConfigBuilder::new().build().unwrap()
    }

    #[test]
    fn role_change_counting() {
        let mut l = MetricsLedger::default();
        let n = NodeId(1);
        l.record_role_change(n, Role::Member, Role::ClusterHead, 20.0, 10.0);
        assert_eq!(l.ch_changes, 1);
        l.record_role_change(n, Role::Undecided, Role::Member, 21.0, 10.0);
        assert_eq!(l.ch_changes, 1);
        l.record_role_change(n, Role::ClusterHead, Role::Member, 5.0, 10.0);
        assert_eq!(l.ch_changes, 1);
        l.record_role_change(n, Role::ClusterHead, Role::Undecided, 10.0, 10.0);
        assert_eq!(l.ch_changes, 1, "grace boundary is exclusive");
        assert_eq!(l.role_changes.len(), 4);
    }

    #[test]
    fn nothing_sent_gives_undefined_pdr() {
        let r = finalize(&MetricsLedger::default(), &cfg(), 0);
        assert_eq!(r.pdr, None);
        assert!(r.csv_row().contains(",NA,"));
    }

    #[test]
    fn full_delivery() {
        let mut l = MetricsLedger { data_sent: 1200, ..Default::default() };
        for _ in 0..1200 {
            l.record_delivery(512, 0.01);
        }
        let r = finalize(&l, &cfg(), 0);
        assert_eq!(r.pdr, Some(1.0));
        assert_eq!(r.throughput_bps, 16384.0);
        assert_eq!(r.throughput_pps, 4.0);
        assert!((r.mean_delay_s.unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let mut l = MetricsLedger { data_sent: 7, hello_sent: 3, ..Default::default() };
        l.record_delivery(512, 0.1);
        l.record_delivery(512, 0.2);
        l.record_drop(DropCause::Queue);
        let r = finalize(&l, &cfg(), 4);
        assert_eq!(RUNS_HEADER.split(',').count(), 16);
        let back = RunReport::parse_csv_row(&r.csv_row()).unwrap();
        assert_eq!(back.csv_row(), r.csv_row());
        assert_eq!(back.mean_delay_s, r.mean_delay_s);
    }

    fn report(protocol: Protocol, seed: u64, ch: u64) -> RunReport {
        let c = cfg().with_protocol(protocol).with_seed(seed);
        let l = MetricsLedger {
            ch_changes: ch,
            data_sent: 10,
            data_delivered: 10,
            ..Default::default()
        };
        finalize(&l, &c, 0)
    }

    #[test]
    fn single_report_has_no_deviation() {
        let s = aggregate(&[report(Protocol::Cbrp, 0, 5)]).unwrap();
        assert_eq!(s.cells.len(), 1);
        let st = s.cells[0].metrics[0].1;
        assert_eq!(st.mean, Some(5.0));
        assert_eq!(st.stddev, None);
        assert!(s.to_csv().contains("n/a"));
    }

    #[test]
    fn identical_reports_zero_deviation() {
        let rs: Vec<_> = (0..5).map(|_| report(Protocol::Cbrp, 0, 5)).collect();
        let s = aggregate(&rs).unwrap();
        assert_eq!(s.cells[0].metrics[0].1.stddev, Some(0.0));
    }

    #[test]
    fn paired_deltas() {
        let rs = vec![
            report(Protocol::Cbrp, 0, 10),
            report(Protocol::CrossCbrp, 0, 6),
            report(Protocol::Cbrp, 1, 20),
            report(Protocol::CrossCbrp, 1, 12),
        ];
        let s = aggregate(&rs).unwrap();
        let ch: Vec<_> = s.paired.iter().filter(|p| p.metric == "ch_changes").collect();
        assert_eq!(ch.len(), 2);
        assert_eq!(ch[0].delta(), -4.0);
        assert_eq!(ch[1].delta(), -8.0);
        let sum = s.paired_summary.iter().find(|p| p.metric == "ch_changes").unwrap();
        assert_eq!(sum.mean_delta, -6.0);
        assert!((sum.change_pct.unwrap() + 40.0).abs() < 1e-12);
    }

    #[test]
    fn heterogeneous_configs_rejected() {
        let a = report(Protocol::Cbrp, 0, 1);
        let mut c = cfg();
        c.node_count = 30;
        c.flow_count = 10;
        let b = finalize(&MetricsLedger::default(), &c, 0);
        assert!(matches!(aggregate(&[a, b]), Err(AggregateError::Heterogeneous(..))));
        assert_eq!(aggregate(&[]), Err(AggregateError::Empty));
    }

    #[test]
    fn sample_stddev() {
        let s = stat(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, Some(5.0));
        assert!((s.stddev.unwrap() - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
