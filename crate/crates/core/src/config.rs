//! Scenario description: parsing, validation, serialization and seeded
//! initial placement.
//!
//! The file format is flat `key=value` lines with `#` comments. Keys are the
//! field names of [`ScenarioConfig`]; `area=WxH` sets both dimensions at once.
//! Later assignments win, so command-line overrides are simply applied after
//! the file contents.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::geometry::Position;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid value for `{key}` ({origin}): {message}")]
    Value {
        key: String,
        origin: String,
        message: String,
    },
    #[error("constraint violated: {constraint}")]
    Invariant { constraint: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Cbrp,
    CrossCbrp,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Cbrp => "cbrp",
            Protocol::CrossCbrp => "cross-cbrp",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cbrp" => Ok(Protocol::Cbrp),
            "cross-cbrp" | "crosscbrp" | "cross_cbrp" => Ok(Protocol::CrossCbrp),
            other => Err(format!("unknown protocol `{other}` (expected cbrp or cross-cbrp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MobilityModel {
    RandomWaypoint,
    /// Nodes hold their initial positions for the whole run.
    Static,
}

impl MobilityModel {
    pub fn as_str(self) -> &'static str {
        match self {
            MobilityModel::RandomWaypoint => "random_waypoint",
            MobilityModel::Static => "static",
        }
    }
}

impl FromStr for MobilityModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random_waypoint" | "rwp" => Ok(MobilityModel::RandomWaypoint),
            "static" => Ok(MobilityModel::Static),
            other => Err(format!(
                "unknown mobility model `{other}` (expected random_waypoint or static)"
            )),
        }
    }
}

/// A validated experiment description. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub node_count: usize,
    pub area_width: f64,
    pub area_height: f64,
    pub max_speed: f64,
    pub min_speed: f64,
    pub pause_time: f64,
    pub mobility: MobilityModel,
    pub tx_range: f64,
    pub sim_duration: f64,
    pub protocol: Protocol,
    pub hello_interval_bi: f64,
    pub neighbor_timeout_tp: f64,
    /// Nodes stay Undecided until this time so first elections see
    /// bidirectional links.
    pub election_warmup: f64,
    /// A node without a head waits this long before claiming headship
    /// over neighbors that are already served by another head.
    pub undecided_timeout: f64,
    /// Role changes before this time are formation, not churn.
    pub formation_grace: f64,
    pub flow_count: usize,
    pub allow_shared_endpoints: bool,
    pub packet_rate: f64,
    pub packet_size: usize,
    pub traffic_start: f64,
    pub queue_capacity: usize,
    pub link_rate: f64,
    pub path_loss_exponent_n: f64,
    pub tx_power: f64,
    pub d0: f64,
    pub l_d0: f64,
    pub fading_enabled: bool,
    pub rreq_timeout: f64,
    pub max_retries: u32,
    pub pending_capacity: usize,
    pub route_lifetime: f64,
    pub rng_seed: u64,
    pub replications: u32,
    /// Cluster snapshot export period; 0 disables.
    pub snapshot_period: f64,
    /// Mobility trace export period; 0 disables.
    pub mobility_trace_period: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ConfigBuilder::new()
            .build()
            .expect("built-in defaults are valid")
    }
}

/// Canonical key order used by [`ScenarioConfig::to_config_string`].
pub const KEYS: &[&str] = &[
    "node_count",
    "area_width",
    "area_height",
    "max_speed",
    "min_speed",
    "pause_time",
    "mobility",
    "tx_range",
    "sim_duration",
    "protocol",
    "hello_interval_BI",
    "neighbor_timeout_TP",
    "election_warmup",
    "undecided_timeout",
    "formation_grace",
    "flow_count",
    "allow_shared_endpoints",
    "packet_rate",
    "packet_size",
    "traffic_start",
    "queue_capacity",
    "link_rate",
    "path_loss_exponent_n",
    "tx_power",
    "d0",
    "L_d0",
    "fading_enabled",
    "rreq_timeout",
    "max_retries",
    "pending_capacity",
    "route_lifetime",
    "rng_seed",
    "replications",
    "snapshot_period",
    "mobility_trace_period",
];

/// Keys that identify a replication or a sweep cell rather than the scenario.
const RUN_IDENTITY_KEYS: &[&str] = &["protocol", "rng_seed", "replications", "max_speed", "packet_rate"];

impl ScenarioConfig {
    fn value_of(&self, key: &str) -> String {
        match key {
            "node_count" => self.node_count.to_string(),
            "area_width" => self.area_width.to_string(),
            "area_height" => self.area_height.to_string(),
            "max_speed" => self.max_speed.to_string(),
            "min_speed" => self.min_speed.to_string(),
            "pause_time" => self.pause_time.to_string(),
            "mobility" => self.mobility.as_str().to_string(),
            "tx_range" => self.tx_range.to_string(),
            "sim_duration" => self.sim_duration.to_string(),
            "protocol" => self.protocol.to_string(),
            "hello_interval_BI" => self.hello_interval_bi.to_string(),
            "neighbor_timeout_TP" => self.neighbor_timeout_tp.to_string(),
            "election_warmup" => self.election_warmup.to_string(),
            "undecided_timeout" => self.undecided_timeout.to_string(),
            "formation_grace" => self.formation_grace.to_string(),
            "flow_count" => self.flow_count.to_string(),
            "allow_shared_endpoints" => self.allow_shared_endpoints.to_string(),
            "packet_rate" => self.packet_rate.to_string(),
            "packet_size" => self.packet_size.to_string(),
            "traffic_start" => self.traffic_start.to_string(),
            "queue_capacity" => self.queue_capacity.to_string(),
            "link_rate" => self.link_rate.to_string(),
            "path_loss_exponent_n" => self.path_loss_exponent_n.to_string(),
            "tx_power" => self.tx_power.to_string(),
            "d0" => self.d0.to_string(),
            "L_d0" => self.l_d0.to_string(),
            "fading_enabled" => self.fading_enabled.to_string(),
            "rreq_timeout" => self.rreq_timeout.to_string(),
            "max_retries" => self.max_retries.to_string(),
            "pending_capacity" => self.pending_capacity.to_string(),
            "route_lifetime" => self.route_lifetime.to_string(),
            "rng_seed" => self.rng_seed.to_string(),
            "replications" => self.replications.to_string(),
            "snapshot_period" => self.snapshot_period.to_string(),
            "mobility_trace_period" => self.mobility_trace_period.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Serializes every field, so re-parsing yields an identical config.
    pub fn to_config_string(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k}={}\n", self.value_of(k)))
            .collect()
    }

    /// Scenario identity ignoring seed, protocol and the sweepable axes; two
    /// runs with equal fingerprints are comparable.
    pub fn fingerprint(&self) -> String {
        KEYS.iter()
            .filter(|k| !RUN_IDENTITY_KEYS.contains(k))
            .map(|k| format!("{k}={}", self.value_of(k)))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..self.clone()
        }
    }

    pub fn with_protocol(&self, protocol: Protocol) -> Self {
        Self {
            protocol,
            ..self.clone()
        }
    }

    /// Time to put one packet of `size_bytes` on the air.
    pub fn transmission_time(&self, size_bytes: usize) -> f64 {
        size_bytes as f64 * 8.0 / self.link_rate
    }
}

/// Collects raw `key=value` assignments and materializes a validated config.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    raw: BTreeMap<String, (String, String)>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an assignment. `origin` is used in error messages.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<&mut Self, ConfigError> {
        let key = key.trim();
        let value = value.trim();
        if key == "area" {
            let (w, h) = value
                .split_once(['x', 'X'])
                .ok_or_else(|| ConfigError::Value {
                    key: "area".into(),
                    origin: origin.into(),
                    message: format!("expected WxH, got `{value}`"),
                })?;
            self.set("area_width", w, origin)?;
            self.set("area_height", h, origin)?;
            return Ok(self);
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::Value {
                key: key.into(),
                origin: origin.into(),
                message: "unknown key".into(),
            });
        }
        self.raw
            .insert(key.to_string(), (value.to_string(), origin.to_string()));
        Ok(self)
    }

    /// Applies every line of a config file.
    pub fn apply_text(&mut self, text: &str) -> Result<&mut Self, ConfigError> {
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let content = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: lineno,
                message: format!("expected key=value, got `{content}`"),
            })?;
            if key.trim().is_empty() {
                return Err(ConfigError::Syntax {
                    line: lineno,
                    message: "empty key".into(),
                });
            }
            self.set(key, value, &format!("line {lineno}"))
                .map_err(|e| match e {
                    ConfigError::Value { message, key, .. } => ConfigError::Syntax {
                        line: lineno,
                        message: format!("`{key}`: {message}"),
                    },
                    other => other,
                })?;
        }
        Ok(self)
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.raw.get(key) {
            None => Ok(default),
            Some((value, origin)) => value.parse::<T>().map_err(|e| {
                // Values from a file report the file line.
                match origin.strip_prefix("line ").and_then(|n| n.parse().ok()) {
                    Some(line) => ConfigError::Syntax {
                        line,
                        message: format!("`{key}`: {e}"),
                    },
                    None => ConfigError::Value {
                        key: key.into(),
                        origin: origin.clone(),
                        message: e.to_string(),
                    },
                }
            }),
        }
    }

    pub fn build(&self) -> Result<ScenarioConfig, ConfigError> {
        let hello_interval_bi: f64 = self.get("hello_interval_BI", 2.0)?;
        let neighbor_timeout_tp: f64 = self.get("neighbor_timeout_TP", 3.0 * hello_interval_bi)?;
        let cfg = ScenarioConfig {
            node_count: self.get("node_count", 100)?,
            area_width: self.get("area_width", 1000.0)?,
            area_height: self.get("area_height", 1000.0)?,
            max_speed: self.get("max_speed", 20.0)?,
            min_speed: self.get("min_speed", 0.1)?,
            pause_time: self.get("pause_time", 0.0)?,
            mobility: self.get("mobility", MobilityModel::RandomWaypoint)?,
            tx_range: self.get("tx_range", 250.0)?,
            sim_duration: self.get("sim_duration", 300.0)?,
            protocol: self.get("protocol", Protocol::Cbrp)?,
            hello_interval_bi,
            neighbor_timeout_tp,
            election_warmup: self.get("election_warmup", 2.5 * hello_interval_bi)?,
            undecided_timeout: self.get("undecided_timeout", hello_interval_bi)?,
            formation_grace: self
                .get("formation_grace", 2.0 * hello_interval_bi + neighbor_timeout_tp)?,
            flow_count: self.get("flow_count", 50)?,
            allow_shared_endpoints: self.get("allow_shared_endpoints", false)?,
            packet_rate: self.get("packet_rate", 4.0)?,
            packet_size: self.get("packet_size", 512)?,
            traffic_start: self.get("traffic_start", 0.0)?,
            queue_capacity: self.get("queue_capacity", 50)?,
            link_rate: self.get("link_rate", 2.0e6)?,
            path_loss_exponent_n: self.get("path_loss_exponent_n", 2.0)?,
            tx_power: self.get("tx_power", 1.0)?,
            d0: self.get("d0", 1.0)?,
            l_d0: self.get("L_d0", 1.0)?,
            fading_enabled: self.get("fading_enabled", false)?,
            rreq_timeout: self.get("rreq_timeout", 2.0)?,
            max_retries: self.get("max_retries", 3)?,
            pending_capacity: self.get("pending_capacity", 10)?,
            route_lifetime: self.get("route_lifetime", 3.0)?,
            rng_seed: self.get("rng_seed", 0)?,
            replications: self.get("replications", 5)?,
            snapshot_period: self.get("snapshot_period", 0.0)?,
            mobility_trace_period: self.get("mobility_trace_period", 0.0)?,
        };
        validate(&cfg)?;
        Ok(cfg)
    }
}

fn check(cond: bool, constraint: &'static str) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError::Invariant { constraint })
    }
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn non_negative_finite(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

pub fn validate(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    check(cfg.node_count >= 2, "node_count >= 2")?;
    check(
        positive_finite(cfg.area_width) && positive_finite(cfg.area_height),
        "area_width > 0 and area_height > 0",
    )?;
    check(positive_finite(cfg.min_speed), "0 < min_speed")?;
    check(
        cfg.max_speed.is_finite() && cfg.min_speed <= cfg.max_speed,
        "min_speed <= max_speed",
    )?;
    check(non_negative_finite(cfg.pause_time), "pause_time >= 0")?;
    check(positive_finite(cfg.tx_range), "tx_range > 0")?;
    check(positive_finite(cfg.sim_duration), "sim_duration > 0")?;
    check(positive_finite(cfg.hello_interval_bi), "hello_interval_BI > 0")?;
    check(
        positive_finite(cfg.neighbor_timeout_tp),
        "neighbor_timeout_TP > 0",
    )?;
    check(non_negative_finite(cfg.election_warmup), "election_warmup >= 0")?;
    check(non_negative_finite(cfg.undecided_timeout), "undecided_timeout >= 0")?;
    check(non_negative_finite(cfg.formation_grace), "formation_grace >= 0")?;
    check(cfg.flow_count >= 1, "flow_count >= 1")?;
    if !cfg.allow_shared_endpoints {
        check(
            2 * cfg.flow_count <= cfg.node_count,
            "flow_count <= node_count / 2 (disjoint flow endpoints)",
        )?;
    }
    check(positive_finite(cfg.packet_rate), "packet_rate > 0")?;
    check(cfg.packet_size > 0, "packet_size > 0")?;
    check(non_negative_finite(cfg.traffic_start), "traffic_start >= 0")?;
    check(cfg.queue_capacity >= 1, "queue_capacity >= 1")?;
    check(positive_finite(cfg.link_rate), "link_rate > 0")?;
    check(
        (2.0..=6.0).contains(&cfg.path_loss_exponent_n),
        "2 <= path_loss_exponent_n <= 6",
    )?;
    check(positive_finite(cfg.tx_power), "tx_power > 0")?;
    check(positive_finite(cfg.d0), "d0 > 0")?;
    check(cfg.l_d0 > 0.0 && cfg.l_d0 <= 1.0, "0 < L_d0 <= 1")?;
    check(positive_finite(cfg.rreq_timeout), "rreq_timeout > 0")?;
    check(cfg.pending_capacity >= 1, "pending_capacity >= 1")?;
    check(positive_finite(cfg.route_lifetime), "route_lifetime > 0")?;
    check(cfg.replications >= 1, "replications >= 1")?;
    check(non_negative_finite(cfg.snapshot_period), "snapshot_period >= 0")?;
    check(
        non_negative_finite(cfg.mobility_trace_period),
        "mobility_trace_period >= 0",
    )?;
    Ok(())
}

/// Parses config-file text; unspecified keys take their defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    ConfigBuilder::new().apply_text(text)?.build()
}

/// Uniform initial positions over the configured area.
pub fn generate_initial_placement(cfg: &ScenarioConfig) -> Vec<Position> {
    let mut rng = stream_rng(cfg.rng_seed, Stream::Placement, 0);
    (0..cfg.node_count)
        .map(|_| {
            Position::new(
                rng.gen_range(0.0..=cfg.area_width),
                rng.gen_range(0.0..=cfg.area_height),
            )
        })
        .collect()
}
