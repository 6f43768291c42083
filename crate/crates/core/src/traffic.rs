//! Constant-bit-rate flows over randomly chosen endpoints.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::ScenarioConfig;
use crate::geometry::NodeId;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub flow_id: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub rate: f64,
    pub packet_size: usize,
    pub start_time: f64,
}

impl Flow {
    pub fn interval(&self) -> f64 {
        1.0 / self.rate
    }

    /// Emission instants strictly before `end`.
    pub fn emission_times(&self, end: f64) -> impl Iterator<Item = f64> + '_ {
        (0u64..)
            .map(move |k| self.start_time + k as f64 * self.interval())
            .take_while(move |&t| t < end)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("{flows} disjoint flows need {needed} nodes, only {nodes} available")]
pub struct TooManyFlows {
    pub flows: usize,
    pub needed: usize,
    pub nodes: usize,
}

/// Draws flows from the traffic stream. The stagger is drawn as a fraction
/// of the period, so the same seed gives the same endpoints and relative
/// offsets at every packet rate.
pub fn generate_flows(cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<Vec<Flow>, TooManyFlows> {
    let n = cfg.node_count;
    let k = cfg.flow_count;
    let mut ids: Vec<NodeId> = (0..n as u32).map(NodeId).collect();
    let mut pairs = Vec::with_capacity(k);
    if cfg.allow_shared_endpoints {
        if n < 2 && k > 0 {
            return Err(TooManyFlows { flows: k, needed: 2, nodes: n });
        }
        for _ in 0..k {
            let mut two = ids.choose_multiple(rng, 2);
            let a = *two.next().expect("n >= 2");
            let b = *two.next().expect("n >= 2");
            pairs.push((a, b));
        }
    } else {
        if 2 * k > n {
            return Err(TooManyFlows {
                flows: k,
                needed: 2 * k,
                nodes: n,
            });
        }
        ids.shuffle(rng);
        for c in ids.chunks_exact(2).take(k) {
            pairs.push((c[0], c[1]));
        }
    }
    let period = 1.0 / cfg.packet_rate;
    Ok(pairs
        .into_iter()
        .enumerate()
        .map(|(flow_id, (src, dst))| {
            let u: f64 = rng.gen();
            Flow {
                flow_id,
                src,
                dst,
                rate: cfg.packet_rate,
                packet_size: cfg.packet_size,
                start_time: cfg.traffic_start + u * period,
            }
        })
        .collect())
}
