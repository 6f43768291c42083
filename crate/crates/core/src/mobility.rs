//! Random-waypoint motion, evaluated in closed form per leg.

use rand::Rng;

use crate::config::{MobilityModel, ScenarioConfig};
use crate::geometry::Position;
use crate::rng::SimRng;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("time {t} outside leg span [{depart}, {until}]")]
pub struct OutsideLeg {
    pub t: f64,
    pub depart: f64,
    pub until: f64,
}

/// One travel-then-pause segment of a node's trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointLeg {
    pub origin: Position,
    pub destination: Position,
    pub speed: f64,
    pub depart_time: f64,
    pub arrive_time: f64,
    pub pause_until: f64,
}

impl WaypointLeg {
    /// A leg that never ends; used for static scenarios.
    pub fn stationary(at: Position, from: f64) -> Self {
        Self {
            origin: at,
            destination: at,
            speed: 0.0,
            depart_time: from,
            arrive_time: from,
            pause_until: f64::INFINITY,
        }
    }

    pub fn position_at(&self, t: f64) -> Result<Position, OutsideLeg> {
        if t < self.depart_time || t > self.pause_until {
            return Err(OutsideLeg {
                t,
                depart: self.depart_time,
                until: self.pause_until,
            });
        }
        if t >= self.arrive_time {
            return Ok(self.destination);
        }
        let f = (t - self.depart_time) / (self.arrive_time - self.depart_time);
        Ok(self.origin.lerp(&self.destination, f))
    }
}

/// Draws the next leg starting at `current` at time `now`.
pub fn next_leg(current: Position, now: f64, cfg: &ScenarioConfig, rng: &mut SimRng) -> WaypointLeg {
    let destination = Position::new(
        rng.gen_range(0.0..=cfg.area_width),
        rng.gen_range(0.0..=cfg.area_height),
    );
    let speed = if cfg.min_speed < cfg.max_speed {
        rng.gen_range(cfg.min_speed..=cfg.max_speed)
    } else {
        cfg.max_speed
    };
    let arrive_time = now + current.distance(&destination) / speed;
    WaypointLeg {
        origin: current,
        destination,
        speed,
        depart_time: now,
        arrive_time,
        pause_until: arrive_time + cfg.pause_time,
    }
}

/// A node's trajectory: the active leg plus the stream that draws the next.
#[derive(Debug, Clone)]
pub struct NodeMobility {
    leg: WaypointLeg,
    rng: SimRng,
    model: MobilityModel,
}

impl NodeMobility {
    pub fn new(start: Position, cfg: &ScenarioConfig, mut rng: SimRng) -> Self {
        let leg = match cfg.mobility {
            MobilityModel::Static => WaypointLeg::stationary(start, 0.0),
            MobilityModel::RandomWaypoint => next_leg(start, 0.0, cfg, &mut rng),
        };
        Self {
            leg,
            rng,
            model: cfg.mobility,
        }
    }

    pub fn leg(&self) -> &WaypointLeg {
        &self.leg
    }

    /// When the current leg ends, or `None` for a static node.
    pub fn leg_end(&self) -> Option<f64> {
        match self.model {
            MobilityModel::Static => None,
            MobilityModel::RandomWaypoint => Some(self.leg.pause_until),
        }
    }

    pub fn position_at(&self, t: f64) -> Position {
        // The engine rolls legs over at `pause_until`, so `t` is always covered.
        self.leg
            .position_at(t)
            .expect("mobility leg does not cover the requested time")
    }

    /// Starts the next leg from the end of the current one.
    pub fn advance(&mut self, cfg: &ScenarioConfig) -> &WaypointLeg {
        let start = self.leg.destination;
        let now = self.leg.pause_until;
        self.leg = next_leg(start, now, cfg, &mut self.rng);
        &self.leg
    }
}
