//! Log-distance propagation with optional Rayleigh power fading.
//!
//! Received power feeds only the mobility metric. Whether a frame is heard at
//! all is decided by the deterministic range disc in [`in_range`].

use rand::Rng;

use crate::config::ScenarioConfig;
use crate::geometry::Position;
use crate::rng::SimRng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChannelError {
    #[error("distance {distance} m is below the reference distance {d0} m")]
    BelowReference { distance: f64, d0: f64 },
    #[error("transmit power must be positive, got {0}")]
    NonPositivePower(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    /// Reference (close-in) distance, meters.
    pub d0: f64,
    /// Gain at `d0`; antenna gains and wavelength are folded in here.
    pub l_d0: f64,
    /// Path-loss exponent.
    pub n: f64,
    pub fading_enabled: bool,
}

impl ChannelModel {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            d0: cfg.d0,
            l_d0: cfg.l_d0,
            n: cfg.path_loss_exponent_n,
            fading_enabled: cfg.fading_enabled,
        }
    }

    /// `L(d0) * (x/d0)^-n * xi`, with `xi = 1` unless fading is enabled.
    pub fn channel_gain(&self, x: f64, rng: &mut SimRng) -> Result<f64, ChannelError> {
        if x < self.d0 {
            return Err(ChannelError::BelowReference {
                distance: x,
                d0: self.d0,
            });
        }
        let path = self.l_d0 * (x / self.d0).powf(-self.n);
        let xi = if self.fading_enabled {
            unit_exponential(rng)
        } else {
            1.0
        };
        Ok(path * xi)
    }

    pub fn received_power(&self, pt: f64, x: f64, rng: &mut SimRng) -> Result<f64, ChannelError> {
        if pt <= 0.0 || pt.is_nan() {
            return Err(ChannelError::NonPositivePower(pt));
        }
        Ok(pt * self.channel_gain(x, rng)?)
    }
}

/// Closed-disc connectivity: true iff the separation is at most `tx_range`.
pub fn in_range(a: &Position, b: &Position, tx_range: f64) -> bool {
    a.distance(b) <= tx_range
}

/// Unit-mean exponential draw by inversion (power gain of a Rayleigh channel).
fn unit_exponential(rng: &mut SimRng) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln()
}
