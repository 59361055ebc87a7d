use serde::{Deserialize, Serialize};

use super::channel::{Channel, CHANNEL_WIDTH_MHZ};
use super::geo::{Boundary, GeoPoint};
use super::SpectrumError;

/// Coarse outline of mainland India used as the default regulatory domain,
/// as (lat, lon) pairs in ring order.
const INDIA_OUTLINE: &[(f64, f64)] = &[
    (8.0, 77.3),
    (13.0, 80.4),
    (16.0, 82.4),
    (21.5, 87.5),
    (22.0, 89.0),
    (26.0, 92.0),
    (28.0, 97.4),
    (29.5, 95.0),
    (27.5, 88.0),
    (30.5, 81.0),
    (35.5, 78.0),
    (37.0, 74.5),
    (32.5, 74.0),
    (30.0, 73.5),
    (24.0, 68.2),
    (22.5, 68.5),
    (20.5, 72.5),
    (15.0, 73.5),
];

pub fn default_boundary() -> Boundary {
    let ring =
        INDIA_OUTLINE.iter().map(|&(lat, lon)| GeoPoint::new(lat, lon).expect("static outline is valid")).collect();
    Boundary::new(ring).expect("static outline is a simple polygon")
}

/// Regulatory parameters the database enforces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegulatoryConfig {
    /// Co-channel primary signal level above which a channel is occupied,
    /// measured into a 0 dBi reference antenna.
    pub protection_threshold_dbm: f64,
    pub channel_count: u8,
    pub band_low_mhz: f64,
    pub band_high_mhz: f64,
    pub max_secondary_eirp_dbm: f64,
    pub schedule_horizon_hours: u32,
    pub location_accuracy_m: f64,
    /// Extra protection for channels adjacent to an occupied one. `None`
    /// disables adjacent-channel checks; `Some(r)` blocks a channel when an
    /// adjacent primary arrives above `threshold + r`.
    pub adjacent_channel_rejection_db: Option<f64>,
    pub regulatory_boundary: Boundary,
}

impl Default for RegulatoryConfig {
    fn default() -> Self {
        Self {
            protection_threshold_dbm: -114.0,
            channel_count: 15,
            band_low_mhz: 470.0,
            band_high_mhz: 590.0,
            max_secondary_eirp_dbm: 30.0,
            schedule_horizon_hours: 48,
            location_accuracy_m: 50.0,
            adjacent_channel_rejection_db: None,
            regulatory_boundary: default_boundary(),
        }
    }
}

impl RegulatoryConfig {
    pub fn validate(&self) -> Result<(), SpectrumError> {
        let finite = [
            self.protection_threshold_dbm,
            self.band_low_mhz,
            self.band_high_mhz,
            self.max_secondary_eirp_dbm,
            self.location_accuracy_m,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(SpectrumError::InvalidConfig("non-finite value".into()));
        }
        if self.channel_count == 0 {
            return Err(SpectrumError::InvalidConfig("channel_count must be positive".into()));
        }
        let span = self.band_high_mhz - self.band_low_mhz;
        if (f64::from(self.channel_count) * CHANNEL_WIDTH_MHZ - span).abs() > 1e-9 {
            return Err(SpectrumError::InvalidConfig(format!(
                "{} channels of 8 MHz do not fill {span} MHz",
                self.channel_count
            )));
        }
        if self.schedule_horizon_hours == 0 {
            return Err(SpectrumError::InvalidConfig("schedule horizon must be positive".into()));
        }
        if self.location_accuracy_m <= 0.0 {
            return Err(SpectrumError::InvalidConfig("location accuracy must be positive".into()));
        }
        if let Some(r) = self.adjacent_channel_rejection_db {
            if !r.is_finite() || r < 0.0 {
                return Err(SpectrumError::InvalidConfig("adjacent rejection must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn channel(&self, index: u8) -> Result<Channel, SpectrumError> {
        Channel::in_band(index, self.band_low_mhz, self.channel_count)
    }

    pub fn channels(&self) -> impl Iterator<Item = Channel> + '_ {
        (1..=self.channel_count).map(move |i| self.channel(i).expect("index within plan"))
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.regulatory_boundary.contains(p)
    }
}
