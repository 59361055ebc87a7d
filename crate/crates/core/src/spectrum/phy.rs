use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::channel::CHANNEL_WIDTH_MHZ;
use super::SpectrumError;

/// Spectral-efficiency envelope of an air interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyProfile {
    pub name: String,
    pub se_min_bps_hz: f64,
    pub se_max_bps_hz: f64,
    pub max_throughput_mbps_per_8mhz: f64,
    /// Below this SNR the link does not close.
    pub min_snr_db: f64,
}

/// SNR at which the Shannon bound reaches `se` bits/s/Hz.
pub fn shannon_snr_db(se_bps_hz: f64) -> f64 {
    10.0 * (2f64.powf(se_bps_hz) - 1.0).log10()
}

impl PhyProfile {
    pub fn new(
        name: impl Into<String>,
        se_min_bps_hz: f64,
        se_max_bps_hz: f64,
        max_throughput_mbps_per_8mhz: f64,
        min_snr_db: f64,
    ) -> Result<Self, SpectrumError> {
        let p = Self { name: name.into(), se_min_bps_hz, se_max_bps_hz, max_throughput_mbps_per_8mhz, min_snr_db };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SpectrumError> {
        let values = [self.se_min_bps_hz, self.se_max_bps_hz, self.max_throughput_mbps_per_8mhz, self.min_snr_db];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SpectrumError::InvalidProfile(format!("{}: non-finite value", self.name)));
        }
        if !(self.se_min_bps_hz > 0.0 && self.se_min_bps_hz <= self.se_max_bps_hz) {
            return Err(SpectrumError::InvalidProfile(format!("{}: need 0 < se_min <= se_max", self.name)));
        }
        if self.max_throughput_mbps_per_8mhz <= 0.0
            || self.max_throughput_mbps_per_8mhz > self.se_max_bps_hz * CHANNEL_WIDTH_MHZ + 1e-9
        {
            return Err(SpectrumError::InvalidProfile(format!("{}: cap exceeds se_max over 8 MHz", self.name)));
        }
        Ok(())
    }

    /// Single-antenna IEEE 802.11af: 0.3-4.5 bits/s/Hz, 35.6 Mbps per 8 MHz.
    pub fn ieee_802_11af() -> Self {
        Self {
            name: "802.11af".into(),
            se_min_bps_hz: 0.3,
            se_max_bps_hz: 4.5,
            max_throughput_mbps_per_8mhz: 35.6,
            min_snr_db: shannon_snr_db(0.3),
        }
    }

    /// IEEE 802.22: 0.6-3.1 bits/s/Hz, about 19 Mbps per channel.
    pub fn ieee_802_22() -> Self {
        Self {
            name: "802.22".into(),
            se_min_bps_hz: 0.6,
            se_max_bps_hz: 3.1,
            max_throughput_mbps_per_8mhz: 19.0,
            min_snr_db: shannon_snr_db(0.6),
        }
    }

    /// Throughput ceiling for a given occupied bandwidth.
    pub fn cap_mbps(&self, bandwidth_mhz: f64) -> f64 {
        self.max_throughput_mbps_per_8mhz * bandwidth_mhz / CHANNEL_WIDTH_MHZ
    }
}

/// Shannon spectral efficiency clamped to the profile envelope, scaled by
/// bandwidth and capped at the profile's throughput ceiling.
pub fn link_throughput_mbps(snr_db: f64, bandwidth_mhz: f64, profile: &PhyProfile) -> f64 {
    if bandwidth_mhz.is_nan() || bandwidth_mhz <= 0.0 || snr_db.is_nan() || snr_db < profile.min_snr_db {
        return 0.0;
    }
    let snr_linear = 10f64.powf(snr_db / 10.0);
    let se = (1.0 + snr_linear).log2().clamp(profile.se_min_bps_hz, profile.se_max_bps_hz);
    (se * bandwidth_mhz).min(profile.cap_mbps(bandwidth_mhz))
}

/// Name-keyed PHY profiles.
#[derive(Debug, Clone)]
pub struct PhyRegistry {
    profiles: BTreeMap<String, PhyProfile>,
}

impl Default for PhyRegistry {
    fn default() -> Self {
        let mut r = Self { profiles: BTreeMap::new() };
        r.register(PhyProfile::ieee_802_11af()).expect("built-in profile");
        r.register(PhyProfile::ieee_802_22()).expect("built-in profile");
        r
    }
}

impl PhyRegistry {
    pub fn register(&mut self, profile: PhyProfile) -> Result<(), SpectrumError> {
        profile.validate()?;
        self.profiles.insert(profile.name.clone(), profile);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&PhyProfile, SpectrumError> {
        self.profiles.get(name).ok_or_else(|| SpectrumError::UnknownProfile(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.profiles.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturating_snr_hits_published_caps() {
        assert_eq!(link_throughput_mbps(60.0, 8.0, &PhyProfile::ieee_802_11af()), 35.6);
        assert_eq!(link_throughput_mbps(60.0, 8.0, &PhyProfile::ieee_802_22()), 19.0);
    }

    #[test]
    fn below_floor_is_zero() {
        let p = PhyProfile::ieee_802_11af();
        assert_eq!(link_throughput_mbps(p.min_snr_db - 0.01, 8.0, &p), 0.0);
        assert_eq!(link_throughput_mbps(-20.0, 8.0, &p), 0.0);
    }

    #[test]
    fn floor_is_continuous_with_envelope() {
        let p = PhyProfile::ieee_802_11af();
        let at_floor = link_throughput_mbps(p.min_snr_db, 8.0, &p);
        assert!((at_floor - 0.3 * 8.0).abs() < 1e-9);
    }

    #[test]
    fn mid_range_follows_shannon() {
        let p = PhyProfile::ieee_802_11af();
        // 10 dB -> log2(11) = 3.4594 bits/s/Hz
        let t = link_throughput_mbps(10.0, 5.0, &p);
        assert!((t - 11f64.log2() * 5.0).abs() < 1e-9);
    }

    #[test]
    fn non_positive_bandwidth_is_zero() {
        assert_eq!(link_throughput_mbps(30.0, 0.0, &PhyProfile::ieee_802_11af()), 0.0);
    }

    #[test]
    fn profile_invariants_checked() {
        assert!(PhyProfile::new("x", 0.0, 1.0, 4.0, 0.0).is_err());
        assert!(PhyProfile::new("x", 2.0, 1.0, 4.0, 0.0).is_err());
        assert!(PhyProfile::new("x", 0.5, 1.0, 9.0, 0.0).is_err());
        assert!(PhyProfile::new("x", 0.5, 1.0, 8.0, 0.0).is_ok());
        PhyProfile::ieee_802_11af().validate().unwrap();
        PhyProfile::ieee_802_22().validate().unwrap();
    }

    #[test]
    fn registry_lookup() {
        let r = PhyRegistry::default();
        assert_eq!(r.get("802.22").unwrap().max_throughput_mbps_per_8mhz, 19.0);
        assert!(r.get("lte").is_err());
    }
}
