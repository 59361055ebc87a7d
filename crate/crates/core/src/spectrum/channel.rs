use serde::{Deserialize, Serialize};

use super::SpectrumError;

pub const CHANNEL_WIDTH_MHZ: f64 = 8.0;
pub const UHF_BAND_LOW_MHZ: f64 = 470.0;
pub const UHF_BAND_HIGH_MHZ: f64 = 590.0;
pub const UHF_CHANNEL_COUNT: u8 = 15;

/// One 8 MHz TV channel of the UHF band plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub index: u8,
    pub low_mhz: f64,
    pub high_mhz: f64,
}

impl Channel {
    /// Channel `index` (1-based) of the default 470-590 MHz plan.
    pub fn new(index: u8) -> Result<Self, SpectrumError> {
        Self::in_band(index, UHF_BAND_LOW_MHZ, UHF_CHANNEL_COUNT)
    }

    pub fn in_band(index: u8, band_low_mhz: f64, channel_count: u8) -> Result<Self, SpectrumError> {
        if index == 0 || index > channel_count {
            return Err(SpectrumError::InvalidChannel(index));
        }
        let low_mhz = band_low_mhz + CHANNEL_WIDTH_MHZ * f64::from(index - 1);
        Ok(Self { index, low_mhz, high_mhz: low_mhz + CHANNEL_WIDTH_MHZ })
    }

    pub fn center_mhz(&self) -> f64 {
        (self.low_mhz + self.high_mhz) / 2.0
    }
}

/// Number of whole 8 MHz channels a transmission of `bandwidth_mhz` occupies.
pub fn channels_spanned(bandwidth_mhz: f64) -> usize {
    ((bandwidth_mhz / CHANNEL_WIDTH_MHZ).ceil() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channels_partition_the_band() {
        let mut edge = UHF_BAND_LOW_MHZ;
        for i in 1..=UHF_CHANNEL_COUNT {
            let c = Channel::new(i).unwrap();
            assert_eq!(c.low_mhz, edge);
            assert_eq!(c.high_mhz - c.low_mhz, 8.0);
            assert_eq!(c.low_mhz, 470.0 + 8.0 * f64::from(i - 1));
            edge = c.high_mhz;
        }
        assert_eq!(edge, UHF_BAND_HIGH_MHZ);
    }

    #[test]
    fn out_of_plan_indices_rejected() {
        assert!(Channel::new(0).is_err());
        assert!(Channel::new(16).is_err());
    }

    #[test]
    fn span_counts() {
        assert_eq!(channels_spanned(5.0), 1);
        assert_eq!(channels_spanned(8.0), 1);
        assert_eq!(channels_spanned(10.0), 2);
        assert_eq!(channels_spanned(20.0), 3);
    }
}
