//! Geospatial and RF primitives shared by every other module.

mod channel;
mod config;
mod geo;
mod phy;
mod propagation;

pub use channel::{
    channels_spanned, Channel, CHANNEL_WIDTH_MHZ, UHF_BAND_HIGH_MHZ, UHF_BAND_LOW_MHZ, UHF_CHANNEL_COUNT,
};
pub use config::{default_boundary, RegulatoryConfig};
pub use geo::{haversine_km, Boundary, BoundingBox, GeoPoint, EARTH_RADIUS_KM};
pub use phy::{link_throughput_mbps, shannon_snr_db, PhyProfile, PhyRegistry};
pub use propagation::{
    free_space_path_loss_db, hata_open_path_loss_db, noise_floor_dbm, received_power_dbm, ClampFlags, FreeSpace,
    HataOpen, LossEstimate, ModelRegistry, PathLossParams, Propagation, PropagationModel, RuralAuto, SharedModel,
    DEFAULT_MIN_DISTANCE_KM, DEFAULT_MODEL, RECEIVER_NOISE_FIGURE_DB,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectrumError {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("channel index {0} is outside the band plan")]
    InvalidChannel(u8),
    #[error("invalid boundary polygon: {0}")]
    InvalidBoundary(String),
    #[error("degenerate bounding box")]
    DegenerateBoundingBox,
    #[error("invalid regulatory config: {0}")]
    InvalidConfig(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid PHY profile: {0}")]
    InvalidProfile(String),
    #[error("unknown propagation model `{0}`")]
    UnknownModel(String),
    #[error("unknown PHY profile `{0}`")]
    UnknownProfile(String),
}
