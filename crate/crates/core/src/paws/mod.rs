//! Geolocation spectrum database service.
//!
//! Devices move through `Unknown -> Initialized -> Registered`; only a
//! registered device may obtain a spectrum schedule, and only against an
//! unexpired grant may it report spectrum use. Every state change is written
//! to a JSON-lines record log and synced before the caller is answered.

mod log;
mod service;
pub mod wire;

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::spectrum::GeoPoint;

pub use log::{replay, EventSink, LogError, LogEvent, MemorySink, RecordLog, Replay};
pub use service::{InitResponse, PawsService, RegisterResponse, RulesetInfo, ServiceState};

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeviceState {
    Unknown,
    Initialized,
    Registered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceType {
    Fixed,
    Portable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub manufacturer_id: String,
    pub model_id: String,
    pub device_type: DeviceType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceOwner {
    pub name: String,
    #[serde(default)]
    pub contact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: String,
    pub state: DeviceState,
    pub last_location: GeoPoint,
    pub location_accuracy_m: f64,
    pub descriptor: DeviceDescriptor,
    pub owner: Option<DeviceOwner>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrantEntry {
    pub channel_index: u8,
    pub max_eirp_dbm: f64,
    pub valid_from: Timestamp,
    pub valid_to: Timestamp,
}

impl GrantEntry {
    pub fn is_active(&self, at: Timestamp) -> bool {
        self.valid_from <= at && at < self.valid_to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSchedule {
    pub device_id: String,
    pub location: GeoPoint,
    pub entries: Vec<GrantEntry>,
}

/// A device's report of what it is actually transmitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumUse {
    pub device_id: String,
    pub channel_index: u8,
    pub eirp_dbm: f64,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseRecord {
    pub device_id: String,
    pub channel_index: u8,
    pub eirp_dbm: f64,
    pub location: GeoPoint,
    pub reported_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    /// Device location outside the regulatory domain.
    OutsideCoverage,
    /// Spectrum requested before initialization and registration.
    NotRegistered,
    /// No channel is available at the device location.
    UnavailableSpectrum,
    InvalidRequest,
}

impl ErrorCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCode::OutsideCoverage => "OUTSIDE_COVERAGE",
            ErrorCode::NotRegistered => "NOT_REGISTERED",
            ErrorCode::UnavailableSpectrum => "UNAVAILABLE_SPECTRUM",
            ErrorCode::InvalidRequest => "INVALID_REQUEST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{}: {message}", code.as_str())]
pub struct PawsError {
    pub code: ErrorCode,
    pub message: String,
}

impl PawsError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::InvalidRequest, message)
    }
}

/// Source of "now" for schedule windows.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let secs = Utc::now().timestamp();
        Utc.timestamp_opt(secs, 0).single().expect("valid timestamp")
    }
}

/// Logical clock advanced by hand.
#[derive(Debug, Default)]
pub struct ManualClock {
    secs: AtomicI64,
}

impl ManualClock {
    pub fn starting_at(t: Timestamp) -> Self {
        Self { secs: AtomicI64::new(t.timestamp()) }
    }

    pub fn advance_secs(&self, secs: i64) {
        self.secs.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Utc.timestamp_opt(self.secs.load(Ordering::SeqCst), 0).single().expect("valid timestamp")
    }
}
