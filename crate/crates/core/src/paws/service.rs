use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::Duration;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::log::{EventSink, LogEvent};
use super::{
    Clock, DeviceDescriptor, DeviceOwner, DeviceRecord, DeviceState, DeviceType, ErrorCode, GrantEntry, PawsError,
    SpectrumSchedule, SpectrumUse, Timestamp, UseRecord,
};
use crate::availability::{AvailabilityEngine, AvailabilityError};
use crate::spectrum::{haversine_km, GeoPoint};

pub const RULESET_AUTHORITY: &str = "IN";
pub const RULESET_ID: &str = "IN-UHF-IV-470-590";

/// Everything the service knows, rebuilt from the log on start.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ServiceState {
    pub devices: BTreeMap<String, DeviceRecord>,
    /// Every grant issued, per device, oldest first.
    pub grants: BTreeMap<String, Vec<SpectrumSchedule>>,
    pub uses: Vec<UseRecord>,
}

impl ServiceState {
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a LogEvent>) -> Self {
        let mut s = Self::default();
        for e in events {
            s.apply(e);
        }
        s
    }

    pub fn apply(&mut self, event: &LogEvent) {
        match event {
            LogEvent::Initialized { device_id, descriptor, location, accuracy_m, .. } => {
                let rec = self.devices.entry(device_id.clone()).or_insert_with(|| DeviceRecord {
                    device_id: device_id.clone(),
                    state: DeviceState::Unknown,
                    last_location: *location,
                    location_accuracy_m: *accuracy_m,
                    descriptor: descriptor.clone(),
                    owner: None,
                });
                rec.state = rec.state.max(DeviceState::Initialized);
                rec.last_location = *location;
                rec.location_accuracy_m = *accuracy_m;
                rec.descriptor = descriptor.clone();
            }
            LogEvent::Registered { device_id, owner, location, .. } => {
                if let Some(rec) = self.devices.get_mut(device_id) {
                    if rec.state >= DeviceState::Initialized {
                        rec.state = DeviceState::Registered;
                        rec.owner = Some(owner.clone());
                        rec.last_location = *location;
                    }
                }
            }
            LogEvent::Granted { schedule, .. } => {
                self.grants.entry(schedule.device_id.clone()).or_default().push(schedule.clone());
            }
            LogEvent::Used { record } => self.uses.push(record.clone()),
        }
    }

    pub fn device_state(&self, device_id: &str) -> DeviceState {
        self.devices.get(device_id).map_or(DeviceState::Unknown, |d| d.state)
    }

    /// Grants of `device_id` covering `channel_index` at `at`.
    pub fn active_grants(&self, device_id: &str, channel_index: u8, at: Timestamp) -> Vec<&GrantEntry> {
        self.grants
            .get(device_id)
            .into_iter()
            .flatten()
            .flat_map(|s| s.entries.iter())
            .filter(|e| e.channel_index == channel_index && e.is_active(at))
            .collect()
    }

    /// Reported uses still backed by an unexpired grant at `at`.
    pub fn active_uses(&self, at: Timestamp) -> Vec<UseRecord> {
        self.uses
            .iter()
            .filter(|u| !self.active_grants(&u.device_id, u.channel_index, at).is_empty())
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesetInfo {
    pub authority: String,
    pub ruleset_id: String,
    pub max_location_change_m: f64,
    pub schedule_horizon_hours: u32,
    pub max_eirp_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitResponse {
    pub device_id: String,
    pub ruleset: RulesetInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub device_id: String,
    pub state: DeviceState,
}

/// The database service. Safe to share across threads: mutations are
/// serialized through the log writer, reads go against an immutable
/// snapshot.
pub struct PawsService {
    engine: Arc<AvailabilityEngine>,
    clock: Arc<dyn Clock>,
    writer: Mutex<Box<dyn EventSink>>,
    state: RwLock<Arc<ServiceState>>,
}

impl std::fmt::Debug for PawsService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PawsService").field("state", &self.snapshot()).finish_non_exhaustive()
    }
}

fn outside(p: GeoPoint) -> PawsError {
    PawsError::new(
        ErrorCode::OutsideCoverage,
        format!("({}, {}) is outside the regulatory domain", p.lat_deg(), p.lon_deg()),
    )
}

impl PawsService {
    /// Builds a service over `sink`, replaying `history` (the events the
    /// sink already holds) into the initial state.
    pub fn new(
        engine: Arc<AvailabilityEngine>,
        clock: Arc<dyn Clock>,
        sink: Box<dyn EventSink>,
        history: &[LogEvent],
    ) -> Self {
        Self {
            engine,
            clock,
            writer: Mutex::new(sink),
            state: RwLock::new(Arc::new(ServiceState::from_events(history))),
        }
    }

    pub fn engine(&self) -> &AvailabilityEngine {
        &self.engine
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn snapshot(&self) -> Arc<ServiceState> {
        self.state.read().clone()
    }

    pub fn ruleset(&self) -> RulesetInfo {
        let cfg = self.engine.config();
        RulesetInfo {
            authority: RULESET_AUTHORITY.into(),
            ruleset_id: RULESET_ID.into(),
            max_location_change_m: cfg.location_accuracy_m,
            schedule_horizon_hours: cfg.schedule_horizon_hours,
            max_eirp_dbm: cfg.max_secondary_eirp_dbm,
        }
    }

    /// Validates against the current state and, if `decide` yields an event,
    /// persists it and publishes the new state before returning.
    fn mutate<T>(
        &self,
        decide: impl FnOnce(&ServiceState) -> Result<(Option<LogEvent>, T), PawsError>,
    ) -> Result<T, PawsError> {
        let mut writer = self.writer.lock();
        let current = self.snapshot();
        let (event, out) = decide(&current)?;
        if let Some(event) = event {
            writer
                .append(&event)
                .map_err(|e| PawsError::invalid(format!("request not recorded: storage failure: {e}")))?;
            let mut next = (*current).clone();
            next.apply(&event);
            *self.state.write() = Arc::new(next);
        }
        Ok(out)
    }

    fn check_id(device_id: &str) -> Result<(), PawsError> {
        if device_id.trim().is_empty() {
            return Err(PawsError::invalid("empty device id"));
        }
        Ok(())
    }

    pub fn handle_init(
        &self,
        device_id: &str,
        descriptor: DeviceDescriptor,
        location: GeoPoint,
        accuracy_m: f64,
    ) -> Result<InitResponse, PawsError> {
        Self::check_id(device_id)?;
        let cfg = self.engine.config();
        if descriptor.device_type != DeviceType::Fixed {
            return Err(PawsError::invalid("only fixed devices are supported"));
        }
        if !cfg.contains(location) {
            return Err(outside(location));
        }
        if !accuracy_m.is_finite() || accuracy_m < 0.0 || accuracy_m > cfg.location_accuracy_m {
            return Err(PawsError::invalid(format!(
                "location accuracy {accuracy_m} m exceeds the required {} m",
                cfg.location_accuracy_m
            )));
        }
        let at = self.now();
        let ruleset = self.ruleset();
        self.mutate(|_| {
            let ev = LogEvent::Initialized { device_id: device_id.to_string(), descriptor, location, accuracy_m, at };
            Ok((Some(ev), InitResponse { device_id: device_id.to_string(), ruleset }))
        })
    }

    /// Registration is idempotent: a second register of a registered device
    /// is acknowledged without a new record.
    pub fn handle_register(
        &self,
        device_id: &str,
        owner: DeviceOwner,
        location: GeoPoint,
    ) -> Result<RegisterResponse, PawsError> {
        Self::check_id(device_id)?;
        let at = self.now();
        let in_domain = self.engine.config().contains(location);
        self.mutate(|s| {
            let ack = RegisterResponse { device_id: device_id.to_string(), state: DeviceState::Registered };
            match s.device_state(device_id) {
                DeviceState::Unknown => {
                    Err(PawsError::invalid(format!("device `{device_id}` must send init before registering")))
                }
                _ if !in_domain => Err(outside(location)),
                DeviceState::Registered => Ok((None, ack)),
                DeviceState::Initialized => {
                    let ev = LogEvent::Registered { device_id: device_id.to_string(), owner, location, at };
                    Ok((Some(ev), ack))
                }
            }
        })
    }

    /// Checks registration, domain and location drift for a device query.
    fn check_registered_at(&self, s: &ServiceState, device_id: &str, location: GeoPoint) -> Result<(), PawsError> {
        let Some(rec) = s.devices.get(device_id).filter(|d| d.state == DeviceState::Registered) else {
            return Err(PawsError::new(
                ErrorCode::NotRegistered,
                format!("device `{device_id}` is not initialized and registered"),
            ));
        };
        if !self.engine.config().contains(location) {
            return Err(outside(location));
        }
        let moved_m = haversine_km(rec.last_location, location) * 1000.0;
        let limit = self.engine.config().location_accuracy_m;
        if moved_m > limit {
            return Err(PawsError::invalid(format!(
                "fixed device moved {moved_m:.0} m from its registered location (limit {limit} m)"
            )));
        }
        Ok(())
    }

    pub fn handle_avail_spectrum(&self, device_id: &str, location: GeoPoint) -> Result<SpectrumSchedule, PawsError> {
        Self::check_id(device_id)?;
        self.check_registered_at(&self.snapshot(), device_id, location)?;
        let avail = self.engine.available_channels(location).map_err(|e| match e {
            AvailabilityError::OutsideBoundary(p) => outside(p),
            other => PawsError::invalid(other.to_string()),
        })?;
        let now = self.now();
        let horizon = Duration::hours(i64::from(self.engine.config().schedule_horizon_hours));
        let entries: Vec<GrantEntry> = avail
            .channels
            .iter()
            .filter_map(|c| {
                Some(GrantEntry {
                    channel_index: c.channel_index,
                    max_eirp_dbm: c.max_eirp_dbm.filter(|_| c.available)?,
                    valid_from: now,
                    valid_to: now + horizon,
                })
            })
            .collect();
        if entries.is_empty() {
            return Err(PawsError::new(
                ErrorCode::UnavailableSpectrum,
                "no channel is available at the device location",
            ));
        }
        let schedule = SpectrumSchedule { device_id: device_id.to_string(), location, entries };
        self.mutate(|s| {
            self.check_registered_at(s, device_id, location)?;
            Ok((Some(LogEvent::Granted { schedule: schedule.clone(), at: now }), schedule))
        })
    }

    pub fn handle_notify(&self, report: SpectrumUse) -> Result<UseRecord, PawsError> {
        Self::check_id(&report.device_id)?;
        if !report.eirp_dbm.is_finite() {
            return Err(PawsError::invalid("non-finite EIRP"));
        }
        let now = self.now();
        self.mutate(|s| {
            self.check_registered_at(s, &report.device_id, report.location)?;
            let grants = s.active_grants(&report.device_id, report.channel_index, now);
            if grants.is_empty() {
                return Err(PawsError::invalid(format!(
                    "channel {} is not granted to `{}` or the grant has expired",
                    report.channel_index, report.device_id
                )));
            }
            let allowed = grants.iter().map(|g| g.max_eirp_dbm).fold(f64::NEG_INFINITY, f64::max);
            if report.eirp_dbm > allowed {
                return Err(PawsError::invalid(format!(
                    "EIRP {} dBm exceeds the granted {allowed} dBm",
                    report.eirp_dbm
                )));
            }
            let record = UseRecord {
                device_id: report.device_id.clone(),
                channel_index: report.channel_index,
                eirp_dbm: report.eirp_dbm,
                location: report.location,
                reported_at: now,
            };
            Ok((Some(LogEvent::Used { record: record.clone() }), record))
        })
    }

    /// Uses backed by unexpired grants right now, for the allocator.
    pub fn active_uses(&self) -> Vec<UseRecord> {
        self.snapshot().active_uses(self.now())
    }
}
