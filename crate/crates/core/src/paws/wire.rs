//! JSON envelope protocol.
//!
//! Requests are `{"method": ..., "id": ..., "params": {...}}` with methods
//! `init`, `register`, `getSpectrum` and `notifySpectrumUse`. Responses echo
//! `id` and carry either `result` or `error: {code, message}`, where `code`
//! is one of `OUTSIDE_COVERAGE`, `NOT_REGISTERED`, `UNAVAILABLE_SPECTRUM`,
//! `INVALID_REQUEST`. Field names are camelCase.
//!
//! ```text
//! init               {deviceId, deviceDesc:{manufacturerId, modelId, deviceType}, location:{latitude, longitude}, accuracyM}
//!                 -> {deviceId, rulesetInfo:{authority, rulesetId, maxLocationChangeM, scheduleHorizonHours, maxEirpDbm}}
//! register           {deviceId, deviceOwner:{name, contact}, location}
//!                 -> {deviceId, state}
//! getSpectrum        {deviceId, location}
//!                 -> {deviceId, timestamp, spectrumSchedule:{eventTime:{startTime, stopTime}, spectra:[{channel, lowMhz, highMhz, maxEirpDbm}]}}
//! notifySpectrumUse  {deviceId, channel, eirpDbm, location}
//!                 -> {deviceId, acknowledged, reportedAt}
//! ```

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    DeviceDescriptor, DeviceOwner, DeviceState, DeviceType, ErrorCode, PawsError, PawsService, SpectrumUse, Timestamp,
};
use crate::spectrum::GeoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireLocation {
    pub latitude: f64,
    pub longitude: f64,
}

impl WireLocation {
    fn to_point(self) -> Result<GeoPoint, PawsError> {
        GeoPoint::new(self.latitude, self.longitude).map_err(|e| PawsError::invalid(e.to_string()))
    }
}

impl From<GeoPoint> for WireLocation {
    fn from(p: GeoPoint) -> Self {
        Self { latitude: p.lat_deg(), longitude: p.lon_deg() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WireDeviceDesc {
    pub manufacturer_id: String,
    pub model_id: String,
    pub device_type: DeviceType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InitParams {
    pub device_id: String,
    pub device_desc: WireDeviceDesc,
    pub location: WireLocation,
    pub accuracy_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RegisterParams {
    pub device_id: String,
    pub device_owner: DeviceOwner,
    pub location: WireLocation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GetSpectrumParams {
    pub device_id: String,
    pub location: WireLocation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NotifyParams {
    pub device_id: String,
    pub channel: u8,
    pub eirp_dbm: f64,
    pub location: WireLocation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RulesetWire {
    authority: String,
    ruleset_id: String,
    max_location_change_m: f64,
    schedule_horizon_hours: u32,
    max_eirp_dbm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SpectrumWire {
    channel: u8,
    low_mhz: f64,
    high_mhz: f64,
    max_eirp_dbm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct EventTimeWire {
    start_time: Timestamp,
    stop_time: Timestamp,
}

#[derive(Debug, Deserialize)]
struct Envelope {
    method: String,
    #[serde(default)]
    id: Value,
    #[serde(default)]
    params: Value,
}

fn params<T: DeserializeOwned>(v: Value) -> Result<T, PawsError> {
    serde_json::from_value(v).map_err(|e| PawsError::invalid(format!("bad params: {e}")))
}

fn error_body(id: Value, e: &PawsError) -> Value {
    json!({ "id": id, "error": { "code": e.code, "message": e.message } })
}

fn call(svc: &PawsService, method: &str, raw: Value) -> Result<Value, PawsError> {
    match method {
        "init" => {
            let p: InitParams = params(raw)?;
            let desc = DeviceDescriptor {
                manufacturer_id: p.device_desc.manufacturer_id,
                model_id: p.device_desc.model_id,
                device_type: p.device_desc.device_type,
            };
            let r = svc.handle_init(&p.device_id, desc, p.location.to_point()?, p.accuracy_m)?;
            let ruleset = RulesetWire {
                authority: r.ruleset.authority,
                ruleset_id: r.ruleset.ruleset_id,
                max_location_change_m: r.ruleset.max_location_change_m,
                schedule_horizon_hours: r.ruleset.schedule_horizon_hours,
                max_eirp_dbm: r.ruleset.max_eirp_dbm,
            };
            Ok(json!({ "deviceId": r.device_id, "rulesetInfo": ruleset }))
        }
        "register" => {
            let p: RegisterParams = params(raw)?;
            let r = svc.handle_register(&p.device_id, p.device_owner, p.location.to_point()?)?;
            debug_assert_eq!(r.state, DeviceState::Registered);
            Ok(json!({ "deviceId": r.device_id, "state": r.state }))
        }
        "getSpectrum" => {
            let p: GetSpectrumParams = params(raw)?;
            let s = svc.handle_avail_spectrum(&p.device_id, p.location.to_point()?)?;
            let first = s.entries.first().expect("a granted schedule is never empty");
            let cfg = svc.engine().config();
            let spectra = s
                .entries
                .iter()
                .map(|e| {
                    let c = cfg.channel(e.channel_index).map_err(|e| PawsError::invalid(e.to_string()))?;
                    Ok(SpectrumWire {
                        channel: e.channel_index,
                        low_mhz: c.low_mhz,
                        high_mhz: c.high_mhz,
                        max_eirp_dbm: e.max_eirp_dbm,
                    })
                })
                .collect::<Result<Vec<_>, PawsError>>()?;
            Ok(json!({
                "deviceId": s.device_id,
                "timestamp": first.valid_from,
                "spectrumSchedule": {
                    "eventTime": EventTimeWire { start_time: first.valid_from, stop_time: first.valid_to },
                    "spectra": spectra,
                },
            }))
        }
        "notifySpectrumUse" => {
            let p: NotifyParams = params(raw)?;
            let r = svc.handle_notify(SpectrumUse {
                device_id: p.device_id,
                channel_index: p.channel,
                eirp_dbm: p.eirp_dbm,
                location: p.location.to_point()?,
            })?;
            Ok(json!({ "deviceId": r.device_id, "acknowledged": true, "reportedAt": r.reported_at }))
        }
        other => Err(PawsError::invalid(format!("unknown method `{other}`"))),
    }
}

/// Handles one decoded envelope. Never fails: every outcome is a `result`
/// or an `error` body.
pub fn dispatch(svc: &PawsService, request: Value) -> Value {
    let id = request.get("id").cloned().unwrap_or(Value::Null);
    let env: Envelope = match serde_json::from_value(request) {
        Ok(e) => e,
        Err(e) => return error_body(id, &PawsError::invalid(format!("bad envelope: {e}"))),
    };
    match call(svc, &env.method, env.params) {
        Ok(result) => json!({ "id": env.id, "result": result }),
        Err(e) => error_body(env.id, &e),
    }
}

/// Raw-bytes entry point used by transports.
pub fn handle_bytes(svc: &PawsService, body: &[u8]) -> Vec<u8> {
    let response = match serde_json::from_slice::<Value>(body) {
        Ok(v) => dispatch(svc, v),
        Err(e) => error_body(Value::Null, &PawsError::invalid(format!("malformed JSON: {e}"))),
    };
    serde_json::to_vec(&response).expect("serializable response")
}

/// Error code carried by a response body, if any.
pub fn error_code(response: &Value) -> Option<ErrorCode> {
    serde_json::from_value(response.get("error")?.get("code")?.clone()).ok()
}
