//! Path-loss models and link-budget arithmetic.
//!
//! Models are interchangeable behind [`PropagationModel`] and looked up by
//! name through a [`ModelRegistry`]. Three are built in:
//!
//! * `free-space`: Friis loss, distance floored at `min_distance_km`.
//! * `hata-open`: Okumura-Hata open-area loss with every input clamped into
//!   the model's validity window.
//! * `auto`: free space below 1 km, and from 1 km on the larger of free-space
//!   and the Hata open-area loss with the distance term continued past 20 km.
//!   This is the default for availability and planning because it stays
//!   monotone in distance over the whole range.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SpectrumError;

pub const DEFAULT_MIN_DISTANCE_KM: f64 = 0.01;
/// Thermal noise density at 290 K.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;
pub const RECEIVER_NOISE_FIGURE_DB: f64 = 6.0;

const HATA_MIN_KM: f64 = 1.0;
const HATA_MAX_KM: f64 = 20.0;
const HATA_MIN_MHZ: f64 = 150.0;
const HATA_MAX_MHZ: f64 = 1500.0;
const HATA_BASE_HEIGHT_M: (f64, f64) = (30.0, 200.0);
const HATA_MOBILE_HEIGHT_M: (f64, f64) = (1.0, 10.0);

/// Geometry shared by every model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossParams {
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    pub min_distance_km: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self { tx_height_m: 30.0, rx_height_m: 10.0, min_distance_km: DEFAULT_MIN_DISTANCE_KM }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<(), SpectrumError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.tx_height_m) || !ok(self.rx_height_m) {
            return Err(SpectrumError::InvalidParameter("antenna heights must be positive".into()));
        }
        if !ok(self.min_distance_km) {
            return Err(SpectrumError::InvalidParameter("min_distance_km must be positive".into()));
        }
        Ok(())
    }

    pub fn with_heights(self, tx_height_m: f64, rx_height_m: f64) -> Self {
        Self { tx_height_m, rx_height_m, ..self }
    }
}

/// Which inputs were pulled back into a model's validity window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampFlags {
    pub distance: bool,
    pub frequency: bool,
    pub tx_height: bool,
    pub rx_height: bool,
}

impl ClampFlags {
    pub fn any(&self) -> bool {
        self.distance || self.frequency || self.tx_height || self.rx_height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub loss_db: f64,
    pub clamps: ClampFlags,
}

fn check_finite(d_km: f64, f_mhz: f64) -> Result<(), SpectrumError> {
    if !d_km.is_finite() || !f_mhz.is_finite() {
        return Err(SpectrumError::InvalidParameter("non-finite distance or frequency".into()));
    }
    if f_mhz <= 0.0 {
        return Err(SpectrumError::InvalidParameter(format!("frequency {f_mhz} MHz")));
    }
    Ok(())
}

/// Friis free-space loss, `32.44 + 20 log10(d_km) + 20 log10(f_mhz)`.
///
/// Distances below [`DEFAULT_MIN_DISTANCE_KM`] are floored.
pub fn free_space_path_loss_db(d_km: f64, f_mhz: f64) -> Result<f64, SpectrumError> {
    check_finite(d_km, f_mhz)?;
    Ok(fspl(d_km.max(DEFAULT_MIN_DISTANCE_KM), f_mhz))
}

fn fspl(d_km: f64, f_mhz: f64) -> f64 {
    32.44 + 20.0 * d_km.log10() + 20.0 * f_mhz.log10()
}

fn clamp_flagged(v: f64, (lo, hi): (f64, f64), flag: &mut bool) -> f64 {
    let c = v.clamp(lo, hi);
    *flag |= c != v;
    c
}

/// Hata open-area loss evaluated on already-clamped inputs. The distance is
/// used as given.
fn hata_open_raw(d_km: f64, f_mhz: f64, hb: f64, hm: f64) -> f64 {
    let lf = f_mhz.log10();
    // small/medium city mobile antenna correction
    let a_hm = (1.1 * lf - 0.7) * hm - (1.56 * lf - 0.8);
    let urban = 69.55 + 26.16 * lf - 13.82 * hb.log10() - a_hm + (44.9 - 6.55 * hb.log10()) * d_km.log10();
    urban - 4.78 * lf * lf + 18.33 * lf - 40.94
}

fn clamp_hata_inputs(f_mhz: f64, p: &PathLossParams, clamps: &mut ClampFlags) -> (f64, f64, f64) {
    let f = clamp_flagged(f_mhz, (HATA_MIN_MHZ, HATA_MAX_MHZ), &mut clamps.frequency);
    let hb = clamp_flagged(p.tx_height_m, HATA_BASE_HEIGHT_M, &mut clamps.tx_height);
    let hm = clamp_flagged(p.rx_height_m, HATA_MOBILE_HEIGHT_M, &mut clamps.rx_height);
    (f, hb, hm)
}

/// Hata open-area loss with every input clamped into the validity window
/// (1-20 km, 150-1500 MHz, base 30-200 m, mobile 1-10 m).
pub fn hata_open_path_loss_db(d_km: f64, f_mhz: f64, p: &PathLossParams) -> Result<LossEstimate, SpectrumError> {
    check_finite(d_km, f_mhz)?;
    p.validate()?;
    let mut clamps = ClampFlags::default();
    let d = clamp_flagged(d_km, (HATA_MIN_KM, HATA_MAX_KM), &mut clamps.distance);
    let (f, hb, hm) = clamp_hata_inputs(f_mhz, p, &mut clamps);
    Ok(LossEstimate { loss_db: hata_open_raw(d, f, hb, hm), clamps })
}

pub fn received_power_dbm(tx_eirp_dbm: f64, rx_gain_dbi: f64, loss_db: f64) -> f64 {
    tx_eirp_dbm + rx_gain_dbi - loss_db
}

/// Receiver noise floor over `bandwidth_mhz`.
pub fn noise_floor_dbm(bandwidth_mhz: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + 10.0 * (bandwidth_mhz * 1e6).log10() + RECEIVER_NOISE_FIGURE_DB
}

/// A path-loss model selectable by name.
pub trait PropagationModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn path_loss(&self, d_km: f64, f_mhz: f64, params: &PathLossParams) -> Result<LossEstimate, SpectrumError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FreeSpace;

impl PropagationModel for FreeSpace {
    fn name(&self) -> &'static str {
        "free-space"
    }

    fn path_loss(&self, d_km: f64, f_mhz: f64, p: &PathLossParams) -> Result<LossEstimate, SpectrumError> {
        check_finite(d_km, f_mhz)?;
        p.validate()?;
        let mut clamps = ClampFlags::default();
        let d = if d_km < p.min_distance_km {
            clamps.distance = true;
            p.min_distance_km
        } else {
            d_km
        };
        Ok(LossEstimate { loss_db: fspl(d, f_mhz), clamps })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HataOpen;

impl PropagationModel for HataOpen {
    fn name(&self) -> &'static str {
        "hata-open"
    }

    fn path_loss(&self, d_km: f64, f_mhz: f64, p: &PathLossParams) -> Result<LossEstimate, SpectrumError> {
        hata_open_path_loss_db(d_km, f_mhz, p)
    }
}

/// Free space under 1 km; beyond, never less than free space and following
/// the Hata open-area slope without the 20 km ceiling. Distances past 20 km
/// are reported through the distance clamp flag.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuralAuto;

impl PropagationModel for RuralAuto {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn path_loss(&self, d_km: f64, f_mhz: f64, p: &PathLossParams) -> Result<LossEstimate, SpectrumError> {
        if d_km < HATA_MIN_KM {
            return FreeSpace.path_loss(d_km, f_mhz, p);
        }
        check_finite(d_km, f_mhz)?;
        p.validate()?;
        let mut clamps = ClampFlags { distance: d_km > HATA_MAX_KM, ..Default::default() };
        let (f, hb, hm) = clamp_hata_inputs(f_mhz, p, &mut clamps);
        let loss_db = hata_open_raw(d_km, f, hb, hm).max(fspl(d_km, f_mhz));
        Ok(LossEstimate { loss_db, clamps })
    }
}

pub type SharedModel = Arc<dyn PropagationModel>;

/// Name-keyed collection of propagation models.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    models: BTreeMap<&'static str, SharedModel>,
}

pub const DEFAULT_MODEL: &str = "auto";

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut r = Self { models: BTreeMap::new() };
        r.register(Arc::new(FreeSpace));
        r.register(Arc::new(HataOpen));
        r.register(Arc::new(RuralAuto));
        r
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self { models: BTreeMap::new() }
    }

    /// Adds `model`, replacing any model already registered under its name.
    pub fn register(&mut self, model: SharedModel) {
        self.models.insert(model.name(), model);
    }

    pub fn get(&self, name: &str) -> Result<SharedModel, SpectrumError> {
        self.models.get(name).cloned().ok_or_else(|| SpectrumError::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.models.keys().copied()
    }
}

/// A model bound to its geometry parameters.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub model: SharedModel,
    pub params: PathLossParams,
}

impl Propagation {
    pub fn new(model: SharedModel, params: PathLossParams) -> Result<Self, SpectrumError> {
        params.validate()?;
        Ok(Self { model, params })
    }

    pub fn by_name(name: &str, params: PathLossParams) -> Result<Self, SpectrumError> {
        Self::new(ModelRegistry::default().get(name)?, params)
    }

    pub fn free_space() -> Self {
        Self { model: Arc::new(FreeSpace), params: PathLossParams::default() }
    }

    pub fn name(&self) -> &'static str {
        self.model.name()
    }

    pub fn loss(&self, d_km: f64, f_mhz: f64) -> Result<LossEstimate, SpectrumError> {
        self.model.path_loss(d_km, f_mhz, &self.params)
    }

    /// Loss with the transmitter and receiver heights overridden.
    pub fn loss_between(
        &self,
        d_km: f64,
        f_mhz: f64,
        tx_height_m: f64,
        rx_height_m: f64,
    ) -> Result<LossEstimate, SpectrumError> {
        let p = self.params.with_heights(tx_height_m, rx_height_m);
        self.model.path_loss(d_km, f_mhz, &p)
    }
}

impl Default for Propagation {
    fn default() -> Self {
        Self { model: Arc::new(RuralAuto), params: PathLossParams::default() }
    }
}
