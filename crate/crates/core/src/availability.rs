//! Channel availability under the co-channel protection rule.
//!
//! A channel is available at a point when no co-channel tower delivers more
//! than `protection_threshold_dbm` into a 0 dBi receiver there. Each channel
//! gets a cutoff radius, computed once from the strongest ERP and tallest
//! mast on that channel, beyond which no tower can reach the threshold; the
//! per-point search only looks inside it.
//!
//! The cutoff relies on the propagation model being non-decreasing in
//! distance and non-increasing in transmitter height, which holds for every
//! built-in model.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::json_digest;
use crate::spectrum::{
    received_power_dbm, BoundingBox, Channel, GeoPoint, Propagation, RegulatoryConfig, SpectrumError, EARTH_RADIUS_KM,
};
use crate::towers::{reach, Reach, TowerDataset, TowerRecord};

const CUTOFF_RESOLUTION_KM: f64 = 0.1;
const CUTOFF_MARGIN_KM: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AvailabilityError {
    #[error("location ({}, {}) is outside the regulatory boundary", .0.lat_deg(), .0.lon_deg())]
    OutsideBoundary(GeoPoint),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interferer {
    pub tower_id: String,
    pub channel_index: u8,
    pub received_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelVerdict {
    pub available: bool,
    /// Strongest offending tower; only set when the channel is unavailable.
    pub dominant_interferer: Option<Interferer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub channel_index: u8,
    pub low_mhz: f64,
    pub high_mhz: f64,
    pub available: bool,
    pub max_eirp_dbm: Option<f64>,
    pub dominant_interferer: Option<Interferer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityResult {
    pub location: GeoPoint,
    pub channels: Vec<ChannelEntry>,
}

impl AvailabilityResult {
    pub fn available_indices(&self) -> Vec<u8> {
        self.channels.iter().filter(|c| c.available).map(|c| c.channel_index).collect()
    }

    pub fn available_count(&self) -> usize {
        self.channels.iter().filter(|c| c.available).count()
    }
}

/// Availability queries over one immutable dataset and configuration.
#[derive(Debug, Clone)]
pub struct AvailabilityEngine {
    dataset: Arc<TowerDataset>,
    cfg: RegulatoryConfig,
    prop: Propagation,
    /// Indexed by `channel_index - 1`; infinite means search every tower.
    cutoffs_km: Vec<f64>,
}

impl AvailabilityEngine {
    pub fn new(
        dataset: Arc<TowerDataset>,
        cfg: RegulatoryConfig,
        prop: Propagation,
    ) -> Result<Self, AvailabilityError> {
        cfg.validate()?;
        prop.params.validate()?;
        let max_km = std::f64::consts::PI * EARTH_RADIUS_KM;
        let mut cutoffs_km = Vec::with_capacity(usize::from(cfg.channel_count));
        for channel in cfg.channels() {
            let mut strongest: Option<(f64, f64)> = None;
            for t in dataset.on_channel(channel.index) {
                let (erp, h) = strongest.unwrap_or((f64::NEG_INFINITY, 0.0));
                strongest = Some((erp.max(t.erp_dbm), h.max(t.antenna_height_m)));
            }
            let cutoff = match strongest {
                None => 0.0,
                Some((erp, height)) => {
                    let window = (prop.params.min_distance_km, max_km);
                    match reach(
                        &prop,
                        erp,
                        channel.center_mhz(),
                        height,
                        cfg.protection_threshold_dbm,
                        window,
                        CUTOFF_RESOLUTION_KM,
                    )? {
                        Reach::None => 0.0,
                        Reach::Bracket { hi, .. } => hi + CUTOFF_MARGIN_KM,
                        Reach::Beyond => f64::INFINITY,
                    }
                }
            };
            cutoffs_km.push(cutoff);
        }
        Ok(Self { dataset, cfg, prop, cutoffs_km })
    }

    pub fn config(&self) -> &RegulatoryConfig {
        &self.cfg
    }

    pub fn propagation(&self) -> &Propagation {
        &self.prop
    }

    pub fn dataset(&self) -> &TowerDataset {
        &self.dataset
    }

    pub fn cutoff_km(&self, channel_index: u8) -> Option<f64> {
        self.cutoffs_km.get(usize::from(channel_index).checked_sub(1)?).copied()
    }

    /// Level a tower delivers at `p` into a 0 dBi antenna.
    pub fn received_from(&self, tower: &TowerRecord, distance_km: f64) -> Result<f64, SpectrumError> {
        let f = self.cfg.channel(tower.channel_index)?.center_mhz();
        let loss =
            self.prop.loss_between(distance_km, f, tower.antenna_height_m, self.prop.params.rx_height_m)?.loss_db;
        Ok(received_power_dbm(tower.erp_dbm, 0.0, loss))
    }

    fn check_boundary(&self, p: GeoPoint) -> Result<(), AvailabilityError> {
        if self.cfg.contains(p) {
            Ok(())
        } else {
            Err(AvailabilityError::OutsideBoundary(p))
        }
    }

    /// Strongest tower on `source` channel that exceeds `threshold` at `p`.
    fn worst_offender(&self, source: u8, p: GeoPoint, threshold: f64) -> Result<Option<Interferer>, SpectrumError> {
        let (Some(cutoff), Ok(channel)) = (self.cutoff_km(source), self.cfg.channel(source)) else {
            return Ok(None);
        };
        let mut worst: Option<Interferer> = None;
        for (d, t) in self.dataset.towers_on_channel_within(channel, p, cutoff) {
            let level = self.received_from(t, d)?;
            if level <= threshold {
                continue;
            }
            let stronger = match &worst {
                None => true,
                Some(w) => level > w.received_dbm || (level == w.received_dbm && t.tower_id < w.tower_id),
            };
            if stronger {
                worst = Some(Interferer { tower_id: t.tower_id.clone(), channel_index: source, received_dbm: level });
            }
        }
        Ok(worst)
    }

    fn verdict(&self, channel: Channel, p: GeoPoint) -> Result<ChannelVerdict, AvailabilityError> {
        let threshold = self.cfg.protection_threshold_dbm;
        let mut dominant = self.worst_offender(channel.index, p, threshold)?;
        if dominant.is_none() {
            if let Some(rejection) = self.cfg.adjacent_channel_rejection_db {
                for adj in [channel.index.wrapping_sub(1), channel.index + 1] {
                    if let Some(hit) = self.worst_offender(adj, p, threshold + rejection)? {
                        if dominant.as_ref().is_none_or(|d| hit.received_dbm > d.received_dbm) {
                            dominant = Some(hit);
                        }
                    }
                }
            }
        }
        Ok(ChannelVerdict { available: dominant.is_none(), dominant_interferer: dominant })
    }

    /// Availability of one channel at `p`.
    pub fn channel_available(&self, channel: Channel, p: GeoPoint) -> Result<ChannelVerdict, AvailabilityError> {
        self.check_boundary(p)?;
        self.verdict(channel, p)
    }

    /// Every channel of the plan at `p`, with the flat regulatory power cap on
    /// the available ones.
    pub fn available_channels(&self, p: GeoPoint) -> Result<AvailabilityResult, AvailabilityError> {
        self.check_boundary(p)?;
        let channels = self
            .cfg
            .channels()
            .map(|c| {
                let v = self.verdict(c, p)?;
                Ok(ChannelEntry {
                    channel_index: c.index,
                    low_mhz: c.low_mhz,
                    high_mhz: c.high_mhz,
                    available: v.available,
                    max_eirp_dbm: v.available.then_some(self.cfg.max_secondary_eirp_dbm),
                    dominant_interferer: v.dominant_interferer,
                })
            })
            .collect::<Result<Vec<_>, AvailabilityError>>()?;
        Ok(AvailabilityResult { location: p, channels })
    }
}

/// A regular lat/lon sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    pub resolution_deg: f64,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, resolution_deg: f64) -> Result<Self, AvailabilityError> {
        if !resolution_deg.is_finite() || resolution_deg <= 0.0 {
            return Err(AvailabilityError::InvalidGrid(format!("resolution {resolution_deg}")));
        }
        Ok(Self { bbox, resolution_deg })
    }

    /// Grid with `steps` points along the longer axis, both edges included.
    pub fn with_steps(bbox: BoundingBox, steps: usize) -> Result<Self, AvailabilityError> {
        if steps < 2 {
            return Err(AvailabilityError::InvalidGrid("need at least two steps".into()));
        }
        let span = (bbox.max_lat - bbox.min_lat).max(bbox.max_lon - bbox.min_lon);
        Self::new(bbox, span / (steps - 1) as f64)
    }

    fn axis(lo: f64, hi: f64, res: f64) -> Vec<f64> {
        let n = ((hi - lo) / res + 1e-9).floor() as usize + 1;
        (0..n).map(|i| (lo + i as f64 * res).min(hi)).collect()
    }

    pub fn latitudes(&self) -> Vec<f64> {
        Self::axis(self.bbox.min_lat, self.bbox.max_lat, self.resolution_deg)
    }

    pub fn longitudes(&self) -> Vec<f64> {
        Self::axis(self.bbox.min_lon, self.bbox.max_lon, self.resolution_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
    /// `None` for points outside the regulatory boundary.
    pub available_count: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub points_total: usize,
    pub points_in_boundary: usize,
    pub min_count: u8,
    pub max_count: u8,
    pub mean_count: f64,
    /// `fraction_at_least[k]` is the share of in-boundary points with at
    /// least `k` available channels.
    pub fraction_at_least: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub spec: GridSpec,
    pub channel_count: u8,
    pub points: Vec<GridPoint>,
    pub summary: GridSummary,
}

/// JSON summary document for a grid sweep.
#[derive(Debug, Clone, Serialize)]
pub struct GridReport<'a> {
    pub bbox: BoundingBox,
    pub resolution_deg: f64,
    pub channel_count: u8,
    pub summary: &'a GridSummary,
    pub digest: String,
}

impl GridStats {
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn report(&self) -> GridReport<'_> {
        GridReport {
            bbox: self.spec.bbox,
            resolution_deg: self.spec.resolution_deg,
            channel_count: self.channel_count,
            summary: &self.summary,
            digest: self.digest(),
        }
    }

    /// One row per grid point; empty count for out-of-boundary points.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lat_deg", "lon_deg", "in_boundary", "available_count"])?;
        for p in &self.points {
            w.write_record([
                p.lat_deg.to_string(),
                p.lon_deg.to_string(),
                p.available_count.is_some().to_string(),
                p.available_count.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Row-major sweep (latitude outer, longitude inner). Rows are evaluated in
/// parallel and merged in order.
pub fn availability_grid(engine: &AvailabilityEngine, spec: GridSpec) -> Result<GridStats, AvailabilityError> {
    let lons = spec.longitudes();
    let rows: Vec<Vec<GridPoint>> = spec
        .latitudes()
        .into_par_iter()
        .map(|lat| {
            lons.iter()
                .map(|&lon| {
                    let p = GeoPoint::new(lat, lon)?;
                    let available_count = if engine.cfg.contains(p) {
                        Some(engine.available_channels(p)?.available_count() as u8)
                    } else {
                        None
                    };
                    Ok(GridPoint { lat_deg: lat, lon_deg: lon, available_count })
                })
                .collect::<Result<Vec<_>, AvailabilityError>>()
        })
        .collect::<Result<_, _>>()?;
    let points: Vec<GridPoint> = rows.into_iter().flatten().collect();
    let counts: Vec<u8> = points.iter().filter_map(|p| p.available_count).collect();
    if counts.is_empty() {
        return Err(AvailabilityError::InvalidGrid("no grid point falls inside the boundary".into()));
    }
    let n = counts.len() as f64;
    let channel_count = engine.cfg.channel_count;
    let fraction_at_least =
        (0..=channel_count).map(|k| counts.iter().filter(|&&c| c >= k).count() as f64 / n).collect();
    let summary = GridSummary {
        points_total: points.len(),
        points_in_boundary: counts.len(),
        min_count: *counts.iter().min().expect("non-empty"),
        max_count: *counts.iter().max().expect("non-empty"),
        mean_count: counts.iter().map(|&c| f64::from(c)).sum::<f64>() / n,
        fraction_at_least,
    };
    Ok(GridStats { spec, channel_count, points, summary })
}
