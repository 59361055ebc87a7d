//! Primary TV transmitter registry.
//!
//! Towers are loaded from CSV with the header
//!
//! ```text
//! tower_id,lat_deg,lon_deg,channel_index,erp_dbm,antenna_height_m
//! ```
//!
//! Rows that fail validation are collected into a rejects report keyed by
//! file line number; a duplicate `tower_id` aborts the load. The loaded
//! dataset is immutable and carries a per-channel grid index of 0.5 degree
//! cells used for radius queries.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::json_digest;
use crate::spectrum::{
    haversine_km, received_power_dbm, Channel, GeoPoint, Propagation, SpectrumError, EARTH_RADIUS_KM, UHF_CHANNEL_COUNT,
};

pub const CSV_HEADER: [&str; 6] = ["tower_id", "lat_deg", "lon_deg", "channel_index", "erp_dbm", "antenna_height_m"];

/// Reception level used for coverage reports when none is given.
pub const DEFAULT_COVERAGE_THRESHOLD_DBM: f64 = -84.0;

const CELL_DEG: f64 = 0.5;
const LAT_CELLS: i32 = 360;
const LON_CELLS: i32 = 720;
const KM_PER_DEG: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

#[derive(Debug, thiserror::Error)]
pub enum TowerError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed header: expected `{}`, found `{found}`", CSV_HEADER.join(","))]
    MalformedHeader { found: String },
    #[error("duplicate tower_id `{tower_id}` on line {line} (first seen on line {first_line})")]
    DuplicateTowerId { tower_id: String, line: u64, first_line: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Invalid(#[from] SpectrumError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerRecord {
    pub tower_id: String,
    pub location: GeoPoint,
    pub channel_index: u8,
    pub erp_dbm: f64,
    pub antenna_height_m: f64,
}

impl TowerRecord {
    pub fn new(
        tower_id: impl Into<String>,
        location: GeoPoint,
        channel_index: u8,
        erp_dbm: f64,
        antenna_height_m: f64,
    ) -> Result<Self, SpectrumError> {
        let tower_id = tower_id.into();
        if tower_id.trim().is_empty() {
            return Err(SpectrumError::InvalidParameter("empty tower_id".into()));
        }
        if channel_index == 0 || channel_index > UHF_CHANNEL_COUNT {
            return Err(SpectrumError::InvalidChannel(channel_index));
        }
        if !erp_dbm.is_finite() {
            return Err(SpectrumError::InvalidParameter(format!("erp_dbm {erp_dbm}")));
        }
        if !antenna_height_m.is_finite() || antenna_height_m <= 0.0 {
            return Err(SpectrumError::InvalidParameter(format!("antenna_height_m {antenna_height_m}")));
        }
        Ok(Self { tower_id, location, channel_index, erp_dbm, antenna_height_m })
    }

    pub fn channel(&self) -> Channel {
        Channel::new(self.channel_index).expect("validated on construction")
    }
}

/// One rejected CSV row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

/// Renders rejects as `line N: reason`, one per line.
pub fn rejects_report(rejects: &[Reject]) -> String {
    let mut out = String::new();
    for r in rejects {
        let _ = writeln!(out, "line {}: {}", r.line, r.reason);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: TowerDataset,
    pub rejects: Vec<Reject>,
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Ingested, TowerError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TowerError::Io { path: path.to_path_buf(), source })?;
    ingest_reader(file)
}

pub fn ingest_reader<R: Read>(reader: R) -> Result<Ingested, TowerError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(TowerError::MalformedHeader { found: headers.iter().collect::<Vec<_>>().join(",") });
    }

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejects.push(Reject { line, reason: e.to_string() });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row) {
            Ok(rec) => {
                if let Some(&first_line) = seen.get(&rec.tower_id) {
                    return Err(TowerError::DuplicateTowerId { tower_id: rec.tower_id, line, first_line });
                }
                seen.insert(rec.tower_id.clone(), line);
                records.push(rec);
            }
            Err(reason) => rejects.push(Reject { line, reason }),
        }
    }
    Ok(Ingested { dataset: TowerDataset::new(records)?, rejects })
}

fn parse_row(row: &csv::StringRecord) -> Result<TowerRecord, String> {
    if row.len() != CSV_HEADER.len() {
        return Err(format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()));
    }
    fn num<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<T, String> {
        row[i].parse().map_err(|_| format!("{}: cannot parse `{}`", CSV_HEADER[i], &row[i]))
    }
    let lat: f64 = num(row, 1)?;
    let lon: f64 = num(row, 2)?;
    let channel: i64 = num(row, 3)?;
    let erp: f64 = num(row, 4)?;
    let height: f64 = num(row, 5)?;
    if !(1..=i64::from(UHF_CHANNEL_COUNT)).contains(&channel) {
        return Err(format!("channel_index {channel} out of range [1, {UHF_CHANNEL_COUNT}]"));
    }
    let location = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    TowerRecord::new(&row[0], location, channel as u8, erp, height).map_err(|e| e.to_string())
}

/// Validated, immutable tower set with a per-channel cell index.
#[derive(Debug, Clone)]
pub struct TowerDataset {
    records: Vec<TowerRecord>,
    index: BTreeMap<u8, BTreeMap<(i32, i32), Vec<usize>>>,
}

fn cell_of(p: GeoPoint) -> (i32, i32) {
    let row = (((p.lat_deg() + 90.0) / CELL_DEG).floor() as i32).min(LAT_CELLS - 1);
    let col = (((p.lon_deg() + 180.0) / CELL_DEG).floor() as i32).rem_euclid(LON_CELLS);
    (row, col)
}

/// Cell window guaranteed to contain every point within `radius_km` of
/// `center`, widened by one neighbour cell on each side.
struct CellWindow {
    rows: (i32, i32),
    /// `None` when every longitude column is in range.
    cols: Option<(i32, i32)>,
}

impl CellWindow {
    fn around(center: GeoPoint, radius_km: f64) -> Self {
        let delta = radius_km / EARTH_RADIUS_KM;
        let lat_span = radius_km / KM_PER_DEG;
        let lat_lo = center.lat_deg() - lat_span;
        let lat_hi = center.lat_deg() + lat_span;
        let row = |lat: f64| ((lat + 90.0) / CELL_DEG).floor() as i32;
        let rows = ((row(lat_lo) - 1).max(0), (row(lat_hi) + 1).min(LAT_CELLS - 1));

        let cos_lat = center.lat_deg().to_radians().cos();
        let wraps = lat_lo <= -90.0 || lat_hi >= 90.0 || delta >= std::f64::consts::FRAC_PI_2;
        let cols = if wraps || delta.sin() >= cos_lat {
            None
        } else {
            let dlon = (delta.sin() / cos_lat).asin().to_degrees();
            let col = |lon: f64| ((lon + 180.0) / CELL_DEG).floor() as i32;
            let lo = col(center.lon_deg() - dlon) - 1;
            let hi = col(center.lon_deg() + dlon) + 1;
            if hi - lo + 1 >= LON_CELLS {
                None
            } else {
                Some((lo, hi))
            }
        };
        Self { rows, cols }
    }

    fn cell_count(&self) -> i64 {
        let rows = i64::from(self.rows.1 - self.rows.0 + 1);
        let cols = self.cols.map_or(i64::from(LON_CELLS), |(lo, hi)| i64::from(hi - lo + 1));
        rows * cols
    }

    fn contains(&self, (row, col): (i32, i32)) -> bool {
        if row < self.rows.0 || row > self.rows.1 {
            return false;
        }
        match self.cols {
            None => true,
            Some((lo, hi)) => (col - lo).rem_euclid(LON_CELLS) <= hi - lo,
        }
    }

    fn keys(&self) -> Vec<(i32, i32)> {
        let mut keys = Vec::new();
        for row in self.rows.0..=self.rows.1 {
            match self.cols {
                None => keys.extend((0..LON_CELLS).map(|c| (row, c))),
                Some((lo, hi)) => keys.extend((lo..=hi).map(|c| (row, c.rem_euclid(LON_CELLS)))),
            }
        }
        keys
    }
}

impl TowerDataset {
    /// Builds the index. Fails on a repeated `tower_id`.
    pub fn new(records: Vec<TowerRecord>) -> Result<Self, TowerError> {
        let mut seen: HashMap<&str, u64> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(&first) = seen.get(r.tower_id.as_str()) {
                return Err(TowerError::DuplicateTowerId {
                    tower_id: r.tower_id.clone(),
                    line: i as u64 + 1,
                    first_line: first,
                });
            }
            seen.insert(&r.tower_id, i as u64 + 1);
        }
        let mut index: BTreeMap<u8, BTreeMap<(i32, i32), Vec<usize>>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            index.entry(r.channel_index).or_default().entry(cell_of(r.location)).or_default().push(i);
        }
        Ok(Self { records, index })
    }

    pub fn empty() -> Self {
        Self { records: Vec::new(), index: BTreeMap::new() }
    }

    pub fn records(&self) -> &[TowerRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, tower_id: &str) -> Option<&TowerRecord> {
        self.records.iter().find(|r| r.tower_id == tower_id)
    }

    /// Stable content hash over the records in load order.
    pub fn digest(&self) -> String {
        json_digest(&self.records)
    }

    pub fn on_channel(&self, channel_index: u8) -> impl Iterator<Item = &TowerRecord> + '_ {
        self.index
            .get(&channel_index)
            .into_iter()
            .flat_map(|cells| cells.values().flatten())
            .map(move |&i| &self.records[i])
    }

    fn candidates(&self, channel_index: u8, center: GeoPoint, radius_km: f64) -> Vec<&TowerRecord> {
        let Some(cells) = self.index.get(&channel_index) else {
            return Vec::new();
        };
        if !radius_km.is_finite() {
            return cells.values().flatten().map(|&i| &self.records[i]).collect();
        }
        let window = CellWindow::around(center, radius_km);
        let idx: Vec<usize> = if window.cell_count() > cells.len() as i64 {
            cells.iter().filter(|(k, _)| window.contains(**k)).flat_map(|(_, v)| v.iter().copied()).collect()
        } else {
            window.keys().iter().filter_map(|k| cells.get(k)).flatten().copied().collect()
        };
        idx.into_iter().map(|i| &self.records[i]).collect()
    }

    /// Co-channel towers within `radius_km` of `center`, nearest first,
    /// ties broken by `tower_id`. An infinite radius returns every
    /// co-channel tower.
    pub fn towers_on_channel_within(
        &self,
        channel: Channel,
        center: GeoPoint,
        radius_km: f64,
    ) -> Vec<(f64, &TowerRecord)> {
        if radius_km.is_nan() || radius_km < 0.0 {
            return Vec::new();
        }
        let mut hits: Vec<(f64, &TowerRecord)> = self
            .candidates(channel.index, center, radius_km)
            .into_iter()
            .map(|t| (haversine_km(center, t.location), t))
            .filter(|(d, _)| *d <= radius_km)
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.tower_id.cmp(&b.1.tower_id)));
        hits
    }
}

/// Outcome of searching for the distance where a signal drops below a level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Reach {
    /// Already below the level at the start of the window.
    None,
    /// Crossing bracketed: at `lo` still at or above the level, at `hi` below.
    Bracket { lo: f64, hi: f64 },
    /// Still at or above the level at the end of the window.
    Beyond,
}

/// Bisection on the received level of a transmitter of `erp_dbm` at
/// `f_mhz` with antenna height `tx_height_m`, into a 0 dBi receiver.
pub(crate) fn reach(
    prop: &Propagation,
    erp_dbm: f64,
    f_mhz: f64,
    tx_height_m: f64,
    threshold_dbm: f64,
    window_km: (f64, f64),
    resolution_km: f64,
) -> Result<Reach, SpectrumError> {
    let level = |d: f64| -> Result<f64, SpectrumError> {
        let loss = prop.loss_between(d, f_mhz, tx_height_m, prop.params.rx_height_m)?.loss_db;
        Ok(received_power_dbm(erp_dbm, 0.0, loss))
    };
    let (mut lo, mut hi) = window_km;
    if level(lo)? < threshold_dbm {
        return Ok(Reach::None);
    }
    if level(hi)? >= threshold_dbm {
        return Ok(Reach::Beyond);
    }
    while hi - lo > resolution_km {
        let mid = 0.5 * (lo + hi);
        if level(mid)? >= threshold_dbm {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Reach::Bracket { lo, hi })
}

pub const COVERAGE_SEARCH_MAX_KM: f64 = 200.0;
pub const COVERAGE_RESOLUTION_KM: f64 = 0.01;

/// Largest distance, to 10 m, at which the tower still delivers
/// `rx_threshold_dbm` into a 0 dBi antenna, searched up to 200 km.
pub fn coverage_radius_km(
    tower: &TowerRecord,
    rx_threshold_dbm: f64,
    prop: &Propagation,
) -> Result<f64, SpectrumError> {
    coverage_radius_at_km(tower.erp_dbm, tower.channel().center_mhz(), tower.antenna_height_m, rx_threshold_dbm, prop)
}

/// [`coverage_radius_km`] for an explicit transmitter.
pub fn coverage_radius_at_km(
    erp_dbm: f64,
    f_mhz: f64,
    tx_height_m: f64,
    rx_threshold_dbm: f64,
    prop: &Propagation,
) -> Result<f64, SpectrumError> {
    if !rx_threshold_dbm.is_finite() {
        return Err(SpectrumError::InvalidParameter("threshold must be finite".into()));
    }
    let window = (prop.params.min_distance_km, COVERAGE_SEARCH_MAX_KM);
    Ok(match reach(prop, erp_dbm, f_mhz, tx_height_m, rx_threshold_dbm, window, COVERAGE_RESOLUTION_KM)? {
        Reach::None => 0.0,
        Reach::Bracket { lo, .. } => lo,
        Reach::Beyond => COVERAGE_SEARCH_MAX_KM,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "tower_id,lat_deg,lon_deg,channel_index,erp_dbm,antenna_height_m\n";

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn tower(id: &str, lat: f64, lon: f64, ch: u8) -> TowerRecord {
        TowerRecord::new(id, pt(lat, lon), ch, 50.0, 100.0).unwrap()
    }

    fn brute_force(ds: &TowerDataset, ch: u8, c: GeoPoint, r: f64) -> Vec<&str> {
        let mut v: Vec<(f64, &str)> = ds
            .records()
            .iter()
            .filter(|t| t.channel_index == ch)
            .map(|t| (haversine_km(c, t.location), t.tower_id.as_str()))
            .filter(|(d, _)| *d <= r)
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        v.into_iter().map(|(_, id)| id).collect()
    }

    fn ids<'a>(hits: &[(f64, &'a TowerRecord)]) -> Vec<&'a str> {
        hits.iter().map(|(_, t)| t.tower_id.as_str()).collect()
    }

    #[test]
    fn header_only_file_is_empty_dataset() {
        let ing = ingest_reader(HEADER.as_bytes()).unwrap();
        assert!(ing.dataset.is_empty());
        assert!(ing.rejects.is_empty());
    }

    #[test]
    fn three_rows_load_and_index_matches_scan() {
        let csv = format!("{HEADER}a,19.0,73.0,4,60,150\nb,19.2,73.1,4,55,100\nc,19.1,72.9,9,50,80\n");
        let ds = ingest_reader(csv.as_bytes()).unwrap().dataset;
        assert_eq!(ds.len(), 3);
        let c = pt(19.1, 73.0);
        let ch = Channel::new(4).unwrap();
        for r in [0.0, 5.0, 20.0, 500.0] {
            assert_eq!(ids(&ds.towers_on_channel_within(ch, c, r)), brute_force(&ds, 4, c, r));
        }
    }

    #[test]
    fn bad_channel_row_is_rejected_with_line_number() {
        let csv = format!("{HEADER}a,19.0,73.0,4,60,150\nb,19.2,73.1,16,55,100\nc,19.1,72.9,9,50,80\n");
        let ing = ingest_reader(csv.as_bytes()).unwrap();
        assert_eq!(ing.dataset.len(), 2);
        assert_eq!(ing.rejects.len(), 1);
        assert_eq!(ing.rejects[0].line, 3);
        assert!(ing.rejects[0].reason.contains("channel_index 16"));
        assert!(rejects_report(&ing.rejects).starts_with("line 3: "));
    }

    #[test]
    fn assorted_bad_rows() {
        let csv = format!(
            "{HEADER}a,95.0,73.0,4,60,150\nb,19.2,73.1,4,x,100\nc,19.1,72.9,9,50,-1\nd,19,73\n,19,73,4,50,10\n"
        );
        let ing = ingest_reader(csv.as_bytes()).unwrap();
        assert!(ing.dataset.is_empty());
        assert_eq!(ing.rejects.iter().map(|r| r.line).collect::<Vec<_>>(), vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn duplicate_id_is_hard_error() {
        let csv = format!("{HEADER}a,19.0,73.0,4,60,150\na,19.2,73.1,5,55,100\n");
        assert!(matches!(
            ingest_reader(csv.as_bytes()),
            Err(TowerError::DuplicateTowerId { line: 3, first_line: 2, .. })
        ));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let csv = "id,lat,lon,ch,erp,h\n";
        assert!(matches!(ingest_reader(csv.as_bytes()), Err(TowerError::MalformedHeader { .. })));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(ingest_csv("/nonexistent/towers.csv"), Err(TowerError::Io { .. })));
    }

    #[test]
    fn zero_radius_and_other_channels_are_empty() {
        let ds = TowerDataset::new(vec![tower("a", 19.0, 73.0, 4)]).unwrap();
        assert!(ds.towers_on_channel_within(Channel::new(4).unwrap(), pt(19.5, 73.0), 0.0).is_empty());
        assert!(ds.towers_on_channel_within(Channel::new(5).unwrap(), pt(19.0, 73.0), 1000.0).is_empty());
        // a tower exactly at the center is within radius 0
        assert_eq!(ds.towers_on_channel_within(Channel::new(4).unwrap(), pt(19.0, 73.0), 0.0).len(), 1);
    }

    #[test]
    fn five_tower_fixture_matches_scan() {
        let ds = TowerDataset::new(vec![
            tower("t1", 19.70, 72.80, 3),
            tower("t2", 19.75, 72.75, 3),
            tower("t3", 20.40, 73.50, 3),
            tower("t4", 19.60, 72.90, 7),
            tower("t5", 18.90, 72.70, 3),
        ])
        .unwrap();
        let c = pt(19.69, 72.77);
        let ch = Channel::new(3).unwrap();
        for r in [1.0, 10.0, 50.0, 100.0, 150.0] {
            assert_eq!(ids(&ds.towers_on_channel_within(ch, c, r)), brute_force(&ds, 3, c, r), "r={r}");
        }
        assert_eq!(ids(&ds.towers_on_channel_within(ch, c, 10.0)), vec!["t1", "t2"]);
    }

    #[test]
    fn wraps_across_antimeridian() {
        let ds = TowerDataset::new(vec![tower("east", 0.0, 179.9, 1), tower("west", 0.0, -179.9, 1)]).unwrap();
        let hits = ds.towers_on_channel_within(Channel::new(1).unwrap(), pt(0.0, 179.95), 30.0);
        assert_eq!(ids(&hits), vec!["east", "west"]);
    }

    #[test]
    fn coverage_unreachable_threshold_is_zero() {
        let t = tower("a", 19.0, 73.0, 4);
        let r = coverage_radius_km(&t, 60.0, &Propagation::free_space()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn coverage_inverts_fspl() {
        // 50 dBm, free space, 500 MHz, -56.42 dBm -> 10 km
        let r = coverage_radius_at_km(50.0, 500.0, 30.0, -56.42, &Propagation::free_space()).unwrap();
        assert!((r - 10.0).abs() < 0.02, "{r}");
    }

    #[test]
    fn coverage_grows_with_erp() {
        let prop = Propagation::default();
        let mut prev = 0.0;
        for erp in [20.0, 30.0, 40.0, 50.0, 60.0] {
            let t = TowerRecord::new("a", pt(19.0, 73.0), 4, erp, 100.0).unwrap();
            let r = coverage_radius_km(&t, DEFAULT_COVERAGE_THRESHOLD_DBM, &prop).unwrap();
            assert!(r >= prev);
            prev = r;
        }
        assert!(prev > 0.0);
    }
}
