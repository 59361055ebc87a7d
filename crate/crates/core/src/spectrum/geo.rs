use serde::{Deserialize, Serialize};

use super::SpectrumError;

/// Mean Earth radius used by every distance computation in the crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A validated WGS-84 style coordinate in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    lat_deg: f64,
    lon_deg: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = SpectrumError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat_deg, raw.lon_deg)
    }
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, SpectrumError> {
        if !lat_deg.is_finite() || !(-90.0..=90.0).contains(&lat_deg) {
            return Err(SpectrumError::InvalidCoordinate(format!("latitude {lat_deg}")));
        }
        if !lon_deg.is_finite() || !(-180.0..=180.0).contains(&lon_deg) {
            return Err(SpectrumError::InvalidCoordinate(format!("longitude {lon_deg}")));
        }
        Ok(Self { lat_deg, lon_deg })
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon_deg
    }

    /// Point reached by travelling `distance_km` along the great circle with
    /// initial `bearing_deg` (clockwise from north).
    pub fn destination(&self, bearing_deg: f64, distance_km: f64) -> GeoPoint {
        let delta = distance_km / EARTH_RADIUS_KM;
        let theta = bearing_deg.to_radians();
        let phi1 = self.lat_deg.to_radians();
        let lambda1 = self.lon_deg.to_radians();
        let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
        let lambda2 = lambda1 + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
        let lon = (lambda2.to_degrees() + 540.0) % 360.0 - 180.0;
        GeoPoint { lat_deg: phi2.to_degrees().clamp(-90.0, 90.0), lon_deg: lon }
    }
}

/// Great-circle distance on a spherical Earth.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat_deg.to_radians();
    let phi2 = b.lat_deg.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon_deg - a.lon_deg).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Axis-aligned latitude/longitude box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, SpectrumError> {
        GeoPoint::new(min_lat, min_lon)?;
        GeoPoint::new(max_lat, max_lon)?;
        if min_lat >= max_lat || min_lon >= max_lon {
            return Err(SpectrumError::DegenerateBoundingBox);
        }
        Ok(Self { min_lat, min_lon, max_lat, max_lon })
    }
}

/// Simple polygon in (lon, lat) degree space describing a regulatory domain.
///
/// The ring is stored open (the closing vertex is implied). Construction
/// rejects rings with fewer than three vertices, zero area, or crossing edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeoPoint>", into = "Vec<GeoPoint>")]
pub struct Boundary {
    vertices: Vec<GeoPoint>,
}

impl From<Boundary> for Vec<GeoPoint> {
    fn from(b: Boundary) -> Self {
        let mut ring = b.vertices;
        if let Some(first) = ring.first().copied() {
            ring.push(first);
        }
        ring
    }
}

impl TryFrom<Vec<GeoPoint>> for Boundary {
    type Error = SpectrumError;

    fn try_from(v: Vec<GeoPoint>) -> Result<Self, Self::Error> {
        Boundary::new(v)
    }
}

impl Boundary {
    pub fn new(mut vertices: Vec<GeoPoint>) -> Result<Self, SpectrumError> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(SpectrumError::InvalidBoundary("fewer than three vertices".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(SpectrumError::InvalidBoundary(format!("repeated vertex at {i}")));
            }
        }
        let b = Self { vertices };
        if b.signed_area().abs() < 1e-12 {
            return Err(SpectrumError::InvalidBoundary("zero area".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_cross(b.edge(i), b.edge(j)) {
                    return Err(SpectrumError::InvalidBoundary(format!("edges {i} and {j} intersect")));
                }
            }
        }
        Ok(b)
    }

    /// Axis-aligned box around the whole polygon.
    pub fn rectangle(bbox: BoundingBox) -> Result<Self, SpectrumError> {
        Boundary::new(vec![
            GeoPoint::new(bbox.min_lat, bbox.min_lon)?,
            GeoPoint::new(bbox.min_lat, bbox.max_lon)?,
            GeoPoint::new(bbox.max_lat, bbox.max_lon)?,
            GeoPoint::new(bbox.max_lat, bbox.min_lon)?,
        ])
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    fn edge(&self, i: usize) -> ((f64, f64), (f64, f64)) {
        let a = self.vertices[i];
        let b = self.vertices[(i + 1) % self.vertices.len()];
        ((a.lon_deg, a.lat_deg), (b.lon_deg, b.lat_deg))
    }

    fn signed_area(&self) -> f64 {
        (0..self.vertices.len())
            .map(|i| {
                let ((x1, y1), (x2, y2)) = self.edge(i);
                x1 * y2 - x2 * y1
            })
            .sum::<f64>()
            / 2.0
    }

    /// Even-odd ray casting test.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let (px, py) = (p.lon_deg, p.lat_deg);
        let mut inside = false;
        for i in 0..self.vertices.len() {
            let ((x1, y1), (x2, y2)) = self.edge(i);
            if (y1 > py) != (y2 > py) {
                let x_cross = x1 + (py - y1) / (y2 - y1) * (x2 - x1);
                if px < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

type Segment = ((f64, f64), (f64, f64));

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_cross((p1, p2): Segment, (q1, q2): Segment) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}
