use serde::{Deserialize, Serialize};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Geographic position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    /// Snapped to the 1e-7 degree grid carried in radio frames.
    pub fn quantized_e7(&self) -> Self {
        Self {
            lat: (self.lat * 1e7).round() / 1e7,
            lon: (self.lon * 1e7).round() / 1e7,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Great-circle distance in meters (haversine).
    pub fn distance_m(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lon - self.lon).to_radians();
        let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
    }

    /// Point `distance_m` due north along the meridian.
    pub fn offset_north(&self, distance_m: f64) -> GeoPoint {
        GeoPoint::new(
            self.lat + (distance_m / EARTH_RADIUS_M).to_degrees(),
            self.lon,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_degree_of_latitude() {
        let a = GeoPoint::new(0.0, 0.0);
        let b = GeoPoint::new(1.0, 0.0);
        let expected = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        assert!((a.distance_m(&b) - expected).abs() < 1e-6);
    }

    #[test]
    fn offset_north_round_trips_through_haversine() {
        let gw = GeoPoint::new(20.0, 110.0);
        for d in [1.0, 60.0, 2447.0, 10_000.0] {
            let p = gw.offset_north(d);
            assert!((gw.distance_m(&p) - d).abs() < 1e-6, "{d}");
        }
    }

    #[test]
    fn symmetric() {
        let a = GeoPoint::new(20.01, 110.2);
        let b = GeoPoint::new(19.98, 110.25);
        assert_eq!(a.distance_m(&b), b.distance_m(&a));
    }
}
