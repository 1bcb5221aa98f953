/// Mean Earth radius in km.
const EARTH_RADIUS_KM: f64 = 6371.0;

/// Equirectangular projection about a reference point, in kilometres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
    cos_lat0: f64,
}

impl Projection {
    pub fn new(lon0: f64, lat0: f64) -> Self {
        Projection { lon0, lat0, cos_lat0: lat0.to_radians().cos() }
    }

    pub fn forward(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            EARTH_RADIUS_KM * self.cos_lat0 * (lon - self.lon0).to_radians(),
            EARTH_RADIUS_KM * (lat - self.lat0).to_radians(),
        )
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.lon0 + (x / (EARTH_RADIUS_KM * self.cos_lat0)).to_degrees(),
            self.lat0 + (y / EARTH_RADIUS_KM).to_degrees(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = Projection::new(-74.0, 42.0);
        let (x, y) = p.forward(-73.5, 41.2);
        let (lon, lat) = p.inverse(x, y);
        assert!((lon + 73.5).abs() < 1e-12 && (lat - 41.2).abs() < 1e-12);
        // one degree of latitude is about 111 km
        assert!((p.forward(-74.0, 43.0).1 - 111.19).abs() < 0.01);
    }
}
