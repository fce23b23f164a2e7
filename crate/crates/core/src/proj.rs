//! Lambert azimuthal equal-area projection on the sphere.
//!
//! Downstream crosswalks weight by intersection *areas*, so the projection
//! must be area-true at study scale; the azimuthal equal-area form centered
//! on the data centroid keeps shape distortion negligible for extents up to
//! ~1000 km while preserving areas exactly (up to float rounding).

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters (spherical model).
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Equal-area projection centered on (`lon0`, `lat0`), both in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub lon0_deg: f64,
    pub lat0_deg: f64,
}

impl Projection {
    pub fn new(lon0_deg: f64, lat0_deg: f64) -> Self {
        Projection { lon0_deg, lat0_deg }
    }

    /// Degrees lon/lat to planar meters; the origin maps to (0, 0).
    pub fn forward(&self, lon_deg: f64, lat_deg: f64) -> (f64, f64) {
        let lam0 = self.lon0_deg.to_radians();
        let phi0 = self.lat0_deg.to_radians();
        let lam = lon_deg.to_radians();
        let phi = lat_deg.to_radians();
        let dl = lam - lam0;

        let denom = 1.0 + phi0.sin() * phi.sin() + phi0.cos() * phi.cos() * dl.cos();
        // Antipode of the origin; unreachable at study scale.
        let kp = (2.0 / denom.max(1e-12)).sqrt();
        let x = EARTH_RADIUS_M * kp * phi.cos() * dl.sin();
        let y = EARTH_RADIUS_M * kp * (phi0.cos() * phi.sin() - phi0.sin() * phi.cos() * dl.cos());
        (x, y)
    }

    /// Planar meters back to degrees lon/lat.
    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let lam0 = self.lon0_deg.to_radians();
        let phi0 = self.lat0_deg.to_radians();
        let rho = x.hypot(y);
        if rho < 1e-12 {
            return (self.lon0_deg, self.lat0_deg);
        }
        let c = 2.0 * ((rho / (2.0 * EARTH_RADIUS_M)).clamp(-1.0, 1.0)).asin();
        let phi = (c.cos() * phi0.sin() + y * c.sin() * phi0.cos() / rho)
            .clamp(-1.0, 1.0)
            .asin();
        let lam = lam0 + (x * c.sin()).atan2(rho * phi0.cos() * c.cos() - y * phi0.sin() * c.sin());
        (lam.to_degrees(), phi.to_degrees())
    }
}

/// Great-circle distance in meters between two lon/lat points (haversine).
pub fn haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (l1, p1) = (lon1.to_radians(), lat1.to_radians());
    let (l2, p2) = (lon2.to_radians(), lat2.to_radians());
    let a = ((p2 - p1) / 2.0).sin().powi(2) + p1.cos() * p2.cos() * ((l2 - l1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().asin()
}
