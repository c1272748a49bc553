//! Geographic ↔ local Cartesian coordinate conversion.
//!
//! Recorded GPS positions (WGS84 latitude/longitude) are mapped into the
//! scene's local frame with an azimuthal equidistant projection on a spherical
//! earth, centered on a tangent point declared by the scene file. Distance and
//! azimuth from the center are preserved exactly; for the sub-2 km baselines
//! this tool works at, the spherical-earth error is far below GPS uncertainty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius for the spherical model, meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Projection validity radius; beyond this the local frame is refused.
pub const MAX_PROJECTION_RADIUS_M: f64 = 100_000.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("latitude {0} deg outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} deg outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("antenna height {0} m must be > 0")]
    NonPositiveHeight(f64),
    #[error("point is {0:.0} m from projection center, beyond the {MAX_PROJECTION_RADIUS_M:.0} m validity radius")]
    BeyondValidityRadius(f64),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Raw geographic position as logged during a measurement campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPosition {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    /// Antenna height above local terrain, meters.
    pub antenna_height_m: f64,
}

impl GeoPosition {
    pub fn new(latitude_deg: f64, longitude_deg: f64, antenna_height_m: f64) -> Result<Self, GeoError> {
        check_lat_lon(latitude_deg, longitude_deg)?;
        if !antenna_height_m.is_finite() {
            return Err(GeoError::NonFinite);
        }
        if antenna_height_m <= 0.0 {
            return Err(GeoError::NonPositiveHeight(antenna_height_m));
        }
        Ok(Self { latitude_deg, longitude_deg, antenna_height_m })
    }
}

/// 3D point in the scene's local Cartesian frame, meters.
/// This is the optimization variable for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPosition {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

impl LocalPosition {
    pub fn new(x_m: f64, y_m: f64, z_m: f64) -> Self {
        Self { x_m, y_m, z_m }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x_m, self.y_m]
    }

    pub fn distance_to(&self, other: &LocalPosition) -> f64 {
        let dx = self.x_m - other.x_m;
        let dy = self.y_m - other.y_m;
        let dz = self.z_m - other.z_m;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn horizontal_distance_to(&self, other: &LocalPosition) -> f64 {
        let dx = self.x_m - other.x_m;
        let dy = self.y_m - other.y_m;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Tangent point of the azimuthal equidistant projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCenter {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
}

impl ProjectionCenter {
    pub fn new(latitude_deg: f64, longitude_deg: f64) -> Result<Self, GeoError> {
        check_lat_lon(latitude_deg, longitude_deg)?;
        Ok(Self { latitude_deg, longitude_deg })
    }
}

fn check_lat_lon(latitude_deg: f64, longitude_deg: f64) -> Result<(), GeoError> {
    if !latitude_deg.is_finite() || !longitude_deg.is_finite() {
        return Err(GeoError::NonFinite);
    }
    if !(-90.0..=90.0).contains(&latitude_deg) {
        return Err(GeoError::LatitudeOutOfRange(latitude_deg));
    }
    if !(-180.0..=180.0).contains(&longitude_deg) {
        return Err(GeoError::LongitudeOutOfRange(longitude_deg));
    }
    Ok(())
}

/// Great-circle distance (m) and forward azimuth (rad, clockwise from north)
/// from `center` to the given point on the spherical earth.
fn distance_and_azimuth(center: &ProjectionCenter, lat_deg: f64, lon_deg: f64) -> (f64, f64) {
    let phi1 = center.latitude_deg.to_radians();
    let phi2 = lat_deg.to_radians();
    let dlon = (lon_deg - center.longitude_deg).to_radians();

    // Haversine central angle, stable for short baselines.
    let sin_dphi = ((phi2 - phi1) / 2.0).sin();
    let sin_dlon = (dlon / 2.0).sin();
    let a = sin_dphi * sin_dphi + phi1.cos() * phi2.cos() * sin_dlon * sin_dlon;
    let c = 2.0 * a.sqrt().asin();

    let az = (dlon.sin() * phi2.cos())
        .atan2(phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlon.cos());

    (EARTH_RADIUS_M * c, az)
}

/// Project a geographic position into the local frame.
///
/// (x, y) = (rho * sin(az), rho * cos(az)) with rho the great-circle distance
/// from the center; z passes through from the antenna height unchanged.
pub fn project_to_local(p: &GeoPosition, center: &ProjectionCenter) -> Result<LocalPosition, GeoError> {
    GeoPosition::new(p.latitude_deg, p.longitude_deg, p.antenna_height_m)?;
    let (rho, az) = distance_and_azimuth(center, p.latitude_deg, p.longitude_deg);
    if rho >= MAX_PROJECTION_RADIUS_M {
        return Err(GeoError::BeyondValidityRadius(rho));
    }
    Ok(LocalPosition::new(rho * az.sin(), rho * az.cos(), p.antenna_height_m))
}

/// Inverse of [`project_to_local`] on the same spherical model.
pub fn unproject_to_geo(p: &LocalPosition, center: &ProjectionCenter) -> Result<GeoPosition, GeoError> {
    if !p.x_m.is_finite() || !p.y_m.is_finite() || !p.z_m.is_finite() {
        return Err(GeoError::NonFinite);
    }
    let rho = (p.x_m * p.x_m + p.y_m * p.y_m).sqrt();
    let delta = rho / EARTH_RADIUS_M;
    let az = p.x_m.atan2(p.y_m);

    let phi1 = center.latitude_deg.to_radians();
    let sin_phi2 = phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * az.cos();
    let phi2 = sin_phi2.clamp(-1.0, 1.0).asin();
    let lon2 = center.longitude_deg.to_radians()
        + (az.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);

    let mut lon_deg = lon2.to_degrees();
    if lon_deg > 180.0 {
        lon_deg -= 360.0;
    } else if lon_deg < -180.0 {
        lon_deg += 360.0;
    }
    Ok(GeoPosition {
        latitude_deg: phi2.to_degrees(),
        longitude_deg: lon_deg,
        antenna_height_m: p.z_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    const CENTER: ProjectionCenter = ProjectionCenter {
        latitude_deg: 40.694,
        longitude_deg: -73.986,
    };

    #[test]
    fn center_projects_to_origin() {
        let p = GeoPosition::new(CENTER.latitude_deg, CENTER.longitude_deg, 4.0).unwrap();
        let local = project_to_local(&p, &CENTER).unwrap();
        assert!(local.x_m.abs() < 1e-9);
        assert!(local.y_m.abs() < 1e-9);
        assert_eq!(local.z_m, 4.0);
    }

    #[test]
    fn point_100m_north_of_center() {
        // Move 100 m north along the meridian: dlat = 100 / R radians.
        let dlat_deg = (100.0 / EARTH_RADIUS_M).to_degrees();
        let p = GeoPosition::new(CENTER.latitude_deg + dlat_deg, CENTER.longitude_deg, 1.5).unwrap();
        let local = project_to_local(&p, &CENTER).unwrap();
        assert!(local.x_m.abs() < 1e-3, "x = {}", local.x_m);
        assert!((local.y_m - 100.0).abs() < 1e-3, "y = {}", local.y_m);
        assert_eq!(local.z_m, 1.5);
    }

    #[test]
    fn antenna_heights_pass_through_as_z() {
        let tx = GeoPosition::new(40.695, -73.985, 4.0).unwrap();
        let rx = GeoPosition::new(40.693, -73.987, 1.5).unwrap();
        assert_eq!(project_to_local(&tx, &CENTER).unwrap().z_m, 4.0);
        assert_eq!(project_to_local(&rx, &CENTER).unwrap().z_m, 1.5);
    }

    #[test]
    fn unproject_origin_returns_center() {
        let g = unproject_to_geo(&LocalPosition::new(0.0, 0.0, 4.0), &CENTER).unwrap();
        assert!((g.latitude_deg - CENTER.latitude_deg).abs() < 1e-12);
        assert!((g.longitude_deg - CENTER.longitude_deg).abs() < 1e-12);
        assert_eq!(g.antenna_height_m, 4.0);
    }

    #[test]
    fn unproject_100m_north() {
        let g = unproject_to_geo(&LocalPosition::new(0.0, 100.0, 1.5), &CENTER).unwrap();
        let (rho, az) = distance_and_azimuth(&CENTER, g.latitude_deg, g.longitude_deg);
        assert!((rho - 100.0).abs() < 1e-3);
        assert!(az.abs() < 1e-5);
    }

    #[test]
    fn round_trip_within_1mm_inside_10km() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let x: f64 = rng.gen_range(-7000.0..7000.0);
            let y: f64 = rng.gen_range(-7000.0..7000.0);
            let z: f64 = rng.gen_range(0.5..50.0);
            let p = LocalPosition::new(x, y, z);
            let g = unproject_to_geo(&p, &CENTER).unwrap();
            let back = project_to_local(&g, &CENTER).unwrap();
            assert!(back.distance_to(&p) < 1e-3, "round trip error at ({x}, {y})");
        }
    }

    #[test]
    fn local_distance_matches_great_circle_for_short_baselines() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = LocalPosition::new(rng.gen_range(-900.0..900.0), rng.gen_range(-900.0..900.0), 2.0);
            let b = LocalPosition::new(rng.gen_range(-900.0..900.0), rng.gen_range(-900.0..900.0), 2.0);
            let ga = unproject_to_geo(&a, &CENTER).unwrap();
            let gb = unproject_to_geo(&b, &CENTER).unwrap();
            let gc = {
                let c2 = ProjectionCenter::new(ga.latitude_deg, ga.longitude_deg).unwrap();
                distance_and_azimuth(&c2, gb.latitude_deg, gb.longitude_deg).0
            };
            let local = a.horizontal_distance_to(&b);
            if local > 1.0 {
                assert!((local - gc).abs() / gc < 1e-3, "local {local} vs great-circle {gc}");
            }
        }
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        assert!(GeoPosition::new(95.0, 0.0, 1.0).is_err());
        assert!(GeoPosition::new(0.0, 190.0, 1.0).is_err());
        assert!(GeoPosition::new(0.0, 0.0, 0.0).is_err());
        assert!(ProjectionCenter::new(-91.0, 0.0).is_err());
    }

    #[test]
    fn rejects_points_beyond_validity_radius() {
        // ~111 km north of the center.
        let p = GeoPosition::new(CENTER.latitude_deg + 1.0, CENTER.longitude_deg, 2.0).unwrap();
        assert!(matches!(project_to_local(&p, &CENTER), Err(GeoError::BeyondValidityRadius(_))));
    }
}
