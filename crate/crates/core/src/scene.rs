//! 2.5D environment model: extruded polygon buildings on flat ground.
//!
//! The forward model only needs vertical walls and a ground plane, so the
//! scene is a list of simple polygon footprints with heights and materials,
//! loaded from a JSON file. Material EM parameters follow the ITU-R P.2040
//! frequency-dependent parameterization for the bundled defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::ProjectionCenter;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read scene file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scene file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("building {index}: footprint has {n} vertices, need at least 3")]
    TooFewVertices { index: usize, n: usize },
    #[error("building {index}: footprint is self-intersecting")]
    SelfIntersecting { index: usize },
    #[error("building {index}: height {height} m must be > 0")]
    NonPositiveHeight { index: usize, height: f64 },
    #[error("building {index}: unknown material '{name}'")]
    UnknownMaterial { index: usize, name: String },
    #[error("buildings {a} and {b} have overlapping footprints")]
    OverlappingFootprints { a: usize, b: usize },
    #[error("material '{name}': relative permittivity {eps_r} must be >= 1")]
    BadPermittivity { name: String, eps_r: f64 },
    #[error("material '{name}': conductivity {sigma} must be >= 0")]
    BadConductivity { name: String, sigma: f64 },
    #[error("frequency {0} Hz must be > 0")]
    BadFrequency(f64),
    #[error(transparent)]
    Geo(#[from] crate::geo::GeoError),
}

/// Electromagnetic surface material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub rel_permittivity: f64,
    pub conductivity_s_per_m: f64,
}

impl Material {
    pub fn new(name: &str, rel_permittivity: f64, conductivity_s_per_m: f64) -> Result<Self, SceneError> {
        if rel_permittivity < 1.0 || !rel_permittivity.is_finite() {
            return Err(SceneError::BadPermittivity { name: name.to_string(), eps_r: rel_permittivity });
        }
        if conductivity_s_per_m < 0.0 || !conductivity_s_per_m.is_finite() {
            return Err(SceneError::BadConductivity { name: name.to_string(), sigma: conductivity_s_per_m });
        }
        Ok(Self {
            name: name.to_string(),
            rel_permittivity,
            conductivity_s_per_m,
        })
    }

    /// ITU-R P.2040 concrete at the given frequency.
    pub fn concrete(frequency_hz: f64) -> Material {
        let f_ghz = frequency_hz / 1e9;
        Material {
            name: "concrete".to_string(),
            rel_permittivity: 5.24,
            conductivity_s_per_m: 0.0462 * f_ghz.powf(0.7822),
        }
    }

    /// ITU-R P.2040 glass at the given frequency.
    pub fn glass(frequency_hz: f64) -> Material {
        let f_ghz = frequency_hz / 1e9;
        Material {
            name: "glass".to_string(),
            rel_permittivity: 6.31,
            conductivity_s_per_m: 0.0036 * f_ghz.powf(1.3394),
        }
    }
}

/// Extruded-polygon building: counter-clockwise footprint plus height.
#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub footprint: Vec<[f64; 2]>,
    pub height_m: f64,
    pub material: Material,
}

/// Immutable simulation environment shared across forward evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub projection_center: ProjectionCenter,
    pub buildings: Vec<Building>,
    pub ground_material: Material,
    pub frequency_hz: f64,
}

/// One vertical wall: a footprint edge extruded to the building height.
#[derive(Debug, Clone, PartialEq)]
pub struct WallSegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub height_m: f64,
    pub building: usize,
    pub edge: usize,
    pub material: Material,
}

// --- JSON schema ---

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    projection_center: CenterSpec,
    frequency_hz: f64,
    ground_material: MaterialSpec,
    #[serde(default)]
    materials: BTreeMap<String, MaterialSpec>,
    #[serde(default)]
    buildings: Vec<BuildingSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CenterSpec {
    lat: f64,
    lon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaterialSpec {
    eps_r: f64,
    sigma: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BuildingSpec {
    footprint: Vec<[f64; 2]>,
    height_m: f64,
    material: String,
}

/// Load and validate a scene from a JSON file.
pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    scene_from_json(&text, &path.display().to_string())
}

/// Parse and validate a scene from JSON text.
pub fn scene_from_json(text: &str, origin: &str) -> Result<Scene, SceneError> {
    let file: SceneFile = serde_json::from_str(text).map_err(|source| SceneError::Parse {
        path: origin.to_string(),
        source,
    })?;
    if !(file.frequency_hz > 0.0) {
        return Err(SceneError::BadFrequency(file.frequency_hz));
    }
    let projection_center = ProjectionCenter::new(file.projection_center.lat, file.projection_center.lon)?;
    let ground_material = Material::new("ground", file.ground_material.eps_r, file.ground_material.sigma)?;

    let mut materials: BTreeMap<String, Material> = BTreeMap::new();
    for (name, spec) in &file.materials {
        materials.insert(name.clone(), Material::new(name, spec.eps_r, spec.sigma)?);
    }

    let mut buildings = Vec::with_capacity(file.buildings.len());
    for (index, spec) in file.buildings.iter().enumerate() {
        let material = match materials.get(&spec.material) {
            Some(m) => m.clone(),
            // Bundled defaults for the two names the fixtures use.
            None => match spec.material.as_str() {
                "concrete" => Material::concrete(file.frequency_hz),
                "glass" => Material::glass(file.frequency_hz),
                other => {
                    return Err(SceneError::UnknownMaterial { index, name: other.to_string() });
                }
            },
        };
        if spec.footprint.len() < 3 {
            return Err(SceneError::TooFewVertices { index, n: spec.footprint.len() });
        }
        if !(spec.height_m > 0.0) {
            return Err(SceneError::NonPositiveHeight { index, height: spec.height_m });
        }
        if self_intersects(&spec.footprint) {
            return Err(SceneError::SelfIntersecting { index });
        }
        let mut footprint = spec.footprint.clone();
        if signed_area(&footprint) < 0.0 {
            footprint.reverse();
        }
        buildings.push(Building { footprint, height_m: spec.height_m, material });
    }

    for i in 0..buildings.len() {
        for j in (i + 1)..buildings.len() {
            if footprints_overlap(&buildings[i].footprint, &buildings[j].footprint) {
                return Err(SceneError::OverlappingFootprints { a: i, b: j });
            }
        }
    }

    Ok(Scene {
        projection_center,
        buildings,
        ground_material,
        frequency_hz: file.frequency_hz,
    })
}

/// One wall segment per footprint edge, orientation preserved.
pub fn wall_segments(scene: &Scene) -> Vec<WallSegment> {
    let mut walls = Vec::new();
    for (bi, b) in scene.buildings.iter().enumerate() {
        let n = b.footprint.len();
        for ei in 0..n {
            walls.push(WallSegment {
                a: b.footprint[ei],
                b: b.footprint[(ei + 1) % n],
                height_m: b.height_m,
                building: bi,
                edge: ei,
                material: b.material.clone(),
            });
        }
    }
    walls
}

/// Ray-casting point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > p[1]) != (pj[1] > p[1]) {
            let x = (pj[0] - pi[0]) * (p[1] - pi[1]) / (pj[1] - pi[1]) + pi[0];
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Proper segment intersection test (shared endpoints do not count).
pub fn segments_properly_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn self_intersects(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        for j in (i + 1)..n {
            // Skip adjacent edges (they share a vertex).
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_properly_intersect(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

fn footprints_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let na = a.len();
    let nb = b.len();
    for i in 0..na {
        for j in 0..nb {
            if segments_properly_intersect(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb]) {
                return true;
            }
        }
    }
    point_in_polygon(a[0], b) || point_in_polygon(b[0], a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_scene(buildings: &str) -> String {
        format!(
            r#"{{
              "projection_center": {{"lat": 40.694, "lon": -73.986}},
              "frequency_hz": 6.75e9,
              "ground_material": {{"eps_r": 5.24, "sigma": 0.21}},
              "buildings": {buildings}
            }}"#
        )
    }

    #[test]
    fn empty_building_list_is_free_space() {
        let s = scene_from_json(&minimal_scene("[]"), "test").unwrap();
        assert!(s.buildings.is_empty());
        assert!(wall_segments(&s).is_empty());
    }

    #[test]
    fn two_building_canyon_loads() {
        let s = scene_from_json(
            &minimal_scene(
                r#"[
                  {"footprint": [[-20,8],[60,8],[60,20],[-20,20]], "height_m": 15, "material": "concrete"},
                  {"footprint": [[-20,-20],[60,-20],[60,-8],[-20,-8]], "height_m": 15, "material": "concrete"}
                ]"#,
            ),
            "test",
        )
        .unwrap();
        assert_eq!(s.buildings.len(), 2);
        assert_eq!(wall_segments(&s).len(), 8);
    }

    #[test]
    fn self_intersecting_footprint_rejected() {
        let err = scene_from_json(
            &minimal_scene(r#"[{"footprint": [[0,0],[10,10],[10,0],[0,10]], "height_m": 5, "material": "concrete"}]"#),
            "test",
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::SelfIntersecting { index: 0 }));
    }

    #[test]
    fn overlapping_footprints_rejected() {
        let err = scene_from_json(
            &minimal_scene(
                r#"[
                  {"footprint": [[0,0],[10,0],[10,10],[0,10]], "height_m": 5, "material": "concrete"},
                  {"footprint": [[5,5],[15,5],[15,15],[5,15]], "height_m": 5, "material": "glass"}
                ]"#,
            ),
            "test",
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::OverlappingFootprints { a: 0, b: 1 }));
    }

    #[test]
    fn wall_segment_count_matches_footprint_edges() {
        let s = scene_from_json(
            &minimal_scene(
                r#"[
                  {"footprint": [[0,0],[10,0],[10,10],[0,10]], "height_m": 5, "material": "concrete"},
                  {"footprint": [[20,0],[30,0],[30,5],[25,5],[25,10],[20,10]], "height_m": 8, "material": "glass"}
                ]"#,
            ),
            "test",
        )
        .unwrap();
        let walls = wall_segments(&s);
        assert_eq!(walls.len(), 4 + 6);
        // Each wall's endpoints are consecutive footprint vertices.
        for w in &walls {
            let fp = &s.buildings[w.building].footprint;
            assert_eq!(w.a, fp[w.edge]);
            assert_eq!(w.b, fp[(w.edge + 1) % fp.len()]);
        }
    }

    #[test]
    fn clockwise_footprint_normalized_to_ccw() {
        let s = scene_from_json(
            &minimal_scene(r#"[{"footprint": [[0,10],[10,10],[10,0],[0,0]], "height_m": 5, "material": "concrete"}]"#),
            "test",
        )
        .unwrap();
        assert!(signed_area(&s.buildings[0].footprint) > 0.0);
    }

    #[test]
    fn default_materials_follow_itu_parameterization() {
        let c = Material::concrete(6.75e9);
        assert_eq!(c.rel_permittivity, 5.24);
        assert!((c.conductivity_s_per_m - 0.0462 * 6.75f64.powf(0.7822)).abs() < 1e-12);
        let g = Material::glass(16.95e9);
        assert_eq!(g.rel_permittivity, 6.31);
        assert!((g.conductivity_s_per_m - 0.0036 * 16.95f64.powf(1.3394)).abs() < 1e-12);
    }

    #[test]
    fn unknown_material_is_an_error() {
        let err = scene_from_json(
            &minimal_scene(r#"[{"footprint": [[0,0],[10,0],[10,10]], "height_m": 5, "material": "adamantium"}]"#),
            "test",
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::UnknownMaterial { .. }));
    }

    #[test]
    fn point_in_polygon_basics() {
        let sq = [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]];
        assert!(point_in_polygon([5.0, 5.0], &sq));
        assert!(!point_in_polygon([15.0, 5.0], &sq));
        assert!(!point_in_polygon([-1.0, -1.0], &sq));
    }
}
