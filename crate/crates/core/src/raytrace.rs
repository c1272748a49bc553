//! Deterministic forward model: multipath components for a TX/RX pair.
//!
//! The built-in model is a 2.5D image method over the scene's vertical walls
//! plus the ground plane: specular reflections only, with Fresnel reflection
//! coefficients from complex permittivity. It stands in for a full ray tracer;
//! the [`ForwardModel`] trait and [`ExternalModel`] let an external simulator
//! supply higher-fidelity paths over a newline-delimited JSON protocol.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::LocalPosition;
use crate::scene::{point_in_polygon, wall_segments, Material, Scene, WallSegment};
use crate::SPEED_OF_LIGHT_M_PER_S;

/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// Paths weaker than this are discarded at the source.
pub const MIN_POWER_DBM: f64 = -160.0;

/// Transmit power reference for path powers, dBm.
pub const TX_POWER_DBM: f64 = 0.0;

const GEOM_EPS: f64 = 1e-9;
const OCCLUSION_ENDPOINT_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("tx and rx coincide")]
    DegenerateLink,
    #[error("{which} endpoint lies inside building {building}")]
    EndpointInsideBuilding { which: &'static str, building: usize },
    #[error("max_reflections {0} exceeds supported limit 3")]
    TooManyReflections(usize),
    #[error("external simulator process could not be spawned: {0}")]
    SpawnFailed(String),
    #[error("external simulator process exited")]
    ProcessExited,
    #[error("external simulator response timed out")]
    Timeout,
    #[error("malformed external simulator response: {0}")]
    MalformedResponse(String),
    #[error("i/o error talking to external simulator: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InteractionKind {
    Los,
    WallReflection,
    GroundReflection,
}

/// One interaction along a path: what it hit and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub kind: InteractionKind,
    /// Wall index in `wall_segments` order; `None` for LOS and ground.
    pub surface: Option<usize>,
    pub point: LocalPosition,
}

/// One multipath arrival: delay, power, interaction chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub delay_ns: f64,
    pub power_dbm: f64,
    pub interactions: Vec<Interaction>,
}

/// Multipath components for one TX/RX pair, sorted by ascending delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathList {
    pub paths: Vec<PathComponent>,
    pub tx: LocalPosition,
    pub rx: LocalPosition,
    pub frequency_hz: f64,
}

impl PathList {
    fn sort_paths(&mut self) {
        self.paths.sort_by(|a, b| {
            a.delay_ns
                .total_cmp(&b.delay_ns)
                .then(b.power_dbm.total_cmp(&a.power_dbm))
        });
    }
}

/// Pluggable simulator seam. Implementations must be deterministic:
/// identical inputs yield identical outputs.
pub trait ForwardModel: Sync {
    fn trace(&self, tx: &LocalPosition, rx: &LocalPosition) -> Result<PathList, TraceError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    Te,
    Tm,
}

/// Fresnel reflection coefficient for an air-to-dielectric half space.
///
/// `incidence_angle_rad` is measured from the surface normal. The material's
/// complex permittivity is eps_r - j*sigma/(2*pi*f*eps0).
pub fn fresnel_reflection_coeff(
    material: &Material,
    frequency_hz: f64,
    incidence_angle_rad: f64,
    polarization: Polarization,
) -> Complex<f64> {
    let eps = Complex::new(
        material.rel_permittivity,
        -material.conductivity_s_per_m / (2.0 * std::f64::consts::PI * frequency_hz * EPSILON_0),
    );
    let cos_i = incidence_angle_rad.cos();
    let sin_i = incidence_angle_rad.sin();
    let root = (eps - sin_i * sin_i).sqrt();
    match polarization {
        Polarization::Te => (cos_i - root) / (cos_i + root),
        Polarization::Tm => (eps * cos_i - root) / (eps * cos_i + root),
    }
}

/// Built-in image-method forward model over an immutable scene.
pub struct ImageMethodModel {
    pub scene: Scene,
    pub max_reflections: usize,
    pub polarization: Polarization,
    pub min_power_dbm: f64,
}

impl ImageMethodModel {
    pub fn new(scene: Scene, max_reflections: usize) -> Self {
        Self {
            scene,
            max_reflections,
            polarization: Polarization::Te,
            min_power_dbm: MIN_POWER_DBM,
        }
    }
}

impl ForwardModel for ImageMethodModel {
    fn trace(&self, tx: &LocalPosition, rx: &LocalPosition) -> Result<PathList, TraceError> {
        trace_image_method(
            &self.scene,
            tx,
            rx,
            self.max_reflections,
            self.polarization,
            self.min_power_dbm,
        )
    }
}

// --- 2D helpers ---

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm2(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

fn mirror_across_line(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d = sub(b, a);
    let len2 = d[0] * d[0] + d[1] * d[1];
    let ap = sub(p, a);
    let t = (ap[0] * d[0] + ap[1] * d[1]) / len2;
    let foot = [a[0] + t * d[0], a[1] + t * d[1]];
    [2.0 * foot[0] - p[0], 2.0 * foot[1] - p[1]]
}

fn side_of_line(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Intersection of segment p1->p2 with segment q1->q2.
/// Returns (t, u, point) with t along p and u along q, if the lines are not parallel.
fn line_intersection(
    p1: [f64; 2],
    p2: [f64; 2],
    q1: [f64; 2],
    q2: [f64; 2],
) -> Option<(f64, f64, [f64; 2])> {
    let r = sub(p2, p1);
    let s = sub(q2, q1);
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom.abs() < 1e-15 {
        return None;
    }
    let qp = sub(q1, p1);
    let t = (qp[0] * s[1] - qp[1] * s[0]) / denom;
    let u = (qp[0] * r[1] - qp[1] * r[0]) / denom;
    Some((t, u, [p1[0] + t * r[0], p1[1] + t * r[1]]))
}

/// A vertex of the horizontal (plan-view) polyline of a path, with its
/// cumulative horizontal distance from TX along the unfolded path.
#[derive(Debug, Clone)]
struct PathVertex {
    xy: [f64; 2],
    s: f64,
}

/// Candidate path geometry before EM evaluation.
struct PathGeometry {
    /// Plan-view vertices: TX, incidence points (walls and ground), RX.
    vertices: Vec<PathVertex>,
    /// Wall incidence entries as (wall index, vertex index).
    wall_hits: Vec<(usize, usize)>,
    /// Ground bounce vertex index, if present.
    ground_hit: Option<usize>,
    /// Total horizontal unfolded length.
    horizontal_len: f64,
    /// Total 3D unfolded length.
    total_len: f64,
    /// z of the unfolded straight line at horizontal distance s.
    z_start: f64,
    z_end_unfolded: f64,
}

impl PathGeometry {
    fn z_at(&self, s: f64) -> f64 {
        let zl = if self.horizontal_len < GEOM_EPS {
            self.z_start
        } else {
            self.z_start + (self.z_end_unfolded - self.z_start) * (s / self.horizontal_len)
        };
        zl.abs()
    }
}

/// Trace all reflection paths up to `max_reflections` interactions
/// (wall bounces plus an optional ground bounce), plus LOS when visible.
pub fn trace_image_method(
    scene: &Scene,
    tx: &LocalPosition,
    rx: &LocalPosition,
    max_reflections: usize,
    polarization: Polarization,
    min_power_dbm: f64,
) -> Result<PathList, TraceError> {
    if max_reflections > 3 {
        return Err(TraceError::TooManyReflections(max_reflections));
    }
    if tx.distance_to(rx) < GEOM_EPS {
        return Err(TraceError::DegenerateLink);
    }
    for (bi, b) in scene.buildings.iter().enumerate() {
        if point_in_polygon(tx.xy(), &b.footprint) {
            return Err(TraceError::EndpointInsideBuilding { which: "tx", building: bi });
        }
        if point_in_polygon(rx.xy(), &b.footprint) {
            return Err(TraceError::EndpointInsideBuilding { which: "rx", building: bi });
        }
    }

    let walls = wall_segments(scene);
    let mut paths = Vec::new();

    // Wall sequences of length 0..=max_reflections, no immediate repeats,
    // each optionally combined with one ground bounce.
    let mut sequence = Vec::new();
    enumerate_sequences(
        &walls,
        max_reflections,
        &mut sequence,
        &mut |seq: &[usize]| {
            for ground in [false, true] {
                if seq.len() + ground as usize > max_reflections {
                    continue;
                }
                if let Some(geom) = build_path_geometry(&walls, tx, rx, seq, ground) {
                    if clear_of_obstructions(&walls, seq, &geom) {
                        if let Some(path) =
                            evaluate_path(scene, &walls, &geom, seq, ground, polarization)
                        {
                            paths.push(path);
                        }
                    }
                }
            }
        },
    );

    let mut list = PathList {
        paths,
        tx: *tx,
        rx: *rx,
        frequency_hz: scene.frequency_hz,
    };
    list.paths.retain(|p| p.power_dbm >= min_power_dbm);
    list.sort_paths();
    Ok(list)
}

fn enumerate_sequences(
    walls: &[WallSegment],
    max_len: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    visit(current);
    if current.len() == max_len {
        return;
    }
    for w in 0..walls.len() {
        if current.last() == Some(&w) {
            continue;
        }
        current.push(w);
        enumerate_sequences(walls, max_len, current, visit);
        current.pop();
    }
}

/// Mirror-image construction for one wall sequence; `None` when the specular
/// geometry does not exist (incidence off-segment, wrong side, above wall top).
fn build_path_geometry(
    walls: &[WallSegment],
    tx: &LocalPosition,
    rx: &LocalPosition,
    seq: &[usize],
    ground: bool,
) -> Option<PathGeometry> {
    let tx2 = tx.xy();
    let rx2 = rx.xy();
    let k = seq.len();

    // Successive images of TX across the sequence walls.
    let mut images = Vec::with_capacity(k + 1);
    images.push(tx2);
    for &wi in seq {
        let w = &walls[wi];
        images.push(mirror_across_line(*images.last().unwrap(), w.a, w.b));
    }

    // Back-substitution from RX to find incidence points on each wall.
    let mut hits2 = vec![[0.0; 2]; k];
    let mut cur = rx2;
    for i in (0..k).rev() {
        let w = &walls[seq[i]];
        let (t, u, point) = line_intersection(cur, images[i + 1], w.a, w.b)?;
        if !(0.0 + GEOM_EPS..=1.0 - GEOM_EPS).contains(&u) {
            return None;
        }
        // Incidence must lie strictly between the two unfolded endpoints.
        if !(GEOM_EPS..=1.0 - GEOM_EPS).contains(&t) {
            return None;
        }
        hits2[i] = point;
        cur = point;
    }

    // Both neighbors of each incidence must sit on the same side of the wall.
    for i in 0..k {
        let w = &walls[seq[i]];
        let prev = if i == 0 { tx2 } else { hits2[i - 1] };
        let next = if i == k - 1 { rx2 } else { hits2[i + 1] };
        let sp = side_of_line(prev, w.a, w.b);
        let sn = side_of_line(next, w.a, w.b);
        if sp * sn <= 0.0 || sp.abs() < GEOM_EPS || sn.abs() < GEOM_EPS {
            return None;
        }
    }

    // Horizontal polyline and cumulative distances.
    let mut vertices = vec![PathVertex { xy: tx2, s: 0.0 }];
    let mut s_acc = 0.0;
    for &h in &hits2 {
        s_acc += norm2(sub(h, vertices.last().unwrap().xy));
        vertices.push(PathVertex { xy: h, s: s_acc });
    }
    s_acc += norm2(sub(rx2, vertices.last().unwrap().xy));
    vertices.push(PathVertex { xy: rx2, s: s_acc });
    let horizontal_len = s_acc;

    let z_end_unfolded = if ground { -rx.z_m } else { rx.z_m };
    let mut geom = PathGeometry {
        vertices,
        wall_hits: Vec::new(),
        ground_hit: None,
        horizontal_len,
        total_len: 0.0,
        z_start: tx.z_m,
        z_end_unfolded,
    };
    geom.total_len = if horizontal_len < GEOM_EPS {
        (z_end_unfolded - tx.z_m).abs()
    } else {
        (horizontal_len * horizontal_len + (z_end_unfolded - tx.z_m) * (z_end_unfolded - tx.z_m)).sqrt()
    };
    if geom.total_len < GEOM_EPS {
        return None;
    }

    // Wall incidence heights must stay within the wall extrusion.
    for (i, &h) in hits2.iter().enumerate() {
        let _ = h;
        let s = geom.vertices[i + 1].s;
        let z = geom.z_at(s);
        if z > walls[seq[i]].height_m + GEOM_EPS {
            return None;
        }
        geom.wall_hits.push((seq[i], i + 1));
    }

    // Insert the ground bounce vertex at the zero crossing of the unfolded z.
    if ground {
        let denom = tx.z_m + rx.z_m;
        if denom < GEOM_EPS {
            return None;
        }
        let s0 = if horizontal_len < GEOM_EPS {
            0.0
        } else {
            horizontal_len * tx.z_m / denom
        };
        // Locate the leg containing s0 and interpolate its plan-view point.
        let mut insert_at = geom.vertices.len() - 1;
        let mut xy = *geom
            .vertices
            .last()
            .map(|v| &v.xy)
            .unwrap();
        for li in 0..geom.vertices.len() - 1 {
            let (va, vb) = (&geom.vertices[li], &geom.vertices[li + 1]);
            if s0 <= vb.s || li == geom.vertices.len() - 2 {
                let span = (vb.s - va.s).max(GEOM_EPS);
                let f = ((s0 - va.s) / span).clamp(0.0, 1.0);
                xy = [
                    va.xy[0] + f * (vb.xy[0] - va.xy[0]),
                    va.xy[1] + f * (vb.xy[1] - va.xy[1]),
                ];
                insert_at = li + 1;
                break;
            }
        }
        geom.vertices.insert(insert_at, PathVertex { xy, s: s0 });
        geom.ground_hit = Some(insert_at);
        for hit in geom.wall_hits.iter_mut() {
            if hit.1 >= insert_at {
                hit.1 += 1;
            }
        }
    }

    Some(geom)
}

/// 2.5D occlusion test: every leg of the plan-view polyline must clear all
/// walls (height checked at each crossing), excluding the reflecting walls
/// at their own incidence points.
fn clear_of_obstructions(walls: &[WallSegment], seq: &[usize], geom: &PathGeometry) -> bool {
    for li in 0..geom.vertices.len() - 1 {
        let a = &geom.vertices[li];
        let b = &geom.vertices[li + 1];
        let leg_len = norm2(sub(b.xy, a.xy));
        if leg_len < GEOM_EPS {
            continue;
        }
        for (wi, w) in walls.iter().enumerate() {
            let _ = wi;
            let Some((t, u, point)) = line_intersection(a.xy, b.xy, w.a, w.b) else {
                continue;
            };
            if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&t) {
                continue;
            }
            // Crossings at the leg ends are the path's own incidence points
            // (or the endpoints themselves, which are outside all buildings).
            let d_start = norm2(sub(point, a.xy));
            let d_end = norm2(sub(point, b.xy));
            if d_start < OCCLUSION_ENDPOINT_EPS || d_end < OCCLUSION_ENDPOINT_EPS {
                continue;
            }
            let s_here = a.s + d_start;
            if geom.z_at(s_here) < w.height_m - GEOM_EPS {
                return false;
            }
        }
    }
    let _ = seq;
    true
}

fn evaluate_path(
    scene: &Scene,
    walls: &[WallSegment],
    geom: &PathGeometry,
    seq: &[usize],
    ground: bool,
    polarization: Polarization,
) -> Option<PathComponent> {
    let d = geom.total_len;
    let lambda = SPEED_OF_LIGHT_M_PER_S / scene.frequency_hz;
    // Free-space amplitude, power referenced to 0 dBm transmit.
    let mut power_db = TX_POWER_DBM - 20.0 * (4.0 * std::f64::consts::PI * d / lambda).log10();

    let horizontal_fraction = if d < GEOM_EPS {
        0.0
    } else {
        geom.horizontal_len / d
    };

    // Interactions collected with their unfolded distance for ordering.
    let mut tagged: Vec<(f64, Interaction)> = Vec::new();
    if seq.is_empty() && !ground {
        tagged.push((
            0.0,
            Interaction {
                kind: InteractionKind::Los,
                surface: None,
                point: LocalPosition::new(
                    (geom.vertices[0].xy[0] + geom.vertices.last().unwrap().xy[0]) / 2.0,
                    (geom.vertices[0].xy[1] + geom.vertices.last().unwrap().xy[1]) / 2.0,
                    (geom.z_start + geom.z_end_unfolded) / 2.0,
                ),
            },
        ));
    }

    // Wall reflections: incidence angle from the (horizontal) wall normal.
    for &(wi, vi) in &geom.wall_hits {
        let w = &walls[wi];
        let v = &geom.vertices[vi];
        let prev = &geom.vertices[vi - 1];
        let leg = sub(v.xy, prev.xy);
        let leg_len = norm2(leg);
        if leg_len < GEOM_EPS {
            return None;
        }
        let wall_dir = sub(w.b, w.a);
        let wall_len = norm2(wall_dir);
        let normal = [-wall_dir[1] / wall_len, wall_dir[0] / wall_len];
        let cos_h = ((leg[0] / leg_len) * normal[0] + (leg[1] / leg_len) * normal[1]).abs();
        let cos_i = (horizontal_fraction * cos_h).clamp(0.0, 1.0);
        let angle = cos_i.acos().min(std::f64::consts::FRAC_PI_2 - 1e-12);
        let gamma = fresnel_reflection_coeff(&w.material, scene.frequency_hz, angle, polarization);
        power_db += 10.0 * gamma.norm_sqr().log10();
        tagged.push((
            v.s,
            Interaction {
                kind: InteractionKind::WallReflection,
                surface: Some(wi),
                point: LocalPosition::new(v.xy[0], v.xy[1], geom.z_at(v.s)),
            },
        ));
    }

    // Ground bounce: incidence angle from the vertical normal.
    if ground {
        let vi = geom.ground_hit?;
        let v = &geom.vertices[vi];
        let cos_i = if d < GEOM_EPS {
            1.0
        } else {
            ((geom.z_start - geom.z_end_unfolded).abs() / d).clamp(0.0, 1.0)
        };
        let angle = cos_i.acos().min(std::f64::consts::FRAC_PI_2 - 1e-12);
        let gamma =
            fresnel_reflection_coeff(&scene.ground_material, scene.frequency_hz, angle, polarization);
        power_db += 10.0 * gamma.norm_sqr().log10();
        tagged.push((
            v.s,
            Interaction {
                kind: InteractionKind::GroundReflection,
                surface: None,
                point: LocalPosition::new(v.xy[0], v.xy[1], 0.0),
            },
        ));
    }

    tagged.sort_by(|a, b| a.0.total_cmp(&b.0));
    let interactions = tagged.into_iter().map(|(_, i)| i).collect();

    Some(PathComponent {
        delay_ns: d / SPEED_OF_LIGHT_M_PER_S * 1e9,
        power_dbm: power_db,
        interactions,
    })
}

// --- External simulator over NDJSON stdin/stdout ---

#[derive(Serialize)]
struct ExternalRequest {
    tx: [f64; 3],
    rx: [f64; 3],
    frequency_hz: f64,
}

#[derive(Deserialize)]
struct ExternalResponse {
    paths: Vec<ExternalPath>,
}

#[derive(Deserialize)]
struct ExternalPath {
    delay_ns: f64,
    power_dbm: f64,
}

pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(30);

struct ExternalProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Wraps a subprocess speaking the NDJSON wire protocol:
/// request `{"tx":[x,y,z],"rx":[x,y,z],"frequency_hz":F}` per line,
/// one response line `{"paths":[{"delay_ns":D,"power_dbm":P},...]}` per request.
pub struct ExternalModel {
    inner: Mutex<ExternalProcess>,
    pub frequency_hz: f64,
    pub timeout: Duration,
}

impl ExternalModel {
    pub fn spawn(command: &[String], frequency_hz: f64, timeout: Duration) -> Result<Self, TraceError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| TraceError::SpawnFailed("empty command".to_string()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| TraceError::SpawnFailed(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx_lines, lines) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx_lines.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            inner: Mutex::new(ExternalProcess { child, stdin, lines }),
            frequency_hz,
            timeout,
        })
    }
}

impl Drop for ExternalProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl ForwardModel for ExternalModel {
    fn trace(&self, tx: &LocalPosition, rx: &LocalPosition) -> Result<PathList, TraceError> {
        let mut proc = self.inner.lock().expect("external model lock");
        let request = ExternalRequest {
            tx: [tx.x_m, tx.y_m, tx.z_m],
            rx: [rx.x_m, rx.y_m, rx.z_m],
            frequency_hz: self.frequency_hz,
        };
        let mut line = serde_json::to_string(&request).expect("request serialization");
        line.push('\n');
        proc.stdin.write_all(line.as_bytes())?;
        proc.stdin.flush()?;

        let response_line = match proc.lines.recv_timeout(self.timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => return Err(TraceError::Io(e)),
            Err(RecvTimeoutError::Timeout) => return Err(TraceError::Timeout),
            Err(RecvTimeoutError::Disconnected) => return Err(TraceError::ProcessExited),
        };
        let response: ExternalResponse = serde_json::from_str(&response_line)
            .map_err(|e| TraceError::MalformedResponse(e.to_string()))?;

        let mut list = PathList {
            paths: Vec::with_capacity(response.paths.len()),
            tx: *tx,
            rx: *rx,
            frequency_hz: self.frequency_hz,
        };
        for p in response.paths {
            if !(p.delay_ns > 0.0) || !p.power_dbm.is_finite() {
                return Err(TraceError::MalformedResponse(format!(
                    "invalid path delay_ns={} power_dbm={}",
                    p.delay_ns, p.power_dbm
                )));
            }
            list.paths.push(PathComponent {
                delay_ns: p.delay_ns,
                power_dbm: p.power_dbm,
                interactions: Vec::new(),
            });
        }
        list.sort_paths();
        Ok(list)
    }
}
