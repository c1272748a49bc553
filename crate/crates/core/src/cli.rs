//! Command-line interface: calibration runs, one-shot simulation, loss
//! evaluation, coordinate projection, and demo fixture generation.
//!
//! Input failures (bad files, malformed positions, validation errors) exit
//! with status 2; a calibration that completes without converging still
//! exits 0 and records `converged: false` in the result.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::align::select_alignment;
use crate::geo::{project_to_local, unproject_to_geo, GeoPosition, LocalPosition, ProjectionCenter};
use crate::loss::{composite_loss, outage_loss, LossBreakdown, LossWeights};
use crate::optimizer::{
    calibrate, CalibrationResult, OptimizerConfig, SimulationParams, Stage,
};
use crate::pdp::{load_pdp_csv, synthesize_pdp, write_pdp_csv, PowerDelayProfile, FLOOR_DBM};
use crate::raytrace::{
    ExternalModel, ForwardModel, ImageMethodModel, TraceError, DEFAULT_EXTERNAL_TIMEOUT,
};
use crate::scene::{load_scene, Scene};

#[derive(Parser, Debug)]
#[command(name = "pdpcal", version, about = "Transceiver position calibration from power delay profiles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Calibrate TX/RX positions against a measured delay profile.
    Calibrate(CalibrateArgs),
    /// Trace one link and print the synthesized delay profile as CSV.
    Simulate(SimulateArgs),
    /// Evaluate the composite loss for one candidate link.
    Loss(LossArgs),
    /// Convert between geographic and local planar coordinates.
    Project(ProjectArgs),
    /// Write a self-contained demo scene, measurement, and run config.
    SeedFixtures(SeedArgs),
}

/// Flags shared by every subcommand that builds a forward model.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Scene description JSON.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Forward model: "image" (built-in) or "external".
    #[arg(long)]
    pub model: Option<String>,
    /// Command line for the external simulator (model = external).
    #[arg(long, num_args = 1.., value_name = "CMD")]
    pub external_cmd: Option<Vec<String>>,
    /// Maximum reflection order for the built-in model.
    #[arg(long)]
    pub max_reflections: Option<usize>,
    /// External simulator response timeout, seconds.
    #[arg(long)]
    pub external_timeout_s: Option<f64>,
    /// Override the scene's carrier frequency, Hz.
    #[arg(long)]
    pub freq: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Run configuration JSON; flags override individual fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Measured delay profile CSV (delay_ns,power_dbm).
    #[arg(long)]
    pub meas: Option<PathBuf>,
    /// Initial TX position: "local:x,y,z", "geo:lat,lon,h", or bare "x,y,z".
    #[arg(long)]
    pub tx: Option<String>,
    /// Initial RX position, same formats as --tx.
    #[arg(long)]
    pub rx: Option<String>,
    /// Output directory for result.json, trace.csv, pdp_comparison.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Noise floor for measured-profile thresholding, dBm.
    #[arg(long)]
    pub noise_floor: Option<f64>,
    /// Rayon worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub tx: String,
    #[arg(long)]
    pub rx: String,
    /// Write the profile CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LossArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub meas: PathBuf,
    #[arg(long)]
    pub tx: String,
    #[arg(long)]
    pub rx: String,
    /// Reference TX position for the distance regularizer (default: --tx).
    #[arg(long)]
    pub tx0: Option<String>,
    /// Reference RX position for the distance regularizer (default: --rx).
    #[arg(long)]
    pub rx0: Option<String>,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    /// Projection center "lat,lon".
    #[arg(long)]
    pub center: String,
    /// Position to convert; "geo:" input yields local output and vice versa.
    #[arg(long)]
    pub pos: String,
}

#[derive(Args, Debug)]
pub struct SeedArgs {
    /// Directory receiving scene.json, meas.csv, and config.json.
    #[arg(long, default_value = "fixtures")]
    pub out: PathBuf,
}

/// On-disk run configuration; every field can be overridden by a flag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scene: Option<PathBuf>,
    pub measurement: Option<PathBuf>,
    pub tx_initial: Option<String>,
    pub rx_initial: Option<String>,
    pub model: Option<String>,
    pub external_command: Option<Vec<String>>,
    pub max_reflections: Option<usize>,
    pub external_timeout_s: Option<f64>,
    pub noise_floor_dbm: Option<f64>,
    pub frequency_hz: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub optimizer: Option<OptimizerConfig>,
    pub weights: Option<LossWeights>,
    pub simulation: Option<SimulationParams>,
}

/// Parse "geo:lat,lon,h", "local:x,y,z", or bare "x,y,z".
pub fn parse_position(s: &str, center: &ProjectionCenter) -> Result<LocalPosition> {
    let parse3 = |body: &str| -> Result<[f64; 3]> {
        let parts: Vec<&str> = body.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            bail!("position '{s}' must have three comma-separated components");
        }
        let mut v = [0.0; 3];
        for (i, p) in parts.iter().enumerate() {
            v[i] = p
                .parse::<f64>()
                .with_context(|| format!("position '{s}': bad number '{p}'"))?;
        }
        Ok(v)
    };
    if let Some(body) = s.strip_prefix("geo:") {
        let [lat, lon, h] = parse3(body)?;
        let geo = GeoPosition::new(lat, lon, h)?;
        Ok(project_to_local(&geo, center)?)
    } else {
        let body = s.strip_prefix("local:").unwrap_or(s);
        let [x, y, z] = parse3(body)?;
        Ok(LocalPosition::new(x, y, z))
    }
}

fn build_model(
    scene: Scene,
    model: Option<&str>,
    external_cmd: Option<&[String]>,
    max_reflections: usize,
    timeout_s: Option<f64>,
) -> Result<Box<dyn ForwardModel>> {
    match model.unwrap_or("image") {
        "image" => Ok(Box::new(ImageMethodModel::new(scene, max_reflections))),
        "external" => {
            let cmd = external_cmd
                .ok_or_else(|| anyhow!("model 'external' requires --external-cmd"))?;
            let timeout = timeout_s
                .map(Duration::from_secs_f64)
                .unwrap_or(DEFAULT_EXTERNAL_TIMEOUT);
            Ok(Box::new(ExternalModel::spawn(cmd, scene.frequency_hz, timeout)?))
        }
        other => bail!("unknown model '{other}' (expected 'image' or 'external')"),
    }
}

fn load_scene_required(path: Option<&Path>, freq_override: Option<f64>) -> Result<Scene> {
    let path = path.ok_or_else(|| anyhow!("a scene file is required (--scene or config)"))?;
    let mut scene = load_scene(path)?;
    if let Some(f) = freq_override {
        if !(f > 0.0) {
            bail!("frequency override must be positive, got {f}");
        }
        scene.frequency_hz = f;
    }
    Ok(scene)
}

#[derive(Debug, Serialize)]
struct PositionReport {
    local: [f64; 3],
    geographic: GeoReport,
}

#[derive(Debug, Serialize)]
struct GeoReport {
    latitude_deg: f64,
    longitude_deg: f64,
    antenna_height_m: f64,
}

fn position_report(p: &LocalPosition, center: &ProjectionCenter) -> Result<PositionReport> {
    let geo = unproject_to_geo(p, center)?;
    Ok(PositionReport {
        local: [p.x_m, p.y_m, p.z_m],
        geographic: GeoReport {
            latitude_deg: geo.latitude_deg,
            longitude_deg: geo.longitude_deg,
            antenna_height_m: geo.antenna_height_m,
        },
    })
}

#[derive(Debug, Serialize)]
struct ResultReport {
    tx_initial: PositionReport,
    rx_initial: PositionReport,
    tx_calibrated: PositionReport,
    rx_calibrated: PositionReport,
    initial_loss: LossBreakdown,
    final_loss: LossBreakdown,
    loss_reduction_pct: f64,
    peak_power_diff_db_initial: Option<f64>,
    peak_power_diff_db_final: Option<f64>,
    iterations_used: usize,
    forward_evals: usize,
    converged: bool,
    config: RunConfig,
}

/// Difference between the strongest simulated and measured bins, dB.
fn peak_power_diff(
    fm: &dyn ForwardModel,
    tx: &LocalPosition,
    rx: &LocalPosition,
    meas: &PowerDelayProfile,
    sim: &SimulationParams,
) -> Option<f64> {
    let profile = simulate_profile(fm, tx, rx, sim)?;
    let (_, sim_peak) = profile.max_bin()?;
    let (_, meas_peak) = meas.max_bin()?;
    Some(sim_peak - meas_peak)
}

fn write_trace_csv(result: &CalibrationResult, path: &Path) -> Result<()> {
    let mut out = String::from(
        "iteration,endpoint,stage,cand_x,cand_y,l_peak,l_unmatched,l_shape,l_distance,total,chosen\n",
    );
    for it in &result.iterations {
        for ep in [&it.rx, &it.tx] {
            let ep_name = match ep.endpoint {
                crate::optimizer::Endpoint::Tx => "tx",
                crate::optimizer::Endpoint::Rx => "rx",
            };
            for st in &ep.stages {
                let stage_name = match st.stage {
                    Stage::Coarse => "coarse",
                    Stage::Fine => "fine",
                    Stage::Powell => "powell",
                };
                let mut chosen_marked = false;
                for c in &st.candidates {
                    let is_chosen = !chosen_marked && c.position == st.chosen;
                    chosen_marked |= is_chosen;
                    out.push_str(&format!(
                        "{},{},{},{:.6},{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
                        it.iteration,
                        ep_name,
                        stage_name,
                        c.position.x_m,
                        c.position.y_m,
                        c.breakdown.l_peak,
                        c.breakdown.l_unmatched,
                        c.breakdown.l_shape,
                        c.breakdown.l_distance,
                        c.breakdown.total,
                        is_chosen as u8,
                    ));
                }
            }
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Measured vs. initial vs. calibrated profiles on a shared absolute grid,
/// with the measured profile shifted by its selected alignment against the
/// calibrated simulation.
fn write_comparison_csv(
    meas: &PowerDelayProfile,
    sim_initial: Option<&PowerDelayProfile>,
    sim_final: Option<&PowerDelayProfile>,
    path: &Path,
) -> Result<()> {
    let meas_aligned = match sim_final {
        Some(sim) => match select_alignment(sim, meas) {
            Ok(a) => crate::align::apply_shift(meas, a.shift_ns),
            Err(_) => meas.clone(),
        },
        None => meas.clone(),
    };
    let mut profiles: Vec<&PowerDelayProfile> = vec![&meas_aligned];
    profiles.extend(sim_initial);
    profiles.extend(sim_final);
    let bin = meas.bin_width_ns;
    let base = |p: &PowerDelayProfile| (p.t0_ns / bin).round() as i64;
    let lo = profiles.iter().map(|p| base(p)).min().unwrap();
    let hi = profiles
        .iter()
        .map(|p| base(p) + p.len() as i64)
        .max()
        .unwrap();
    let sample = |p: Option<&PowerDelayProfile>, idx: i64| -> f64 {
        match p {
            Some(p) => {
                let rel = idx - base(p);
                if rel >= 0 && (rel as usize) < p.len() {
                    p.power_dbm[rel as usize]
                } else {
                    p.floor_dbm
                }
            }
            None => FLOOR_DBM,
        }
    };
    let mut out = String::from("delay_ns,meas_dbm,sim_initial_dbm,sim_final_dbm\n");
    for idx in lo..hi {
        out.push_str(&format!(
            "{:.3},{:.4},{:.4},{:.4}\n",
            idx as f64 * bin,
            sample(Some(&meas_aligned), idx),
            sample(sim_initial, idx),
            sample(sim_final, idx),
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn simulate_profile(
    fm: &dyn ForwardModel,
    tx: &LocalPosition,
    rx: &LocalPosition,
    sim: &SimulationParams,
) -> Option<PowerDelayProfile> {
    let paths = fm.trace(tx, rx).ok()?;
    let p = synthesize_pdp(&paths, sim.bin_width_ns, sim.cutoff_dbm).ok()?;
    Some(match sim.smoothing_sigma_ns {
        Some(sigma) => crate::pdp::smooth_pdp(&p, sigma),
        None => p,
    })
}

pub fn run_calibrate(args: &CalibrateArgs) -> Result<()> {
    let mut cfg: RunConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    // Flag overrides.
    if let Some(v) = &args.model.scene {
        cfg.scene = Some(v.clone());
    }
    if let Some(v) = &args.meas {
        cfg.measurement = Some(v.clone());
    }
    if let Some(v) = &args.tx {
        cfg.tx_initial = Some(v.clone());
    }
    if let Some(v) = &args.rx {
        cfg.rx_initial = Some(v.clone());
    }
    if let Some(v) = &args.model.model {
        cfg.model = Some(v.clone());
    }
    if let Some(v) = &args.model.external_cmd {
        cfg.external_command = Some(v.clone());
    }
    if let Some(v) = args.model.max_reflections {
        cfg.max_reflections = Some(v);
    }
    if let Some(v) = args.model.external_timeout_s {
        cfg.external_timeout_s = Some(v);
    }
    if let Some(v) = args.model.freq {
        cfg.frequency_hz = Some(v);
    }
    if let Some(v) = args.noise_floor {
        cfg.noise_floor_dbm = Some(v);
    }
    if let Some(v) = &args.out {
        cfg.out_dir = Some(v.clone());
    }

    if let Some(workers) = args.workers {
        // Ignore the error if a global pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }

    let scene = load_scene_required(cfg.scene.as_deref(), cfg.frequency_hz)?;
    let center = scene.projection_center;
    let meas_path = cfg
        .measurement
        .as_deref()
        .ok_or_else(|| anyhow!("a measurement file is required (--meas or config)"))?;
    let mut meas = load_pdp_csv(meas_path)?;
    if let Some(floor) = cfg.noise_floor_dbm {
        meas = crate::pdp::threshold_pdp(&meas, floor)?;
    }
    let tx0 = parse_position(
        cfg.tx_initial
            .as_deref()
            .ok_or_else(|| anyhow!("an initial TX position is required (--tx or config)"))?,
        &center,
    )?;
    let rx0 = parse_position(
        cfg.rx_initial
            .as_deref()
            .ok_or_else(|| anyhow!("an initial RX position is required (--rx or config)"))?,
        &center,
    )?;

    let opt_cfg = cfg.optimizer.clone().unwrap_or_default();
    let weights = cfg.weights.unwrap_or_default();
    let sim_params = cfg.simulation.unwrap_or_default();
    let fm = build_model(
        scene,
        cfg.model.as_deref(),
        cfg.external_command.as_deref(),
        cfg.max_reflections.unwrap_or(3),
        cfg.external_timeout_s,
    )?;

    let result = calibrate(tx0, rx0, fm.as_ref(), &meas, &opt_cfg, &weights, sim_params)?;

    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let sim_initial = simulate_profile(fm.as_ref(), &tx0, &rx0, &sim_params);
    let sim_final =
        simulate_profile(fm.as_ref(), &result.p_tx_star, &result.p_rx_star, &sim_params);
    let report = ResultReport {
        tx_initial: position_report(&tx0, &center)?,
        rx_initial: position_report(&rx0, &center)?,
        tx_calibrated: position_report(&result.p_tx_star, &center)?,
        rx_calibrated: position_report(&result.p_rx_star, &center)?,
        initial_loss: result.initial_loss,
        final_loss: result.final_loss,
        loss_reduction_pct: result.loss_reduction_pct,
        peak_power_diff_db_initial: peak_power_diff(fm.as_ref(), &tx0, &rx0, &meas, &sim_params),
        peak_power_diff_db_final: peak_power_diff(
            fm.as_ref(),
            &result.p_tx_star,
            &result.p_rx_star,
            &meas,
            &sim_params,
        ),
        iterations_used: result.iterations_used,
        forward_evals: result.forward_evals,
        converged: result.converged,
        config: cfg,
    };
    fs::write(
        out_dir.join("result.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    write_trace_csv(&result, &out_dir.join("trace.csv"))?;
    write_comparison_csv(
        &meas,
        sim_initial.as_ref(),
        sim_final.as_ref(),
        &out_dir.join("pdp_comparison.csv"),
    )?;

    println!(
        "calibrated: tx=({:.3}, {:.3}, {:.3}) rx=({:.3}, {:.3}, {:.3})",
        result.p_tx_star.x_m,
        result.p_tx_star.y_m,
        result.p_tx_star.z_m,
        result.p_rx_star.x_m,
        result.p_rx_star.y_m,
        result.p_rx_star.z_m
    );
    println!(
        "loss {:.6} -> {:.6} ({:.1}% reduction), {} iterations, {} forward evals, converged: {}",
        result.initial_loss.total,
        result.final_loss.total,
        result.loss_reduction_pct,
        result.iterations_used,
        result.forward_evals,
        result.converged
    );
    Ok(())
}

pub fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let scene = load_scene_required(args.model.scene.as_deref(), args.model.freq)?;
    let center = scene.projection_center;
    let tx = parse_position(&args.tx, &center)?;
    let rx = parse_position(&args.rx, &center)?;
    let fm = build_model(
        scene,
        args.model.model.as_deref(),
        args.model.external_cmd.as_deref(),
        args.model.max_reflections.unwrap_or(3),
        args.model.external_timeout_s,
    )?;
    let sim = SimulationParams::default();
    let paths = fm.trace(&tx, &rx)?;
    let profile = synthesize_pdp(&paths, sim.bin_width_ns, sim.cutoff_dbm)
        .map_err(|e| anyhow!("no receivable paths: {e}"))?;
    match &args.out {
        Some(path) => {
            let mut file = fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            write_pdp_csv(&profile, &mut file)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_pdp_csv(&profile, &mut stdout)?;
        }
    }
    Ok(())
}

pub fn run_loss(args: &LossArgs) -> Result<()> {
    let scene = load_scene_required(args.model.scene.as_deref(), args.model.freq)?;
    let center = scene.projection_center;
    let tx = parse_position(&args.tx, &center)?;
    let rx = parse_position(&args.rx, &center)?;
    let tx0 = match &args.tx0 {
        Some(s) => parse_position(s, &center)?,
        None => tx,
    };
    let rx0 = match &args.rx0 {
        Some(s) => parse_position(s, &center)?,
        None => rx,
    };
    let meas = load_pdp_csv(&args.meas)?;
    let fm = build_model(
        scene,
        args.model.model.as_deref(),
        args.model.external_cmd.as_deref(),
        args.model.max_reflections.unwrap_or(3),
        args.model.external_timeout_s,
    )?;
    let sim = SimulationParams::default();
    let d_tx = tx.distance_to(&tx0);
    let d_rx = rx.distance_to(&rx0);
    let weights = LossWeights::default();
    let breakdown = match fm.trace(&tx, &rx) {
        Ok(paths) => match synthesize_pdp(&paths, sim.bin_width_ns, sim.cutoff_dbm) {
            Ok(profile) => composite_loss(&profile, &meas, d_tx, d_rx, &weights)?,
            Err(_) => outage_loss(d_tx, d_rx, &weights),
        },
        Err(TraceError::EndpointInsideBuilding { .. }) | Err(TraceError::DegenerateLink) => {
            outage_loss(d_tx, d_rx, &weights)
        }
        Err(e) => return Err(e.into()),
    };
    println!("{}", serde_json::to_string_pretty(&breakdown)?);
    Ok(())
}

pub fn run_project(args: &ProjectArgs) -> Result<()> {
    let parts: Vec<&str> = args.center.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("--center must be 'lat,lon'");
    }
    let center = ProjectionCenter::new(parts[0].parse()?, parts[1].parse()?)?;
    if args.pos.starts_with("geo:") {
        let local = parse_position(&args.pos, &center)?;
        println!(
            "local:{:.6},{:.6},{:.6}",
            local.x_m, local.y_m, local.z_m
        );
    } else {
        let local = parse_position(&args.pos, &center)?;
        let geo = unproject_to_geo(&local, &center)?;
        println!(
            "geo:{:.8},{:.8},{:.6}",
            geo.latitude_deg, geo.longitude_deg, geo.antenna_height_m
        );
    }
    Ok(())
}

// --- Demo fixture: an asymmetric street canyon with an end wall ---

/// Scene JSON for the demo street. End walls behind both terminals break
/// the along-street translation ambiguity a plain canyon would have: the
/// delay of each end-wall echo relative to the line-of-sight peak pins that
/// terminal's along-street coordinate independently of the other terminal.
/// The single side wall pins the cross-street geometry without introducing
/// a mirror symmetry.
pub const DEMO_SCENE_JSON: &str = r#"{
  "projection_center": { "lat": 40.694, "lon": -73.986 },
  "frequency_hz": 3.5e9,
  "ground_material": { "eps_r": 5.24, "sigma": 0.123 },
  "buildings": [
    { "footprint": [[-10.0, 8.0], [60.0, 8.0], [60.0, 20.0], [-10.0, 20.0]], "height_m": 20.0, "material": "concrete" },
    { "footprint": [[70.0, -10.0], [90.0, -10.0], [90.0, 20.0], [70.0, 20.0]], "height_m": 20.0, "material": "concrete" },
    { "footprint": [[-30.0, -10.0], [-15.0, -10.0], [-15.0, 20.0], [-30.0, 20.0]], "height_m": 20.0, "material": "concrete" }
  ]
}"#;

pub fn demo_truth_tx() -> LocalPosition {
    LocalPosition::new(0.0, 1.0, 4.0)
}

pub fn demo_truth_rx() -> LocalPosition {
    LocalPosition::new(40.0, 2.0, 1.5)
}

/// Truth perturbed by (3, 0) m.
pub fn demo_initial_tx() -> LocalPosition {
    LocalPosition::new(3.0, 1.0, 4.0)
}

/// Truth perturbed by (-2, 1.5) m.
pub fn demo_initial_rx() -> LocalPosition {
    LocalPosition::new(38.0, 3.5, 1.5)
}

/// Demo profiles use a 4 ns Gaussian pulse so the shape discrepancy varies
/// smoothly with candidate position, as it does for measured profiles.
pub fn demo_simulation_params() -> SimulationParams {
    SimulationParams {
        smoothing_sigma_ns: Some(4.0),
        ..SimulationParams::default()
    }
}

pub fn run_seed_fixtures(args: &SeedArgs) -> Result<()> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let scene_path = args.out.join("scene.json");
    fs::write(&scene_path, DEMO_SCENE_JSON)?;

    let scene = load_scene(&scene_path)?;
    let fm = ImageMethodModel::new(scene, 3);
    let sim = demo_simulation_params();
    let profile = simulate_profile(&fm, &demo_truth_tx(), &demo_truth_rx(), &sim)
        .ok_or_else(|| anyhow!("demo link produced no paths"))?;
    let meas_path = args.out.join("meas.csv");
    let mut file = fs::File::create(&meas_path)?;
    write_pdp_csv(&profile, &mut file)?;

    let tx0 = demo_initial_tx();
    let rx0 = demo_initial_rx();
    let config = RunConfig {
        scene: Some(scene_path.clone()),
        measurement: Some(meas_path.clone()),
        tx_initial: Some(format!("local:{},{},{}", tx0.x_m, tx0.y_m, tx0.z_m)),
        rx_initial: Some(format!("local:{},{},{}", rx0.x_m, rx0.y_m, rx0.z_m)),
        model: Some("image".into()),
        max_reflections: Some(3),
        out_dir: Some(args.out.join("out")),
        simulation: Some(sim),
        ..RunConfig::default()
    };
    fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&config)? + "\n",
    )?;
    println!(
        "wrote {}, {}, {}",
        scene_path.display(),
        meas_path.display(),
        args.out.join("config.json").display()
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Calibrate(a) => run_calibrate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Loss(a) => run_loss(a),
        Command::Project(a) => run_project(a),
        Command::SeedFixtures(a) => run_seed_fixtures(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center() -> ProjectionCenter {
        ProjectionCenter::new(40.694, -73.986).unwrap()
    }

    #[test]
    fn parse_bare_and_local_positions() {
        let c = center();
        let a = parse_position("1.5,-2,3", &c).unwrap();
        let b = parse_position("local:1.5,-2,3", &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x_m, 1.5);
        assert_eq!(a.y_m, -2.0);
        assert_eq!(a.z_m, 3.0);
    }

    #[test]
    fn parse_geo_position_projects() {
        let c = center();
        let at_center = parse_position("geo:40.694,-73.986,5", &c).unwrap();
        assert!(at_center.x_m.abs() < 1e-6);
        assert!(at_center.y_m.abs() < 1e-6);
        assert_eq!(at_center.z_m, 5.0);
    }

    #[test]
    fn parse_position_rejects_garbage() {
        let c = center();
        assert!(parse_position("1,2", &c).is_err());
        assert!(parse_position("a,b,c", &c).is_err());
        assert!(parse_position("geo:95,0,5", &c).is_err());
    }

    #[test]
    fn demo_scene_parses_and_traces() {
        let scene = crate::scene::scene_from_json(DEMO_SCENE_JSON, "demo").unwrap();
        let fm = ImageMethodModel::new(scene, 3);
        let paths = fm.trace(&demo_truth_tx(), &demo_truth_rx()).unwrap();
        assert!(paths.paths.len() >= 3, "expected multipath, got {}", paths.paths.len());
    }

    #[test]
    fn run_config_roundtrip() {
        let cfg = RunConfig {
            scene: Some("s.json".into()),
            tx_initial: Some("local:0,0,4".into()),
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.scene, cfg.scene);
        assert_eq!(back.tx_initial, cfg.tx_initial);
        // Unknown model keys are tolerated at parse time and rejected later.
        let partial: RunConfig = serde_json::from_str("{}").unwrap();
        assert!(partial.scene.is_none());
    }
}
