//! End-to-end tests of the pdpcal binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn pdpcal() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pdpcal"))
}

fn seed(dir: &Path) {
    let out = pdpcal()
        .args(["seed-fixtures", "--out"])
        .arg(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "seed-fixtures failed: {out:?}");
    assert!(dir.join("scene.json").exists());
    assert!(dir.join("meas.csv").exists());
    assert!(dir.join("config.json").exists());
}

#[test]
fn calibrate_recovers_demo_truth_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    seed(tmp.path());
    let out_dir = tmp.path().join("out");
    let out = pdpcal()
        .args(["calibrate", "--config"])
        .arg(tmp.path().join("config.json"))
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "calibrate failed: {out:?}");

    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    let tx = result["tx_calibrated"]["local"].as_array().unwrap();
    let rx = result["rx_calibrated"]["local"].as_array().unwrap();
    let d = |v: &[serde_json::Value], t: [f64; 2]| {
        let dx = v[0].as_f64().unwrap() - t[0];
        let dy = v[1].as_f64().unwrap() - t[1];
        dx.hypot(dy)
    };
    assert!(d(tx, [0.0, 1.0]) <= 0.5, "TX not recovered: {tx:?}");
    assert!(d(rx, [40.0, 2.0]) <= 0.5, "RX not recovered: {rx:?}");
    assert!(result["loss_reduction_pct"].as_f64().unwrap() >= 90.0);
    assert!(result["converged"].as_bool().unwrap());
    assert!(result["forward_evals"].as_u64().unwrap() <= 1500);
    // Geographic output accompanies every position.
    assert!(result["tx_calibrated"]["geographic"]["latitude_deg"].is_f64());

    // Trace rows cover every stage with exactly one chosen candidate each.
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,endpoint,stage,cand_x,cand_y,l_peak,l_unmatched,l_shape,l_distance,total,chosen"
    );
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    let chosen: usize = rows
        .iter()
        .filter(|r| r.ends_with(",1"))
        .count();
    let iterations = result["iterations_used"].as_u64().unwrap() as usize;
    assert_eq!(chosen, iterations * 2 * 3, "one winner per stage");

    let comparison = fs::read_to_string(out_dir.join("pdp_comparison.csv")).unwrap();
    assert!(comparison.starts_with("delay_ns,meas_dbm,sim_initial_dbm,sim_final_dbm"));
    assert!(comparison.lines().count() > 10);
}

#[test]
fn fixed_point_run_reports_zero_adjustment() {
    let tmp = tempfile::tempdir().unwrap();
    seed(tmp.path());
    // Use the truth positions as the initial guess: the measurement was
    // generated there, so calibration must return them unchanged.
    let out_dir = tmp.path().join("out");
    let out = pdpcal()
        .args(["calibrate", "--config"])
        .arg(tmp.path().join("config.json"))
        .args(["--tx", "local:0,1,4", "--rx", "local:40,2,1.5", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "calibrate failed: {out:?}");
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["initial_loss"]["total"].as_f64().unwrap(), 0.0);
    assert_eq!(result["final_loss"]["total"].as_f64().unwrap(), 0.0);
    assert_eq!(result["loss_reduction_pct"].as_f64().unwrap(), 0.0);
    assert_eq!(result["iterations_used"].as_u64().unwrap(), 1);
    assert_eq!(
        result["tx_calibrated"]["local"],
        result["tx_initial"]["local"]
    );
    assert_eq!(
        result["rx_calibrated"]["local"],
        result["rx_initial"]["local"]
    );
}

#[test]
fn simulate_csv_matches_library_synthesis() {
    let tmp = tempfile::tempdir().unwrap();
    seed(tmp.path());
    let out = pdpcal()
        .args(["simulate", "--scene"])
        .arg(tmp.path().join("scene.json"))
        .args(["--tx", "local:0,1,4", "--rx", "local:40,2,1.5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "simulate failed: {out:?}");
    let text = String::from_utf8(out.stdout).unwrap();

    let scene = pdpcal::scene::load_scene(&tmp.path().join("scene.json")).unwrap();
    let fm = pdpcal::raytrace::ImageMethodModel::new(scene, 3);
    use pdpcal::raytrace::ForwardModel;
    let paths = fm
        .trace(
            &pdpcal::geo::LocalPosition::new(0.0, 1.0, 4.0),
            &pdpcal::geo::LocalPosition::new(40.0, 2.0, 1.5),
        )
        .unwrap();
    let expected = pdpcal::pdp::synthesize_pdp(&paths, 1.0, -160.0).unwrap();
    let mut buf = Vec::new();
    pdpcal::pdp::write_pdp_csv(&expected, &mut buf).unwrap();
    assert_eq!(text, String::from_utf8(buf).unwrap());
}

#[test]
fn loss_subcommand_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    seed(tmp.path());
    let out = pdpcal()
        .args(["loss", "--scene"])
        .arg(tmp.path().join("scene.json"))
        .arg("--meas")
        .arg(tmp.path().join("meas.csv"))
        .args(["--tx", "local:0,1,4", "--rx", "local:40,2,1.5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "loss failed: {out:?}");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();

    let scene = pdpcal::scene::load_scene(&tmp.path().join("scene.json")).unwrap();
    let fm = pdpcal::raytrace::ImageMethodModel::new(scene, 3);
    use pdpcal::raytrace::ForwardModel;
    let paths = fm
        .trace(
            &pdpcal::geo::LocalPosition::new(0.0, 1.0, 4.0),
            &pdpcal::geo::LocalPosition::new(40.0, 2.0, 1.5),
        )
        .unwrap();
    let sim = pdpcal::pdp::synthesize_pdp(&paths, 1.0, -160.0).unwrap();
    let meas = pdpcal::pdp::load_pdp_csv(&tmp.path().join("meas.csv")).unwrap();
    let expected = pdpcal::loss::composite_loss(
        &sim,
        &meas,
        0.0,
        0.0,
        &pdpcal::loss::LossWeights::default(),
    )
    .unwrap();
    assert_eq!(v["total"].as_f64().unwrap(), expected.total);
    assert_eq!(v["l_shape"].as_f64().unwrap(), expected.l_shape);
}

#[test]
fn project_round_trips_through_both_forms() {
    let center = "40.694,-73.986";
    let out = pdpcal()
        .args(["project", "--center", center, "--pos", "local:120.5,-40.25,3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let geo_form = String::from_utf8(out.stdout).unwrap().trim().to_string();
    assert!(geo_form.starts_with("geo:"), "got {geo_form}");

    let out = pdpcal()
        .args(["project", "--center", center, "--pos", &geo_form])
        .output()
        .unwrap();
    assert!(out.status.success());
    let local_form = String::from_utf8(out.stdout).unwrap();
    let body = local_form.trim().strip_prefix("local:").unwrap();
    let parts: Vec<f64> = body.split(',').map(|s| s.parse().unwrap()).collect();
    assert!((parts[0] - 120.5).abs() < 1e-3);
    assert!((parts[1] + 40.25).abs() < 1e-3);
}

#[test]
fn invalid_input_exits_with_status_two() {
    let out = pdpcal()
        .args([
            "calibrate",
            "--scene",
            "/nonexistent/scene.json",
            "--meas",
            "/nonexistent/meas.csv",
            "--tx",
            "local:0,0,4",
            "--rx",
            "local:10,0,1.5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    seed(tmp.path());
    let out = pdpcal()
        .args(["calibrate", "--config"])
        .arg(tmp.path().join("config.json"))
        .args(["--tx", "not-a-position"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
