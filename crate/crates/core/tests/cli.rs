use resonance::certify::lyapunov_value;
use resonance::report::Svg;
use resonance::scenario::{Certification, Scenario};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn resonance(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resonance")).args(args).output().expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, body).unwrap();
    path
}

const OSCILLATOR: &str = r#"{
  "name": "osc",
  "system": {"d": 1, "n": [1.0], "coupling": {"kind": "general", "terms": [[{"op": "const", "c": 0.0}]]}, "p": [{}]},
  "initial": {"kind": "explicit", "states": [{"x": [1.0], "v": [0.0]}]},
  "run": {"k_max": 1, "tol": 1e-11}
}"#;

#[test]
fn certify_exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let ok = resonance(&["certify", fixtures().join("scalar_certified.json").to_str().unwrap(), "--out", o]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let text = std::fs::read_to_string(out.path().join("scalar_certified.certificate.json")).unwrap();
    let cert: Certification = serde_json::from_str(&text).unwrap();
    assert!(cert.certified);

    let not = resonance(&["certify", fixtures().join("scalar_uncertified.json").to_str().unwrap(), "--out", o]);
    assert_eq!(not.status.code(), Some(2));
    assert!(out.path().join("scalar_uncertified.certificate.json").exists());
}

#[test]
fn malformed_json_names_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "bad", "{\n  \"name\": \"bad\",\n  \"system\": [1,\n}");
    let out = resonance(&["certify", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4, column"), "{err}");
}

#[test]
fn empty_initial_conditions_fail() {
    let dir = tempfile::tempdir().unwrap();
    let body = OSCILLATOR.replace(r#"[{"x": [1.0], "v": [0.0]}]"#, "[]");
    let path = write_scenario(dir.path(), "empty", &body);
    let out = resonance(&["simulate", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no initial conditions"));
}

#[test]
fn oversized_grid_fails() {
    let dir = tempfile::tempdir().unwrap();
    let body = OSCILLATOR.replace(
        r#"{"kind": "explicit", "states": [{"x": [1.0], "v": [0.0]}]}"#,
        r#"{"kind": "grid", "component": 0, "x": {"lo": 0, "hi": 1, "count": 2000}, "v": {"lo": 0, "hi": 1, "count": 1000}}"#,
    );
    let path = write_scenario(dir.path(), "huge", &body);
    let out = resonance(&["basin", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds the limit"));
}

#[test]
fn simulate_harmonic_oscillator_closes() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "osc", OSCILLATOR);
    let out = resonance(&["simulate", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("osc.traj.0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x_1,v_1"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    assert_eq!(first, &vec![0.0, 1.0, 0.0]);
    assert_eq!(last[0], std::f64::consts::TAU);
    assert!((last[1] - 1.0).abs() < 1e-8 && last[2].abs() < 1e-8);
    let svg = std::fs::read_to_string(dir.path().join("osc.phase.1.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline") && svg.contains("<circle"));
}

#[test]
fn trace_linear_resonance_and_uncertified_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let out = resonance(&["trace", fixtures().join("linear_resonance.json").to_str().unwrap(), "--out", o, "--kmax", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("linear_resonance.trace.csv")).unwrap();
    for (i, line) in csv.lines().skip(1).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let k: f64 = cells[2].parse().unwrap();
        assert_eq!(k, (i + 1) as f64);
        let dv: f64 = cells[3].parse().unwrap();
        assert!((dv - k * std::f64::consts::PI).abs() < 1e-6);
        assert!(cells[5].parse::<f64>().unwrap() >= -1e-6);
    }

    let out = resonance(&["trace", fixtures().join("scalar_uncertified.json").to_str().unwrap(), "--out", o, "--kmax", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no certificate"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scalar_uncertified.trace.json")).unwrap()).unwrap();
    assert!(json["certificate"].is_null());
}

#[test]
fn regions_need_an_asymptotic_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let out = resonance(&["regions", fixtures().join("scalar_certified.json").to_str().unwrap(), "--out", o]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fixtures_round_trip() {
    let mut seen = 0;
    for entry in std::fs::read_dir(fixtures()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let sc = Scenario::load(&path).unwrap();
        let again = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(again, sc, "{}", path.display());
        assert_eq!(again.to_json(), sc.to_json());
        seen += 1;
    }
    assert!(seen >= 8);
}

#[test]
fn basin_output_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
      "name": "grid",
      "system": {"d": 2, "n": [1.0, 1.0],
        "coupling": {"kind": "cyclic", "h": [{"op": "scale", "c": 0.1, "arg": {"op": "tanh", "a": 1.0}},
                                             {"op": "scale", "c": 0.1, "arg": {"op": "tanh", "a": 1.0}}]},
        "p": [{"sin": [1.0]}, {"sin": [1.0]}]},
      "initial": {"kind": "grid", "component": 0, "x": {"lo": -6, "hi": 6, "count": 7}, "v": {"lo": -6, "hi": 6, "count": 5},
                  "base": {"x": [0.0, -6.0], "v": [0.0, 0.0]}},
      "run": {"k_max": 4, "tol": 1e-9}
    }"#;
    let path = write_scenario(dir.path(), "grid", body);
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let sub = dir.path().join(format!("t{threads}"));
        let out = resonance(&["basin", path.to_str().unwrap(), "--out", sub.to_str().unwrap(), "--threads", threads]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((
            std::fs::read(sub.join("grid.basin.csv")).unwrap(),
            std::fs::read(sub.join("grid.basin.svg")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(csv.lines().count(), 36);
    assert!(csv.starts_with("index,x,v,label,component_label,in_c,in_plus,in_minus,in_parallelogram\n"));
    // the origin of the plane lies in the parallelogram
    let center = csv.lines().nth(18).unwrap();
    assert!(center.starts_with("17,0,0,") && center.ends_with(",1"), "{center}");
}

#[test]
fn overlay_lines_lie_on_level_sets() {
    let sc = Scenario::load(&fixtures().join("cyclic_three.json")).unwrap();
    let cert = Certification::compute(&sc.name, &sc.system, &sc.run).unwrap();
    let regions = cert.regions.unwrap();
    let svg = Svg::new(600.0, 600.0, (-30.0, 30.0), (-30.0, 30.0));
    for c in &regions.components {
        for phase in [c.phi1, c.phi2] {
            for level in [c.level, -c.level] {
                let (a, b) = svg.clipped_line(c.normal(phase), level).expect("line crosses the window");
                for s in [0.0, 0.25, 0.5, 1.0] {
                    let z = (a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1));
                    assert!((lyapunov_value(c.n, phase, z.0, z.1) - level).abs() < 1e-9);
                }
            }
        }
    }
}
