use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evalign_core::dataio;
use evalign_core::warp::ImuSample;
use evalign_core::AngularVelocity3;
use tempfile::TempDir;

const TWO_PLANES: &str = r#"{
  "camera": {"fx": 150, "fy": 150, "cx": 59.5, "cy": 44.5, "width": 120, "height": 90},
  "planes": [
    {"id": 1, "polygon": [[-200, -300], [49.5, -300], [49.5, 400], [-200, 400]], "depth": 2.0, "edge_density": 1.0},
    {"id": 2, "polygon": [[49.5, -300], [320, -300], [320, 400], [49.5, 400]], "depth": 4.0, "edge_density": 1.0}
  ],
  "noise_rate": 0.1
}"#;

// mostly vertical motion at 150 px/s on the far plane
const TRANSLATION: &str = r#"{"v": [0.4, 4.0, 0.0], "duration": 0.5}"#;

const ROTATION: &str = r#"{"phases": [
  {"v": [0, 0, 0], "omega": {"wx": 0.4, "wy": -0.7, "wz": 0.3}, "duration": 0.1},
  {"v": [0, 0, 0], "omega": {"wx": -0.5, "wy": 0.6, "wz": -0.2}, "duration": 0.1}
]}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evalign"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn synth(dir: &Path, scene: &str, motion: &str, seed: &str) -> PathBuf {
    let s = write(dir, "scene.json", scene);
    let m = write(dir, "motion.json", motion);
    let out = dir.join(format!("data{seed}"));
    let o = run(&["synth", "--scene", &s, "--motion", &m, "--out", out.to_str().unwrap(), "--seed", seed]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn assert_header(path: &Path, command: &str) {
    let text = fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    assert!(!header.is_empty(), "{} has no header", path.display());
    let joined = header.join("\n");
    assert!(joined.contains(env!("CARGO_PKG_VERSION")), "{joined}");
    assert!(joined.contains(command) && joined.contains("seed"), "{joined}");
}

#[test]
fn synth_writes_readable_deterministic_files() {
    let dir = TempDir::new().unwrap();
    let a = synth(dir.path(), TWO_PLANES, TRANSLATION, "4");
    let events = dataio::read_events(a.join("events.txt")).unwrap();
    assert_eq!((events.width, events.height), (120, 90));
    assert!(!events.events.is_empty());
    let masks = dataio::read_masks(a.join("masks.txt")).unwrap();
    assert_eq!(masks.len(), 10);
    assert!(!dataio::read_imu(a.join("imu.txt")).unwrap().is_empty());
    assert_eq!(dataio::read_gt_depths(a.join("gt_depth.txt")).unwrap().len(), 10);

    let b = dir.path().join("again");
    let s = dir.path().join("scene.json");
    let m = dir.path().join("motion.json");
    let o = run(&["synth", "--scene", s.to_str().unwrap(), "--motion", m.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    for f in ["events.txt", "masks.txt", "imu.txt", "gt_depth.txt", "camera.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn overlapping_planes_are_an_input_error() {
    let dir = TempDir::new().unwrap();
    let scene = TWO_PLANES.replace("[49.5, -300], [320, -300]", "[20, -300], [320, -300]");
    let s = write(dir.path(), "scene.json", &scene);
    let m = write(dir.path(), "motion.json", TRANSLATION);
    let o = run(&["synth", "--scene", &s, "--motion", &m, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("regions overlap"));
}

#[test]
fn depth_on_two_planes() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), TWO_PLANES, TRANSLATION, "5");
    let p = |f: &str| data.join(f).display().to_string();
    let out = dir.path().join("depth");
    let o = run(&[
        "depth", "--events", &p("events.txt"), "--mask", &p("masks.txt"), "--camera", &p("camera.json"),
        "--gt", &p("gt_depth.txt"), "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_header(&out.join("depth.csv"), "depth");
    assert_header(&out.join("depth_metrics.csv"), "depth");
    let rows = csv_rows(&out.join("depth_metrics.csv"));
    let all = rows.iter().find(|r| r[0] == "all").expect("aggregate row");
    let ard: f64 = all[5].parse().unwrap();
    assert!(ard < 0.05, "ARD {ard}");

    // rotation-free data: an all-zero IMU trace changes nothing
    let zero: Vec<ImuSample> = (0..=600)
        .map(|i| ImuSample { t: i as f64 * 1e-3, omega: AngularVelocity3::ZERO })
        .collect();
    let imu = dir.path().join("zero_imu.txt");
    dataio::write_imu(&imu, &zero).unwrap();
    let out2 = dir.path().join("depth_imu");
    let o = run(&[
        "depth", "--events", &p("events.txt"), "--mask", &p("masks.txt"), "--camera", &p("camera.json"),
        "--imu", imu.to_str().unwrap(), "--out", out2.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&out.join("depth.csv")), csv_rows(&out2.join("depth.csv")));
}

#[test]
fn honeycomb_flag_replaces_mask_file() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), TWO_PLANES, TRANSLATION, "6");
    let out = dir.path().join("hc");
    let o = run(&[
        "depth", "--events", data.join("events.txt").to_str().unwrap(), "--mask", "honeycomb:r=20",
        "--focal", "150", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cells = dataio::honeycomb_mask(120, 90, 20.0).unwrap();
    let mut ids: Vec<u32> = csv_rows(&out.join("depth.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids, cells.region_ids().collect::<Vec<_>>());
}

#[test]
fn depth_without_any_converged_region_is_no_result() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), TWO_PLANES, TRANSLATION, "7");
    let o = run(&[
        "depth", "--events", data.join("events.txt").to_str().unwrap(), "--mask", data.join("masks.txt").to_str().unwrap(),
        "--focal", "150", "--min-events", "10000000", "--out", dir.path().join("none").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn angvel_on_pure_rotation() {
    let dir = TempDir::new().unwrap();
    let scene = TWO_PLANES.replace("\"depth\": 4.0", "\"depth\": 2.0");
    let data = synth(dir.path(), &scene, ROTATION, "8");
    let p = |f: &str| data.join(f).display().to_string();
    let out = dir.path().join("angvel");
    let o = run(&[
        "angvel", "--events", &p("events.txt"), "--gt", &p("imu.txt"), "--camera", &p("camera.json"),
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_header(&out.join("angvel.csv"), "angvel");
    assert_header(&out.join("angvel_metrics.csv"), "angvel");
    let m = &csv_rows(&out.join("angvel_metrics.csv"))[0];
    let rms_pct: f64 = m[6].parse().unwrap();
    assert!(rms_pct < 5.0, "RMS {rms_pct}% of peak");

    // scoring the estimates against themselves gives zero error
    let rows = csv_rows(&out.join("angvel.csv"));
    let own: Vec<ImuSample> = rows
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|x| x.parse().unwrap()).collect();
            ImuSample { t: v[0], omega: AngularVelocity3::new(v[3], v[4], v[5]) }
        })
        .chain(std::iter::once({
            let last: Vec<f64> = rows.last().unwrap().iter().map(|x| x.parse().unwrap()).collect();
            ImuSample { t: last[1], omega: AngularVelocity3::new(last[3], last[4], last[5]) }
        }))
        .collect();
    let gt = dir.path().join("own.txt");
    dataio::write_imu(&gt, &own).unwrap();
    let out2 = dir.path().join("self");
    let o = run(&[
        "angvel", "--events", &p("events.txt"), "--gt", gt.to_str().unwrap(), "--camera", &p("camera.json"),
        "--max-rate", "60", "--out", out2.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = &csv_rows(&out2.join("angvel_metrics.csv"))[0];
    for v in &m[1..7] {
        assert!(v.parse::<f64>().unwrap().abs() < 1e-9, "{m:?}");
    }
}

#[test]
fn missing_ground_truth_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), TWO_PLANES, TRANSLATION, "9");
    let o = run(&[
        "angvel", "--events", data.join("events.txt").to_str().unwrap(), "--gt", "/nonexistent/imu.txt",
        "--focal", "150", "--out", dir.path().join("a").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
