//! The binary end to end: flags, output files and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use scniffer::cli::{cmd_sniff, SniffOptions};
use scniffer::device::SimDeviceConfig;
use scniffer::io::parse_heatmap_csv;
use scniffer::measures::MeasureKind;
use scniffer::stats::median;

fn scniffer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scniffer")).args(args).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_scan_writes_heatmap_and_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scan");
    let o = scniffer(&["full-scan", "--grid", "10", "--measure", "tvla", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("100 cells x 400 traces = 40000 traces"));
    let (values, n) = parse_heatmap_csv(&std::fs::read_to_string(out.join("heatmap.csv")).unwrap()).unwrap();
    assert_eq!((values.len(), n), (100, 10));
    assert!(out.join("heatmap.pgm").exists());
    assert_eq!(json(&out.join("report.json"))["total_traces"], 40_000);
}

#[test]
fn exhaustive_cema_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cema");
    let o = scniffer(&[
        "full-scan", "--grid", "10", "--measure", "cema", "--traces-per-measure", "1000", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let r = json(&out.join("report.json"));
    assert_eq!(r["cells"], 100);
    assert_eq!(r["total_traces"], 100_000);
}

#[test]
fn sniff_reports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = scniffer(&["sniff", "--grid", "10", "--seed", "4", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let ra = std::fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("report.json")).unwrap());
    let r = json(&a.join("report.json"));
    assert_eq!(r["disclosed"], true);
    assert_eq!(
        r["total_traces"].as_u64().unwrap(),
        r["search_traces"].as_u64().unwrap() + r["attack_traces"].as_u64().unwrap()
    );
    for b in 0..16 {
        assert!(a.join(format!("cema_byte{b:02}.csv")).exists());
    }
}

/// Order of scale: a TVLA-guided attack on a 10 x 10 scan of the 8-bit chip
/// should cost on the order of 5,807 traces, within a factor of two.
#[test]
fn tvla_sniff_total_is_within_twice_reference_scale() {
    let sc = SimDeviceConfig::preset("aes8bit").unwrap().with_grid(10);
    let totals: Vec<f64> = (0..5)
        .map(|seed| cmd_sniff(&sc, &SniffOptions::new(10, MeasureKind::Tvla, seed)).unwrap().total_traces as f64)
        .collect();
    let m = median(&totals).unwrap();
    assert!((5807.0 / 2.0..=5807.0 * 2.0).contains(&m), "median total {m} ({totals:?})");
}

#[test]
fn snr_guided_costs_more_than_tvla_guided_at_high_snr() {
    let sc = SimDeviceConfig::preset("aes8bit").unwrap().with_grid(10);
    let total = |kind| cmd_sniff(&sc, &SniffOptions::new(10, kind, 3)).unwrap().total_traces;
    assert!(total(MeasureKind::Snr) > total(MeasureKind::Tvla));
}

#[test]
fn undisclosed_key_exits_with_2() {
    let o = scniffer(&["sniff", "--grid", "10", "--cema-cap", "20", "--stride", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("not disclosed"));
}

#[test]
fn bad_scenario_exits_with_1_and_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"name\": \"x\",\n  \"geometry\": oops\n}").unwrap();
    let o = scniffer(&["full-scan", "--scenario", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn gcode_backend_writes_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("scan.gcode");
    let spec = format!("gcode:{}", g.display());
    let o = scniffer(&[
        "full-scan", "--grid", "3", "--measure", "amplitude", "--backend", &spec, "--origin", "10,20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&g).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(&lines[..3], &["G21", "G90", "G28"]);
    assert_eq!(lines.len(), 3 + 2 * 9);
    assert_eq!(lines[3], "G1 X11.50 Y21.50 F3000");
    assert!(lines[3..].chunks(2).all(|c| c[0].starts_with("G1 ") && c[1] == "M400"));
}

#[test]
fn budget_from_constants() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.json");
    std::fs::write(&c, r#"{"k0": 2.0, "k1": 4.0, "c0": 20.0, "c1": 130.0}"#).unwrap();
    let out = dir.path().join("budget");
    let o = scniffer(&[
        "budget", "--constants", c.to_str().unwrap(), "--grid", "10", "--points", "5", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("snr,n_scn_tvla,n_scn_snr,n_exh"));
    assert_eq!(csv.lines().count(), 6);
    assert!(out.join("report.json").exists());
}

#[test]
fn budget_flags_conflict() {
    let o = scniffer(&["budget", "--constants", "a.json", "--fit", "b.json"]);
    assert!(!o.status.success());
}
