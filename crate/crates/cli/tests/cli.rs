use std::path::Path;
use std::process::{Command, Output};

use basisrisk::evaluation::equicorrelated_panel;
use basisrisk::write_panel;

fn basisrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basisrisk"))
        .args(args)
        .env("BASISRISK_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_equicorrelated(dir: &Path) -> String {
    let panel = equicorrelated_panel(3, 0.5, 8, 1).unwrap();
    let path = dir.join("equi.csv");
    write_panel(&panel, std::fs::File::create(&path).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn write_rows(dir: &Path, name: &str, header: &str, rows: &[String]) -> String {
    let path = dir.join(name);
    std::fs::write(&path, format!("{header}\n{}\n", rows.join("\n"))).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn zonal_on_equicorrelated_triple() {
    let dir = tempfile::tempdir().unwrap();
    let y = write_equicorrelated(dir.path());
    let out = basisrisk(&["zonal", "--yields", &y]);
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "L0");
    let r2: f64 = row[3].parse().unwrap();
    assert!((r2 - 2.0 / 3.0).abs() < 1e-9);
    assert!(String::from_utf8_lossy(&out.stderr).contains("66.7%"));
}

#[test]
fn experiment_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<String> = (0..120)
        .flat_map(|i| {
            (0..5).map(move |t| format!("f{i},{},{}", 2000 + t, 10.0 + ((i * 7 + t * 13) % 11) as f64))
        })
        .collect();
    let y = write_rows(dir.path(), "y.csv", "field_id,period,yield", &rows);
    let text = stdout(&basisrisk(&["experiment", "--yields", &y]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kind,size,replication,r2_bar");
    assert_eq!(lines.len() - 1, 4 * 200 + 2);
    assert!(lines[lines.len() - 1].starts_with("optimal,"));
}

#[test]
fn missing_column_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let y = write_rows(
        dir.path(),
        "y.csv",
        "field_id,period,t_ha",
        &["a,1,2".into(), "a,2,3".into()],
    );
    let out = basisrisk(&["zonal", "--yields", &y]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("yield"));

    let ok = basisrisk(&["zonal", "--yields", &y, "--column", "yield=t_ha"]);
    assert_ne!(ok.status.code(), Some(2), "{}", String::from_utf8_lossy(&ok.stderr));
}

#[test]
fn unreadable_file_and_bad_flags_exit_two() {
    assert_eq!(basisrisk(&["zonal", "--yields", "/nonexistent.csv"]).status.code(), Some(2));
    assert_eq!(basisrisk(&["zonal", "--bogus"]).status.code(), Some(2));
    assert_eq!(basisrisk(&["eu", "--yields", "x", "--trigger", "abc"]).status.code(), Some(2));
}

#[test]
fn unknown_external_zones_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<String> = (0..6)
        .flat_map(|i| {
            (0..4).map(move |t| {
                format!("f{i},{},{},w{}", 2000 + t, 5.0 + ((i + 3 * t) % 5) as f64, i % 2)
            })
        })
        .collect();
    let y = write_rows(dir.path(), "y.csv", "field_id,period,yield,zone_l3", &rows);
    let ext = write_rows(
        dir.path(),
        "rain.csv",
        "zone_id,period,value",
        &["w0,2000,1".into(), "w9,2000,2".into(), "w7,2000,3".into()],
    );
    let out = basisrisk(&["design", "--yields", &y, "--level", "L3", "--external", &format!("rain={ext}")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("w7") && err.contains("w9"), "{err}");
}

#[test]
fn help_shows_defaults() {
    let eu = stdout(&basisrisk(&["eu", "--help"]));
    for default in ["[default: 0.9]", "[default: 1.5]", "[default: 0.3]", "[default: 30]", "[default: t-1]"] {
        assert!(eu.contains(default), "missing {default}");
    }
}

#[test]
fn measure_recovers_slope_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for i in 0..40 {
        for t in 0..5 {
            let a = 10.0 + ((i * 31 + t * 17) % 23) as f64 / 4.0;
            let wobble = if (i + t) % 2 == 0 { 0.01 } else { -0.01 };
            truth.push(format!("f{i},{},{a}", 2000 + t));
            pred.push(format!("f{i},{},{}", 2000 + t, 2.0 * a + wobble));
        }
    }
    let a = write_rows(dir.path(), "a.csv", "field_id,period,yield", &truth);
    let b = write_rows(dir.path(), "b.csv", "field_id,period,yield", &pred);
    let text = stdout(&basisrisk(&["measure", "--truth", &a, "--predicted", &b, "--modes", "pooled"]));
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "pooled");
    let gamma: f64 = row[2].parse().unwrap();
    let p: f64 = row[3].parse().unwrap();
    assert!((gamma - 2.0).abs() < 1e-3);
    assert!(p < 1e-6);
}

#[test]
fn out_file_gets_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let y = write_equicorrelated(dir.path());
    let out = dir.path().join("zonal.json");
    let res = basisrisk(&[
        "zonal",
        "--yields",
        &y,
        "--format",
        "json",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    stdout(&res);
    let table: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(table[0]["level"], "L0");
    let manifest_path = format!("{}.manifest.json", out.display());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["threads"], 2);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
}
