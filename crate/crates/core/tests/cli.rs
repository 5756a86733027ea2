use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flim::codebook::Codebook;

fn flim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flim"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

const SMALL_RUN: &str = "[sim]\nn_symbols = 3000\nsnr_grid_db = [150, 200, 250]\n";

#[test]
fn se_table_flim_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = flim(dir.path(), &["se-table", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("o/se.csv"));
    assert_eq!(header, ["scheme", "n_t", "n_a", "M", "eta_bpcu"]);
    let flim_rows: Vec<_> = rows.iter().filter(|r| r[0] == "flim").collect();
    assert_eq!(flim_rows.len(), 10);
    for r in flim_rows {
        let n_t: f64 = r[1].parse().unwrap();
        let eta: f64 = r[4].parse().unwrap();
        assert_eq!(eta, (n_t * 3f64.log2()).floor(), "n_t = {n_t}");
    }
}

#[test]
fn cn_map_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = flim(dir.path(), &["cn-map", "--out", "o"]);
    assert!(out.status.success());
    let (header, rows) = read_csv(&dir.path().join("o/cn_map.csv"));
    assert_eq!(header, ["r_cm", "omega_deg", "cn_db"]);
    assert_eq!(rows.len(), 41 * 360);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/cn_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["points"], 41 * 360);
}

#[test]
fn two_schemes_give_two_curves_on_one_grid() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL_RUN).unwrap();
    let out = flim(
        dir.path(),
        &["abep", "--config", "c.toml", "--scheme", "flim", "--scheme", "smx", "--out", "o"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h1, r1) = read_csv(&dir.path().join("o/abep_flim_M1.csv"));
    let (h2, r2) = read_csv(&dir.path().join("o/abep_smx_M2.csv"));
    assert_eq!(h1, ["eb_n0_db", "abep", "bit_errors", "bits_sent", "repair_rate"]);
    assert_eq!(h1, h2);
    let grid = |rows: &[Vec<String>]| rows.iter().map(|r| r[0].clone()).collect::<Vec<_>>();
    assert_eq!(grid(&r1), grid(&r2));
    assert_eq!(r1.len(), 3);
    let abeps = fs::read_dir(dir.path().join("o"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("abep_"))
        .count();
    assert_eq!(abeps, 2);
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL_RUN).unwrap();
    assert!(flim(dir.path(), &["abep", "--config", "c.toml", "--seed", "11", "--out", "a"]).status.success());
    // The manifest records the output directory; replay elsewhere.
    let out = flim(dir.path(), &["abep", "--config", "a/manifest.json", "--out", "b"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["abep_flim_M1.csv", "abep_gsm2_na2_M2.csv", "abep_smx_M2.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["codebooks"].as_array().unwrap().len(), 3);
}

#[test]
fn validation_failure_exits_with_error_document() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[sim]\nsnr_grid_db = [10, 5]\n").unwrap();
    let out = flim(dir.path(), &["abep", "--config", "bad.toml"]);
    assert!(!out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(doc["error"], "ValidationError");
    assert_eq!(doc["field"], "snr_grid_db");

    fs::write(dir.path().join("typo.toml"), "[scene]\nh_lum = 3\n").unwrap();
    let out = flim(dir.path(), &["cn-map", "--config", "typo.toml"]);
    assert!(!out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(doc["error"], "ParseError");
    assert_eq!(doc["line"], 2);
}

#[test]
fn exported_codebook_can_be_pinned() {
    let dir = tempfile::tempdir().unwrap();
    assert!(flim(dir.path(), &["codebook", "--scheme", "gsm2", "--out", "o"]).status.success());
    let path = dir.path().join("o/codebook_gsm2_na2_M2.json");
    let exported = Codebook::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    fs::write(
        dir.path().join("pin.toml"),
        format!(
            "[[scheme]]\nname = \"gsm2\"\nM = 2\nn_a = 2\ncodebook = {:?}\n[sim]\nn_symbols = 100\nsnr_grid_db = [200]\n",
            path.display().to_string()
        ),
    )
    .unwrap();
    let out = flim(dir.path(), &["abep", "--config", "pin.toml", "--out", "p"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("p/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["codebooks"][0]["sha256"], exported.content_hash());

    // A pinned codebook must match the scheme it is attached to.
    fs::write(
        dir.path().join("wrong.toml"),
        format!("[[scheme]]\nname = \"smx\"\nM = 2\ncodebook = {:?}\n", path.display().to_string()),
    )
    .unwrap();
    let out = flim(dir.path(), &["codebook", "--config", "wrong.toml", "--out", "w"]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(doc["error"], "ConfigMismatch");
}

#[test]
fn bound_csv_has_unit_header() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL_RUN).unwrap();
    assert!(flim(dir.path(), &["bound", "--config", "c.toml", "--scheme", "smx", "--out", "o"]).status.success());
    let (header, rows) = read_csv(&dir.path().join("o/bound_smx_M2.csv"));
    assert_eq!(header, ["eb_n0_db", "union_bound"]);
    let values: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0]));
}
