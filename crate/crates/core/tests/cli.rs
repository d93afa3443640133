use std::path::Path;
use std::process::Command;

use gbsm::cli::{evolution_power_db, CONFIG_SNAPSHOT, MANIFEST_FILE, TENSOR_FILE};
use gbsm::config::ScenarioConfig;
use gbsm::io::{read_tensor, CsvTable, RunManifest};
use gbsm::rng::{substream, TRACK_STREAM};
use gbsm::scenario::build_scenario;

fn gbsm(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gbsm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = gbsm(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn csv(out: &Path, name: &str) -> CsvTable {
    CsvTable::read(&out.join(name)).unwrap()
}

#[test]
fn generate_default_shape_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate"], dir.path());
    let (h, data) = read_tensor(&dir.path().join(TENSOR_FILE)).unwrap();
    assert_eq!(h.dims, [10, 128, 21, 256]);
    assert_eq!(data.len(), 10 * 128 * 21 * 256);
    assert_eq!(h.delays.len(), 21);
    let m = RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.command, "generate");
    assert_eq!(m.seed, 1);
    assert!(m.artifacts.iter().any(|a| a == Path::new(TENSOR_FILE)));
    assert_eq!(h.config_hash.as_deref(), Some(m.config_hash.as_str()));
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml");
    assert_eq!(ScenarioConfig::load(&path).unwrap(), ScenarioConfig::default());
}

#[test]
fn missing_carrier_frequency_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "schema_version = 1\n").unwrap();
    let out = dir.path().join("out");
    let o = gbsm(&["generate", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("carrier_frequency"));
    assert!(!out.join(TENSOR_FILE).exists());
}

#[test]
fn mistyped_key_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\ncarrier_frequency = 2.6e9\n[tx_array]\nnum_elements = \"many\"\n",
    )
    .unwrap();
    let o = gbsm(&["generate", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tx_array.num_elements"));
}

#[test]
fn same_seed_gives_identical_tensor() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["generate", "--seed", "5"], a.path());
    ok(&["generate", "--seed", "5"], b.path());
    let ta = std::fs::read(a.path().join(TENSOR_FILE)).unwrap();
    assert_eq!(ta, std::fs::read(b.path().join(TENSOR_FILE)).unwrap());
    let c = tempfile::tempdir().unwrap();
    ok(&["generate", "--seed", "6"], c.path());
    assert_ne!(ta, std::fs::read(c.path().join(TENSOR_FILE)).unwrap());
}

#[test]
fn aps_windows_and_flags() {
    let a = tempfile::tempdir().unwrap();
    ok(&["aps"], a.path());
    let t = csv(a.path(), "aps.csv");
    assert_eq!(t.meta["windows"], "117");
    let mut starts: Vec<&str> = t.column("window_start").unwrap();
    starts.dedup();
    assert_eq!(starts.len(), 117);
    assert_eq!(t.rows.len(), 117 * 719);
    assert!(t
        .column("power_db")
        .unwrap()
        .iter()
        .all(|v| v.parse::<f64>().unwrap() <= 0.0));

    let b = tempfile::tempdir().unwrap();
    ok(&["aps", "--window", "12", "--step", "1"], b.path());
    assert_eq!(
        std::fs::read(a.path().join("aps.csv")).unwrap(),
        std::fs::read(b.path().join("aps.csv")).unwrap()
    );

    let c = tempfile::tempdir().unwrap();
    ok(&["aps", "--tap", "3"], c.path());
    let tc = csv(c.path(), "aps.csv");
    assert_eq!(tc.meta["tap"], "3");
    assert_ne!(tc.rows, t.rows);
}

#[test]
fn evolve_power_matches_tracks() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["evolve"], dir.path());
    let t = csv(dir.path(), "evolve.csv");
    let cfg = ScenarioConfig::default();
    let scn = build_scenario(&cfg).unwrap();
    let tracks = scn.draw_tracks(&mut substream(cfg.seed, TRACK_STREAM)).unwrap();
    assert_eq!(t.rows.len(), 20 * 128);
    for row in &t.rows {
        let c: usize = row[0].parse().unwrap();
        let p: usize = row[1].parse().unwrap();
        let tr = &tracks.clusters[c - 1];
        let pc = scn.clusters[c - 1].mean_power;
        let pi = if tr.visible[p - 1] { 1.0 } else { 0.0 };
        assert_eq!(row[2], if tr.visible[p - 1] { "1" } else { "0" });
        let expect = 10.0 * (pc * tr.xi[p - 1].powi(2) * pi).log10();
        let got: f64 = row[5].parse().unwrap();
        if expect.is_finite() {
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        } else {
            assert_eq!(got, f64::NEG_INFINITY);
        }
        assert_eq!(got, evolution_power_db(pc, tr.xi[p - 1], tr.visible[p - 1]));
    }

    let all = tempfile::tempdir().unwrap();
    ok(&["evolve", "--all-visible"], all.path());
    let t = csv(all.path(), "evolve.csv");
    assert!(t.column("visible").unwrap().iter().all(|v| *v == "1"));
}

#[test]
fn ccf_reference_antennas() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["stats", "ccf", "--ref-antennas", "1,64,128"], dir.path());
    let t = csv(dir.path(), "ccf.csv");
    let mut refs: Vec<&str> = t.column("ref_antenna").unwrap();
    refs.dedup();
    assert_eq!(refs, vec!["1", "64", "128"]);
    assert!(t.column("estimator").unwrap().iter().all(|e| *e == "analytic"));
    // partner for anchor 128 lies towards the array interior
    let last = t.rows.last().unwrap();
    assert_eq!((last[2].as_str(), last[3].as_str()), ("128", "108"));
}

#[test]
fn power_per_sigma() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["stats", "power", "--sigma-db", "2,4,8"], dir.path());
    let t = csv(dir.path(), "power.csv");
    let mut s: Vec<&str> = t.column("sigma_db").unwrap();
    s.dedup();
    assert_eq!(s, vec!["2", "4", "8"]);
    assert_eq!(t.rows.len(), 3 * 128);
    ok(&["stats", "kfactor", "--sigma-db", "2,4,8"], dir.path());
    let k = csv(dir.path(), "kfactor.csv");
    assert_eq!(k.rows.len(), 3 * 128);
    for row in &k.rows {
        match row[5].as_str() {
            "1" => assert_eq!(row[3], "inf"),
            _ => assert!(row[3].parse::<f64>().unwrap().is_finite()),
        }
    }
}

#[test]
fn empirical_acf_has_standard_errors() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["stats", "acf", "--empirical", "--runs", "200"], dir.path());
    let t = csv(dir.path(), "acf.csv");
    assert_eq!(t.meta["samples"], "200");
    assert!(t.column("estimator").unwrap().iter().all(|e| *e == "monte-carlo"));
    assert!(t.column("se").unwrap().iter().all(|v| v.parse::<f64>().unwrap() > 0.0));
}

#[test]
fn failures_leave_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = gbsm(&["stats", "acf", "--tap", "99"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 0);

    let file = dir.path().join("not-a-dir");
    std::fs::write(&file, "x").unwrap();
    let o = gbsm(&["evolve"], &file);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn replay_from_snapshot_is_identical() {
    let a = tempfile::tempdir().unwrap();
    ok(&["stats", "ccf", "--seed", "9", "--empirical", "--runs", "50"], a.path());
    let snapshot = a.path().join(CONFIG_SNAPSHOT);
    let b = tempfile::tempdir().unwrap();
    ok(
        &["stats", "ccf", "--config", snapshot.to_str().unwrap(), "--empirical", "--runs", "50"],
        b.path(),
    );
    assert_eq!(
        std::fs::read(a.path().join("ccf.csv")).unwrap(),
        std::fs::read(b.path().join("ccf.csv")).unwrap()
    );
    let m = RunManifest::read(&a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(ScenarioConfig::from_toml_str(&m.config).unwrap().seed, 9);
}

#[test]
fn csv_headers_are_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["stats", "power"], dir.path());
    let text = std::fs::read_to_string(dir.path().join("power.csv")).unwrap();
    assert!(text.starts_with("# schema_version: 1\n"));
    let t = CsvTable::parse(&text).unwrap();
    for key in ["seed", "config_hash", "kind"] {
        assert!(t.meta.contains_key(key), "{key}");
    }
}
