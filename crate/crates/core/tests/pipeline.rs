//! End-to-end runs on synthetic CSV inputs.

mod common;

use std::fs;

use common::{baseline_config, quantile_violations, same_bytes, small_config, write_panel};
use stvar::io::pipeline::{draws_file, find_draw_stores, IRF_FILE, MANIFEST};
use stvar::io::{dry_run, estimate, irf_from_stores, load_and_validate, MissingPolicy, RunConfig};
use stvar::{ShockTag, YearMonth};

fn ym(y: i32, m: u32) -> YearMonth {
    YearMonth::new(y, m).unwrap()
}

#[test]
fn baseline_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), ym(1999, 1), 252, 1);
    let cfg = baseline_config(&panel, &dir.path().join("out"));
    let (data, s) = dry_run(&cfg).unwrap();
    assert_eq!((s.n_vars, s.lags), (13, 4));
    assert_eq!(s.coefficients_j, 702);
    assert_eq!(s.regressors_k, 108);
    assert_eq!(s.covariance_r, 78);
    assert_eq!(s.retained_draws_per_chain, 3000);
    // yoy transforms use the first 12 months
    assert_eq!(s.window.0, "2000-01");
    assert_eq!(s.n_obs, 240 - 4);
    assert_eq!(data.provenance.instrument_column, "TG");
    assert!(data.instrument.purged);
}

#[test]
fn shipped_config_parses() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/default.conf");
    let cfg = RunConfig::load(&path).unwrap();
    let mut d = RunConfig::default();
    d.panel_path = cfg.panel_path.clone();
    d.output_dir = cfg.output_dir.clone();
    d.variables = cfg.variables.clone();
    d.transforms = cfg.transforms.clone();
    assert_eq!(cfg.to_map(), d.to_map(), "template values drifted from the defaults");
    assert_eq!(cfg.variables.len(), 13);
}

#[test]
fn qe_window_truncates_to_the_instrument() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), ym(1999, 1), 252, 2);
    let mut cfg = baseline_config(&panel, &dir.path().join("out"));
    cfg.shock = ShockTag::Qe;
    // 68 usable months cannot carry the 70 purging regressors of the baseline
    let err = dry_run(&cfg).unwrap_err().to_string();
    assert!(err.contains("purging `QE` over 2014-01 .. 2019-12") && err.contains("instrument.purge"), "{err}");

    cfg.purge = false;
    let err = dry_run(&cfg).unwrap_err().to_string();
    assert!(err.contains("T = 68 must exceed K = 108"), "{err}");

    let mut cfg = small_config(&panel, &dir.path().join("out"));
    cfg.shock = ShockTag::Qe;
    let (data, s) = dry_run(&cfg).unwrap();
    assert_eq!(s.window, ("2014-01".to_string(), "2019-12".to_string()));
    assert_eq!(s.n_obs, 72 - cfg.lags);
    assert_eq!(data.provenance.rows_dropped_before, 15 * 12);

    // an explicit earlier start hits the blank months and says where
    cfg.sample_start = Some(ym(2013, 6));
    let err = dry_run(&cfg).unwrap_err().to_string();
    assert!(err.contains("column `QE`") && err.contains("2013-06"), "{err}");

    // unless blank months are declared inactive
    cfg.instrument_missing = MissingPolicy::Inactive;
    let (data, _) = dry_run(&cfg).unwrap();
    assert_eq!(data.provenance.instrument_inactive_months, 7);
}

#[test]
fn empty_instrument_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), ym(1999, 1), 252, 3);
    let text = fs::read_to_string(&panel).unwrap();
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let mut f: Vec<&str> = line.split(',').collect();
        if i > 0 {
            f[15] = "";
        }
        out.push_str(&f.join(","));
        out.push('\n');
    }
    fs::write(&panel, out).unwrap();
    let mut cfg = baseline_config(&panel, &dir.path().join("out"));
    cfg.shock = ShockTag::Fg;
    let err = dry_run(&cfg).unwrap_err().to_string();
    assert!(err.contains("instrument column `FG`") && err.contains("is empty"), "{err}");
}

#[test]
fn bad_inputs_report_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), ym(1999, 1), 252, 4);
    let good = fs::read_to_string(&panel).unwrap();
    let cfg = baseline_config(&panel, &dir.path().join("out"));

    let edit = |line_no: usize, f: &dyn Fn(&mut Vec<String>)| {
        let lines: Vec<String> = good
            .lines()
            .enumerate()
            .map(|(i, l)| {
                let mut v: Vec<String> = l.split(',').map(str::to_string).collect();
                if i + 1 == line_no {
                    f(&mut v);
                }
                v.join(",")
            })
            .collect();
        fs::write(&panel, lines.join("\n") + "\n").unwrap();
        load_and_validate(&cfg).unwrap_err().to_string()
    };

    let e = edit(100, &|v| v[3] = String::new());
    assert!(e.contains("line 100") && e.contains("column `GBY10`") && e.contains("missing"), "{e}");
    let e = edit(50, &|v| v[2] = "abc".into());
    assert!(e.contains("line 50") && e.contains("column `GBY2`") && e.contains("not a number"), "{e}");
    let e = edit(60, &|v| v[0] = "2003-13".into());
    assert!(e.contains("line 60") && e.contains("column `date`"), "{e}");
    let e = edit(61, &|v| v[0] = "2004-02".into());
    assert!(e.contains("line 61") && e.contains("consecutive"), "{e}");
    let e = edit(70, &|v| v[4] = "-5".into());
    assert!(e.contains("line 70") && e.contains("column `ES50`") && e.contains("positive"), "{e}");
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), ym(1999, 1), 252, 5);
    let mut a = small_config(&panel, &dir.path().join("a"));
    a.chains = 2;
    let mut b = a.clone();
    b.output_dir = dir.path().join("b");
    let ra = estimate(&a).unwrap();
    let rb = estimate(&b).unwrap();
    for name in [draws_file(0), draws_file(1), IRF_FILE.to_string()] {
        assert!(same_bytes(&a.output_dir.join(&name), &b.output_dir.join(&name)), "{name} differs");
    }
    assert_eq!(ra.files, rb.files);
    // different chains really are different
    assert!(!same_bytes(&a.output_dir.join(draws_file(0)), &a.output_dir.join(draws_file(1))));
}

#[test]
fn full_run_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), ym(1999, 1), 252, 6);
    let cfg = small_config(&panel, &dir.path().join("run"));
    let out = estimate(&cfg).unwrap();
    assert_eq!(out.store.len(), cfg.chain.retained());
    assert_eq!(quantile_violations(&out.surface), 0);
    assert_eq!(out.surface.dates.len(), out.spec.n_obs);

    // irf from the saved store reproduces the estimate's file
    let mut again = cfg.clone();
    again.output_dir = dir.path().join("irf");
    let stores = find_draw_stores(&cfg.output_dir).unwrap();
    let surface = irf_from_stores(&again, &stores).unwrap();
    assert_eq!(surface, out.surface);
    assert!(same_bytes(&cfg.output_dir.join(IRF_FILE), &again.output_dir.join(IRF_FILE)));

    // the manifest alone re-executes the run
    let mut replay = RunConfig::load(&cfg.output_dir.join(MANIFEST)).unwrap();
    assert_eq!(replay.hash(), { let mut c = cfg.clone(); c.panel_path = fs::canonicalize(&cfg.panel_path).unwrap(); c.output_dir = fs::canonicalize(&cfg.output_dir).unwrap(); c.hash() });
    replay.output_dir = dir.path().join("replay");
    estimate(&replay).unwrap();
    assert!(same_bytes(&cfg.output_dir.join(draws_file(0)), &replay.output_dir.join(draws_file(0))));

    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("diagnostics.json")).unwrap()).unwrap();
    assert!(diag["ess"].as_object().unwrap().contains_key("gamma"));
}

#[test]
fn stores_from_other_data_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), ym(1999, 1), 252, 7);
    let cfg = small_config(&panel, &dir.path().join("run"));
    estimate(&cfg).unwrap();
    let mut other = cfg.clone();
    other.lags = 3;
    let err = irf_from_stores(&other, &find_draw_stores(&cfg.output_dir).unwrap()).unwrap_err().to_string();
    assert!(err.contains("not produced from this configuration"), "{err}");
}
