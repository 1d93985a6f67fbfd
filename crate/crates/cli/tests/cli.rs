use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use vdf_gmm::codec::{decode_pdf, GridContent, GridSidecar};
use vdf_gmm::metrics::{jsd, plane_report};
use vdf_gmm::wgmm::evaluate_pdf_grid;
use vdf_gmm_cli::io::{load_histogram, load_model};

fn vdfgmm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vdfgmm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = vdfgmm(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(String::from)).collect())
        .collect()
}

#[test]
fn maxwellian_fit_meets_jsd_and_matches_metrics_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(
        &["fit", "--scenario", "maxwellian", "--particles", "10000", "--bins", "100", "--components", "8"],
        out,
    );
    assert!(out.join("model_uv.gmmc").is_file());
    let metrics = json(&out.join("metrics.json"));
    let reported = metrics[0]["jsd"].as_f64().unwrap();
    assert!(reported < 0.05, "jsd {reported}");

    // Recompute from the written files alone.
    let (model, meta) = load_model(&out.join("model_uv.gmmc")).unwrap();
    let hist = load_histogram(&out.join("hist_uv.h2d")).unwrap();
    assert_eq!(meta.axis_ranges, hist.ranges().to_vec());
    let report = plane_report(&model, &hist, None, 500).unwrap();
    assert_eq!(report.jsd, reported);
    assert_eq!(metrics[0]["bic"].as_f64().unwrap(), report.bic);
    assert_eq!(metrics[0]["compressed_bytes"], 8 * 6 * 8);
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = vdfgmm(&["fit", "--input", "/definitely/not/here.vdfp"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("input not found"), "{err}");
    assert!(err.contains("\"exit_code\":2"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["fit", "--plane", "xy"][..],
        &["fit", "--scenario", "no-such-preset"],
        &["fit", "--plane", "vw", "--particles", "100"],
        &["fit", "--vrange", "5:-5"],
        &["fit", "--bogus-flag"],
        &["bench", "--baselines", "zstd"],
    ] {
        let o = vdfgmm(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn runtime_error_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // A range far from every particle leaves an empty histogram.
    let o = vdfgmm(&["fit", "--particles", "1000", "--vrange", "100:200"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn all_planes_on_3d_give_three_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(
        &["fit", "--scenario", "bump-on-tail", "--dimension", "3", "--plane", "all", "--particles", "20000", "--bins", "60"],
        out,
    );
    let mut models: Vec<String> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".gmmc"))
        .collect();
    models.sort();
    assert_eq!(models, ["model_uv.gmmc", "model_uw.gmmc", "model_vw.gmmc"]);
    let metrics = json(&out.join("metrics.json"));
    assert_eq!(metrics.as_array().unwrap().len(), 3);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = out.join("cfg.json");
    fs::write(&cfg, r#"{"bins": 40, "fit": {"initial_components": 4}}"#).unwrap();
    ok(
        &["fit", "--particles", "5000", "--bins", "90", "--config", cfg.to_str().unwrap()],
        out,
    );
    let sidecar = GridSidecar::from_json(&fs::read_to_string(out.join("hist_uv.h2d.json")).unwrap()).unwrap();
    assert_eq!(sidecar.n_bins, 40);
    let fit = json(&out.join("fit_uv.json"));
    assert_eq!(fit["initial_components"], 4);
    assert_eq!(json(&out.join("config.json"))["particles"], 5000);

    fs::write(&cfg, r#"{"binz": 40}"#).unwrap();
    let o = vdfgmm(&["fit", "--config", cfg.to_str().unwrap()], out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generated_particles_fit_like_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--scenario", "counter-streaming", "--particles", "20000", "--seed", "4"], &a);
    let particles = a.join("particles.vdfp");
    ok(&["fit", "--input", particles.to_str().unwrap(), "--bins", "80", "--seed", "4"], &a);
    ok(&["fit", "--scenario", "counter-streaming", "--particles", "20000", "--bins", "80", "--seed", "4"], &b);
    for f in ["model_uv.gmmc", "hist_uv.h2d", "metrics.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let scenario = json(&a.join("scenario.json"));
    assert_eq!(scenario["particle_count"], 20000);
}

#[test]
fn bench_rows_agree_with_standalone_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    ok(
        &["bench", "--scenario", "drifting-beam", "--particles", "30000", "--bins", "80", "--repeat", "5"],
        &out,
    );
    let rows = csv_rows(&out.join("bench.csv"));
    let gmm = rows.iter().find(|r| r["codec"] == "gmm" && r["input"] == "histogram").unwrap();

    // The standalone subcommand on the files the bench wrote.
    let standalone = dir.path().join("standalone");
    ok(
        &[
            "metrics",
            "--model",
            out.join("model_uv.gmmc").to_str().unwrap(),
            "--histogram",
            out.join("hist_uv.h2d").to_str().unwrap(),
        ],
        &standalone,
    );
    let m = json(&standalone.join("metrics.json"));
    assert_eq!(gmm["jsd_vs_histogram"].parse::<f64>().unwrap(), m[0]["jsd"].as_f64().unwrap());

    for r in rows.iter().filter(|r| r["codec"] == "raw") {
        assert_eq!(r["ratio"], "1");
        assert_eq!(r["bytes_in"], r["bytes_out"]);
    }
    for r in rows.iter().filter(|r| r["codec"] != "gmm") {
        assert_eq!(r["lossless_verified"], "true", "{r:?}");
        assert_eq!(r["jsd_vs_histogram"], "0", "{r:?}");
    }
    for r in rows.iter().filter(|r| r["codec"] != "gmm" && r["input"] == "particles") {
        assert_eq!(r["jsd_vs_original"], "0", "{r:?}");
    }
    let timings = csv_rows(&out.join("bench_timings.csv"));
    assert_eq!(timings.len(), rows.len());
    assert!(timings.iter().all(|t| t["repeat"] == "5" && t["compress_seconds"].parse::<f64>().unwrap() >= 0.0));
    assert!(!out.join(".bench_write.tmp").exists());
}

#[test]
fn gmm_beats_raw_particles_by_three_orders_at_1e6() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(
        &[
            "bench",
            "--scenario",
            "maxwellian",
            "--particles",
            "1000000",
            "--components",
            "8",
            "--repeat",
            "1",
            "--baselines",
            "raw",
        ],
        out,
    );
    let rows = csv_rows(&out.join("bench.csv"));
    let gmm = rows.iter().find(|r| r["codec"] == "gmm" && r["input"] == "particles").unwrap();
    assert_eq!(gmm["bytes_in"], "16000000");
    let m: usize = gmm["components"].parse().unwrap();
    assert_eq!(gmm["bytes_out"].parse::<usize>().unwrap(), m * 6 * 8);
    assert!(gmm["ratio"].parse::<f64>().unwrap() > 1e3);
}

#[test]
fn subdomains_are_fitted_separately() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["fit", "--particles", "30000", "--bins", "60", "--subdomains", "3", "--format", "csv"], out);
    for s in 0..3 {
        assert!(out.join(format!("model_uv_s{s}.gmmc")).is_file());
    }
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r["subdomain"].as_str()).collect::<Vec<_>>(), ["0", "1", "2"]);
    assert!(!out.join("metrics.json").exists());
}

#[test]
fn reconstruct_writes_the_model_density() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["fit", "--particles", "20000", "--bins", "50"], out);
    let model_path = out.join("model_uv.gmm.json");
    let printed = ok(&["reconstruct", "--model", model_path.to_str().unwrap(), "--bins", "64"], out);
    assert!(printed.trim().ends_with("recon_uv.h2d"));
    let sidecar = GridSidecar::from_json(&fs::read_to_string(out.join("recon_uv.h2d.json")).unwrap()).unwrap();
    assert_eq!(sidecar.content, GridContent::Density);
    let grid = decode_pdf(&fs::read(out.join("recon_uv.h2d")).unwrap(), &sidecar).unwrap();
    let (model, meta) = load_model(&model_path).unwrap();
    let ranges = [meta.axis_ranges[0], meta.axis_ranges[1]];
    let want = evaluate_pdf_grid(&model, 64, ranges).unwrap();
    assert_eq!(grid.values(), want.values());
    assert_eq!(jsd(&grid, &want).unwrap(), 0.0);
}

#[test]
fn timeseries_drift_converges_and_warm_is_never_slower() {
    let dir = tempfile::tempdir().unwrap();
    let (w, c) = (dir.path().join("warm"), dir.path().join("cold"));
    let args = ["timeseries", "--particles", "50000", "--bins", "100", "--cycles", "5", "--drift", "0.05", "--format", "csv"];
    ok(&args, &w);
    let mut cold_args = args.to_vec();
    cold_args.push("--no-warm-start");
    ok(&cold_args, &c);
    let warm = csv_rows(&w.join("timeseries.csv"));
    let cold = csv_rows(&c.join("timeseries.csv"));
    assert_eq!(warm.len(), 5);
    for (a, b) in warm.iter().zip(&cold) {
        // Cold starts may run into the iteration cap; warm ones must not.
        assert_eq!(a["converged"], "true", "{a:?}");
        let (iw, ic): (usize, usize) = (a["iterations"].parse().unwrap(), b["iterations"].parse().unwrap());
        assert!(iw <= ic, "cycle {}: warm {iw} > cold {ic}", a["cycle"]);
    }
    assert_eq!(warm[0], cold[0]);
    assert_eq!(warm[4]["mean_shift"].parse::<f64>().unwrap(), 0.05 * 4.0);
    assert!(w.join("model_uv_c4.gmmc").is_file());
}
