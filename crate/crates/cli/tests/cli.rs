use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cycletree::data::{load_csv_panel, ColumnMap, Standardizer};
use cycletree::ensemble::{build_augmented_predictors, predictor_vector, AugmentationConfig, Variant};
use cycletree::evaluate::{cycle_views, target_series};
use cycletree::model::ParamSnapshot;
use cycletree::tree::{fit_cart, PredictorWindow};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cycletree")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn simulate_small(dir: &Path, vintages: usize) -> std::path::PathBuf {
    let out = dir.join("sim");
    let cfg = write_config(dir, "sim.cfg", &format!("p = 2\nsim_len = 90\nsim_vintages = {vintages}\n"));
    let o = run(&["simulate", "--config", &cfg, "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["decompose", "--bogus"]).status.code(), Some(1));
    let o = run(&["decompose", "--config", "/nonexistent/cfg"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = simulate_small(a.path(), 3);
    let pb = simulate_small(b.path(), 3);
    for f in ["panel.csv", "truth.csv", "truth_params.json", "vintages/1997-06.csv"] {
        assert_eq!(fs::read(pa.join(f)).unwrap(), fs::read(pb.join(f)).unwrap(), "{f}");
    }
    assert!(fs::read_to_string(pa.join("config.echo")).unwrap().contains("seed = 4"));
}

#[test]
fn decompose_outputs_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 1);
    let data = sim.join("panel.csv");
    let cfg = write_config(dir.path(), "dec.cfg", &format!("p = 2\ndata = {}\n", data.display()));
    let out1 = dir.path().join("d1");
    let out2 = dir.path().join("d2");
    for out in [&out1, &out2] {
        let o = run(&["decompose", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let cycle = fs::read_to_string(out1.join("cycle.csv")).unwrap();
    assert_eq!(cycle.lines().next(), Some("date,psi1_smoothed"));
    assert_eq!(cycle.lines().count(), 91);
    for f in ["cycle.csv", "trends.csv", "params.json", "diagnostics.csv"] {
        assert_eq!(fs::read(out1.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f}");
    }

    let capped = write_config(dir.path(), "cap.cfg", &format!("p = 2\nmax_iter = 1\ndata = {}\n", data.display()));
    let out3 = dir.path().join("d3");
    let o = run(&["decompose", "--config", &capped, "--out", out3.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(out3.join("diagnostics.csv").exists());

    let small = dir.path().join("small.csv");
    fs::write(&small, "date,a,b,c\n2000-01,1,2,3\n2000-02,2,1,3\n2000-03,1,1,2\n").unwrap();
    let bad = write_config(dir.path(), "bad.cfg", &format!("data = {}\n", small.display()));
    let o = run(&["decompose", "--config", &bad, "--out", dir.path().join("d4").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape mismatch"));
}

#[test]
fn select_singleton_grid() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 1);
    let cfg = write_config(
        dir.path(),
        "sel.cfg",
        &format!(
            "data = {}\ngrid_p = 2\ngrid_lambda = 0.3\ngrid_alpha = 0.5\ngrid_beta = 1.1\nselect_j = 2\nmax_iter = 30\n",
            sim.join("panel.csv").display()
        ),
    );
    let out = dir.path().join("s");
    let o = run(&["select", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let chosen = fs::read_to_string(out.join("selected.txt")).unwrap();
    assert_eq!(chosen, "p = 2\nlambda = 0.3\nalpha = 0.5\nbeta = 1.1\n");
}

#[test]
fn identity_plan_forecast_is_the_single_tree() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 1);
    let data = sim.join("panel.csv");
    let dec = dir.path().join("dec");
    let base = format!("p = 2\ndata = {}\ntargets = PRICE1\nmembers = 1\nmin_leaf = 10\n", data.display());
    let cfg = write_config(dir.path(), "a.cfg", &base);
    assert!(run(&["decompose", "--config", &cfg, "--out", dec.to_str().unwrap()]).status.success());
    let params_path = dec.join("params.json");
    let cfg = write_config(dir.path(), "b.cfg", &format!("{base}params = {}\n", params_path.display()));
    let out = dir.path().join("f");
    let o = run(&["fit-ensemble", "--config", &cfg, "--out", out.to_str().unwrap(), "--scheme", "block:100000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("ensemble/manifest.json").exists());
    let o = run(&["forecast", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("forecast.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], &["1997-07", "PRICE1", "augmented"]);
    let got: f64 = row[3].parse().unwrap();

    let params = ParamSnapshot::from_json(&fs::read_to_string(&params_path).unwrap()).unwrap().to_params().unwrap();
    let panel = load_csv_panel(&data, &ColumnMap::default()).unwrap();
    let ids: Vec<String> = params.shape.default_series_ids();
    let z = Standardizer::new(params.eta.clone()).unwrap().apply(&panel.select(&ids).unwrap()).unwrap();
    let aug = AugmentationConfig::default();
    let views = cycle_views(&params, &z, &aug).unwrap();
    let y = target_series(&panel, "PRICE1", cycletree::data::TransformSpec::MoMSquaredReturn).unwrap();
    let set = build_augmented_predictors(&y, Some(&views), &aug, Variant::Augmented).unwrap();
    let tree = fit_cart(&set.targets, &set.windows, 10).unwrap();
    let x = predictor_vector(&y, Some(&views), &aug, Variant::Augmented, y.len()).unwrap().unwrap();
    assert_eq!(got, tree.predict(&PredictorWindow::single(x).unwrap()));
}

#[test]
fn evaluate_report_and_vintage_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 5);
    let vint = sim.join("vintages");
    let cfg = write_config(
        dir.path(),
        "ev.cfg",
        &format!("p = 2\nvintages = {}\ntargets = PRICE1\nmembers = 4\nmin_leaf = 10\nmax_iter = 50\n", vint.display()),
    );
    let out = dir.path().join("e");
    let o = run(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "target,scheme,variant,rel_mse");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("PRICE1,pair_bootstrap,autoregressive,"));
    assert!(fs::read_to_string(out.join("summary.txt")).unwrap().contains("lookahead_violations = 0"));

    let out_j = dir.path().join("ej");
    let o = run(&["evaluate", "--config", &cfg, "--out", out_j.to_str().unwrap(), "--scheme", "jackknife:0.2", "--mode", "full"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out_j.join("report.csv")).unwrap().lines().count(), 3);

    fs::remove_file(vint.join("1997-04.csv")).unwrap();
    let o = run(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("1997-04"));
}
