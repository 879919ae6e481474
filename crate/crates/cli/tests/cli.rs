use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dlnmlps::panel::write_panel_csv;
use dlnmlps::sim::{make_scenario, simulate_panel, ScenarioParams, SimDesign};
use dlnmlps::spatial::{AdjacencyGraph, SpatialHypers, SpatialKind};
use dlnmlps_cli::RunConfig;
use tempfile::TempDir;

fn dlnmlps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlnmlps"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DLNMLPS_THREADS")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Data rows of an exported CSV, skipping the provenance comment and header.
fn table(path: impl AsRef<Path>) -> Vec<Vec<String>> {
    read(path)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON on stderr: {text}"));
    serde_json::from_str(line).unwrap()
}

/// Writes a simulated panel and its grid adjacency file; returns their paths.
fn toy_inputs(dir: &Path, rows: usize, cols: usize, t: usize, spatial: Option<SpatialKind>, seed: u64) -> (PathBuf, PathBuf) {
    let params = ScenarioParams { max_lag: 3, ..Default::default() };
    let sc = make_scenario("plane", &params).unwrap();
    let graph = AdjacencyGraph::grid(rows, cols);
    let design = SimDesign {
        n_units: rows * cols,
        n_times: t,
        spatial,
        hypers: SpatialHypers::leroux(4.0, 0.9),
        exposure: Default::default(),
        dates: None,
    };
    let sim = simulate_panel(&sc, &design, Some(&graph), seed).unwrap();
    let panel = dir.join("panel.csv");
    let adj = dir.join("adjacency.txt");
    write_panel_csv(&sim.panel, std::fs::File::create(&panel).unwrap()).unwrap();
    std::fs::write(&adj, graph.to_edge_list()).unwrap();
    (panel, adj)
}

const SMALL_MODEL: &[&str] = &[
    "--set", "v_x=5", "--set", "v_l=4", "--max-lag", "3", "--draws", "500", "--set", "exposure_lo=0", "--set", "exposure_hi=10",
];

fn fit_args<'a>(panel: &'a Path, adj: &'a Path, out: &'a Path, spatial: &'a str) -> Vec<&'a str> {
    let mut a = vec!["fit", "--panel", p(panel), "--adjacency", p(adj), "--out", p(out), "--spatial", spatial, "--x0", "0", "--seed", "11"];
    a.extend_from_slice(SMALL_MODEL);
    a
}

const SIM: &[&str] = &[
    "--scenario", "plane", "--set", "grid_rows=3", "--set", "grid_cols=3", "--set", "n_times=80", "--max-lag", "3",
    "--set", "v_x=5", "--set", "v_l=4", "--spatial", "leroux",
];

fn simulate(out: &Path, extra: &[&str]) -> Output {
    let mut a = vec!["simulate", "--out", p(out)];
    a.extend_from_slice(SIM);
    a.extend_from_slice(extra);
    if !extra.contains(&"--seed") {
        a.extend_from_slice(&["--seed", "21"]);
    }
    dlnmlps(&a)
}

#[test]
fn fit_writes_all_exports_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (panel, adj) = toy_inputs(dir.path(), 3, 3, 80, Some(SpatialKind::Leroux), 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = dlnmlps(&fit_args(&panel, &adj, out, "leroux"));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["fit.json", "rr_overall.csv", "rr_lag.csv", "random_effects.csv", "exceedance.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs between identical runs");
    }

    let artifact: serde_json::Value = serde_json::from_str(&read(a.join("fit.json"))).unwrap();
    assert_eq!(artifact["schema_version"], 1);
    assert_eq!(artifact["master_seed"], 11);
    let hash = artifact["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    for f in ["rr_overall.csv", "rr_lag.csv", "random_effects.csv", "exceedance.csv", "fit.log"] {
        let first = read(a.join(f)).lines().next().unwrap().to_string();
        assert_eq!(first, format!("# config_hash={hash} master_seed=11"), "{f}");
    }

    let overall = table(a.join("rr_overall.csv"));
    assert_eq!(overall.len(), 101);
    let at_x0 = &overall[0];
    assert_eq!(at_x0[0], "0");
    assert_eq!(at_x0[1].parse::<f64>().unwrap(), 1.0);
    assert_eq!(at_x0[4].parse::<f64>().unwrap(), 0.0);
    assert_eq!(table(a.join("rr_lag.csv")).len(), 101 * 4);
    let re = table(a.join("random_effects.csv"));
    assert_eq!(re.len(), 9);
    assert!(re.iter().all(|r| r.len() == 5 && r[1].parse::<f64>().is_ok() && r[4].parse::<f64>().is_ok()));
    let ex = table(a.join("exceedance.csv"));
    assert_eq!(ex.len(), 9);
    assert!(ex.iter().all(|r| r[1] == "all" && r[2] == "77"));

    let log = read(a.join("fit.log"));
    assert!(log.lines().nth(1).unwrap().starts_with("iteration\tobjective"));
    assert!(log.contains("# rho = "));
}

#[test]
fn predict_reproduces_fit_exports() {
    let dir = TempDir::new().unwrap();
    let (panel, adj) = toy_inputs(dir.path(), 2, 2, 60, Some(SpatialKind::Leroux), 4);
    let fit_dir = dir.path().join("fit");
    let o = dlnmlps(&fit_args(&panel, &adj, &fit_dir, "independent"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let pred = dir.path().join("pred");
    let fit_json = fit_dir.join("fit.json");
    let o = dlnmlps(&[
        "predict", "--fit", p(&fit_json), "--panel", p(&panel), "--out", p(&pred), "--x0", "0", "--seed", "11", "--draws", "500",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["rr_overall.csv", "rr_lag.csv", "random_effects.csv", "exceedance.csv"] {
        assert_eq!(read(fit_dir.join(f)), read(pred.join(f)), "{f}");
    }

    let shifted = dir.path().join("shifted");
    let o = dlnmlps(&["predict", "--fit", p(&fit_json), "--out", p(&shifted), "--x0", "5", "--draws", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = table(shifted.join("rr_overall.csv"));
    let mid = rows.iter().find(|r| r[0] == "5").unwrap();
    assert_eq!(mid[1].parse::<f64>().unwrap(), 1.0);
    assert_eq!(mid[4], "");
    assert!(!shifted.join("exceedance.csv").exists());
}

#[test]
fn independent_and_leroux_agree_on_uncorrelated_data() {
    let dir = TempDir::new().unwrap();
    let (panel, adj) = toy_inputs(dir.path(), 4, 4, 150, None, 8);
    let mut curves = Vec::new();
    for kind in ["independent", "leroux"] {
        let out = dir.path().join(kind);
        let o = dlnmlps(&fit_args(&panel, &adj, &out, kind));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let rr: Vec<f64> = table(out.join("rr_overall.csv")).iter().map(|r| r[1].parse::<f64>().unwrap().ln()).collect();
        curves.push(rr);
    }
    let sup = curves[0].iter().zip(&curves[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(sup < 0.02, "sup-norm log RR difference {sup}");
}

#[test]
fn simulate_two_replicates_gives_rows_and_summary() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let o = simulate(&out, &["--replicates", "2", "--set", "keep_panels=true"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = table(out.join("aggregate.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[1][0], "1");
    assert_eq!(rows[2][0], "mean");
    assert_eq!(read(out.join("results.jsonl")).lines().count(), 2);
    assert_eq!(read(out.join("truths.jsonl")).lines().count(), 2);
    assert!(out.join("panel_0001.csv").exists());
    let header = read(out.join("aggregate.csv")).lines().nth(1).unwrap().to_string();
    assert!(header.starts_with("replicate,seed,rmse_lag_log_rr"));

    let again = dir.path().join("again");
    let o = simulate(&again, &["--replicates", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read(out.join("aggregate.csv")), read(again.join("aggregate.csv")));
}

#[test]
fn workers_do_not_change_results_and_shards_merge() {
    let dir = TempDir::new().unwrap();
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    assert_eq!(simulate(&one, &["--replicates", "4", "--workers", "1"]).status.code(), Some(0));
    assert_eq!(simulate(&four, &["--replicates", "4", "--workers", "4"]).status.code(), Some(0));
    assert_eq!(read(one.join("aggregate.csv")), read(four.join("aggregate.csv")));

    let s0 = dir.path().join("s0");
    let s1 = dir.path().join("s1");
    assert_eq!(simulate(&s0, &["--replicates", "3"]).status.code(), Some(0));
    assert_eq!(simulate(&s1, &["--replicates", "1", "--set", "first_replicate=3"]).status.code(), Some(0));
    let merged = dir.path().join("merged.csv");
    let o = dlnmlps(&["score", "--input", p(&s1), "--input", p(&s0.join("results.jsonl")), "--out", p(&merged)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&merged), read(one.join("aggregate.csv")));

    let o = dlnmlps(&["score", "--input", p(&s0), "--input", p(&s0), "--out", p(&merged)]);
    assert_eq!(o.status.code(), Some(1));

    let other = dir.path().join("other");
    assert_eq!(simulate(&other, &["--replicates", "1", "--set", "first_replicate=3", "--seed", "22"]).status.code(), Some(0));
    let o = dlnmlps(&["score", "--input", p(&s0), "--input", p(&other), "--out", p(&merged)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "input");
    assert!(err["message"].as_str().unwrap().contains("mismatch"));
}

#[test]
fn input_errors_exit_one_with_json() {
    let dir = TempDir::new().unwrap();
    let (panel, adj) = toy_inputs(dir.path(), 2, 2, 40, None, 1);
    let out = dir.path().join("out");

    let missing = dir.path().join("nope.csv");
    let o = dlnmlps(&fit_args(&missing, &adj, &out, "none"));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "input");

    let bad = dir.path().join("bad.csv");
    let text = read(&panel);
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let y_col = header.iter().position(|h| *h == "y").unwrap();
    let mut fields: Vec<String> = lines[3].split(',').map(str::to_string).collect();
    fields[y_col] = "-1".into();
    lines[3] = fields.join(",");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let o = dlnmlps(&fit_args(&bad, &adj, &out, "none"));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "data");
    assert_eq!(err["row"], 3);

    let o = dlnmlps(&["fit", "--panel", p(&panel), "--out", p(&out), "--spatial", "leroux", "--x0", "0"]);
    assert_eq!(o.status.code(), Some(1), "leroux without adjacency");

    let o = dlnmlps(&["fit", "--panel", p(&panel), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1), "missing x0");
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("x0"));

    let o = dlnmlps(&["fit", "--panel", p(&panel), "--out", p(&out), "--x0", "0", "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = dlnmlps(&["fit", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "input");
    assert!(!out.join("fit.json").exists());
}

#[test]
fn non_convergence_exits_two_and_still_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let (panel, adj) = toy_inputs(dir.path(), 2, 2, 60, Some(SpatialKind::Leroux), 2);
    let out = dir.path().join("out");
    let mut args = fit_args(&panel, &adj, &out, "leroux");
    args.extend_from_slice(&["--set", "max_evals=4"]);
    let o = dlnmlps(&args);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stderr_json(&o)["error"], "non_convergence");
    let artifact: serde_json::Value = serde_json::from_str(&read(out.join("fit.json"))).unwrap();
    assert_eq!(artifact["diagnostics"]["hyper_converged"], false);
    assert!(out.join("rr_overall.csv").exists());
}

#[test]
fn config_file_is_overridden_by_set_and_flags() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("run.cfg");
    std::fs::write(&file, "# model\nv_x = 6\nv_l=5\nspatial = icar\nx0 = 2.5 # reference\n").unwrap();
    let mut cfg = RunConfig::default();
    cfg.apply_file(&file).unwrap();
    assert_eq!((cfg.v_x, cfg.v_l, cfg.x0), (6, 5, Some(2.5)));
    assert_eq!(cfg.spatial, Some(SpatialKind::Icar));
    cfg.apply_pair("v_l=7").unwrap();
    cfg.set("spatial", "none").unwrap();
    assert_eq!((cfg.v_l, cfg.spatial), (7, None));
    assert!(cfg.apply_pair("v_x").is_err());
    assert!(cfg.set("level", "high").is_err());

    let mut other = cfg.clone();
    other.workers = 8;
    other.out = Some(dir.path().into());
    assert_eq!(cfg.canonical_text(), other.canonical_text());
    other.seed += 1;
    assert_ne!(cfg.canonical_text(), other.canonical_text());

    let mut round = RunConfig::default();
    for (k, v) in cfg.to_map() {
        round.set(&k, &v).unwrap();
    }
    assert_eq!(round, cfg);
}

#[test]
fn thread_cap_limits_workers() {
    let cfg = RunConfig { workers: 8, ..Default::default() };
    std::env::set_var("DLNMLPS_THREADS", "3");
    let capped = cfg.effective_workers();
    std::env::remove_var("DLNMLPS_THREADS");
    assert_eq!(capped, 3);
    assert_eq!(cfg.effective_workers(), 8);
}
