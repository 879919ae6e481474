//! Simulates one Leroux panel on a 10x10 grid, fits it and prints the scores.

use std::time::Instant;

use dlnmlps::sim::{make_scenario, simulate_panel, score_replicate, summer_dates, ScenarioParams, ScoreOptions, SimDesign};
use dlnmlps::spatial::{AdjacencyGraph, SpatialHypers, SpatialKind};
use dlnmlps::{fit, FitOptions, ModelConfig, ModelSpec};

fn main() -> dlnmlps::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "temp-like".into());
    let params = ScenarioParams { max_lag: 7, ..Default::default() };
    let scenario = make_scenario(&name, &params)?;
    let graph = AdjacencyGraph::grid(10, 10);
    let dates = summer_dates(&[2006, 2013]);
    let design = SimDesign {
        n_units: 100,
        n_times: dates.len(),
        spatial: Some(SpatialKind::Leroux),
        hypers: SpatialHypers::leroux(1.0 / 0.3, 0.7),
        exposure: Default::default(),
        dates: None,
    };
    let sim = simulate_panel(&scenario, &design, Some(&graph), 7)?;
    let cfg = ModelConfig {
        max_lag: 7,
        spatial: Some(SpatialKind::Leroux),
        exposure_range: Some(scenario.exposure_range),
        ..Default::default()
    };
    let start = Instant::now();
    let spec = ModelSpec::from_panel(&sim.panel, Some(&graph), &cfg)?;
    let f = fit(&spec, None, &FitOptions::default())?;
    println!("newton iterations: {}", f.trace.iter().map(|t| t.newton_iters).sum::<usize>());
    println!("fit: {:.2}s, {} evals, hypers {:?}", start.elapsed().as_secs_f64(), f.hyper_evals, f.natural_hypers());
    let r = score_replicate(&spec, &f, &sim.truth, &ScoreOptions::default())?;
    println!("{r:#?}");
    Ok(())
}
