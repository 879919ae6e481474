//! Writes the bundled toy dataset: 100 areas on a 10x10 grid observed over
//! two summers, with a temperature-like surface and a Leroux area effect.
//!
//! Usage: `cargo run --example toy_dataset -- <output dir>`

use std::fs;
use std::path::PathBuf;

use dlnmlps::panel::write_panel_csv;
use dlnmlps::sim::{make_scenario, simulate_panel, summer_dates, ScenarioParams, SimDesign};
use dlnmlps::spatial::{AdjacencyGraph, SpatialHypers, SpatialKind};

pub const SEED: u64 = 20_060_601;

fn main() -> dlnmlps::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    fs::create_dir_all(&out)?;
    let scenario = make_scenario("temp-like", &ScenarioParams { max_lag: 7, ..Default::default() })?;
    let graph = AdjacencyGraph::grid(10, 10);
    let dates = summer_dates(&[2006, 2013]);
    let design = SimDesign {
        n_units: 100,
        n_times: dates.len(),
        spatial: Some(SpatialKind::Leroux),
        hypers: SpatialHypers::leroux(1.0 / 0.5, 0.95),
        exposure: Default::default(),
        dates: Some(dates),
    };
    let sim = simulate_panel(&scenario, &design, Some(&graph), SEED)?;
    write_panel_csv(&sim.panel, fs::File::create(out.join("panel.csv"))?)?;
    fs::write(out.join("adjacency.txt"), graph.to_edge_list())?;
    let truth = serde_json::to_string_pretty(&sim.truth)?;
    fs::write(out.join("truth.json"), truth + "\n")?;
    println!("wrote {} rows for {} units to {}", sim.panel.n_rows(), sim.panel.n_units(), out.display());
    Ok(())
}
