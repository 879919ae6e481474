#![allow(dead_code)]

use dlnmlps::fit::{fit, FitOptions, LatentFit};
use dlnmlps::panel::PanelData;
use dlnmlps::penalty::PenaltyAssembly;
use dlnmlps::sim::{make_scenario, simulate_panel, ScenarioParams, SimDesign, SimulatedPanel};
use dlnmlps::spatial::{AdjacencyGraph, SpatialHypers, SpatialKind};
use dlnmlps::{ModelConfig, ModelSpec};

/// Rook grid when `j` is a square, otherwise a path.
pub fn graph_for(j: usize) -> AdjacencyGraph {
    let r = (j as f64).sqrt().round() as usize;
    if r * r == j && r > 1 {
        AdjacencyGraph::grid(r, r)
    } else {
        let edges: Vec<(usize, usize)> = (1..j).map(|i| (i - 1, i)).collect();
        AdjacencyGraph::from_edges(j, &edges).unwrap()
    }
}

pub struct Toy {
    pub j: usize,
    pub t: usize,
    pub v: usize,
    pub max_lag: usize,
    pub baseline: f64,
    pub scenario: &'static str,
    pub true_re: Option<SpatialKind>,
    pub true_hypers: SpatialHypers,
}

impl Default for Toy {
    fn default() -> Self {
        Self {
            j: 4,
            t: 40,
            v: 4,
            max_lag: 3,
            baseline: (0.005f64).ln(),
            scenario: "temp-like",
            true_re: Some(SpatialKind::Independent),
            true_hypers: SpatialHypers::independent(10.0),
        }
    }
}

impl Toy {
    pub fn simulate(&self, seed: u64) -> SimulatedPanel {
        let params = ScenarioParams { max_lag: self.max_lag, baseline: self.baseline, ..Default::default() };
        let sc = make_scenario(self.scenario, &params).unwrap();
        let design = SimDesign {
            n_units: self.j,
            n_times: self.t,
            spatial: self.true_re,
            hypers: self.true_hypers,
            exposure: Default::default(),
            dates: None,
        };
        simulate_panel(&sc, &design, Some(&graph_for(self.j)), seed).unwrap()
    }

    pub fn config(&self, kind: Option<SpatialKind>) -> ModelConfig {
        ModelConfig {
            v_x: self.v,
            v_l: self.v,
            max_lag: self.max_lag,
            spatial: kind,
            exposure_range: Some((0.0, 10.0)),
            ..Default::default()
        }
    }

    pub fn spec_for(&self, panel: &PanelData, kind: Option<SpatialKind>) -> ModelSpec {
        ModelSpec::from_panel(panel, Some(&graph_for(self.j)), &self.config(kind)).unwrap()
    }

    pub fn spec(&self, kind: Option<SpatialKind>, seed: u64) -> ModelSpec {
        self.spec_for(&self.simulate(seed).panel, kind)
    }
}

/// Drops the cross-basis block, leaving fixed effects and random effects.
pub fn without_splines(mut spec: ModelSpec) -> ModelSpec {
    let nf = spec.layout.n_fixed;
    spec.x = spec.x.columns(0, nf).into_owned();
    spec.layout.n_theta = 0;
    spec.penalty = PenaltyAssembly::new(0, 0);
    spec
}

pub const ALL_KINDS: [SpatialKind; 4] =
    [SpatialKind::Independent, SpatialKind::Icar, SpatialKind::Convolution, SpatialKind::Leroux];

pub fn quick_fit(spec: &ModelSpec) -> LatentFit {
    fit(spec, None, &FitOptions::default()).unwrap()
}
