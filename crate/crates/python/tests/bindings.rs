use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "dlnmlps").unwrap();
        dlnmlps_py::register(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("dlnmlps", m).unwrap();
        f(py, &globals);
    });
}

#[test]
fn bspline_rows_partition_unity() {
    with_module(|py, g| {
        py.run(
            c"rows = dlnmlps.bspline([0.0, 0.3, 0.77, 1.0], 0.0, 1.0, 6)
assert len(rows) == 4 and all(len(r) == 6 for r in rows)
assert all(abs(sum(r) - 1.0) < 1e-12 for r in rows)
assert rows[0][0] == 1.0",
            Some(g),
            None,
        )
        .unwrap();
    });
}

#[test]
fn graph_and_errors_surface_in_python() {
    with_module(|py, g| {
        py.run(
            c"import math
gr = dlnmlps.Graph.grid(1, 3)
assert gr.n_nodes == 3 and gr.n_edges == 2
assert gr.neighbors(1) == [0, 2]
assert abs(gr.log_pseudo_det() - math.log(3.0)) < 1e-12
try:
    dlnmlps.bspline([0.5], 1.0, 0.0, 6)
    raise AssertionError('expected ValueError')
except ValueError as e:
    assert 'range' in str(e)
try:
    dlnmlps.Panel.read_csv('/nonexistent/panel.csv')
    raise AssertionError('expected OSError')
except OSError:
    pass",
            Some(g),
            None,
        )
        .unwrap();
    });
}

#[test]
fn simulate_and_seed_derivation() {
    with_module(|py, g| {
        py.run(
            c"s = {'scenario': 'plane', 'grid_rows': '2', 'grid_cols': '2', 'n_times': '60', 'max_lag': '3',
     'v_x': '5', 'v_l': '4', 'spatial': 'leroux', 'true_spatial': 'leroux'}
a = dlnmlps.simulate(s, 2, 9)
b = dlnmlps.simulate(s, 1, 9, first_replicate=1)
assert [r['replicate'] for r in a] == [0, 1]
assert a[1]['seed'] == b[0]['seed'] == dlnmlps.derive_seed(9, 1)
assert a[1]['overall_rr'] == b[0]['overall_rr']
try:
    dlnmlps.simulate({'no_such_key': '1'}, 1, 9)
    raise AssertionError('expected ValueError')
except ValueError:
    pass",
            Some(g),
            None,
        )
        .unwrap();
    });
}
