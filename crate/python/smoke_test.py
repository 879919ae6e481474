"""Smoke test for the dlnmlps extension module.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""
import math
import pathlib
import tempfile

import dlnmlps

ROOT = pathlib.Path(__file__).resolve().parent.parent


def write_panel(path):
    """Two units, 40 days, counts driven by a linear exposure effect."""
    lines = ["unit_id,t_index,y,exposure,offset_population"]
    for unit in (1, 2):
        for t in range(40):
            x = 5.0 + 4.0 * math.sin(0.3 * t + unit)
            y = round(20.0 * math.exp(0.05 * (x - 5.0))) + (t * 7 + unit) % 5
            lines.append(f"{unit},{t},{y},{x:.6f},10000")
    path.write_text("\n".join(lines) + "\n")


def main():
    rows = dlnmlps.bspline([0.0, 0.5, 1.0], 0.0, 1.0, 5)
    assert all(abs(sum(r) - 1.0) < 1e-12 for r in rows)

    with tempfile.TemporaryDirectory() as d:
        csv = pathlib.Path(d) / "panel.csv"
        write_panel(csv)
        panel = dlnmlps.Panel.read_csv(str(csv))
        assert panel.n_units == 2 and panel.n_rows == 80

        graph = dlnmlps.Graph.grid(1, 2)
        fit = dlnmlps.fit(panel, graph, spatial="independent", v_x=5, v_l=4, max_lag=3, exposure_range=(0.0, 10.0))
        assert "lambda_exposure" in fit.hypers and "variance" in fit.hypers

        rr = fit.rr_overall([0.0, 5.0, 10.0], x0=5.0)
        assert rr[1][1] == 1.0
        assert all(lo <= r <= hi for _, r, lo, hi in rr)
        p = fit.exceedance([5.0, 9.0], x0=5.0, draws=2000, seed=3)
        assert p[0] == 0.0 and 0.0 <= p[1] <= 1.0
        assert set(fit.random_effects()) == {"1", "2"}

        again = dlnmlps.Fit.from_json(fit.to_json())
        assert again.rr_overall([9.0], x0=5.0) == fit.rr_overall([9.0], x0=5.0)

    bundled = ROOT / "data" / "adjacency.txt"
    if bundled.exists():
        assert dlnmlps.Graph.read(str(bundled)).n_nodes == 100

    print("dlnmlps", dlnmlps.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
