#!/usr/bin/env python3
"""Build the extension module, import it, and exercise the main operations."""

import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def build_module() -> pathlib.Path:
    subprocess.run(["cargo", "build", "-p", "explode-py"], cwd=ROOT, check=True)
    built = ROOT / "target" / "debug" / "libexplode_py.so"
    stage = pathlib.Path(tempfile.mkdtemp(prefix="explode-py-"))
    shutil.copy2(built, stage / "explode_py.so")
    return stage


def interval_series(t: float, x: float) -> float:
    s, k = 0.0, 1
    while k <= 4001:
        kf = k * math.pi
        term = 4 / kf * math.sin(kf * x) * math.exp(-0.5 * kf * kf * t)
        s += term
        if abs(term) < 1e-18 and k > 9:
            break
        k += 2
    return s


def main() -> None:
    sys.path.insert(0, str(build_module()))
    import explode_py as xp

    names = xp.catalog_names()
    assert "bm_unit_interval" in names and len(names) >= 10, names
    print(f"catalog: {len(names)} entries")

    bm = xp.Model.from_catalog("bm_unit_interval")
    assert bm.dim == 1

    start = bm.estimate_survival([0.5], [0.0], n_paths=1000, seed=1)[0]
    assert start.value == 1.0 and start.std_error == 0.0, start
    print(f"start value exact: {start!r}")

    est = bm.estimate_survival([0.5], [0.1, 0.2], n_paths=20000, dt=1e-3, seed=7)
    for e in est:
        exact = interval_series(e.t, 0.5)
        assert abs(e.value - exact) < 0.05, (e.t, e.value, exact)
    print(f"survival at t=0.1: {est[0].value:.4f} (series {interval_series(0.1, 0.5):.4f})")

    sol = bm.solve(dx=0.01, dt=1e-3, t_max=0.2, theta=0.5)
    u = sol.value_at(0.2, [0.5])
    assert abs(u - interval_series(0.2, 0.5)) < 1e-3, u
    print(f"solved field at (0.2, 0.5): {u:.6f}")

    killed = xp.Model.from_catalog("bm_unit_interval_killed")
    w = killed.estimate_functional([0.5], [0.2], n_paths=20000, dt=1e-3, seed=7)[0]
    u_mc = est[1].value
    rel = abs(w.value - math.exp(-0.2) * u_mc) / (math.exp(-0.2) * u_mc)
    assert rel < 1e-12, rel
    print(f"constant-potential factorization: relative error {rel:.2e}")

    assert bm.feller()["classification"] in ("ExplosiveBoth",)
    assert xp.Model.from_catalog("bm_line").feller()["classification"] == "Conservative"
    cubic = xp.Model.from_catalog("cubic_drift_line").feller()
    assert cubic["classification"] == "ExplosiveBoth", cubic
    print(f"feller: cubic is {cubic['classification']}")

    last, report = xp.Model.from_catalog("bm_line").minimal_solution(
        dx=0.25, dt=0.01, t_max=0.25, m_lo=1, m_hi=4, tol=1e-3
    )
    assert report["converged"] and len(report["sup_diffs"]) == 3, report
    assert last.value_at(0.25, [0.0]) > 0.999
    print(f"truncation sweep converged: sup diffs {['%.1e' % d for d in report['sup_diffs']]}")

    chk = bm.martingale_check(0.2, [0.5], 0.05, n_outer=400, n_inner=400, dt=1e-3, seed=5)
    assert chk["passed"], chk
    print(f"martingale check: discrepancy {chk['discrepancy']:+.2e}")

    res = bm.pathwise_residual(
        "x^2", "0", ["2*x"], ["2"], t_star=0.2, x=[0.5], delta=0.1,
        n_paths=20000, dt=4e-3, seed=2024,
    )
    assert abs(res["mean"]) <= 5 * res["std_error"], res
    print(f"pathwise residual mean: {res['mean']:+.2e} +/- {res['std_error']:.2e}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
