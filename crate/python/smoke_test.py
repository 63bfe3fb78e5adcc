#!/usr/bin/env python3
"""Smoke test for the grftails_py extension module.

Builds are produced by `cargo build --release -p grftails-py`; this script
locates the resulting cdylib, exposes it under the importable module name,
and exercises the main entry points end to end.
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / "release" / "libgrftails_py.so",
        REPO / "target" / "debug" / "libgrftails_py.so",
        REPO / "target" / "release" / "libgrftails_py.dylib",
        REPO / "target" / "debug" / "libgrftails_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "extension not found; run `cargo build --release -p grftails-py` first"
        )
    stage = Path(tempfile.mkdtemp(prefix="grftails_py_"))
    suffix = ".so" if built.suffix == ".so" else ".so"  # CPython accepts .so
    shutil.copy2(built, stage / f"grftails_py{suffix}")
    sys.path.insert(0, str(stage))
    import grftails_py  # noqa: E402

    return grftails_py


def approx_equal(a, b, rel=1e-9):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1.0)


def main():
    g = load_module()

    # threshold equation round trip
    u = g.solve_threshold(1e6, 1.0, 1)
    assert u > 10.0
    lhs = math.sqrt(2 * math.pi) * u ** -0.5 * math.exp(u)
    assert approx_equal(lhs, 1e6, rel=1e-9), (lhs, u)
    ut = g.threshold_closed_form(1e6, 1.0, 1)
    assert abs(u - ut) < 0.05
    assert g.min_feasible_b(1) < 6.0

    # kernel, moments, tail constant
    k = g.Kernel.from_json(json.dumps({"family": "sq_exp", "d": 1, "L": [[1.0]]}))
    assert k.is_standardized()
    assert approx_equal(k.eval([0.0]), 1.0)
    m = k.moments()
    assert approx_equal(m["gamma_det"], 2.0, rel=1e-9)
    assert m["mu20"] == [-1.0]
    h = k.constant_h(1.0)
    assert approx_equal(h, math.exp(5 / 8) / (2 * math.pi), rel=1e-12)
    assert approx_equal(h, k.constant_h_quadrature(1.0), rel=1e-8)

    # raw kernel standardization
    raw = g.Kernel.from_json(json.dumps({"family": "sq_exp", "d": 1, "L": [[2.0]]}))
    std, sigma_half, mf = raw.standardize()
    assert approx_equal(sigma_half[0][0], 2.0) and approx_equal(mf, 0.5)
    assert std.is_standardized()

    # tail approximation and its inverse
    b = k.threshold_for_probability(1.0, 1.0, 1e-4)
    ta = k.tail_approx(1.0, 1.0, b)
    assert approx_equal(ta["probability"], 1e-4, rel=1e-6)
    assert approx_equal(ta["probability_log10"], -4.0, rel=1e-6)

    # covers
    u_tile = 0.125 ** (1.0 / (0.1 - 0.5))
    cov = g.cover_summary(json.dumps([[0.0, 1.0]]), u_tile, 1.0, 0.1)
    assert cov["inner_count"] == 4 and cov["outer_count"] == 4

    # Monte Carlo: deterministic in the seed, worker-count independent
    est1 = g.exceedance_is(k, [0.0], [1.0], 1.0, b, 20000, 7, 1)
    est8 = g.exceedance_is(k, [0.0], [1.0], 1.0, b, 20000, 7, 8)
    assert est1["estimate"] == est8["estimate"]
    assert est1["estimate"] > 0.0
    assert est1["std_error"] / est1["estimate"] < 0.1

    crude = g.exceedance_crude(k, [0.0], [1.0], 1.0, 2.0, 20000, 7, 2)
    assert 0.0 < crude["estimate"] < 1.0

    sup = g.sup_exceedance(k, [0.0], [1.0], 3.0, 20000, 7, 2, 32)
    fitted = sup["estimate"] / g.sup_rate_shape(3.0, 1)
    assert 0.4 < fitted < 1.2, fitted

    assert approx_equal(g.borel_tis_bound(1.0, 3.0), math.exp(-4.5))
    assert g.log_det_expansion_error([[0.0]], 10.0) == 0.0

    # log-normal analogue
    approx = g.lognormal_one_big_jump([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], 115.98)
    est = g.lognormal_sum_tail([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], 115.98, 40000, 3, 2)
    ratio = est["estimate"] / approx
    assert 1.5 < ratio < 3.5, ratio

    print("grftails_py smoke test: all checks passed")


if __name__ == "__main__":
    main()
