"""Acceptance checks, one per numbered criterion.

Each check prints a PASS/FAIL line; the collected lines are repeated in the
pytest terminal summary. Run directly (``python3 tests/test_acceptance.py``)
for the lines alone.
"""

import functools
import sys

import pytest

from metspace.suites import SUITES

SEED = 7
LINES = []


@functools.lru_cache(maxsize=None)
def run(name):
    return SUITES[name](seed=SEED)


def _record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{number:>2}] {title}: {detail}"
    LINES.append(line)
    print(line)
    return ok


def _suite(number, name, title):
    res = run(name)
    detail = "; ".join(
        f"{k}: {_brief(v)}" for k, v in res.checks.items()
    )
    ok = _record(number, title, res.passed, detail)
    assert ok, res.violations


def _brief(values):
    parts = ["ok" if values["ok"] else "VIOLATED"]
    for k, v in values.items():
        if k != "ok" and isinstance(v, float):
            parts.append(f"{k}={v:.4g}")
    return " ".join(parts)


def _check(number, title, suite, label):
    values = run(suite).checks[label]
    ok = _record(number, title, values["ok"], f"{label}: {_brief(values)}")
    assert ok, label


def test_01_metric_axioms():
    _suite(1, "metric-axioms", "extended-metric axioms on 1000 triples")


def test_02_exponent_sharpness():
    _suite(2, "exponent-sharpness", "two-sided norm bound attained at the argmax node")


def test_03_group_action():
    _suite(3, "group-action", "transport reconstruction and action laws")


def test_04_geodesic_midpoint():
    _suite(4, "geodesic-midpoint", "geodesic endpoints, midpoint equalities, spectral bounds")


def test_05_completeness():
    _suite(5, "completeness", "Cauchy sequences converge")


def test_06_smooth_closure():
    _suite(6, "smooth-closure", "continuous vs jump metric under mollification")


def test_07_distance_solver():
    _suite(7, "distance-solver", "shortest-path distances on flat, conformal, anisotropic metrics")


def test_08_comparability():
    _suite(8, "comparability", "distance and measure ratios at dl = 0.3")


def test_09a_divform_factor():
    _check("9a", "divergence form: A = 4I gives f = 1/2", "divform", "diag(4,4) gives f = 1/2 exactly")


@pytest.mark.xfail(
    strict=True,
    reason="the weak Laplacian of the metric equals f^(n/2) (det A)^(1/2) times -div A grad, "
    "which is a pure operator identity only when det A is constant",
)
def test_09b_divform_random_coefficients():
    _check("9b", "divergence form: random A correspond within 1e-8", "divform",
           "random A: correspondence deviation <= 1e-8")


def test_09c_divform_unit_determinant():
    _check("9c", "divergence form: det A = 1 operators agree", "divform", "det A = 1: operators agree")


def test_10_varadhan():
    _suite(10, "varadhan", "small-time heat kernel recovers squared distance")


def test_11_poincare():
    _suite(11, "poincare", "flat constant 1/pi and propagated upper bound")


def test_12_sturm():
    _suite(12, "sturm", "equal-volume pair with comparable network distances")


def test_13_disconnectedness():
    _suite(13, "disconnectedness", "infinite distance certificate with log(2)/2 increments")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_"):
            expected_fail = any(m.name == "xfail" for m in getattr(fn, "pytestmark", []))
            try:
                fn()
            except AssertionError:
                failed += not expected_fail
    sys.exit(1 if failed else 0)
