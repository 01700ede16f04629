import numpy as np
import pytest

from metspace.constructions import (
    CurveNetwork,
    annulus_index,
    build_network,
    flat_generator,
    lipschitz_function,
    lipschitz_graph_suite,
    nonapprox_metric,
    polyline_length,
    sturm_pair,
    sturm_report,
    tube_budget,
    tube_profile,
    unbounded_conformal,
)
from metspace.errors import DimensionError
from metspace.fields import GridChart, build_field
from metspace.space import dl, dl_exhaustion, smooth_approx

SMALL4 = GridChart.box([0.0] * 4, [1.0] * 4, (5,) * 4)


@pytest.fixture(scope="module")
def small_net():
    return build_network(SMALL4, m_max=3, seed=4)


def test_jump_metric_values_and_smoothing_gap():
    chart = GridChart.box([-2, -2], [2, 2], (41, 41))
    g = nonapprox_metric(chart, 100.0, 1.0)
    r = np.linalg.norm(chart.coords(), axis=1)
    np.testing.assert_array_equal(g.values[:, 0, 0], np.where(r < 1, 1.0, 100.0))
    assert dl(smooth_approx(g, 0.3), g).value >= 0.25 * np.log(100)
    with pytest.raises(ValueError):
        nonapprox_metric(chart, 0.5)


def test_annulus_index():
    radii = [1.0, 2.0, 3.0]
    x = np.array([[0.0, 0.5], [1.0, 0.0], [0.0, 2.5], [5.0, 0.0]])
    assert annulus_index(x, radii).tolist() == [1, 2, 3, 4]
    vals = unbounded_conformal(radii)(x)
    assert vals[:, 0, 0].tolist() == [2.0, 4.0, 8.0, 16.0]
    with pytest.raises(ValueError):
        unbounded_conformal([2.0, 1.0])


def test_unbounded_conformal_is_at_infinite_distance():
    radii = np.arange(1.0, 151.0)
    E = dl_exhaustion(flat_generator, unbounded_conformal(radii), radii)
    assert not E.finite
    inc = np.diff([v for _, v in E.per_radius])
    np.testing.assert_allclose(inc, 0.5 * np.log(2), atol=1e-12)


def test_network_curves(small_net):
    net = small_net
    assert len(net.points) == 81
    # neighbour pairs of a 3^4 lattice under the king move, times m
    pairs = {(k, l) for k, l, _, _ in net.curves}
    assert len(net.curves) == 3 * len(pairs)
    for k, l, m, poly in net.curves[:200]:
        chord = np.linalg.norm(net.points[l] - net.points[k])
        assert polyline_length(poly) == pytest.approx((1 + 1 / (2 * m)) * chord, rel=1e-12)


def test_network_rejects_long_curves():
    pts = np.array([[0.0] * 4, [1.0, 0, 0, 0]])
    bad = np.array([[0.0] * 4, [0.5, 1.0, 0, 0], [1.0, 0, 0, 0]])
    with pytest.raises(ValueError, match="too long"):
        CurveNetwork(SMALL4, pts, ((0, 1, 4, bad),), 0.5, 4)


def test_tube_profile_against_brute_force(small_net):
    net = small_net
    psi = tube_profile(net, chunk=17)
    a, b = net.segments()
    x = net.chart.coords()
    rng = np.random.default_rng(0)
    for i in rng.choice(x.shape[0], 40, replace=False):
        d = np.inf
        for p, q in zip(a, b):
            t = np.clip((x[i] - p) @ (q - p) / ((q - p) @ (q - p)), 0, 1)
            d = min(d, np.linalg.norm(x[i] - p - t * (q - p)))
        assert psi[i] == pytest.approx(max(0.0, 1 - d / net.tube_radius), abs=1e-12)


def test_sturm_pair_properties(small_net):
    g, gp = sturm_pair(small_net)
    det = np.linalg.det(g.values)
    np.testing.assert_allclose(det, np.linalg.det(gp.values), rtol=1e-14)
    assert np.all(g.values[:, 0, 0] >= 0.5) and np.all(g.values[:, 0, 0] <= 1.0)
    assert dl(g, gp).value > 0
    rep = sturm_report(small_net, g, gp, n_sources=4)
    assert rep["ok"] and rep["max_det_deviation"] <= 1e-14
    assert rep["max_ratio"] <= (1 + 1 / 3) * (1 + rep["slack"])


def test_sturm_pair_needs_four_dimensions():
    net2 = build_network(GridChart.box([0, 0], [1, 1], (5, 5)), m_max=2)
    with pytest.raises(DimensionError):
        sturm_pair(net2)
    with pytest.raises(DimensionError):
        tube_budget(net2)


def test_tube_budget(small_net):
    out = tube_budget(small_net)
    need = out["log2_epsilon_required"]
    assert tube_budget(small_net, 2.0 ** (need + 1))["ok"]
    assert not tube_budget(small_net, 2.0 ** (need - 1))["ok"]


@pytest.mark.parametrize("name", ["zero", "linear", "cone", "sawtooth", "rational_cones", "plane_creases"])
def test_lipschitz_functions_are_lipschitz(name):
    chart = GridChart.box([-1, -1], [1, 1], (21, 21))
    f = lipschitz_function(name, chart, seed=3)
    rng = np.random.default_rng(1)
    x, y = rng.uniform(-1, 1, (2, 500, 2))
    slope = np.abs(f(x) - f(y)) / np.linalg.norm(x - y, axis=1)
    assert slope.max() < 10.0
    g, stats = lipschitz_graph_suite(name, chart, seed=3)
    assert stats["mask_fraction"] <= stats["mask_cap"]
    assert np.all(np.linalg.eigvalsh(g.values[~g.singular_mask]) >= 1 - 1e-9)
    if name in ("cone", "sawtooth"):
        assert stats["crease_fraction"] > 0
    if name in ("zero", "linear"):
        assert stats["crease_fraction"] == 0


def test_unknown_lipschitz_function():
    with pytest.raises(ValueError):
        lipschitz_function("nope", SMALL4)


def test_flat_generator():
    g = build_field(SMALL4, flat_generator)
    np.testing.assert_array_equal(g.values[7], np.eye(4))
