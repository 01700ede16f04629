import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from metspace.errors import AllSingular, EpsilonTooLarge, NotCauchy
from metspace.fields import (
    EllField,
    GridChart,
    MetricField,
    build_field,
    conformal_field,
    constant_field,
    random_ell_field,
    random_metric_field,
)
from metspace.space import (
    ExtendedDistance,
    act,
    cauchy_limit,
    closeness_constant,
    compose,
    dl,
    dl_exhaustion,
    geodesic,
    h_operator_norm,
    inverse,
    midpoint,
    mollifier_weights,
    perturb,
    smooth_approx,
    transport_B,
)

seeds = st.integers(0, 2**32 - 1)
CHART2 = GridChart.box([0, 0], [1, 1], (6, 6))
CHART3 = GridChart.box([0, 0, 0], [1, 1, 1], (3, 3, 3))


def brute_dl(g, h):
    # independent: scipy generalized eigensolver, node by node
    best = 0.0
    for G, H in zip(g.values, h.values):
        w = sla.eigh(G, H, eigvals_only=True)
        best = max(best, np.log(w[-1]), -np.log(w[0]))
    return 0.5 * best


@given(seeds, st.sampled_from([CHART2, CHART3]))
def test_dl_matches_brute_force(seed, chart):
    rng = np.random.default_rng(seed)
    g = random_metric_field(chart, rng)
    h = random_metric_field(chart, rng)
    D = dl(g, h)
    assert D.value == pytest.approx(brute_dl(g, h), rel=1e-10)
    assert closeness_constant(g, h) == pytest.approx(np.exp(D.value), rel=1e-12)
    # the argmax node alone attains the value
    assert dl(g, h, [D.argmax_node]).value == pytest.approx(D.value, rel=1e-12)


@given(seeds)
def test_dl_axioms(seed):
    rng = np.random.default_rng(seed)
    g, h, k = (random_metric_field(CHART2, rng) for _ in range(3))
    assert dl(g, h).value == dl(h, g).value
    assert dl(g, g).value == 0.0
    assert dl(g, k).value <= dl(g, h).value + dl(h, k).value + 1e-12


@given(seeds)
def test_dl_invariant_under_the_action(seed):
    rng = np.random.default_rng(seed)
    g, h = random_metric_field(CHART2, rng), random_metric_field(CHART2, rng)
    b = random_ell_field(CHART2, rng)
    assert dl(act(b, g), act(b, h)).value == pytest.approx(dl(g, h).value, rel=1e-9, abs=1e-12)


@given(st.floats(1e-3, 1e3))
def test_dl_of_scaled_metric(c):
    g = random_metric_field(CHART2, np.random.default_rng(0))
    h = g.with_values(c * np.asarray(g.values))
    assert dl(g, h).value == pytest.approx(0.5 * abs(np.log(c)), abs=1e-12)


def test_dl_flat_vs_four_flat_is_log_two():
    c = GridChart.box([0, 0], [1, 1], (4, 4))
    assert dl(constant_field(c, np.eye(2)), constant_field(c, 4 * np.eye(2))).value == pytest.approx(np.log(2), abs=1e-15)


def test_dl_ignores_singular_nodes():
    c = GridChart.box([0, 0], [1, 1], (11, 11))
    v = np.broadcast_to(np.eye(2), (121, 2, 2)).copy()
    v[60] = 1e6 * np.eye(2)
    mask = np.arange(121) == 60
    g = MetricField(c, v, mask)
    assert dl(g, constant_field(c, np.eye(2))).value == 0.0
    with pytest.raises(AllSingular):
        dl(g, g, [60])


def test_infinite_distance_requires_certificate():
    with pytest.raises(ValueError):
        ExtendedDistance(np.inf)
    assert not ExtendedDistance(np.inf, certificate={"why": 1}).finite


def test_transport_closed_form_for_diagonal():
    c = GridChart.box([0], [1], (5,))
    g = constant_field(c, [[9.0]])
    h = constant_field(c, [[4.0]])
    np.testing.assert_allclose(transport_B(g, h).values, 1.5)


@given(seeds, st.sampled_from([CHART2, CHART3]))
def test_transport_reconstructs_and_is_self_adjoint(seed, chart):
    rng = np.random.default_rng(seed)
    g, h = random_metric_field(chart, rng), random_metric_field(chart, rng)
    b = transport_B(g, h)
    np.testing.assert_allclose(act(b, h).values, g.values, rtol=1e-9, atol=1e-10)
    hb = h.values @ b.values
    np.testing.assert_allclose(hb, np.swapaxes(hb, 1, 2), atol=1e-9)
    # B is positive for h, so its h-norm is the largest eigenvalue
    w = np.array([np.linalg.eigvals(m).real.max() for m in b.values])
    np.testing.assert_allclose(h_operator_norm(b, h), w, rtol=1e-9)


@given(seeds)
def test_action_laws(seed):
    rng = np.random.default_rng(seed)
    g = random_metric_field(CHART2, rng)
    b1, b2 = random_ell_field(CHART2, rng), random_ell_field(CHART2, rng)
    np.testing.assert_array_equal(act(EllField.identity(CHART2), g).values, g.values)
    np.testing.assert_allclose(act(inverse(b1), act(b1, g)).values, g.values, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(act(b2, act(b1, g)).values, act(compose(b1, b2), g).values, rtol=1e-10, atol=1e-12)


def test_geodesic_commuting_closed_form():
    c = GridChart.box([0, 0], [1, 1], (3, 3))
    g0 = constant_field(c, np.diag([1.0, 4.0]))
    g1 = constant_field(c, np.diag([9.0, 1.0]))
    path = geodesic(g0, g1)
    for t in (0.0, 0.3, 0.5, 1.0):
        expect = np.diag([9.0**t, 4.0 ** (1 - t)])
        np.testing.assert_allclose(path.eval(t).values, np.broadcast_to(expect, (9, 2, 2)), rtol=1e-12)
    assert path.eval(0.0) is g0 and path.eval(1.0) is g1


@given(seeds, st.floats(0.05, 0.95))
def test_geodesic_splits_distance(seed, t):
    rng = np.random.default_rng(seed)
    g0, g1 = random_metric_field(CHART2, rng), random_metric_field(CHART2, rng)
    path = geodesic(g0, g1)
    D = dl(g0, g1).value
    gt = path.eval(t)
    assert dl(g0, gt).value == pytest.approx(t * D, rel=1e-8, abs=1e-12)
    assert dl(gt, g1).value == pytest.approx((1 - t) * D, rel=1e-8, abs=1e-12)
    np.testing.assert_allclose(act(path.power(t), g0).values, gt.values, rtol=1e-8, atol=1e-10)
    m = midpoint(g0, g1)
    assert dl(g0, m).value == pytest.approx(dl(m, g1).value, rel=1e-9, abs=1e-12)


@given(seeds, st.floats(0.0, 1.0))
def test_power_spectral_bounds(seed, t):
    rng = np.random.default_rng(seed)
    g0, g1 = random_metric_field(CHART2, rng), random_metric_field(CHART2, rng)
    a = np.exp(dl(g0, g1).value)
    n = h_operator_norm(geodesic(g0, g1).power(t), g0)
    assert np.all(n <= a**t * (1 + 1e-10)) and np.all(n >= a ** (-t) * (1 - 1e-10))


@given(seeds)
def test_cauchy_limit_recovers_target(seed):
    rng = np.random.default_rng(seed)
    g, far = random_metric_field(CHART2, rng), random_metric_field(CHART2, rng)
    path = geodesic(g, far)
    seq = [path.eval(1.0 / n) for n in range(1, 21)]
    lim = cauchy_limit(seq)
    assert dl(lim, g).value < 1e-8


def test_cauchy_limit_of_constant_sequence_is_exact():
    g = random_metric_field(CHART2, np.random.default_rng(3))
    assert dl(cauchy_limit([g] * 6), g).value == 0.0


def test_diverging_sequence_is_not_cauchy():
    c = GridChart.box([0], [1], (4,))
    seq = [constant_field(c, [[np.exp(k * k)]]) for k in range(8)]
    with pytest.raises(NotCauchy) as info:
        cauchy_limit(seq)
    assert len(info.value.pair) == 2


def test_mollifier_weights_shape():
    w = mollifier_weights(4.0, 1.0)
    assert len(w) == 7 and w[3] == w.max()
    np.testing.assert_allclose(w, w[::-1])


def test_smoothing_preserves_constants_and_reduces_roughness():
    c = GridChart.box([0, 0], [1, 1], (33, 33))
    g = constant_field(c, np.diag([1.0, 3.0]))
    np.testing.assert_allclose(smooth_approx(g, 0.1).values, g.values, rtol=1e-13)
    rough = conformal_field(c, lambda x: 1 + (x[:, 0] > 0.5))
    s = smooth_approx(rough, 0.1)
    assert np.all(np.linalg.eigvalsh(s.values) >= 1 - 1e-12)
    assert np.all(np.linalg.eigvalsh(s.values) <= 2 + 1e-12)
    with pytest.raises(EpsilonTooLarge):
        smooth_approx(g, 0.6)


def test_smoothing_periodic_axis_wraps():
    c = GridChart((0.0,), (0.1,), (10,), (True,))
    g = build_field(c, lambda x: (1 + (x[:, 0] < 0.05))[:, None, None] * np.ones((1, 1)))
    s = smooth_approx(g, 0.25)
    # the bump at node 0 spreads symmetrically to both neighbours
    assert s.values[1, 0, 0] == pytest.approx(s.values[9, 0, 0])


@given(seeds, st.floats(0.0, 2.0))
def test_perturb_hits_requested_distance(seed, d):
    g = random_metric_field(CHART2, np.random.default_rng(seed))
    h = perturb(g, np.random.default_rng(seed + 1), d)
    assert dl(g, h).value == pytest.approx(d, abs=1e-10)


def test_exhaustion_of_equal_metrics_is_finite():
    E = dl_exhaustion(lambda x: np.eye(2), lambda x: 2 * np.eye(2), [1, 2, 3])
    assert E.truncated and E.finite
    assert E.value == pytest.approx(0.5 * np.log(2))
    assert [r for r, _ in E.per_radius] == [1, 2, 3]


def test_exhaustion_detects_divergence():
    grow = lambda x: np.exp(np.linalg.norm(x, axis=1))[:, None, None] * np.eye(2)  # noqa: E731
    E = dl_exhaustion(lambda x: np.eye(2), grow, [98, 99, 100, 101, 102, 103], dim=1 + 1, spacing=4.0)
    assert not E.finite and E.certificate["threshold"] == 50.0
