import numpy as np
import pytest

from metspace.errors import ChartMismatch, EmptyRegion, TooSingular
from metspace.fields import (
    EllField,
    GridChart,
    MetricField,
    build_field,
    conformal_field,
    constant_field,
    pointwise,
    random_ell_field,
    random_metric_field,
    region_mask,
    require_same_chart,
    validate_rrm,
)


def test_box_chart_geometry():
    c = GridChart.box([0, -1], [1, 1], (5, 9))
    assert c.spacing == (0.25, 0.25)
    assert c.n_nodes == 45 and c.dim == 2
    x = c.coords()
    assert x.shape == (45, 2)
    np.testing.assert_allclose(x[c.node(4, 8)], [1, 1])
    assert c.nearest_node([0.26, -0.01]) == c.node(1, 4)
    # trapezoid weights integrate constants exactly
    assert c.dual_volumes().sum() == pytest.approx(2.0)


def test_periodic_dual_volumes_are_uniform():
    c = GridChart((0.0,), (0.1,), (10,), (True,))
    np.testing.assert_allclose(c.dual_volumes(), 0.1)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(origin=(0,), spacing=(0,), shape=(4,)),
        dict(origin=(0,), spacing=(1,), shape=(1,)),
        dict(origin=(0,) * 5, spacing=(1,) * 5, shape=(2,) * 5),
        dict(origin=(0, 0), spacing=(1,), shape=(3, 3)),
    ],
)
def test_bad_charts_rejected(kwargs):
    with pytest.raises(ValueError):
        GridChart(**kwargs)


def test_metric_field_validation():
    c = GridChart.box([0, 0], [1, 1], (3, 3))
    v = np.broadcast_to(np.eye(2), (9, 2, 2)).copy()
    MetricField(c, v)
    bad = v.copy()
    bad[4] = [[1.0, 0.5], [0.4, 1.0]]
    with pytest.raises(ValueError, match="symmetric"):
        MetricField(c, bad)
    bad[4] = np.diag([1.0, -1.0])
    with pytest.raises(ValueError, match="positive definite"):
        MetricField(c, bad)
    # masked nodes may hold anything
    bad[4] = np.nan
    g = MetricField(c, bad, np.arange(9) == 4, max_singular_fraction=0.2)
    assert g.singular_mask.sum() == 1
    np.testing.assert_array_equal(g.filled()[4], np.eye(2))


def test_values_are_immutable():
    c = GridChart.box([0], [1], (4,))
    g = constant_field(c, [[2.0]])
    with pytest.raises(ValueError):
        g.values[0, 0, 0] = 3.0


def test_build_field_masks_singular_points():
    c = GridChart.box([-1, -1], [1, 1], (101, 101))
    g = build_field(c, lambda x: np.linalg.norm(x, axis=1)[:, None, None] ** -1 * np.eye(2))
    assert g.singular_mask.sum() == 1
    assert g.singular_mask[c.node(50, 50)]


def test_too_singular():
    c = GridChart.box([0, 0], [1, 1], (10, 10))
    with pytest.raises(TooSingular):
        build_field(c, lambda x: np.where(x[:, :1, None] < 0.5, np.nan, 1.0) * np.eye(2))


def test_conformal_and_validate():
    c = GridChart.box([0, 0], [1, 1], (5, 5))
    g = conformal_field(c, lambda x: 1 + x[:, 0])
    lo, hi = validate_rrm(g)
    assert (lo, hi) == pytest.approx((1.0, 2.0))
    with pytest.raises(EmptyRegion):
        validate_rrm(g, np.zeros(25, dtype=bool))


def test_region_mask_forms():
    c = GridChart.box([0], [1], (5,))
    assert region_mask(c).all()
    assert region_mask(c, [0, 2]).tolist() == [True, False, True, False, False]


def test_chart_mismatch():
    a = constant_field(GridChart.box([0], [1], (5,)), [[1.0]])
    b = constant_field(GridChart.box([0], [2], (5,)), [[1.0]])
    with pytest.raises(ChartMismatch):
        require_same_chart(a, b)


def test_pointwise_unites_masks(rng):
    c = GridChart.box([0, 0], [1, 1], (15, 15))
    v = np.broadcast_to(np.eye(2), (225, 2, 2)).copy()
    m1 = np.zeros(225, bool)
    m1[0] = True
    m2 = np.zeros(225, bool)
    m2[5] = True
    g = MetricField(c, v, m1)
    h = MetricField(c, 2 * v, m2)
    s = pointwise(lambda a, b: a + b, g, h)
    assert s.singular_mask.sum() == 2
    np.testing.assert_allclose(s.values[1], 3 * np.eye(2))


def test_random_generators(rng):
    c = GridChart.box([0, 0, 0], [1, 1, 1], (4, 4, 4))
    g = random_metric_field(c, rng)
    assert np.all(np.linalg.eigvalsh(g.values) > 0)
    b = random_ell_field(c, rng, spread=0.5)
    assert b.ess_sup_norm() <= np.exp(0.5) + 1e-12
    assert b.ess_sup_inv_norm() <= np.exp(0.5) + 1e-12
    assert EllField.identity(c).ess_sup_norm() == 1.0
