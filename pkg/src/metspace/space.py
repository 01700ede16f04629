"""Extended distance between metric fields, the Ell action, and paths.

Orientation convention used throughout: ``transport_B(g, h)`` returns the
field ``B`` with ``g = act(B, h)``, that is ``G = B^T H B`` at every node,
and ``B`` is self-adjoint with respect to ``h``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from .errors import AllSingular, EpsilonTooLarge, NotCauchy, NotInSameComponent
from .fields import (
    EllField,
    GridChart,
    MetricField,
    build_field,
    region_mask,
    require_same_chart,
)
from .linalg import gen_eig_max, spd_invsqrt, spd_log, spd_power, spd_sqrt, sym_exp, symmetrize

DL_INFINITY_THRESHOLD = 50.0


@dataclass(frozen=True)
class ExtendedDistance:
    """A value in ``[0, inf]`` plus where (or why) it was attained.

    ``certificate`` is set exactly when ``value`` is infinite and holds the
    witnessing radii and values. ``per_radius`` lists every computed
    ``(radius, value)`` for exhaustion runs.
    """

    value: float
    argmax_node: int = -1
    certificate: dict = None
    truncated: bool = False
    per_radius: tuple = ()

    def __post_init__(self):
        if np.isinf(self.value) != (self.certificate is not None):
            raise ValueError("an infinite distance needs a divergence certificate and vice versa")

    def __float__(self):
        return float(self.value)

    @property
    def finite(self):
        return bool(np.isfinite(self.value))


def _node_ratios(g, h, region=None):
    """Per-node ``max(lambda_max(G,H), lambda_max(H,G))`` over usable nodes.

    Returns the ratios and the node indices they belong to.
    """
    require_same_chart(g, h)
    use = region_mask(g.chart, region) & ~g.singular_mask & ~h.singular_mask
    nodes = np.flatnonzero(use)
    if nodes.size == 0:
        raise AllSingular("no node is non-singular for both metrics")
    gv = g.values[nodes]
    hv = h.values[nodes]
    r = np.maximum(gen_eig_max(gv, hv), gen_eig_max(hv, gv))
    same = np.all(gv == hv, axis=(-2, -1))
    r = np.where(same, 1.0, r)
    return r, nodes


def closeness_constant(g, h, region=None):
    """Smallest ``C`` with ``C^-1 |u|_h <= |u|_g <= C |u|_h`` at every usable node."""
    r, _ = _node_ratios(g, h, region)
    return float(np.sqrt(max(1.0, r.max())))


def dl(g, h, region=None):
    """Log of the closeness constant, i.e. the extended distance on one chart.

    Parameters
    ----------
    g, h : MetricField
        Fields on the same chart.
    region : optional node mask or index array
        Restricts the essential supremum.

    Returns
    -------
    ExtendedDistance
        Always finite on a single grid; ``argmax_node`` is the first node
        attaining the maximum.
    """
    r, nodes = _node_ratios(g, h, region)
    k = int(np.argmax(r))
    return ExtendedDistance(max(0.0, 0.5 * float(np.log(r[k]))), int(nodes[k]))


def _exhaustion_chart(radius, spacing, dim):
    n = int(np.ceil(radius / spacing))
    return GridChart((-n * spacing,) * dim, (spacing,) * dim, (2 * n + 1,) * dim)


def dl_exhaustion(g_gen, h_gen, radii, spacing=1.0, dim=2, threshold=DL_INFINITY_THRESHOLD):
    """Distance over the growing balls ``|x| < R`` for each radius in ``radii``.

    ``g_gen`` and ``h_gen`` map an ``(n, dim)`` coordinate array to
    ``(n, dim, dim)`` matrices. The result is ``+inf`` when the last value
    exceeds ``threshold`` and the values strictly increase over the last
    three radii; otherwise it is the last value, flagged ``truncated``.
    """
    radii = [float(r) for r in radii]
    if not radii or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be a non-empty ascending list")
    values = []
    last = None
    for radius in radii:
        chart = _exhaustion_chart(radius, spacing, dim)
        inside = np.linalg.norm(chart.coords(), axis=1) < radius
        g = build_field(chart, g_gen, "g")
        h = build_field(chart, h_gen, "h")
        last = dl(g, h, inside)
        values.append((radius, last.value))
    tail = [v for _, v in values[-3:]]
    growing = len(tail) == 3 and tail[0] < tail[1] < tail[2]
    if values[-1][1] > threshold and growing:
        cert = {"radii": [r for r, _ in values[-3:]], "values": tail, "threshold": threshold}
        return ExtendedDistance(np.inf, last.argmax_node, cert, False, tuple(values))
    return ExtendedDistance(last.value, last.argmax_node, None, True, tuple(values))


def _ell_mask(g, h):
    return g.singular_mask | h.singular_mask


def transport_B(g, h):
    """The h-self-adjoint field ``B`` with ``g = act(B, h)``.

    Per node ``B = H^{-1/2} (H^{-1/2} G H^{-1/2})^{1/2} H^{1/2}``.
    """
    require_same_chart(g, h)
    mask = _ell_mask(g, h)
    d = g.dim
    eye = np.eye(d)
    gv = np.where(mask[:, None, None], eye, g.values)
    hv = np.where(mask[:, None, None], eye, h.values)
    hi = spd_invsqrt(hv)
    hs = spd_sqrt(hv)
    m = symmetrize(hi @ gv @ hi)
    b = hi @ spd_sqrt(m) @ hs
    return EllField(g.chart, b, mask, selfadjoint_wrt=h.label or "h")


def act(b, g, label=None):
    """Pull ``g`` back through ``B``: ``G_B = B^T G B`` per node.

    This is a right action, ``act(B2, act(B1, g)) == act(B1 @ B2, g)``.
    """
    require_same_chart(b, g)
    mask = b.singular_mask | g.singular_mask
    d = g.dim
    eye = np.eye(d)
    bv = np.where(mask[:, None, None], eye, b.values)
    gv = np.where(mask[:, None, None], eye, g.values)
    out = symmetrize(np.swapaxes(bv, -1, -2) @ gv @ bv)
    out = np.where(mask[:, None, None], g.values, out)
    return g.with_values(out, label=g.label if label is None else label, singular_mask=mask)


def compose(b1, b2):
    """Pointwise product ``B1 @ B2`` (apply ``B1`` first under ``act``)."""
    require_same_chart(b1, b2)
    return EllField(b1.chart, b1.values @ b2.values, b1.singular_mask | b2.singular_mask)


def inverse(b):
    return EllField(b.chart, np.linalg.inv(b.values), b.singular_mask)


def h_operator_norm(b, h):
    """Operator norm of each ``B`` measured in the inner product of ``h``.

    For an h-self-adjoint ``B`` this is its largest absolute eigenvalue.
    """
    hv = np.where(b.singular_mask[:, None, None], np.eye(h.dim), h.values)
    hs = spd_sqrt(hv)
    hi = spd_invsqrt(hv)
    return np.linalg.norm(hs @ b.values @ hi, ord=2, axis=(-2, -1))


@dataclass(frozen=True, eq=False)
class GeodesicPath:
    """``t -> act(B^t, g0)`` joining ``g0`` (t=0) to ``g1`` (t=1)."""

    g0: MetricField
    g1: MetricField
    transport: EllField
    _root: np.ndarray = field(repr=False)
    _ratio: np.ndarray = field(repr=False)

    @property
    def g0_label(self):
        return self.g0.label

    @property
    def g1_label(self):
        return self.g1.label

    def eval(self, t):
        t = float(t)
        if t == 0.0:
            return self.g0
        if t == 1.0:
            return self.g1
        vals = symmetrize(self._root @ spd_power(self._ratio, t) @ self._root)
        vals = np.where(self.transport.singular_mask[:, None, None], self.g0.values, vals)
        return self.g0.with_values(vals, label=f"geodesic(t={t:g})", singular_mask=self.transport.singular_mask)

    def power(self, t):
        """The field ``B^t``, again g0-self-adjoint."""
        inv_root = np.linalg.inv(self._root)
        vals = inv_root @ spd_power(self._ratio, 0.5 * float(t)) @ self._root
        return EllField(self.g0.chart, vals, self.transport.singular_mask, self.g0.label or "g0")


def geodesic(g0, g1):
    """Path of Ell-rescalings between two metrics at finite distance."""
    if not dl(g0, g1).finite:
        raise NotInSameComponent("metrics are at infinite distance")
    b = transport_B(g1, g0)
    mask = b.singular_mask
    eye = np.eye(g0.dim)
    gv0 = np.where(mask[:, None, None], eye, g0.values)
    gv1 = np.where(mask[:, None, None], eye, g1.values)
    root = spd_sqrt(gv0)
    inv_root = spd_invsqrt(gv0)
    ratio = symmetrize(inv_root @ gv1 @ inv_root)
    return GeodesicPath(g0, g1, b, root, ratio)


def midpoint(g0, g1):
    return geodesic(g0, g1).eval(0.5)


def _log_coords(gs, ref):
    inv_root = spd_invsqrt(ref)
    return np.stack([spd_log(symmetrize(inv_root @ g @ inv_root)) for g in gs])


def _neville_at_zero(s, y):
    """Value at 0 of the interpolating polynomial through ``(s_i, y_i)``."""
    p = list(y)
    n = len(s)
    for k in range(1, n):
        for i in range(n - k):
            p[i] = (s[i + k] * p[i] - s[i] * p[i + 1]) / (s[i + k] - s[i])
    return p[0]


def _aitken(y):
    d1 = y[-1] - y[-2]
    d0 = y[-2] - y[-3]
    n0 = np.max(np.abs(d0))
    if n0 == 0.0:
        return y[-1]
    r = np.max(np.abs(d1)) / n0
    if r >= 1.0:
        return None
    return y[-1] + d1 * (r / (1.0 - r))


def _extrapolate(y):
    """Best limit estimate for the sequence ``y[0], y[1], ...`` (index n = k+1).

    Candidates are Aitken's geometric tail and polynomial extrapolation in
    ``1/n``; the one whose estimate moves least when the last term is
    dropped wins.
    """
    n = len(y)
    if n < 3:
        return y[-1]
    s = 1.0 / np.arange(1, n + 1)
    best, best_err = y[-1], np.max(np.abs(y[-1] - y[-2]))
    if n >= 4:
        a1, a0 = _aitken(y), _aitken(y[:-1])
        if a1 is not None and a0 is not None:
            err = np.max(np.abs(a1 - a0))
            if err < best_err:
                best, best_err = a1, err
    for p in range(1, min(12, n - 2) + 1):
        e1 = _neville_at_zero(s[n - p - 1 :], y[n - p - 1 :])
        e0 = _neville_at_zero(s[n - p - 2 : n - 1], y[n - p - 2 : n - 1])
        err = np.max(np.abs(e1 - e0))
        if err < best_err:
            best, best_err = e1, err
    return best


def cauchy_limit(gs, label="cauchy-limit"):
    """Limit of a Cauchy sequence of metric fields.

    Each ``g_n`` is written as ``act(B_n, g_1)`` with ``B_n`` self-adjoint for
    ``g_1``. The symmetric log-coordinates of ``B_n^2`` are extrapolated to
    ``n -> inf`` and the limit is ``act(sqrt(lim B_n^2), g_1)``.

    Raises
    ------
    NotCauchy
        If consecutive distances grow over the second half of the sequence.
    """
    gs = list(gs)
    if not gs:
        raise ValueError("empty sequence")
    require_same_chart(*gs)
    if len(gs) == 1:
        return gs[0]
    steps = [dl(a, b).value for a, b in zip(gs, gs[1:])]
    start = len(steps) // 2
    for k in range(max(start, 1), len(steps)):
        if steps[k] > steps[k - 1] * (1.0 + 1e-9) + 1e-14:
            raise NotCauchy(f"step {k}->{k + 1} grows: {steps[k]:.3e} > {steps[k - 1]:.3e}", (k, k + 1))
    mask = np.zeros(gs[0].chart.n_nodes, dtype=bool)
    for g in gs:
        mask |= g.singular_mask
    if max(steps[-3:]) == 0.0:
        # stationary tail: the limit is already in the sequence
        return gs[-1].with_values(gs[-1].values, label=label, singular_mask=mask)
    eye = np.eye(gs[0].dim)
    stack = [np.where(mask[:, None, None], eye, g.values) for g in gs]
    ref = stack[0]
    lim_log = _extrapolate(_log_coords(stack, ref))
    root = spd_sqrt(ref)
    b_sq = sym_exp(symmetrize(lim_log))
    vals = symmetrize(root @ b_sq @ root)
    vals = np.where(mask[:, None, None], gs[-1].values, vals)
    return gs[0].with_values(vals, label=label, singular_mask=mask)


def _bspline2(t):
    a = np.abs(t)
    return np.where(a <= 0.5, 0.75 - a * a, np.where(a <= 1.5, 0.5 * (1.5 - a) ** 2, 0.0))


def mollifier_weights(epsilon, spacing):
    """Quadratic B-spline taps on one axis, support radius ``epsilon``."""
    k = int(np.floor(epsilon / spacing * (1.0 - 1e-12)))
    offs = np.arange(-k, k + 1) * spacing
    return _bspline2(1.5 * offs / epsilon)


def smooth_approx(g, epsilon, label=None):
    """Mollify ``g`` coefficient-wise with a normalised compact kernel.

    Singular nodes get zero weight and each node's weights are renormalised,
    so the result is a positive combination of SPD matrices.

    Raises
    ------
    EpsilonTooLarge
        If the kernel diameter exceeds the chart along some axis.
    AllSingular
        If some kernel support contains only singular nodes.
    """
    chart = g.chart
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    for h, s, per in zip(chart.spacing, chart.shape, chart.periodic):
        extent = h * s if per else h * (s - 1)
        if 2.0 * epsilon > extent:
            raise EpsilonTooLarge(f"kernel diameter {2 * epsilon:g} exceeds chart extent {extent:g}")
    d = chart.dim
    ok = (~g.singular_mask).astype(float)
    num = np.where(g.singular_mask[:, None, None], 0.0, g.values).reshape(chart.shape + (d, d))
    den = ok.reshape(chart.shape)
    for ax, (h, per) in enumerate(zip(chart.spacing, chart.periodic)):
        w = mollifier_weights(epsilon, h)
        mode = "wrap" if per else "constant"
        num = convolve1d(num, w, axis=ax, mode=mode, cval=0.0)
        den = convolve1d(den, w, axis=ax, mode=mode, cval=0.0)
    den = den.ravel()
    if np.any(den <= 0):
        raise AllSingular("a kernel support contains only singular nodes")
    vals = symmetrize(num.reshape(-1, d, d) / den[:, None, None])
    return MetricField(
        chart,
        vals,
        None,
        label if label is not None else f"{g.label}~eps={epsilon:g}",
        g.max_singular_fraction,
    )


def perturb(g, rng, distance, label=None):
    """Random metric at extended distance exactly ``distance`` from ``g``.

    ``h = G^{1/2} exp(2 distance S) G^{1/2}`` with random symmetric ``S``
    scaled so the largest spectral radius over nodes is one.
    """
    from .fields import random_symmetric
    from .linalg import op_norm_sym

    s = random_symmetric(rng, g.chart.n_nodes, g.dim)
    s /= np.max(op_norm_sym(s))
    mask = g.singular_mask
    gv = np.where(mask[:, None, None], np.eye(g.dim), g.values)
    root = spd_sqrt(gv)
    vals = symmetrize(root @ sym_exp(2.0 * float(distance) * s) @ root)
    vals = np.where(mask[:, None, None], g.values, vals)
    return g.with_values(vals, label=label or f"{g.label}+{distance:g}")
