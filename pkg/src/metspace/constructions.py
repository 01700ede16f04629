"""Explicit example metrics: jump fields, unbounded conformal factors,
the determinant-matched pair with equal distances, and Lipschitz graphs."""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .fields import GridChart, MetricField, ScalarField, build_field, conformal_field
from .geometry import crease_nodes, distance_maps, graph_metric, stencil_error
from .linalg import spd_det


def nonapprox_metric(chart, jump=100.0, ball_radius=1.0):
    """``f * identity`` with ``f = 1`` on ``|x| < ball_radius`` and ``jump`` outside."""
    jump = float(jump)
    if jump < 1:
        raise ValueError("jump must be at least 1")
    return conformal_field(
        chart,
        lambda x: np.where(np.linalg.norm(x, axis=1) < ball_radius, 1.0, jump),
        label=f"jump(K={jump:g})",
    )


def annulus_index(x, radii):
    """1-based index ``j`` with ``radii[j-2] <= |x| < radii[j-1]`` (``radii[-1]`` read as 0)."""
    r = np.linalg.norm(np.atleast_2d(x), axis=1)
    return np.searchsorted(np.asarray(radii, dtype=float), r, side="right") + 1


def unbounded_conformal(radii):
    """Generator of ``2**j * identity`` on the ``j``-th annulus.

    Points beyond the last radius continue the pattern with ``j = len(radii) + 1``.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or np.any(np.diff(radii) <= 0) or radii.size == 0 or radii[0] <= 0:
        raise ValueError("radii must be positive and strictly ascending")

    def gen(x):
        j = annulus_index(x, radii)
        d = x.shape[1]
        return np.ldexp(1.0, j)[:, None, None] * np.eye(d)

    return gen


def flat_generator(x):
    return np.broadcast_to(np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1]))


@dataclass(frozen=True, eq=False)
class CurveNetwork:
    """Finite sample of points with short polylines between neighbours.

    ``curves`` holds ``(k, l, m, polyline)`` where ``polyline`` is an
    ``(P, dim)`` vertex array from ``points[k]`` to ``points[l]`` whose
    length is at most ``(1 + 1/m) |points[k] - points[l]|``.
    """

    chart: GridChart
    points: np.ndarray
    curves: tuple
    tube_radius: float
    m_max: int

    def __post_init__(self):
        for k, l, m, poly in self.curves:
            if not (np.array_equal(poly[0], self.points[k]) and np.array_equal(poly[-1], self.points[l])):
                raise ValueError(f"curve ({k},{l},{m}) does not join its endpoints")
            if polyline_length(poly) > (1 + 1 / m) * np.linalg.norm(self.points[l] - self.points[k]) + 1e-12:
                raise ValueError(f"curve ({k},{l},{m}) is too long")

    def segments(self):
        a = np.concatenate([c[3][:-1] for c in self.curves])
        b = np.concatenate([c[3][1:] for c in self.curves])
        return a, b


def polyline_length(poly):
    return float(np.sum(np.linalg.norm(np.diff(poly, axis=0), axis=1)))


def _unit_perpendicular(v, rng):
    while True:
        w = rng.normal(size=v.size)
        w -= (w @ v) / (v @ v) * v
        n = np.linalg.norm(w)
        if n > 1e-8:
            return w / n


def build_network(chart, m_max=8, stride=2, tube_radius=None, seed=0):
    """Curves between neighbouring points of a coarse sub-lattice.

    Points are every ``stride``-th node; neighbours differ by at most one
    coarse step per axis. For each neighbour pair and each ``m <= m_max`` the
    curve is a two-segment polyline kinked sideways (seeded direction) so
    its length is exactly ``(1 + 1/(2m))`` times the chord.
    """
    rng = np.random.default_rng(seed)
    idx_axes = [np.arange(0, s, stride) for s in chart.shape]
    grid = np.stack([m.ravel() for m in np.meshgrid(*idx_axes, indexing="ij")], axis=-1)
    origin = np.asarray(chart.origin)
    spacing = np.asarray(chart.spacing)
    points = origin + grid * spacing
    lookup = {tuple(p): i for i, p in enumerate(grid.tolist())}
    steps = [c for c in itertools.product((-1, 0, 1), repeat=chart.dim) if any(c)]
    curves = []
    for k, p in enumerate(grid.tolist()):
        for c in steps:
            q = tuple(pi + stride * ci for pi, ci in zip(p, c))
            l = lookup.get(q)
            if l is None or l <= k:
                continue
            a, b = points[k], points[l]
            chord = b - a
            L = np.linalg.norm(chord)
            for m in range(1, m_max + 1):
                off = 0.5 * L * np.sqrt((1 + 1 / (2 * m)) ** 2 - 1)
                kink = 0.5 * (a + b) + off * _unit_perpendicular(chord, rng)
                curves.append((k, l, m, np.stack([a, kink, b])))
    r = 2.0 * float(min(chart.spacing)) if tube_radius is None else float(tube_radius)
    return CurveNetwork(chart, points, tuple(curves), r, int(m_max))


def _segment_distance(x, a, b):
    """Distance from each point in ``x`` to each segment ``[a_j, b_j]``; shape (n, s)."""
    ab = b - a
    ab2 = np.einsum("sd,sd->s", ab, ab)
    xa = x @ ab.T - np.einsum("sd,sd->s", a, ab)
    xx = np.einsum("nd,nd->n", x, x)[:, None] - 2.0 * (x @ a.T) + np.einsum("sd,sd->s", a, a)
    t = np.clip(xa / ab2, 0.0, 1.0)
    return np.sqrt(np.maximum(xx - 2.0 * t * xa + t * t * ab2, 0.0))


def tube_profile(network, chunk=256):
    """``Psi_0``: max over curves of the linear tube bump ``max(0, 1 - dist/r)``."""
    x = network.chart.coords()
    a, b = network.segments()
    # spatially coherent chunks keep the per-chunk bounding boxes small
    mid = np.floor(0.5 * (a + b) / (2 * network.tube_radius))
    order = np.lexsort(mid.T[::-1])
    a, b = a[order], b[order]
    best = np.full(x.shape[0], np.inf)
    r = network.tube_radius
    for s in range(0, a.shape[0], chunk):
        aa, bb = a[s : s + chunk], b[s : s + chunk]
        lo = np.minimum(aa, bb).min(axis=0) - r
        hi = np.maximum(aa, bb).max(axis=0) + r
        near = np.all((x >= lo) & (x <= hi), axis=1)
        if not np.any(near):
            continue
        best[near] = np.minimum(best[near], _segment_distance(x[near], aa, bb).min(axis=1))
    return np.maximum(0.0, 1.0 - best / r)


def tube_budget(network, epsilon=None):
    """Super-level set measure budget of the tube bumps.

    For the linear profile, ``{psi > alpha}`` is the tube of radius
    ``rho = (1 - alpha) r`` whose 4-volume is at most
    ``len * V3(rho) + V4(rho)``. Dividing by ``1 - alpha`` the worst case is
    ``alpha = 0``. Returns ``log2`` of the smallest admissible ``epsilon``
    (indices are 1-based, so the weights overflow floats) and, when
    ``epsilon`` is given, whether it satisfies every budget.
    """
    r = network.tube_radius
    d = network.chart.dim
    if d != 4:
        raise DimensionError("tube budget is defined for 4D networks")
    v3 = 4.0 / 3.0 * np.pi * r**3
    v4 = 0.5 * np.pi**2 * r**4
    worst = -np.inf
    for k, l, m, poly in network.curves:
        vol = polyline_length(poly) * v3 + v4
        worst = max(worst, (k + 1) + (l + 1) + m + np.log2(vol))
    ok = None if epsilon is None else bool(np.log2(epsilon) > worst)
    return {"log2_epsilon_required": float(worst), "ok": ok}


def sturm_pair(network, alpha=1.0):
    """Two metrics with identical volume density and near-Euclidean distances.

    With ``Psi = 1/2 + Psi_0 / 2`` and ``theta = alpha``::

        g  = (Psi**theta * I_2) (+) I_2
        g' = Psi**(theta / 2) * I_4

    so ``det g = det g' = Psi**(2 theta)`` at every node.

    Raises
    ------
    DimensionError
        Unless the network lives on a 4-dimensional chart.
    """
    chart = network.chart
    if chart.dim != 4:
        raise DimensionError(f"the pair needs a 4D chart, got dimension {chart.dim}")
    theta = float(alpha)
    if not 0 < theta <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    psi = 0.5 + 0.5 * tube_profile(network)
    a = psi**theta
    n = chart.n_nodes
    gv = np.zeros((n, 4, 4))
    gv[:, 0, 0] = gv[:, 1, 1] = a
    gv[:, 2, 2] = gv[:, 3, 3] = 1.0
    gpv = (psi ** (0.5 * theta))[:, None, None] * np.eye(4)
    g = MetricField(chart, gv, None, f"sturm-g(theta={theta:g})")
    gp = MetricField(chart, gpv, None, f"sturm-g'(theta={theta:g})")
    return g, gp


def sturm_report(network, g, gp, n_sources=12, stencil_order=1, seed=0):
    """Determinant equality and the distance sandwich on network pairs."""
    det_g = spd_det(g.values)
    det_gp = spd_det(gp.values)
    det_dev = float(np.max(np.abs(det_g - det_gp) / det_g))
    rng = np.random.default_rng(seed)
    chart = network.chart
    node_of = np.array([chart.nearest_node(p) for p in network.points])
    pairs = sorted({(c[0], c[1]) for c in network.curves})
    ks = sorted({k for k, _ in pairs})
    chosen = set(rng.choice(ks, size=min(n_sources, len(ks)), replace=False).tolist())
    pairs = [(k, l) for k, l in pairs if k in chosen]
    m = network.m_max
    slack = stencil_error(chart.dim, stencil_order)
    rows = []
    worst_lo, worst_hi = np.inf, 0.0
    ok = True
    for field in (g, gp):
        maps = distance_maps(field, {int(node_of[k]) for k, _ in pairs}, stencil_order)
        for k, l in pairs:
            e = float(np.linalg.norm(network.points[l] - network.points[k]))
            d = float(maps[int(node_of[k])].values[node_of[l]])
            ratio = d / e
            worst_lo = min(worst_lo, ratio)
            worst_hi = max(worst_hi, ratio)
            lo = e / (1 + 1 / m) - slack * e
            hi = e * (1 + 1 / m) + slack * e
            ok &= lo <= d <= hi
            rows.append((field.label, k, l, e, d, ratio))
    return {
        "max_det_deviation": det_dev,
        "pairs": len(pairs),
        "min_ratio": worst_lo,
        "max_ratio": worst_hi,
        "factor": 1 + 1 / m,
        "slack": slack,
        "ok": bool(ok),
        "rows": rows,
    }


def lipschitz_function(name, chart, seed=0, **params):
    """Vectorised Lipschitz test functions with creases.

    ``zero``, ``linear`` (slope ``a`` along the first axis), ``cone``
    (``|x|``), ``sawtooth`` (distance to a lattice of ``period`` along the
    first axis; the default of four spacings creases every other node column), ``rational_cones`` (``sum 2^-k |x - q_k|`` over rational
    centres ``q_k``) and ``plane_creases`` (random folds ``sum c_k |n_k.x - b_k|``).
    """
    rng = np.random.default_rng(seed)
    if name == "zero":
        return lambda x: np.zeros(x.shape[0])
    if name == "linear":
        a = float(params.get("a", 1.0))
        return lambda x: a * x[:, 0]
    if name == "cone":
        return lambda x: np.linalg.norm(x, axis=1)
    if name == "sawtooth":
        period = float(params.get("period", 4 * chart.spacing[0]))
        return lambda x: np.abs(x[:, 0] - period * np.round(x[:, 0] / period))
    if name == "rational_cones":
        count = int(params.get("count", 16))
        denom = int(params.get("denominator", 8))
        lo = np.asarray(chart.origin)
        hi = np.asarray(chart.upper)
        q = lo + (hi - lo) * rng.integers(0, denom + 1, size=(count, chart.dim)) / denom
        w = 0.5 ** np.arange(1, count + 1)
        return lambda x: np.sum(w * np.linalg.norm(x[:, None, :] - q[None], axis=2), axis=1)
    if name == "plane_creases":
        count = int(params.get("count", 12))
        n = rng.normal(size=(count, chart.dim))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        c = rng.uniform(0.1, 1.0, size=count)
        lo = np.asarray(chart.origin)
        hi = np.asarray(chart.upper)
        b = np.einsum("kd,kd->k", n, lo + (hi - lo) * rng.uniform(size=(count, chart.dim)))
        return lambda x: np.sum(c * np.abs(x @ n.T - b), axis=1)
    raise ValueError(f"unknown Lipschitz function {name!r}")


def lipschitz_graph_suite(name, chart, seed=0, **params):
    """Graph metric of a named Lipschitz function over the flat chart.

    Returns the field and crease / mask statistics.
    """
    f = lipschitz_function(name, chart, seed, **params)
    flat = build_field(chart, flat_generator, "flat")
    g = graph_metric(f, flat, None, label=f"graph({name})")
    creases = crease_nodes(ScalarField(chart, f(chart.coords())), chart)
    stats = {
        "function": name,
        "crease_fraction": float(creases.mean()),
        "mask_fraction": float(g.singular_mask.mean()),
        "mask_cap": g.max_singular_fraction,
    }
    return g, stats
