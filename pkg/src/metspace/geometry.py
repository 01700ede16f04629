"""Volume measure, length distance and pullbacks of a metric field."""

import csv
import io
import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import gcd

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import EmptyRegion, ImageOutOfChart, NotInSameComponent, SourceSingular
from .fields import GridChart, MetricField, ScalarField, fill_masked, region_mask, require_same_chart
from .linalg import eig_sym, eps_spd, spd_det, symmetrize
from .space import dl

DEFAULT_STENCIL_ORDER = 2


@dataclass(frozen=True)
class MeasureReport:
    region: np.ndarray
    volume: float


def density(g):
    """``sqrt(det g)`` per node, zero at singular nodes."""
    vals = np.where(g.singular_mask[:, None, None], np.eye(g.dim), g.values)
    return np.where(g.singular_mask, 0.0, np.sqrt(spd_det(vals)))


def measure(g, region=None):
    """Riemannian volume of a node set, using dual-cell (trapezoid) weights."""
    mask = region_mask(g.chart, region)
    if not np.any(mask):
        raise EmptyRegion("region is empty")
    w = density(g) * g.chart.dual_volumes()
    return MeasureReport(mask, float(np.sum(w[mask])))


def stencil_offsets(dim, order=DEFAULT_STENCIL_ORDER):
    """Primitive integer offsets with max-norm at most ``order``.

    Only one of each ``+c`` / ``-c`` pair is returned; the graph is undirected.
    In 2D order 2 gives 8 of the 16 directions.
    """
    out = []
    for c in itertools.product(range(-order, order + 1), repeat=dim):
        if not any(c):
            continue
        first = next(x for x in c if x)
        if first < 0:
            continue
        g = 0
        for x in c:
            g = gcd(g, abs(x))
        if g == 1:
            out.append(c)
    return np.array(out, dtype=int)


def _edges(chart, offsets):
    """Node pairs ``(a, b)`` joined by each offset, honouring periodic axes."""
    idx = np.indices(chart.shape).reshape(chart.dim, -1).T
    shape = np.array(chart.shape)
    per = np.array(chart.periodic)
    heads, tails, offs = [], [], []
    for k, c in enumerate(offsets):
        b = idx + c
        b = np.where(per, b % shape, b)
        ok = np.all((b >= 0) & (b < shape), axis=1)
        a_nodes = np.flatnonzero(ok)
        b_nodes = np.ravel_multi_index(tuple(b[ok].T), chart.shape)
        keep = a_nodes != b_nodes
        heads.append(a_nodes[keep])
        tails.append(b_nodes[keep])
        offs.append(np.full(keep.sum(), k))
    return np.concatenate(heads), np.concatenate(tails), np.concatenate(offs)


def _segment_lengths(values, nodes, vecs):
    return np.sqrt(np.einsum("ni,nij,nj->n", vecs, values[nodes], vecs))


@dataclass(frozen=True, eq=False)
class DistanceMap:
    chart: GridChart
    source: int
    values: np.ndarray
    stencil_order: int

    def to_scalar_field(self):
        vals = np.where(np.isfinite(self.values), self.values, 0.0)
        return ScalarField(self.chart, vals, ~np.isfinite(self.values))

    def grid(self):
        return self.values.reshape(self.chart.shape)


class _Graph:
    """Weighted stencil graph of a metric field, reusable across sources."""

    def __init__(self, g, order):
        chart = g.chart
        offsets = stencil_offsets(chart.dim, order)
        a, b, k = _edges(chart, offsets)
        vals = fill_masked(chart, g.values, g.singular_mask) if np.any(g.singular_mask) else g.values
        vecs = offsets[k] * np.asarray(chart.spacing)
        w = 0.5 * (_segment_lengths(vals, a, vecs) + _segment_lengths(vals, b, vecs))
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        # periodic wrap on short axes can produce the same pair twice
        order_ = np.lexsort((w, hi, lo))
        lo, hi, w = lo[order_], hi[order_], w[order_]
        first = np.ones(lo.size, dtype=bool)
        first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        n = chart.n_nodes
        self.matrix = coo_matrix((w[first], (lo[first], hi[first])), shape=(n, n)).tocsr()
        self.heads, self.tails, self.weights = lo[first], hi[first], w[first]
        self.order = order
        self.g = g

    def run(self, sources):
        return dijkstra(self.matrix, directed=False, indices=sources)


def _check_source(g, source):
    source = int(source)
    if not 0 <= source < g.chart.n_nodes:
        raise IndexError(f"source node {source} out of range")
    if g.singular_mask[source]:
        raise SourceSingular(f"source node {source} is singular")
    return source


def distance_map(g, source, stencil_order=DEFAULT_STENCIL_ORDER):
    """Shortest-path length distance from ``source`` to every node.

    Edges join nodes whose index offset is primitive with max-norm at most
    ``stencil_order``; an edge costs the trapezoid-rule metric length of its
    straight segment. Singular nodes borrow the nearest regular value.
    """
    source = _check_source(g, source)
    graph = _Graph(g, stencil_order)
    return DistanceMap(g.chart, source, graph.run(source), stencil_order)


def distance_maps(g, sources, stencil_order=DEFAULT_STENCIL_ORDER):
    """Several maps sharing one graph assembly; returns ``{source: DistanceMap}``."""
    sources = sorted({_check_source(g, s) for s in sources})
    graph = _Graph(g, stencil_order)
    rows = graph.run(sources)
    return {s: DistanceMap(g.chart, s, rows[i], stencil_order) for i, s in enumerate(sources)}


def distance(g, x, y, stencil_order=DEFAULT_STENCIL_ORDER):
    return float(distance_map(g, x, stencil_order).values[int(y)])


def edge_lipschitz_violation(g, dmap):
    """Largest ``|d(a) - d(b)| - w(a, b)`` over graph edges (should be <= 0)."""
    graph = _Graph(g, dmap.stencil_order)
    da = dmap.values[graph.heads]
    db = dmap.values[graph.tails]
    fin = np.isfinite(da) & np.isfinite(db)
    return float(np.max(np.abs(da - db)[fin] - graph.weights[fin]))


@lru_cache(maxsize=None)
def stencil_error(dim, order=DEFAULT_STENCIL_ORDER):
    """Worst relative overestimate of Euclidean distance on a flat grid.

    In 2D this is exact: a path mixing two neighbouring stencil directions
    at angle ``a`` overshoots by at most ``1/cos(a/2) - 1``. In 3D and 4D it
    is calibrated from a corner source on a cube grid.
    """
    if dim == 1:
        return 0.0
    offs = stencil_offsets(dim, order)
    if dim == 2:
        dirs = np.concatenate([offs, -offs]).astype(float)
        ang = np.sort(np.arctan2(dirs[:, 1], dirs[:, 0]))
        gaps = np.diff(np.append(ang, ang[0] + 2 * np.pi))
        return float(1.0 / np.cos(0.5 * gaps.max()) - 1.0)
    n = {3: 33, 4: 13}[dim]
    chart = GridChart((0.0,) * dim, (1.0,) * dim, (n,) * dim)
    flat = MetricField(chart, np.broadcast_to(np.eye(dim), (chart.n_nodes, dim, dim)))
    d = distance_map(flat, 0, order).values
    r = np.linalg.norm(chart.coords(), axis=1)
    far = r > 0
    return float(np.max(d[far] / r[far] - 1.0))


@dataclass(frozen=True)
class ComparabilityReport:
    dl: float
    lower: float
    upper: float
    slack: float
    rows: tuple
    worst_ratio: float
    ok: bool

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "d_g", "d_h", "ratio"])
        for row in self.rows:
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), repr(row[4])])
        return buf.getvalue()


def distance_comparability_check(g, h, pairs, stencil_order=DEFAULT_STENCIL_ORDER, slack=None):
    """Check ``e^-dl d_g <= d_h <= e^dl d_g`` on node pairs.

    ``slack`` is relative and defaults to twice the calibrated stencil error.
    The worst ratio is the one furthest (in log) from 1.
    """
    require_same_chart(g, h)
    D = dl(g, h)
    if not D.finite:
        raise NotInSameComponent("metrics are at infinite distance")
    if slack is None:
        slack = 2.0 * stencil_error(g.dim, stencil_order)
    lower, upper = np.exp(-D.value), np.exp(D.value)
    pairs = [(int(x), int(y)) for x, y in pairs]
    sources = {x for x, _ in pairs}
    mg = distance_maps(g, sources, stencil_order)
    mh = distance_maps(h, sources, stencil_order)
    rows = []
    ok = True
    worst = 1.0
    for x, y in pairs:
        dg = float(mg[x].values[y])
        dh = float(mh[x].values[y])
        ratio = dh / dg if dg > 0 else 1.0
        rows.append((x, y, dg, dh, ratio))
        if abs(np.log(ratio)) > abs(np.log(worst)):
            worst = ratio
        if not (lower * (1 - slack) <= ratio <= upper * (1 + slack)):
            ok = False
    return ComparabilityReport(D.value, lower, upper, slack, tuple(rows), worst, ok)


def _fd_jacobian(F, x, step):
    n, d = x.shape
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = step[i]
        cols.append((np.asarray(F(x + e), dtype=float) - np.asarray(F(x - e), dtype=float)) / (2.0 * step[i]))
    return np.stack(cols, axis=-1)


def _interpolate_metric(h, pts):
    """Multilinear interpolation of ``h`` at points in its chart."""
    chart = h.chart
    lo = np.asarray(chart.origin)
    hi = np.asarray(chart.upper)
    span = hi - lo
    pts = np.array(pts, dtype=float)
    for ax, per in enumerate(chart.periodic):
        if per:
            period = chart.spacing[ax] * chart.shape[ax]
            pts[:, ax] = lo[ax] + np.mod(pts[:, ax] - lo[ax], period)
    tol = 1e-9 * span
    outside = np.any((pts < lo - tol) | (pts > hi + tol), axis=1)
    if np.any(outside):
        k = int(np.flatnonzero(outside)[0])
        raise ImageOutOfChart(f"image point {pts[k].tolist()} leaves the target chart")
    pts = np.clip(pts, lo, hi)
    d = chart.dim
    vals = fill_masked(chart, h.values, h.singular_mask)
    axes = chart.axes()
    if any(chart.periodic):
        # extend periodic axes by one wrapped layer so the last cell interpolates
        grid = vals.reshape(chart.shape + (d, d))
        for ax, per in enumerate(chart.periodic):
            if per:
                grid = np.concatenate([grid, np.take(grid, [0], axis=ax)], axis=ax)
                axes[ax] = np.append(axes[ax], axes[ax][-1] + chart.spacing[ax])
        interp = RegularGridInterpolator(axes, grid)
    else:
        interp = RegularGridInterpolator(axes, vals.reshape(chart.shape + (d, d)))
    return symmetrize(interp(pts))


def _masked_metric(chart, G, label):
    finite = np.all(np.isfinite(G), axis=(-2, -1))
    safe = np.where(finite[:, None, None], G, np.eye(chart.dim))
    w = eig_sym(safe).eigenvalues
    good = finite & (w[:, 0] > eps_spd(safe)) & (eps_spd(safe) > 0)
    return MetricField(chart, np.where(good[:, None, None], safe, G), ~good, label)


def pullback_metric(F, h, chart, jacobian=None, step=None, label="pullback"):
    """``(F^*h)(x) = J^T h(F(x)) J`` on the nodes of ``chart``.

    Parameters
    ----------
    F : callable
        Maps ``(n, dim)`` source coordinates to ``(n, h.dim)`` target coordinates.
    h : MetricField
        Metric on the target chart, interpolated multilinearly.
    chart : GridChart
        Source chart.
    jacobian : callable, optional
        Exact ``(n, h.dim, dim)`` Jacobian; central differences otherwise.
    step : float, optional
        Difference step, default ``1e-6`` times the smallest spacing.

    Nodes where ``J`` loses rank are masked singular.
    """
    x = chart.coords()
    y = np.asarray(F(x), dtype=float).reshape(chart.n_nodes, h.dim)
    if jacobian is not None:
        J = np.asarray(jacobian(x), dtype=float)
    else:
        s = 1e-6 * min(chart.spacing) if step is None else float(step)
        J = _fd_jacobian(F, x, np.full(chart.dim, s))
    H = _interpolate_metric(h, y)
    G = symmetrize(np.swapaxes(J, -1, -2) @ H @ J)
    return _masked_metric(chart, G, label)


def _scalar_gradient(f, chart, step):
    if isinstance(f, ScalarField):
        grid = f.grid()
        grads = np.gradient(grid, *chart.spacing, edge_order=1)
        if chart.dim == 1:
            grads = [grads]
        return f.values, np.stack([gr.ravel() for gr in grads], axis=-1)
    x = chart.coords()
    vals = np.asarray(f(x), dtype=float).reshape(-1)
    s = 1e-6 * min(chart.spacing) if step is None else float(step)
    F = lambda pts: np.asarray(f(pts), dtype=float).reshape(-1, 1)
    return vals, _fd_jacobian(F, x, np.full(chart.dim, s))[:, 0, :]


def graph_metric(f, g, g_prime=None, step=None, label="graph"):
    """Metric induced on the graph ``x -> (x, f(x))`` of a scalar function.

    ``G_F = g(x) + g'(f(x)) grad f grad f^T``. ``f`` is a ScalarField on
    ``g``'s chart (grid differences) or a vectorised callable (central
    differences). ``g_prime`` is a metric on a 1D chart covering the range
    of ``f``, a positive constant, or ``None`` for the flat line.
    """
    chart = g.chart
    vals, grad = _scalar_gradient(f, chart, step)
    if g_prime is None:
        gp = np.ones(chart.n_nodes)
    elif isinstance(g_prime, MetricField):
        gp = _interpolate_metric(g_prime, vals[:, None])[:, 0, 0]
    else:
        gp = np.full(chart.n_nodes, float(g_prime))
    G = g.values + gp[:, None, None] * grad[:, :, None] * grad[:, None, :]
    G = np.where(g.singular_mask[:, None, None], g.values, symmetrize(G))
    return MetricField(chart, G, g.singular_mask, label, g.max_singular_fraction)


def crease_nodes(f, chart, rel_jump=0.25):
    """Nodes where forward and backward slopes of ``f`` jump.

    A jump counts when it exceeds ``rel_jump`` times the largest slope, so
    smooth bending (jumps of order ``h``) is not reported.
    """
    grid = f.grid() if isinstance(f, ScalarField) else np.asarray(f(chart.coords()), dtype=float).reshape(chart.shape)
    out = np.zeros(chart.shape, dtype=bool)
    for ax, h in enumerate(chart.spacing):
        fwd = np.diff(grid, axis=ax) / h
        jump = np.abs(np.diff(fwd, axis=ax)) > rel_jump * max(1e-300, float(np.max(np.abs(fwd))))
        sl = [slice(None)] * chart.dim
        sl[ax] = slice(1, -1)
        out[tuple(sl)] |= jump
    return out.ravel()
