"""Grid charts and the per-node fields that live on them.

Node ordering is row-major with the last axis fastest, matching
``numpy.ravel`` on an array of shape ``chart.shape``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ChartMismatch, EmptyRegion, TooSingular
from .linalg import eig_min, eig_sym, eps_spd, symmetrize

SING_FRACTION_MAX = 0.01


@dataclass(frozen=True)
class GridChart:
    """Uniform rectangular grid in chart coordinates.

    Parameters
    ----------
    origin : tuple of float
        Coordinates of node ``(0, ..., 0)``.
    spacing : tuple of float
        Positive node spacing per axis.
    shape : tuple of int
        Node count per axis, each at least 2.
    periodic : tuple of bool, optional
        Axes that wrap around.
    """

    origin: tuple
    spacing: tuple
    shape: tuple
    periodic: tuple = None

    def __post_init__(self):
        origin = tuple(float(o) for o in self.origin)
        spacing = tuple(float(h) for h in self.spacing)
        shape = tuple(int(s) for s in self.shape)
        dim = len(shape)
        periodic = self.periodic
        periodic = (False,) * dim if periodic is None else tuple(bool(p) for p in periodic)
        if not 1 <= dim <= 4:
            raise ValueError(f"chart dimension must be 1..4, got {dim}")
        if len(origin) != dim or len(spacing) != dim or len(periodic) != dim:
            raise ValueError("origin, spacing, shape and periodic must have equal length")
        if any(not np.isfinite(h) or h <= 0 for h in spacing):
            raise ValueError(f"spacing must be finite and positive, got {spacing}")
        if any(s < 2 for s in shape):
            raise ValueError(f"need at least 2 nodes per axis, got {shape}")
        if int(np.prod(shape)) < 2**dim:
            raise ValueError("too few nodes for the chart dimension")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "periodic", periodic)

    @classmethod
    def box(cls, lower, upper, shape, periodic=None):
        """Chart whose first and last nodes sit on ``lower`` and ``upper``."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        shape = tuple(np.broadcast_to(np.atleast_1d(shape), lower.shape).astype(int))
        spacing = (upper - lower) / (np.asarray(shape) - 1)
        return cls(tuple(lower), tuple(spacing), shape, periodic)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def upper(self):
        return tuple(o + h * (s - 1) for o, h, s in zip(self.origin, self.spacing, self.shape))

    def axes(self):
        return [o + h * np.arange(s) for o, h, s in zip(self.origin, self.spacing, self.shape)]

    def coords(self):
        """Node coordinates, shape ``(n_nodes, dim)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def multi_index(self, node):
        return np.unravel_index(node, self.shape)

    def node(self, *index):
        return int(np.ravel_multi_index(tuple(int(i) for i in index), self.shape))

    def nearest_node(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.rint((x - np.asarray(self.origin)) / np.asarray(self.spacing)).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return self.node(*idx)

    def dual_volumes(self):
        """Volume of the node-centred dual cell, halved per boundary axis."""
        w = np.ones(self.shape)
        for ax, (s, per) in enumerate(zip(self.shape, self.periodic)):
            if per:
                continue
            sl = [slice(None)] * self.dim
            for end in (0, s - 1):
                sl[ax] = end
                w[tuple(sl)] *= 0.5
        return (w * self.cell_volume).ravel()

    def compatible(self, other):
        return (
            self.shape == other.shape
            and self.periodic == other.periodic
            and np.allclose(self.origin, other.origin, rtol=1e-12, atol=1e-12)
            and np.allclose(self.spacing, other.spacing, rtol=1e-12, atol=0)
        )


def require_same_chart(*fields_):
    first = fields_[0].chart
    for f in fields_[1:]:
        if not first.compatible(f.chart):
            raise ChartMismatch(f"charts differ: {first} vs {f.chart}")


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def region_mask(chart, region=None):
    """Boolean node mask from ``None`` (all nodes), a boolean array, or indices."""
    if region is None:
        return np.ones(chart.n_nodes, dtype=bool)
    region = np.asarray(region)
    if region.dtype == bool:
        mask = region.ravel()
        if mask.size != chart.n_nodes:
            raise ValueError("region mask has the wrong size")
        return mask.copy()
    mask = np.zeros(chart.n_nodes, dtype=bool)
    mask[region.ravel().astype(int)] = True
    return mask


@dataclass(frozen=True, eq=False)
class MetricField:
    """A measurable metric: one SPD matrix per node plus a singular-node mask.

    Values at masked nodes are stored as given and ignored by every
    reduction. Construction validates positive definiteness at the other
    nodes and the cap on the masked fraction.
    """

    chart: GridChart
    values: np.ndarray
    singular_mask: np.ndarray = None
    label: str = ""
    max_singular_fraction: float = field(default=SING_FRACTION_MAX, repr=False)

    def __post_init__(self):
        d = self.chart.dim
        values = np.array(self.values, dtype=float).reshape(self.chart.n_nodes, d, d)
        mask = self.singular_mask
        mask = np.zeros(self.chart.n_nodes, dtype=bool) if mask is None else np.array(mask, dtype=bool).ravel()
        if mask.size != self.chart.n_nodes:
            raise ValueError("singular_mask has the wrong size")
        ok = ~mask
        sub = values[ok]
        if not np.all(np.isfinite(sub)):
            raise ValueError("non-finite metric entries at non-singular nodes")
        if not np.array_equal(sub, np.swapaxes(sub, -1, -2)):
            raise ValueError("metric values must be exactly symmetric")
        if sub.size:
            lo = eig_min(sub)
            if np.any(lo <= eps_spd(sub)) or np.any(eps_spd(sub) <= 0):
                raise ValueError("metric is not positive definite at a non-singular node")
        frac = mask.mean()
        if frac > self.max_singular_fraction:
            raise TooSingular(f"singular fraction {frac:.4g} exceeds {self.max_singular_fraction}")
        if not np.any(ok):
            raise TooSingular("all nodes are singular")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "singular_mask", _freeze(mask))

    @property
    def dim(self):
        return self.chart.dim

    def filled(self):
        """Values with masked nodes replaced by the nearest unmasked value."""
        return fill_masked(self.chart, self.values, self.singular_mask)

    def with_values(self, values, label=None, singular_mask=None):
        mask = self.singular_mask if singular_mask is None else singular_mask
        return MetricField(
            self.chart,
            values,
            mask,
            self.label if label is None else label,
            self.max_singular_fraction,
        )


@dataclass(frozen=True, eq=False)
class EllField:
    """Per-node invertible endomorphisms acting on tangent vectors."""

    chart: GridChart
    values: np.ndarray
    singular_mask: np.ndarray = None
    selfadjoint_wrt: str = None

    def __post_init__(self):
        d = self.chart.dim
        values = np.array(self.values, dtype=float).reshape(self.chart.n_nodes, d, d)
        mask = self.singular_mask
        mask = np.zeros(self.chart.n_nodes, dtype=bool) if mask is None else np.array(mask, dtype=bool).ravel()
        sub = values[~mask]
        if not np.all(np.isfinite(sub)):
            raise ValueError("non-finite endomorphism entries")
        if sub.size and not np.all(np.isfinite(np.linalg.cond(sub))):
            raise ValueError("endomorphism field is not invertible everywhere")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "singular_mask", _freeze(mask))

    def ess_sup_norm(self):
        """Essential sup of the Euclidean operator norm of B."""
        sub = self.values[~self.singular_mask]
        return float(np.max(np.linalg.norm(sub, ord=2, axis=(-2, -1))))

    def ess_sup_inv_norm(self):
        sub = self.values[~self.singular_mask]
        return float(np.max(np.linalg.norm(np.linalg.inv(sub), ord=2, axis=(-2, -1))))

    @classmethod
    def identity(cls, chart):
        return cls(chart, np.broadcast_to(np.eye(chart.dim), (chart.n_nodes, chart.dim, chart.dim)))


@dataclass(frozen=True, eq=False)
class ScalarField:
    chart: GridChart
    values: np.ndarray
    singular_mask: np.ndarray = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(self.chart.n_nodes)
        mask = self.singular_mask
        mask = np.zeros(self.chart.n_nodes, dtype=bool) if mask is None else np.array(mask, dtype=bool).ravel()
        if not np.all(np.isfinite(values[~mask])):
            raise ValueError("non-finite scalar values at unmasked nodes")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "singular_mask", _freeze(mask))

    def grid(self):
        return self.values.reshape(self.chart.shape)


def fill_masked(chart, values, mask):
    """Copy each masked node's value from its nearest unmasked node."""
    if not np.any(mask):
        return np.array(values)
    from scipy.ndimage import distance_transform_edt

    _, idx = distance_transform_edt(mask.reshape(chart.shape), return_indices=True)
    src = np.ravel_multi_index(tuple(i.ravel() for i in idx), chart.shape)
    return np.array(values)[src]


def build_field(chart, generator, label="", max_singular_fraction=SING_FRACTION_MAX):
    """Sample a matrix-valued generator at every node.

    Parameters
    ----------
    chart : GridChart
    generator : callable
        Maps an ``(n, dim)`` coordinate array to ``(n, dim, dim)`` matrices.
    label : str
    max_singular_fraction : float

    Returns
    -------
    MetricField
        Nodes where the generator returns non-finite or non-SPD output are
        masked singular.

    Raises
    ------
    TooSingular
        If the masked fraction exceeds ``max_singular_fraction``.
    """
    x = chart.coords()
    d = chart.dim
    with np.errstate(all="ignore"):
        raw = np.asarray(generator(x), dtype=float)
    raw = np.broadcast_to(raw, (chart.n_nodes, d, d))
    finite = np.all(np.isfinite(raw), axis=(-2, -1))
    vals = np.where(finite[:, None, None], symmetrize(np.where(finite[:, None, None], raw, 0.0)), np.eye(d))
    good = finite & (eig_min(vals) > eps_spd(vals)) & (eps_spd(vals) > 0)
    vals = np.where(good[:, None, None], vals, raw)
    return MetricField(chart, vals, ~good, label, max_singular_fraction)


def constant_field(chart, matrix, label=""):
    m = np.asarray(matrix, dtype=float)
    return MetricField(chart, np.broadcast_to(m, (chart.n_nodes,) + m.shape), None, label)


def conformal_field(chart, factor, label=""):
    """``f(x) * identity`` for a vectorised scalar function or a constant."""
    x = chart.coords()
    f = factor(x) if callable(factor) else np.full(chart.n_nodes, float(factor))
    f = np.broadcast_to(np.asarray(f, dtype=float), (chart.n_nodes,))
    return build_field(chart, lambda _: f[:, None, None] * np.eye(chart.dim), label)


def validate_rrm(g, region=None):
    """Tightest constants comparing ``g`` with the flat chart metric.

    Returns ``(c_lower, c_upper)`` with ``c_lower`` the minimum over
    unmasked region nodes of the smallest eigenvalue of ``g`` and
    ``c_upper`` the maximum of the largest one.
    """
    mask = region_mask(g.chart, region) & ~g.singular_mask
    if not np.any(mask):
        raise EmptyRegion("region contains no non-singular nodes")
    w = eig_sym(g.values[mask]).eigenvalues
    return float(np.min(w[:, 0])), float(np.max(w[:, -1]))


def pointwise(op, *fields_, label=""):
    """Apply ``op`` to the value stacks of same-chart fields; masks are united."""
    require_same_chart(*fields_)
    mask = np.zeros(fields_[0].chart.n_nodes, dtype=bool)
    for f in fields_:
        mask |= f.singular_mask
    d = fields_[0].chart.dim
    eye = np.eye(d)
    stacks = [np.where(mask[:, None, None], eye, f.values) for f in fields_]
    out = np.asarray(op(*stacks), dtype=float)
    out = np.where(mask[:, None, None], np.nan, out)
    return MetricField(fields_[0].chart, out, mask, label, fields_[0].max_singular_fraction)


def random_symmetric(rng, n, dim, scale=1.0):
    a = rng.normal(size=(n, dim, dim)) * scale
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def random_metric_field(chart, rng, scale=0.5, label="random"):
    """``exp(S)`` per node for independent Gaussian symmetric ``S``."""
    from .linalg import sym_exp

    vals = sym_exp(random_symmetric(rng, chart.n_nodes, chart.dim, scale))
    return MetricField(chart, vals, None, label)


def random_ell_field(chart, rng, spread=1.0):
    """Invertible fields ``Q1 diag(e^s) Q2`` with rotations/reflections ``Q`` and ``|s| <= spread``."""
    n, d = chart.n_nodes, chart.dim
    q1, _ = np.linalg.qr(rng.normal(size=(n, d, d)))
    q2, _ = np.linalg.qr(rng.normal(size=(n, d, d)))
    s = np.exp(rng.uniform(-spread, spread, size=(n, d)))
    return EllField(chart, q1 @ (s[:, :, None] * q2))
