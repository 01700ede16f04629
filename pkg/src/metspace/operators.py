"""Discrete Laplacians of rough metrics, heat flow and Poincare constants.

Sign convention: the assembled Laplacian is positive semi-definite,
``<Lap u, v>_mu = int <grad u, grad v>_g dmu``, so ``Lap(x1**2) = -2`` in
flat coordinates.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import BallTooSmall, NonPositiveKernel, NotSymmetric, SingularCell, SolverDivergence
from .fields import EllField, MetricField, ScalarField, fill_masked, require_same_chart
from .geometry import distance_map
from .linalg import spd_det, spd_inv, symmetrize

PCG_TOL = 1e-12
RESIDUAL_FAIL = 1e-10
EIG_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """``m^{-1} S`` restricted to ``dofs``.

    ``stiffness`` and ``mass`` are already restricted; ``dofs`` maps them
    back to chart nodes.
    """

    chart: object
    stiffness: sp.csr_matrix
    mass: np.ndarray
    dofs: np.ndarray
    bc: str
    symmetry_flag: bool = True

    @property
    def n(self):
        return int(self.dofs.size)

    def matrix(self):
        return sp.diags(1.0 / self.mass) @ self.stiffness

    def entries(self):
        m = self.matrix().tocoo()
        return list(zip(m.row.tolist(), m.col.tolist(), m.data.tolist()))

    def apply(self, u):
        """Apply to a full node vector; the result is zero off ``dofs``."""
        u = np.asarray(u, dtype=float)
        out = np.zeros(self.chart.n_nodes)
        out[self.dofs] = (self.stiffness @ u[self.dofs]) / self.mass
        return out

    def energy(self, u, v=None):
        u = np.asarray(u, dtype=float)[self.dofs]
        v = u if v is None else np.asarray(v, dtype=float)[self.dofs]
        return float(v @ (self.stiffness @ u))

    def inner(self, u, v):
        return float(np.sum(self.mass * np.asarray(u)[self.dofs] * np.asarray(v)[self.dofs]))


def _cells(chart):
    """Corner node indices of every cell, shape ``(n_cells, 2**dim)``.

    Corner ``k`` has bit ``i`` of ``k`` (most significant first) set when it
    sits at the upper end of axis ``i``.
    """
    d = chart.dim
    starts = [np.arange(s if per else s - 1) for s, per in zip(chart.shape, chart.periodic)]
    base = np.stack([m.ravel() for m in np.meshgrid(*starts, indexing="ij")], axis=-1)
    corners = []
    for bits in itertools.product((0, 1), repeat=d):
        idx = (base + np.array(bits)) % np.array(chart.shape)
        corners.append(np.ravel_multi_index(tuple(idx.T), chart.shape))
    return np.stack(corners, axis=-1)


def _local_templates(chart):
    """Edge Laplacians per axis and mean-gradient rows for one cell."""
    d = chart.dim
    bits = np.array(list(itertools.product((0, 1), repeat=d)))
    nc = 2**d
    edge = np.zeros((d, nc, nc))
    grad = np.zeros((d, nc))
    for i in range(d):
        h = chart.spacing[i]
        grad[i] = (2 * bits[:, i] - 1) / (2 ** (d - 1) * h)
        for a in range(nc):
            if bits[a, i]:
                continue
            b = a + 2 ** (d - 1 - i)
            e = np.zeros(nc)
            e[a], e[b] = -1.0, 1.0
            edge[i] += np.outer(e, e) / (2 ** (d - 1) * h * h)
    return edge, grad


def _coefficients(g, A):
    """Per-node ``sqrt(det G) G^{-1} A`` and density ``sqrt(det G)``."""
    G = fill_masked(g.chart, g.values, g.singular_mask)
    ginv = spd_inv(G)
    dens = np.sqrt(spd_det(G))
    if A is None:
        K = dens[:, None, None] * ginv
    else:
        Av = fill_masked(A.chart, A.values, A.singular_mask | g.singular_mask)
        K = dens[:, None, None] * symmetrize(ginv @ Av)
    return K, dens


def _assemble(g, A, cell_mask=None):
    chart = g.chart
    d = chart.dim
    cells = _cells(chart)
    if cell_mask is not None:
        cells = cells[cell_mask(cells)]
    if cells.size == 0:
        return sp.csr_matrix((chart.n_nodes, chart.n_nodes)), cells
    dead = np.all(g.singular_mask[cells], axis=1)
    if np.any(dead):
        raise SingularCell(f"cell with corners {cells[np.argmax(dead)].tolist()} is fully singular")
    K, _ = _coefficients(g, A)
    Kc = K[cells].mean(axis=1)
    vol = chart.cell_volume
    edge, grad = _local_templates(chart)
    diag = np.einsum("cii->ci", Kc)
    local = vol * np.einsum("ci,iab->cab", diag, edge)
    off = Kc * (1.0 - np.eye(d))
    local += vol * np.einsum("cij,ia,jb->cab", off, grad, grad)
    nc = 2**d
    rows = np.repeat(cells, nc, axis=1).ravel()
    cols = np.tile(cells, (1, nc)).ravel()
    S = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(chart.n_nodes, chart.n_nodes)).tocsr()
    S = 0.5 * (S + S.T)
    return S.tocsr(), cells


def _boundary_nodes(chart):
    idx = np.indices(chart.shape).reshape(chart.dim, -1)
    on = np.zeros(chart.n_nodes, dtype=bool)
    for ax, (s, per) in enumerate(zip(chart.shape, chart.periodic)):
        if not per:
            on |= (idx[ax] == 0) | (idx[ax] == s - 1)
    return on


def assemble_laplacian(g, A=None, bc="neumann"):
    """Weak-form Laplacian (or ``-div_g A grad``) of a metric field.

    Each cell uses the corner average of ``K = sqrt(det g) g^{-1} A``:
    diagonal terms act on cell edges, cross terms on the cell-centre
    gradient. The stiffness matrix is symmetric positive semi-definite with
    zero row sums; the lumped mass is ``sqrt(det g)`` times the dual cell
    volume.

    Parameters
    ----------
    g : MetricField
    A : EllField, optional
        Coefficients acting on covectors, self-adjoint for ``g``.
    bc : {"neumann", "dirichlet"}
        Dirichlet drops the boundary nodes (homogeneous data).
    """
    bc = bc.lower()
    if bc not in ("neumann", "dirichlet"):
        raise ValueError(f"unknown boundary condition {bc!r}")
    if A is not None:
        require_same_chart(g, A)
    S, _ = _assemble(g, A)
    _, dens = _coefficients(g, A)
    mass = dens * g.chart.dual_volumes()
    if bc == "neumann":
        dofs = np.arange(g.chart.n_nodes)
    else:
        dofs = np.flatnonzero(~_boundary_nodes(g.chart))
        S = S[dofs][:, dofs].tocsr()
        mass = mass[dofs]
    return SparseOperator(g.chart, S, mass, dofs, bc)


def divform_factor(A):
    """``(det A)^{-1/(n+2)}`` per node."""
    n = A.chart.dim
    return np.linalg.det(A.values) ** (-1.0 / (n + 2))


def divform_to_metric(A, g, tol=1e-10, label=None):
    """Metric whose Laplacian corresponds to ``-div_g A grad``.

    ``A`` acts on covectors and must be ``g``-self-adjoint (``g^{-1} A``
    symmetric). With ``f = (det A)^{-1/(n+2)}`` the returned metric ``h``
    has co-metric ``f g^{-1} A``; then ``det(g h^{-1}) = (det A)^{2/(n+2)}``.

    Raises
    ------
    NotSymmetric
        If ``g^{-1} A`` is not symmetric within ``tol`` (relative).
    """
    require_same_chart(g, A)
    G = fill_masked(g.chart, g.values, g.singular_mask)
    P = spd_inv(G) @ A.values
    asym = np.linalg.norm(P - np.swapaxes(P, -1, -2), axis=(-2, -1))
    scale = np.linalg.norm(P, axis=(-2, -1))
    bad = (asym > tol * scale) & ~g.singular_mask
    if np.any(bad):
        raise NotSymmetric(f"A is not g-self-adjoint at node {int(np.argmax(bad))}")
    f = divform_factor(A)
    co = symmetrize(f[:, None, None] * P)
    H = spd_inv(co)
    H = np.where(g.singular_mask[:, None, None], g.values, H)
    return MetricField(g.chart, H, g.singular_mask, label or f"divform({g.label})", g.max_singular_fraction)


@dataclass(frozen=True)
class CorrespondenceReport:
    max_deviation: float
    per_trial: tuple
    factor_range: tuple


def _smooth_test_function(chart, rng, modes=3):
    x = chart.coords()
    lo = np.asarray(chart.origin)
    span = np.asarray(chart.upper) - lo
    y = (x - lo) / span
    u = np.zeros(chart.n_nodes)
    for _ in range(modes):
        k = rng.integers(0, 3, size=chart.dim)
        u += rng.normal() * np.prod(np.cos(np.pi * k * y), axis=1)
    u += rng.normal() * np.sum(y * y * rng.normal(size=chart.dim), axis=1)
    return u


def operator_correspondence_check(A, g, trials=5, seed=0):
    """Compare ``Lap_h u`` with ``f (m_g^{-1} S_{g,A} u)`` on interior nodes.

    ``h = divform_to_metric(A, g)``. The deviation is the largest nodewise
    difference divided by the largest magnitude of the right-hand side.
    """
    h = divform_to_metric(A, g)
    f = divform_factor(A)
    lap_h = assemble_laplacian(h)
    lap_ga = assemble_laplacian(g, A)
    interior = ~_boundary_nodes(g.chart)
    rng = np.random.default_rng(seed)
    devs = []
    for _ in range(int(trials)):
        u = _smooth_test_function(g.chart, rng)
        lhs = lap_h.apply(u)[interior]
        rhs = (f * lap_ga.apply(u))[interior]
        scale = max(np.max(np.abs(rhs)), 1e-300)
        devs.append(float(np.max(np.abs(lhs - rhs)) / scale))
    return CorrespondenceReport(max(devs), tuple(devs), (float(f.min()), float(f.max())))


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    residual: float


def pcg(A, b, diag=None, tol=PCG_TOL, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients for SPD (or consistent PSD) ``A``.

    Stops when ``|r| <= tol |b|``; returns ``(x, SolveInfo)`` with the
    final relative residual.
    """
    n = b.size
    maxiter = 10 * n if maxiter is None else maxiter
    if diag is None:
        diag = A.diagonal()
    inv_d = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(0, 0.0)
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    it = 0
    res = np.linalg.norm(r) / bnorm
    while res > tol and it < maxiter:
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        res = np.linalg.norm(r) / bnorm
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - A @ x) / bnorm
    return x, SolveInfo(it, float(res))


def _solve(A, b, diag):
    x, info = pcg(A, b, diag)
    if not info.residual <= RESIDUAL_FAIL:
        raise SolverDivergence(f"linear solve stalled at relative residual {info.residual:.3e}")
    return x


@dataclass(frozen=True, eq=False)
class HeatRun:
    times: tuple
    fields: tuple
    source: int
    method: str
    mass: np.ndarray
    op: SparseOperator = field(repr=False)

    def kernel(self, target):
        """Heat kernel values ``rho(t, source, target)`` at every stored time."""
        return np.array([f.values[int(target)] for f in self.fields])

    def total_heat(self):
        return np.array([float(np.sum(self.mass * f.values[self.op.dofs])) for f in self.fields])


def heat_run(op, source, times, dt=None, method="be", max_steps_per_interval=200000):
    """Implicit heat flow from a mass-normalised delta at ``source``.

    Backward Euler on ``(M + dt S) u' = M u``; the first step is split into
    two half steps. ``method="cn"`` switches to Crank-Nicolson after that
    start. Each stored field is the kernel density with respect to the
    Riemannian measure, so ``sum(u * mass) == 1`` under Neumann conditions.

    Parameters
    ----------
    op : SparseOperator
    source : int
        Chart node index.
    times : list of float
        Ascending positive output times.
    dt : float, optional
        Target step; default ``times[0] / 200``.
    """
    times = [float(t) for t in times]
    if not times or times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be positive and strictly ascending")
    if method not in ("be", "cn"):
        raise ValueError(f"unknown method {method!r}")
    pos = np.flatnonzero(op.dofs == int(source))
    if pos.size == 0:
        raise ValueError(f"source {source} is not a degree of freedom")
    k = int(pos[0])
    dt = times[0] / 200.0 if dt is None else float(dt)
    M = op.mass
    S = op.stiffness
    u = np.zeros(op.n)
    u[k] = 1.0 / M[k]
    cache = {}

    def step(u, tau, theta):
        key = (tau, theta)
        if key not in cache:
            A = (sp.diags(M) + theta * tau * S).tocsr()
            cache[key] = (A, A.diagonal())
        A, diag = cache[key]
        rhs = M * u
        if theta < 1.0:
            rhs = rhs - (1.0 - theta) * tau * (S @ u)
        return _solve(A, rhs, diag)

    t = 0.0
    started = False
    out = []
    for target in times:
        span = target - t
        n = int(np.ceil(span / dt - 1e-9))
        if n > max_steps_per_interval:
            raise ValueError("too many time steps; increase dt")
        tau = span / n
        for i in range(n):
            if not started:
                u = step(u, 0.5 * tau, 1.0)
                u = step(u, 0.5 * tau, 1.0)
                started = True
            else:
                u = step(u, tau, 1.0 if method == "be" else 0.5)
        t = target
        full = np.zeros(op.chart.n_nodes)
        full[op.dofs] = u
        out.append(ScalarField(op.chart, full))
    return HeatRun(tuple(times), tuple(out), int(source), method, M.copy(), op)


@dataclass(frozen=True)
class VaradhanEstimate:
    times: tuple
    estimates: tuple
    extrapolated: float


def varadhan_estimate(run, target):
    """``-4 t log rho(t, source, target)`` per time and its ``t -> 0`` limit.

    The limit is the constant term of a least-squares fit in the basis
    ``[1, t log t, t]`` (linear in ``t`` with fewer than three times), the
    form of the leading small-time correction of Gaussian kernels.
    """
    rho = run.kernel(target)
    if np.any(~(rho > 0)):
        raise NonPositiveKernel("heat kernel is not positive at the target; use smaller times")
    t = np.asarray(run.times)
    est = -4.0 * t * np.log(rho)
    if t.size >= 3:
        basis = np.stack([np.ones_like(t), t * np.log(t), t], axis=1)
    elif t.size == 2:
        basis = np.stack([np.ones_like(t), t], axis=1)
    else:
        return VaradhanEstimate(tuple(t), tuple(est), float(est[0]))
    coef, *_ = np.linalg.lstsq(basis, est, rcond=None)
    return VaradhanEstimate(tuple(t.tolist()), tuple(est.tolist()), float(coef[0]))


def _restricted_operator(g, nodes_in):
    """Neumann stiffness and mass on the cells whose corners all lie in ``nodes_in``."""
    S, cells = _assemble(g, None, cell_mask=lambda c: np.all(nodes_in[c], axis=1))
    used = np.zeros(g.chart.n_nodes, dtype=bool)
    used[cells.ravel()] = True
    dofs = np.flatnonzero(used)
    dens = np.sqrt(spd_det(fill_masked(g.chart, g.values, g.singular_mask)))
    # lumped mass from the retained cells only
    share = np.zeros(g.chart.n_nodes)
    np.add.at(share, cells.ravel(), g.chart.cell_volume / 2**g.dim)
    mass = dens[dofs] * share[dofs]
    return S[dofs][:, dofs].tocsr(), mass, dofs


def smallest_nonzero_eigenvalue(S, mass, start, tol=EIG_TOL, maxiter=500):
    """Inverse iteration for ``S x = lambda M x`` with constants deflated."""
    def deflate(v):
        return v - (mass @ v) / mass.sum()

    x = deflate(np.asarray(start, dtype=float))
    x /= np.sqrt(x @ (mass * x))
    lam = (x @ (S @ x))
    diag = S.diagonal().copy()
    diag[diag <= 0] = 1.0
    for _ in range(maxiter):
        rhs = mass * x
        rhs -= mass * (rhs.sum() / mass.sum())
        y, info = pcg(S, rhs, diag)
        if info.residual > RESIDUAL_FAIL:
            raise SolverDivergence(f"inverse iteration solve stalled at {info.residual:.3e}")
        y = deflate(y)
        y /= np.sqrt(y @ (mass * y))
        new = y @ (S @ y)
        x = y
        if abs(new - lam) <= tol * abs(new):
            return float(new), x
        lam = new
    return float(lam), x


def poincare_measure(g, center, r, p=2):
    """Homogeneous L2 Poincare constant ``1/sqrt(lambda_1)`` on a metric ball.

    The ball is ``{d_g(center, .) <= r}``; the Neumann operator keeps only
    cells lying entirely inside it.

    Raises
    ------
    BallTooSmall
        If fewer than 8 nodes carry a retained cell.
    """
    if p != 2:
        raise ValueError("only p = q = 2 is measured")
    dist = distance_map(g, center).values
    inside = dist <= r * (1 + 1e-12)
    S, mass, dofs = _restricted_operator(g, inside)
    if dofs.size < 8:
        raise BallTooSmall(f"ball holds {dofs.size} usable nodes, need at least 8")
    x1 = g.chart.coords()[dofs, 0]
    span = x1.max() - x1.min()
    start = np.cos(np.pi * (x1 - x1.min()) / span) if span > 0 else np.arange(dofs.size, dtype=float)
    lam, _ = smallest_nonzero_eigenvalue(S, mass, start)
    return 1.0 / np.sqrt(lam)


def _n_over(n, p):
    return 0.0 if np.isinf(p) else n / p


def poincare_propagate(C1_h, C2_h, eta_h, dl_gh, n, p=2, q=2):
    """Poincare constants for ``g`` from those for ``h`` at distance ``dl_gh``."""
    a = 0.5 * _n_over(n, p) + 0.5 * _n_over(n, q)
    C1 = 2.0 * C1_h * np.exp((a + 1.0) * dl_gh)
    C2 = 2.0 * C2_h * np.exp(a * dl_gh)
    eta = eta_h * np.exp(2.0 * dl_gh)
    return float(C1), float(C2), float(eta)


def _tensor_norms(u, G, r, s):
    """Pointwise g-norm of an ``(r, s)`` tensor (first ``r`` axes contravariant)."""
    from .linalg import spd_invsqrt, spd_sqrt

    u = np.asarray(u, dtype=float)
    if r + s == 0:
        return np.abs(u)
    up = spd_sqrt(G)
    down = spd_invsqrt(G)
    w = u
    for ax in range(r + s):
        mat = up if ax < r else down
        w = np.moveaxis(np.einsum("nij,n...j->n...i", mat, np.moveaxis(w, ax + 1, -1)), -1, ax + 1)
    return np.sqrt(np.sum(w.reshape(w.shape[0], -1) ** 2, axis=1))


def lp_norm(u, p, g, r=0, s=0):
    """Discrete ``L^p(mu_g)`` norm of a tensor field of type ``(r, s)``.

    ``u`` has shape ``(n_nodes,) + (dim,) * (r + s)``; singular nodes are
    skipped. ``p`` may be ``inf``.
    """
    ok = ~g.singular_mask
    G = g.values[ok]
    norms = _tensor_norms(np.asarray(u, dtype=float)[ok], G, r, s)
    if np.isinf(p):
        return float(np.max(norms))
    weights = np.sqrt(spd_det(G)) * g.chart.dual_volumes()[ok]
    return float(np.sum(weights * norms**p) ** (1.0 / p))


def norm_preservation_bounds(r, s, n, p, dl, sharp=False):
    """Factors ``(lo, hi)`` with ``lo |u|_{p,g} <= |u|_{p,h} <= hi |u|_{p,g}``.

    The default exponent is ``r + s + n/(2p)``. ``sharp=True`` uses
    ``r + s + n/p``, which is what the determinant bound actually supports;
    the default can be beaten by constant conformal rescalings.
    """
    e = r + s + (2.0 if sharp else 1.0) * 0.5 * _n_over(n, p)
    return float(np.exp(-e * dl)), float(np.exp(e * dl))
