"""Reproducible verification suites.

Each runner takes a seed, performs one family of checks and returns a
:class:`SuiteResult`. The CLI ``verify`` command and the acceptance tests
share these runners.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import constructions as cons
from . import geometry as geo
from . import operators as ops
from . import space
from .fields import EllField, GridChart, MetricField, constant_field, conformal_field, random_ell_field
from .linalg import symmetrize


@dataclass
class SuiteResult:
    name: str
    anchor: str
    passed: bool
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    elapsed: float = 0.0

    def check(self, label, ok, **values):
        ok = bool(ok)
        self.checks[label] = {"ok": ok, **{k: _plain(v) for k, v in values.items()}}
        if not ok:
            self.violations.append(label)
        return ok

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.anchor}"


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _finish(res, t0):
    res.elapsed = time.perf_counter() - t0
    res.passed = not res.violations
    return res


def random_spd_field(chart, rng, label="random"):
    a = rng.normal(size=(chart.n_nodes, chart.dim, chart.dim))
    vals = symmetrize(a @ np.swapaxes(a, -1, -2) + 0.1 * np.eye(chart.dim))
    return MetricField(chart, vals, None, label)


def _rel_frob(a, b):
    num = np.linalg.norm(a - b, axis=(-2, -1))
    return float(np.max(num / np.linalg.norm(b, axis=(-2, -1))))


def metric_axioms(seed=0, triples=1000, n=32):
    res = SuiteResult("metric-axioms", "extended distance is symmetric, vanishes on the diagonal, obeys the triangle inequality", False)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    chart = GridChart.box([0, 0], [1, 1], (n, n))
    sym_ok = zero_ok = True
    worst = -np.inf
    for _ in range(triples):
        g, h, k = (random_spd_field(chart, rng) for _ in range(3))
        gh, hg = space.dl(g, h).value, space.dl(h, g).value
        sym_ok &= gh == hg
        zero_ok &= space.dl(g, g).value == 0.0
        worst = max(worst, space.dl(g, k).value - gh - space.dl(h, k).value)
    res.check("symmetry exact", sym_ok)
    res.check("self distance zero", zero_ok)
    res.check("triangle inequality", worst <= 1e-12, worst_excess=worst)
    elapsed = time.perf_counter() - t0
    res.check("runtime under 10 s", elapsed < 10.0, seconds=elapsed)
    return _finish(res, t0)


def exponent_sharpness(seed=0, pairs=100, n=16, directions=32):
    res = SuiteResult("exponent-sharpness", "e^-dl |u|_g <= |u|_h <= e^dl |u|_g with equality at the maximising node", False)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    chart = GridChart.box([0, 0], [1, 1], (n, n))
    bound_ok = True
    worst_attain = 0.0
    for _ in range(pairs):
        g, h = random_spd_field(chart, rng), random_spd_field(chart, rng)
        D = space.dl(g, h)
        e = np.exp(D.value)
        u = rng.normal(size=(directions, 2))
        ng = np.sqrt(np.einsum("ki,nij,kj->nk", u, g.values, u))
        nh = np.sqrt(np.einsum("ki,nij,kj->nk", u, h.values, u))
        bound_ok &= bool(np.all(nh <= e * ng * (1 + 1e-12)) and np.all(nh >= ng / e * (1 - 1e-12)))
        k = D.argmax_node
        # independent generalized eigensolve at the maximising node
        w_hg, v_hg = scipy.linalg.eigh(h.values[k], g.values[k])
        w_gh, v_gh = scipy.linalg.eigh(g.values[k], h.values[k])
        if w_hg[-1] >= w_gh[-1]:
            u_star = v_hg[:, -1]
            ratio = np.sqrt(u_star @ h.values[k] @ u_star / (u_star @ g.values[k] @ u_star))
        else:
            u_star = v_gh[:, -1]
            ratio = np.sqrt(u_star @ g.values[k] @ u_star / (u_star @ h.values[k] @ u_star))
        worst_attain = max(worst_attain, abs(ratio - e) / e)
    res.check("two-sided bound at every node", bound_ok)
    res.check("bound attained at argmax node", worst_attain <= 1e-9, worst_relative_gap=worst_attain)
    return _finish(res, t0)


def group_action(seed=0, pairs=100, n=16):
    res = SuiteResult("group-action", "Ell acts on metrics; the self-adjoint transport reconstructs the target", False)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    chart = GridChart.box([0, 0], [1, 1], (n, n))
    ident = EllField.identity(chart)
    rec = law_id = law_inv = law_comp = sa = 0.0
    for _ in range(pairs):
        g, h = random_spd_field(chart, rng), random_spd_field(chart, rng)
        B = space.transport_B(g, h)
        rec = max(rec, _rel_frob(space.act(B, h).values, g.values))
        HB = h.values @ B.values
        sa = max(sa, float(np.max(np.abs(HB - np.swapaxes(HB, -1, -2)) / np.linalg.norm(HB, axis=(-2, -1))[:, None, None])))
        B1, B2 = random_ell_field(chart, rng), random_ell_field(chart, rng)
        law_id = max(law_id, _rel_frob(space.act(ident, g).values, g.values))
        law_inv = max(law_inv, _rel_frob(space.act(space.inverse(B1), space.act(B1, g)).values, g.values))
        lhs = space.act(B2, space.act(B1, g)).values
        rhs = space.act(space.compose(B1, B2), g).values
        law_comp = max(law_comp, _rel_frob(lhs, rhs))
    res.check("transport reconstructs g", rec <= 1e-9, worst=rec)
    res.check("transport is h-self-adjoint", sa <= 1e-10, worst=sa)
    res.check("identity law", law_id <= 1e-10, worst=law_id)
    res.check("inverse law", law_inv <= 1e-10, worst=law_inv)
    res.check("composition law", law_comp <= 1e-10, worst=law_comp)
    return _finish(res, t0)


def geodesic_midpoint(seed=0, pairs=100, n=16):
    res = SuiteResult("geodesic-midpoint", "Ell-power paths join metrics; the midpoint halves the distance", False)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    chart = GridChart.box([0, 0], [1, 1], (n, n))
    ends = mid = 0.0
    spectral_ok = True
    for _ in range(pairs):
        g0, g1 = random_spd_field(chart, rng), random_spd_field(chart, rng)
        path = space.geodesic(g0, g1)
        ends = max(ends, float(np.max(np.abs(path.eval(0.0).values - g0.values))))
        ends = max(ends, float(np.max(np.abs(path.eval(1.0).values - g1.values))))
        m = path.eval(0.5)
        D = space.dl(g0, g1).value
        a, b = space.dl(g0, m).value, space.dl(m, g1).value
        mid = max(mid, abs(0.5 * D - a), abs(0.5 * D - b))
        for t in (0.25, 0.5, 0.75):
            nrm = space.h_operator_norm(path.power(t), g0)
            spectral_ok &= bool(np.all(nrm <= np.exp(t * D) * (1 + 1e-12)) and np.all(nrm >= np.exp(-t * D) * (1 - 1e-12)))
    res.check("endpoints", ends <= 1e-10, worst=ends)
    res.check("midpoint equalities", mid <= 1e-9, worst=mid)
    res.check("spectral power bounds", spectral_ok)
    return _finish(res, t0)


def completeness(seed=0, sequences=5, length=20, n=32):
    res = SuiteResult("completeness", "Cauchy sequences of metrics converge to a metric", False)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    chart = GridChart.box([0, 0], [1, 1], (n, n))
    worst = 0.0
    for _ in range(sequences):
        g = random_spd_field(chart, rng, "g")
        far = random_spd_field(chart, rng, "k")
        path = space.geodesic(g, far)
        gs = [path.eval(1.0 / k) for k in range(1, length + 1)]
        lim = space.cauchy_limit(gs)
        worst = max(worst, space.dl(lim, g).value)
    res.check("tail distance to the limit", worst < 1e-8, worst=worst)
    elapsed = time.perf_counter() - t0
    res.check("runtime under 5 s", elapsed < 5.0, seconds=elapsed)
    return _finish(res, t0)


def epsilon_ladder(chart, count=5, coarsest=24):
    h = min(chart.spacing)
    return [coarsest * h * 0.5**k for k in range(count)]


def smoothing(seed=0):
    res = SuiteResult("smooth-closure", "continuous metrics are mollifier limits; jump metrics stay far from every mollification", False)
    t0 = time.perf_counter()
    chart = GridChart.box([-1, -1], [1, 1], (64, 64))
    g = conformal_field(chart, lambda x: 1.0 + np.sum(x * x, axis=1), "1+|x|^2")
    vals = [space.dl(space.smooth_approx(g, e), g).value for e in epsilon_ladder(chart)]
    res.check("continuous: decreasing along the ladder", all(b < a for a, b in zip(vals, vals[1:])), values=vals)
    res.check("continuous: below 0.01 after 4 halvings", vals[-1] < 0.01, final=vals[-1])
    jc = GridChart.box([-2, -2], [2, 2], (64, 64))
    jump = cons.nonapprox_metric(jc, 100.0, 1.0)
    floor = 0.25 * np.log(100.0)
    jv = [space.dl(space.smooth_approx(jump, e), jump).value for e in epsilon_ladder(jc)]
    res.check("jump: at least log(K)/4 for every epsilon", min(jv) >= floor, values=jv, floor=floor)
    return _finish(res, t0)


def distance_solver(seed=0, n=129, c=3.0):
    res = SuiteResult("distance-solver", "shortest-path distance reproduces smooth Riemannian distance", False)
    t0 = time.perf_counter()
    chart = GridChart.box([0, 0], [1, 1], (n, n))
    corner = chart.n_nodes - 1
    flat = constant_field(chart, np.eye(2))
    d0 = geo.distance(flat, 0, corner)
    res.check("euclidean diagonal within 5%", abs(d0 - np.sqrt(2)) <= 0.05 * np.sqrt(2), value=d0)
    dc = geo.distance(constant_field(chart, c * c * np.eye(2)), 0, corner)
    res.check("conformal scaling within 5%", abs(dc / d0 - c) <= 0.05 * c, ratio=dc / d0)
    da = geo.distance(constant_field(chart, np.diag([1.0, 4.0])), 0, chart.node(0, n - 1))
    res.check("anisotropic vertical distance within 5%", abs(da - 2.0) <= 0.1, value=da)
    return _finish(res, t0)


def comparability(seed=0, trials=3, n=33, dist=0.3, n_pairs=20):
    res = SuiteResult("comparability", "distances and volumes change by at most the exponential of the metric distance", False)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    chart = GridChart.box([0, 0], [1, 1], (n, n))
    worst = 1.0
    ratios_ok = meas_ok = True
    for _ in range(trials):
        g = random_spd_field(chart, rng, "g")
        h = space.perturb(g, rng, dist, "h")
        pairs = rng.integers(0, chart.n_nodes, size=(n_pairs, 2))
        pairs = [(a, b) for a, b in pairs if a != b]
        rep = geo.distance_comparability_check(g, h, pairs)
        ratios_ok &= rep.ok
        if abs(np.log(rep.worst_ratio)) > abs(np.log(worst)):
            worst = rep.worst_ratio
        D = space.dl(g, h).value
        for _ in range(5):
            region = rng.random(chart.n_nodes) < 0.5
            r = geo.measure(h, region).volume / geo.measure(g, region).volume
            meas_ok &= np.exp(-2 * D) - 1e-10 <= r <= np.exp(2 * D) + 1e-10
    res.check("distance ratios within exp(+-0.3) with stencil slack", ratios_ok, worst_ratio=worst)
    res.check("measure ratios within exp(+-2*0.3)", meas_ok)
    return _finish(res, t0)


def _rotation_field(chart, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -1)


def random_coefficient_field(chart, rng, unit_det=False):
    """Smooth random SPD coefficients; ``unit_det`` forces ``det A = 1``."""
    x = chart.coords()
    k = rng.normal(size=(3, chart.dim))
    angle = np.sin(x @ k[0]) + 0.5 * np.cos(x @ k[1])
    l1 = np.exp(0.5 * np.sin(x @ k[2]) + rng.normal() * 0.2)
    l2 = 1.0 / l1 if unit_det else np.exp(0.4 * np.cos(x @ k[1] + 1.0))
    R = _rotation_field(chart, angle)
    vals = R @ (np.stack([l1, l2], -1)[:, :, None] * np.swapaxes(R, -1, -2))
    return EllField(chart, symmetrize(vals))


def divform(seed=0, n=32, trials=5):
    res = SuiteResult("divform", "coefficients A correspond to the metric with conformal factor (det A)^(-1/(n+2))", False)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    chart = GridChart.box([0, 0], [1, 1], (n, n))
    flat = constant_field(chart, np.eye(2))
    A4 = EllField(chart, np.broadcast_to(np.diag([4.0, 4.0]), (chart.n_nodes, 2, 2)))
    f = ops.divform_factor(A4)
    res.check("diag(4,4) gives f = 1/2 exactly", np.all(f == 0.5), f=float(f[0]))
    dev = max(ops.operator_correspondence_check(random_coefficient_field(chart, rng), flat, trials, seed + t).max_deviation for t in range(3))
    res.check("random A: correspondence deviation <= 1e-8", dev <= 1e-8, deviation=dev)
    dev1 = max(ops.operator_correspondence_check(random_coefficient_field(chart, rng, True), flat, trials, seed + t).max_deviation for t in range(3))
    res.check("det A = 1: operators agree", dev1 <= 1e-10, deviation=dev1)
    return _finish(res, t0)


VARADHAN_TIMES = (0.005, 0.0075, 0.01, 0.015, 0.02)


def varadhan_case(c=1.0, n=513, times=VARADHAN_TIMES, steps_per_first=500):
    chart = GridChart.box([0.0], [1.0], (n,))
    g = constant_field(chart, [[c * c]], f"{c:g}^2 flat")
    op = ops.assemble_laplacian(g)
    src, tgt = chart.nearest_node([0.25]), chart.nearest_node([0.75])
    ts = [t * c * c for t in times]
    run = ops.heat_run(op, src, ts, dt=ts[0] / steps_per_first)
    return ops.varadhan_estimate(run, tgt), run


def varadhan(seed=0, c=2.0):
    res = SuiteResult("varadhan", "-4 t log(heat kernel) tends to the squared distance", False)
    t0 = time.perf_counter()
    est, run = varadhan_case(1.0)
    target = 0.25
    res.check("flat: extrapolation within 15% of 0.25", abs(est.extrapolated - target) <= 0.15 * target,
              extrapolated=est.extrapolated, estimates=list(est.estimates))
    drift = float(np.ptp(run.total_heat()))
    res.check("heat conserved", drift <= 1e-9, drift=drift)
    est_c, _ = varadhan_case(c)
    tc = (c * 0.5) ** 2
    res.check("conformal: extrapolation within 15% of (c/2)^2", abs(est_c.extrapolated - tc) <= 0.15 * tc,
              extrapolated=est_c.extrapolated, target=tc)
    elapsed = time.perf_counter() - t0
    res.check("runtime under 60 s", elapsed < 60.0, seconds=elapsed)
    return _finish(res, t0)


def poincare(seed=0, trials=4, n=33):
    res = SuiteResult("poincare", "Poincare constants measured on balls obey the propagated bound", False)
    t0 = time.perf_counter()
    chart = GridChart.box([0, 0], [1, 1], (65, 65))
    C = ops.poincare_measure(constant_field(chart, np.eye(2)), chart.node(32, 32), 10.0)
    res.check("flat unit square: C1 = 1/pi within 2%", abs(C * np.pi - 1.0) <= 0.02, C1=C)
    rng = np.random.default_rng(seed)
    small = GridChart.box([0, 0], [1, 1], (n, n))
    flat = constant_field(small, np.eye(2))
    centre = small.node(n // 2, n // 2)
    Ch = ops.poincare_measure(flat, centre, 10.0)
    ok = True
    rows = []
    for _ in range(trials):
        g = space.perturb(flat, rng, np.log(2.0))
        D = space.dl(g, flat).value
        Cg = ops.poincare_measure(g, centre, 1e6)
        bound, _, _ = ops.poincare_propagate(Ch, 1.0, 1.0, D, 2, 2, 2)
        ok &= Cg <= bound
        rows.append((Cg, bound))
    res.check("propagated constant bounds the measured one", ok, rows=rows, factor=8.0)
    return _finish(res, t0)


def sturm(seed=0, m_max=8, n=7):
    res = SuiteResult("sturm", "two different metrics with equal volume and equal distances", False)
    t0 = time.perf_counter()
    chart = GridChart.box([0.0] * 4, [1.0] * 4, (n,) * 4)
    net = cons.build_network(chart, m_max=m_max, seed=seed)
    g, gp = cons.sturm_pair(net)
    rep = cons.sturm_report(net, g, gp, seed=seed)
    res.check("determinants equal to 1e-14", rep["max_det_deviation"] <= 1e-14, deviation=rep["max_det_deviation"])
    res.check("network distances within (1+1/m_max) of euclidean", rep["ok"],
              min_ratio=rep["min_ratio"], max_ratio=rep["max_ratio"], slack=rep["slack"])
    res.check("metrics differ", space.dl(g, gp).value > 0, dl=space.dl(g, gp).value)
    return _finish(res, t0)


def disconnectedness(seed=0, count=150):
    res = SuiteResult("disconnectedness", "growing conformal factors put metrics at infinite distance", False)
    t0 = time.perf_counter()
    radii = np.arange(1, count + 1, dtype=float)
    E = space.dl_exhaustion(cons.flat_generator, cons.unbounded_conformal(radii), radii)
    res.check("infinite with certificate", (not E.finite) and E.certificate is not None, certificate=E.certificate)
    vals = np.array([v for _, v in E.per_radius])
    inc = float(np.max(np.abs(np.diff(vals) - 0.5 * np.log(2.0))))
    res.check("increment log(2)/2 per annulus", inc <= 1e-12, worst=inc)
    return _finish(res, t0)


SUITES = {
    "metric-axioms": metric_axioms,
    "exponent-sharpness": exponent_sharpness,
    "group-action": group_action,
    "geodesic-midpoint": geodesic_midpoint,
    "completeness": completeness,
    "smooth-closure": smoothing,
    "distance-solver": distance_solver,
    "comparability": comparability,
    "divform": divform,
    "varadhan": varadhan,
    "poincare": poincare,
    "sturm": sturm,
    "disconnectedness": disconnectedness,
}
