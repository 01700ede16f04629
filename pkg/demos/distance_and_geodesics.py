"""
Extended distance, transport and geodesics
==========================================

Two metric fields on the same grid, the log of their best comparison
constant, and the straight path between them.
"""

import numpy as np

from metspace import GridChart, act, dl, geodesic, midpoint, transport_B
from metspace.fields import conformal_field, random_metric_field

chart = GridChart.box([0, 0], [1, 1], (32, 32))
rng = np.random.default_rng(0)

g = random_metric_field(chart, rng)
h = random_metric_field(chart, rng)

D = dl(g, h)
print(f"dl(g, h) = {D.value:.6f}, attained at node {D.argmax_node}")

# scaling a metric by c moves it by |log c| / 2
print("dl(g, 9g) =", dl(g, g.with_values(9 * np.asarray(g.values))).value, "vs", 0.5 * np.log(9))

# transport: g is h pulled back through B
B = transport_B(g, h)
err = np.abs(act(B, h).values - g.values).max()
print(f"max |act(B, h) - g| = {err:.2e}")

# points along the path split the distance linearly
path = geodesic(g, h)
for t in (0.25, 0.5, 0.75):
    gt = path.eval(t)
    print(f"t={t:4}: dl(g, g_t) = {dl(g, gt).value:.6f}   t * dl = {t * D.value:.6f}")

m = midpoint(g, h)
print("midpoint halves:", dl(g, m).value, dl(m, h).value)

# a steep conformal factor is far from g, but on a bounded grid never infinitely far
far = conformal_field(chart, lambda x: np.exp(8 * x[:, 0]))
print("dl(g, e^{8x} I) =", dl(g, far).value)
