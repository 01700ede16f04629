"""
Different metrics with the same volume and the same distances
=============================================================

On a 4D grid, a dense net of short curves carries a bump profile. One
metric shrinks two directions by the profile, the other shrinks all four by
its square root: the volume densities agree exactly, the metrics differ,
and both leave network distances within (1 + 1/m) of Euclidean.
"""

import numpy as np

from metspace import GridChart
from metspace.constructions import build_network, sturm_pair, sturm_report, tube_budget
from metspace.space import dl

chart = GridChart.box([0.0] * 4, [1.0] * 4, (7, 7, 7, 7))
net = build_network(chart, m_max=8, seed=0)
print(f"{len(net.points)} points, {len(net.curves)} curves, tube radius {net.tube_radius:.4f}")

g, gp = sturm_pair(net)
det_g = np.linalg.det(g.values)
det_gp = np.linalg.det(gp.values)
print("max relative determinant gap:", np.max(np.abs(det_g - det_gp) / det_g))
print("dl(g, g') =", dl(g, gp).value)

rep = sturm_report(net, g, gp)
print(f"distance / chord in [{rep['min_ratio']:.4f}, {rep['max_ratio']:.4f}],"
      f" allowed factor {rep['factor']:.4f} plus slack {rep['slack']:.4f}")

budget = tube_budget(net)
print(f"the summable bump weights need epsilon <= 2^-{budget['log2_epsilon_required']:.1f}")
