"""
Path distances and volumes of rough metrics
===========================================

Shortest paths on the grid graph give the length distance of a metric,
even when the metric jumps. Comparable metrics give comparable distances.
"""

import numpy as np

from metspace import GridChart, distance_map, measure
from metspace.constructions import nonapprox_metric
from metspace.fields import constant_field
from metspace.geometry import distance_comparability_check, stencil_error
from metspace.space import dl, perturb, smooth_approx

chart = GridChart.box([-2, -2], [2, 2], (81, 81))
flat = constant_field(chart, np.eye(2))
jump = nonapprox_metric(chart, jump=100.0, ball_radius=1.0)

centre = chart.node(40, 40)
corner = chart.node(80, 80)
d_flat = distance_map(flat, centre).values[corner]
d_jump = distance_map(jump, centre).values[corner]
print(f"centre to corner: flat {d_flat:.4f} (exact {np.sqrt(8):.4f}), jump {d_jump:.4f}")
# inside the ball the metric is flat, outside it is 10x longer:
# 1 + 10 (sqrt 8 - 1) for the straight ray
print("straight-ray length in the jump metric:", 1 + 10 * (np.sqrt(8) - 1))

print("volume flat:", measure(flat).volume, " jump:", measure(jump).volume)
print("relative stencil error (order 2, 2D):", stencil_error(2, 2))

# mollifying the jump never gets closer than log(100) / 4
for eps in (0.8, 0.4, 0.2, 0.1):
    print(f"eps={eps}: dl(jump_eps, jump) = {dl(smooth_approx(jump, eps), jump).value:.4f}")

# a random perturbation at distance 0.3 changes distances by at most e^0.3
g = perturb(flat, np.random.default_rng(1), 0.3)
rep = distance_comparability_check(flat, g, [(centre, corner), (0, 80), (100, 3000)])
print(f"distance ratios in [{rep.lower:.3f}, {rep.upper:.3f}] up to slack {rep.slack:.3f}:")
print(rep.to_csv())
