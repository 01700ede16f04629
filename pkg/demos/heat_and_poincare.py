"""
Heat flow, small-time asymptotics and Poincare constants
========================================================

The weak Laplacian of a metric drives a heat flow; its kernel at small
times recovers the squared distance, and its first Neumann eigenvalue
gives the Poincare constant.
"""

import numpy as np

from metspace import GridChart, assemble_laplacian, heat_run, poincare_measure, varadhan_estimate
from metspace.fields import constant_field
from metspace.geometry import distance
from metspace.operators import poincare_propagate
from metspace.space import dl, perturb

line = GridChart.box([0], [1], (513,))
for c in (1.0, 2.0):
    g = constant_field(line, [[c * c]])
    op = assemble_laplacian(g)
    x, y = 128, 384
    times = np.array([0.005, 0.0075, 0.01, 0.015, 0.02]) * c * c
    run = heat_run(op, x, times, dt=times[0] / 500)
    est = varadhan_estimate(run, y)
    d = distance(g, x, y)
    print(f"c={c}: -4t log rho -> {est.extrapolated:.4f}   d^2 = {d * d:.4f}")
    print("   total heat:", run.total_heat())

square = GridChart.box([0, 0], [1, 1], (65, 65))
flat = constant_field(square, np.eye(2))
C = poincare_measure(flat, square.node(32, 32), 10.0)
print(f"flat unit square: C1 = {C:.6f}, 1/pi = {1 / np.pi:.6f}")

# perturb at distance log 2 and compare with the propagated bound
g = perturb(flat, np.random.default_rng(0), np.log(2))
Cg = poincare_measure(g, square.node(32, 32), 100.0)
bound = poincare_propagate(C, 1.0, 1.0, dl(g, flat).value, 2)[0]
print(f"perturbed: measured {Cg:.4f} <= propagated {bound:.4f}")
