# # Moving data between non-matching grids
#
# Every coupling passes through a transfer grid: the common refinement of two
# grids of the same line or polygon. On it we compare the three kinds of
# projection used by the solver and the estimator.

import numpy as np

from mdest.project import PolyField, ProjectionCache, mass_constrained_project, prolong, scott_zhang
from mdest.selfcheck import random_segment_grid, random_triangulation
from mdest.transfer import build_transfer, check_transfer

rng = np.random.default_rng(1)
src = random_segment_grid(rng, 5)
dst = random_segment_grid(rng, 3)
tg = build_transfer(src, dst)
cache = ProjectionCache(tg)
print("source breakpoints  ", np.round(src.nodes[:, 0], 3))
print("target breakpoints  ", np.round(dst.nodes[:, 0], 3))
print("transfer breakpoints", np.round(tg.nodes[np.argsort(tg.nodes[:, 0]), 0], 3))

# ## Linear functions survive the Scott-Zhang projection

lin = lambda X: 2.0 * X[:, 0] - 0.5
out = scott_zhang(prolong(PolyField.interpolate(src, lin), tg, cache), dst, cache)
print("P1 reproduction error", np.abs(out.nodal_values - lin(dst.nodes)).max())

# ## Fluxes keep their mass cell by cell
#
# A piecewise constant mortar flux goes to the overlap-weighted average, so
# the total flux through each target cell is unchanged.

nu = PolyField(src, 0, rng.standard_normal((src.num_cells, 1)))
w = prolong(nu, tg, cache)
out = mass_constrained_project(w, dst, 0, cache)
target = np.zeros(dst.num_cells)
np.add.at(target, tg.dst_parent, w.cell_integrals())
print("per-cell mass residual", np.abs(out.cell_integrals() - target).max())

# ## The same in two dimensions

a, b = random_triangulation(rng), random_triangulation(rng)
tg2 = build_transfer(a, b)
d = check_transfer(tg2)
print(f"{a.num_cells} x {b.num_cells} triangles -> {tg2.num_cells} transfer cells, "
      f"measure error {d['measure_error']:.1e}, node inclusion {d['node_inclusion']}")
