# # Series resistance: a case the discretisation reproduces exactly
#
# A unit square is cut by a vertical fracture at x = 1/2. The pressure is 1 on
# the left side and 0 on the right, the top and bottom are sealed, and every
# permeability equals 1. The flow passes through the fracture between the two
# halves, so the resistances add in series. The exact pressure is piecewise
# linear with 5/6 and 1/6 on the two fracture faces and 1/2 inside the
# fracture. The mortar flux is 1/3 on both sides.
#
# Piecewise linear pressures and constant fluxes belong to the discrete
# spaces, so the solver and the error majorant should both return round-off.

import numpy as np

from mdest import generate_matching_bundle
from mdest.estimate import estimate
from mdest.mdgrid import perturbed_bundle
from mdest.mdsolve import check_local_conservation, solve_domain
from mdest.scenarios import series_resistance_scenario

scenario = series_resistance_scenario()
domain = scenario.domain()

# ## Matching grids
#
# The fracture grid, both interface grids and the matrix faces on the
# fracture all share their nodes.

bundle = generate_matching_bundle(domain, 1 / 8)
sol = solve_domain(domain, bundle)
g = sol.grid(0)
print("fracture pressure   ", np.unique(np.round(sol.p[1], 12)))
print("mortar fluxes       ", sol.lam[0].mean(), sol.lam[1].mean())
print("matrix pressure err ", np.abs(sol.p[0] - scenario.exact.p(0, g.cell_centers)).max())
print("conservation        ", check_local_conservation(sol)[0])
print("majorant            ", estimate(sol).majorant)

# ## Non-matching grids
#
# Shifting the fracture nodes by half a cell along the fracture, and the
# interface nodes the other way, breaks every node correspondence. The
# projections between grids still reproduce constants and linears, so the
# answer stays exact.

for sign in (1, -1):
    pb = perturbed_bundle(bundle, domain, sign)
    s = solve_domain(domain, pb)
    print(f"{pb.label:>3}: max |lambda - 1/3| = {np.abs(np.abs(s.lam[0]) - 1 / 3).max():.2e}, "
          f"majorant = {estimate(s).majorant:.2e}")
