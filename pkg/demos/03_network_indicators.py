# # Where does the error sit in a fracture network?
#
# Two conductive fractures cross at the centre of the unit square. One
# quadrant of the matrix is ten times less permeable, and a source and sink
# sit in the vertical fracture. There is no closed-form solution, so we look
# at the estimator itself: its split over subdomain dimensions and the cells
# carrying the largest local indicators.

import numpy as np

from mdest import generate_matching_bundle
from mdest.estimate import estimate
from mdest.mdsolve import solve_domain
from mdest.scenarios import network_scenario_2d

domain = network_scenario_2d().domain()

for h in (1 / 8, 1 / 16, 1 / 32):
    sol = solve_domain(domain, generate_matching_bundle(domain, h))
    rep = estimate(sol)
    omega = ", ".join(f"d={d}: {v:.3e}" for d, v in sorted(rep.eta_omega_by_dim.items(), reverse=True))
    gamma = ", ".join(f"d={d}: {v:.3e}" for d, v in sorted(rep.eta_gamma_by_dim.items(), reverse=True))
    print(f"h = {h:.4f}  M = {rep.majorant:.4e}")
    print(f"   subdomains  {omega}")
    print(f"   interfaces  {gamma}")

# ## Largest interface indicators on the finest grid
#
# The interface term dominates: with a normal permeability of 1e4 any small
# mismatch between the reconstructed potentials on the two sides of an
# interface is weighted heavily. The largest values sit next to the free tips
# of the horizontal fracture, where the matrix pressure bends sharply.

worst = sorted(((v.max(), j, int(v.argmax())) for j, v in rep.eta_df_perp.items()), reverse=True)[:4]
for val, j, k in worst:
    c = sol.bundle.interface_grids[j].cell_centers[k]
    print(f"interface {j:2d} cell {k:3d} at ({c[0]:.3f}, {c[1]:.3f}): {val:.3e}")
