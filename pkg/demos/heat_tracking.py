"""Adaptive solve of the nonlinear heat tracking problem.

The control u1 has an upper bound of 0.1, which becomes active early in the
horizon; the printout shows the bound and the optimal control samples.

    python demos/heat_tracking.py [eps]
"""
import sys

import numpy as np

from hpocp.adapt import AdaptConfig, run_adaptive
from hpocp.problems import heat

eps = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-5

problem = heat()
hist = run_adaptive(problem, AdaptConfig(eps=eps))
sol = hist.solution

for r in hist.rows:
    print(r["iteration"], f"{r['objective']:.10e}", f"{r['eta_t_max']:.2e}", f"{r['eta_x_max']:.2e}",
          r["N_t"], r["J"], r["N_x"], r["K"])

# time samples of the boundary control next to its bound
print("u1 upper bound", problem.u1_bounds[1])
for t, u in zip(sol.T[1::4], sol.U1[::4]):
    print(f"t={t:.4f}  u1={u: .6f}")
print("bound active at", int(np.sum(sol.U1 > problem.u1_bounds[1] - 1e-5)), "of", sol.n_t, "points")
