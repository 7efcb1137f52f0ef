"""Adaptive solve of the viscous Burgers tracking problem.

Prints one row per refinement iteration (objective, indicator maxima, mesh
sizes) and writes the usual output tables into ``demo_burgers/``.

    python demos/burgers_tracking.py [eps]
"""
import sys

from hpocp.adapt import AdaptConfig, run_adaptive
from hpocp.cli import write_outputs
from hpocp.problems import burgers

eps = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-5

hist = run_adaptive(burgers(), AdaptConfig(eps=eps))

print(f"{'it':>3} {'objective':>16} {'eta_t':>10} {'eta_x':>10} {'N_t':>4} {'J':>3} {'N_x':>4} {'K':>3}")
for r in hist.rows:
    print(f"{r['iteration']:3d} {r['objective']:16.10e} {r['eta_t_max']:10.3e} {r['eta_x_max']:10.3e} "
          f"{r['N_t']:4d} {r['J']:3d} {r['N_x']:4d} {r['K']:3d}")
print(hist.status)

write_outputs(hist, hist.solution, "demo_burgers", emit_plots=True)
