"""Compare local hp refinement with the three global baselines on Burgers.

    python demos/strategy_comparison.py [eps]
"""
import sys

from hpocp.adapt import STRATEGIES, AdaptConfig, run_adaptive
from hpocp.problems import burgers

eps = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-4

for strategy in STRATEGIES:
    hist = run_adaptive(burgers(), AdaptConfig(eps=eps, strategy=strategy))
    r = hist.rows[-1]
    solve_time = sum(row["time_nlp"] for row in hist.rows)
    print(f"{strategy:10s} {hist.status:9s} iters={r['iteration']:2d} J*={r['objective']:.8e} "
          f"N_t={r['N_t']:3d} J={r['J']:2d} N_x={r['N_x']:4d} K={r['K']:3d} nlp={solve_time:.2f}s")
