"""Legendre decay rates of a smooth and a non-smooth function.

The smooth function exp(x) gives a large decay rate at every degree, the
kinked |x| a small one.  This is the regularity signal that chooses between
raising the degree and splitting a cell.

    python demos/decay_rates.py
"""
import numpy as np

from hpocp.adapt import decay_rate, legendre_coeffs
from hpocp.basis import gauss_nodes

print(f"{'degree':>6} {'sigma(exp)':>11} {'sigma(|x|)':>11}")
for degree in range(2, 17, 2):
    xi = gauss_nodes("LGL", degree + 1).nodes
    s_exp = decay_rate(legendre_coeffs(np.exp(xi), xi)).sigma
    s_abs = decay_rate(legendre_coeffs(np.abs(xi), xi)).sigma
    print(f"{degree:6d} {s_exp:11.4f} {s_abs:11.4f}")
