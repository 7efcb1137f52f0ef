"""Acceptance criteria 1-7, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py`` (or execute this file) to get one
PASS/FAIL line per criterion in the terminal summary.
"""
import time

import numpy as np
import pytest

from hpocp.adapt import AdaptConfig, initial_meshes, run_adaptive, solve_on_mesh
from hpocp.estimator import estimate_all
from hpocp.problems import burgers, heat

from oracles import PROPERTY_CHECKS, effectivity_sequence


def within_factor(value, ref, factor):
    return ref / factor <= value <= ref * factor


def report(record_property, number, checks):
    """Record the criterion outcome and fail with every unmet sub-check listed."""
    failed = [name for name, ok, _ in checks if not ok]
    detail = "; ".join(f"{name} {info}" for name, _, info in checks)
    record_property("criterion", number)
    record_property("detail", detail)
    assert not failed, f"unmet: {', '.join(failed)} ({detail})"


def rel(a, b):
    return abs(a - b) / abs(b)


def test_criterion_1_burgers_initial_mesh(record_property):
    p = burgers()
    t0 = time.perf_counter()
    ocp, res = solve_on_mesh(p, *initial_meshes(p))
    sol = ocp.unpack(res.z)
    rep = estimate_all(sol, p)
    elapsed = time.perf_counter() - t0
    report(record_property, 1, [
        ("objective", rel(sol.objective, 2.8940597e-5) <= 5e-3, f"{sol.objective:.8e}"),
        ("eta_t_max", within_factor(rep.eta_t_max, 5.36e-5, 2), f"{rep.eta_t_max:.3e}"),
        ("eta_x_max", within_factor(rep.eta_x_max, 4.43e-4, 2), f"{rep.eta_x_max:.3e}"),
        ("runtime", elapsed <= 60.0, f"{elapsed:.1f}s"),
    ])


def _adaptive(problem, eps, **kw):
    t0 = time.perf_counter()
    hist = run_adaptive(problem, AdaptConfig(eps=eps, **kw))
    return hist, hist.rows[-1], time.perf_counter() - t0


def _indicator_checks(hist, final, eps):
    return [
        ("status", hist.converged, hist.status),
        ("eta_t_max", final["eta_t_max"] <= eps, f"{final['eta_t_max']:.3e}"),
        ("eta_x_max", final["eta_x_max"] <= eps, f"{final['eta_x_max']:.3e}"),
    ]


def _mesh_checks(final, ref, factor):
    return [(key, within_factor(final[key], r, factor), str(final[key]))
            for key, r in zip(("N_t", "J", "N_x", "K"), ref)]


def test_criterion_2_burgers_local_hp_1e5(record_property):
    hist, final, elapsed = _adaptive(burgers(), 1e-5)
    report(record_property, 2, _indicator_checks(hist, final, 1e-5) + [
        ("objective", rel(final["objective"], 2.8969342e-5) <= 1e-3, f"{final['objective']:.8e}"),
    ] + _mesh_checks(final, (24, 4, 51, 15), 2) + [
        ("runtime", elapsed <= 600.0, f"{elapsed:.1f}s"),
    ])


def test_criterion_3_burgers_local_hp_1e7(record_property):
    hist, final, elapsed = _adaptive(burgers(), 1e-7, max_iter=25)
    report(record_property, 3, _indicator_checks(hist, final, 1e-7) + [
        ("iterations", final["iteration"] <= 25, str(final["iteration"])),
        ("objective", rel(final["objective"], 2.8969407e-5) <= 1e-3, f"{final['objective']:.8e}"),
    ] + _mesh_checks(final, (82, 13, 111, 27), 3) + [
        ("runtime", True, f"{elapsed:.1f}s"),
    ])


def test_criterion_4_heat_local_hp_1e5(record_property):
    hist, final, elapsed = _adaptive(heat(), 1e-5)
    report(record_property, 4, _indicator_checks(hist, final, 1e-5) + [
        ("objective", rel(final["objective"], 3.8654831e-5) <= 1e-3, f"{final['objective']:.8e}"),
        ("runtime", elapsed <= 600.0, f"{elapsed:.1f}s"),
    ])


def test_criterion_5_global_baselines(record_property):
    checks = []
    for strategy in ("global_h", "global_p", "global_ph"):
        hist, final, _ = _adaptive(burgers(), 1e-4, strategy=strategy)
        checks.append((f"{strategy} converged", hist.converged, hist.status))
        checks.append((f"{strategy} objective", rel(final["objective"], 2.89699e-5) <= 1e-3,
                       f"{final['objective']:.8e}"))
        degrees = hist.meshes[-1]["spatial"]["degrees"]
        if strategy == "global_p":
            ok = final["K"] == 9 and min(degrees) > 2
            checks.append(("global_p shape", ok, f"K={final['K']} p={sorted(set(degrees))}"))
        elif strategy == "global_h":
            ok = final["K"] > 9 and set(degrees) == {2}
            checks.append(("global_h shape", ok, f"K={final['K']} p={sorted(set(degrees))}"))
    report(record_property, 5, checks)


def test_criterion_6_property_suite(record_property):
    checks = []
    for name, fn in PROPERTY_CHECKS:
        ok, info = fn()
        checks.append((name, ok, f"[{info}]"))
    report(record_property, 6, checks)


def test_criterion_7_effectivity(record_property):
    checks = []
    for degree in (1, 2, 3):
        worst_lo, worst_hi, cells = np.inf, 0.0, 0
        for K, eta, true in effectivity_sequence(degree):
            mask = (true >= 1e-8) & (true <= 1e-2)
            if not mask.any():
                continue
            ratio = eta[mask] / true[mask]
            worst_lo = min(worst_lo, ratio.min())
            worst_hi = max(worst_hi, ratio.max())
            cells += int(mask.sum())
        ok = cells > 0 and worst_lo >= 0.1 and worst_hi <= 10.0
        checks.append((f"p={degree}", ok, f"ratios in [{worst_lo:.2f}, {worst_hi:.2f}] over {cells} cells"))
    report(record_property, 7, checks)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
