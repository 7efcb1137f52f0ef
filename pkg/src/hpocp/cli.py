"""Command line front end: configure a run, drive the adaptive loop, write tables.

Configuration is merged in three layers: built-in defaults, then a JSON
file given by ``--config``, then explicit flags.  The JSON keys are those of
:class:`hpocp.adapt.AdaptConfig` plus ``problem``, ``problem_params``,
``out`` and ``emit_plots``.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from .adapt import STRATEGIES, AdaptConfig, config_to_dict, run_adaptive
from .problems import PROBLEMS, get_problem

log = logging.getLogger("hpocp")

EXIT_OK, EXIT_ERROR, EXIT_MAX_ITER = 0, 1, 2

RUN_KEYS = ("problem", "problem_params", "out", "emit_plots")
DEFAULTS = {
    "problem": None,
    "problem_params": {},
    "out": "hpocp_out",
    "emit_plots": False,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags, which here means max-iter
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(
        prog="hpocp",
        description="hp-adaptive direct collocation for 1-D parabolic optimal control problems.",
    )
    p.add_argument("--problem", choices=sorted(PROBLEMS), help="built-in problem name")
    p.add_argument("--eps", type=float, help="error tolerance in space and time")
    p.add_argument("--strategy", choices=STRATEGIES, help="refinement strategy (default local_hp)")
    p.add_argument("--config", metavar="PATH", help="JSON file with run options")
    p.add_argument("--out", metavar="DIR", help="output directory (default hpocp_out)")
    p.add_argument("--max-iter", type=int, dest="max_iter", help="cap on mesh refinement iterations")
    p.add_argument("--threads", type=int, help="estimator worker threads (default: all cores)")
    p.add_argument("--emit-plots", action="store_true", default=None, dest="emit_plots",
                   help="also write whitespace-delimited plot data files")
    p.add_argument("-v", "--verbose", action="store_true", help="log each refinement iteration")
    return p


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


def merge_config(args, file_cfg=None):
    """Defaults, then file, then flags.  Returns (run options, AdaptConfig)."""
    adapt_keys = set(AdaptConfig.__dataclass_fields__)
    cfg = dict(DEFAULTS)
    cfg["threads"] = os.cpu_count() or 1
    for layer in (file_cfg or {}, {k: v for k, v in vars(args).items() if v is not None}):
        for key, val in layer.items():
            if key in ("config", "verbose"):
                continue
            if key not in adapt_keys and key not in RUN_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            cfg[key] = val
    if cfg["problem"] is None:
        raise UsageError("--problem is required (or a 'problem' key in the config file)")
    if cfg["problem"] not in PROBLEMS:
        raise UsageError(f"unknown problem {cfg['problem']!r}; choose from {sorted(PROBLEMS)}")
    run = {k: cfg.pop(k) for k in RUN_KEYS}
    try:
        config = AdaptConfig(**cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return run, config


def _fmt(v):
    return repr(float(v))


def _write_csv(path, header, columns):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_dat(path, header, columns, blocks=None):
    """Whitespace-delimited columns; ``blocks`` inserts blank lines (gnuplot style)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for i, row in enumerate(zip(*columns)):
            if blocks and i and i % blocks == 0:
                fh.write("\n")
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def summary_dict(history):
    """Everything in summary.json, as plain Python data."""
    final = history.rows[-1] if history.rows else {}
    return {
        "problem": history.problem,
        "status": history.status,
        "message": history.message,
        "config": config_to_dict(history.config),
        "final": {k: final[k] for k in ("objective", "eta_t_max", "eta_x_max", "N_t", "J", "N_x", "K")
                  if k in final},
        "iterations": history.rows,
    }


def write_outputs(history, solution, out_dir, emit_plots=False):
    """Write summary, solution tables and mesh history into ``out_dir``.

    Returns the list of files written.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name):
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    with open(path("summary.json"), "w") as fh:
        json.dump(summary_dict(history), fh, indent=2)
        fh.write("\n")

    meshes = []
    for i, m in enumerate(history.meshes):
        entry = {"iteration": i, **m}
        if i < len(history.reports):
            entry.update(history.reports[i].to_dict())
        meshes.append(entry)
    with open(path("mesh_history.json"), "w") as fh:
        json.dump(meshes, fh, indent=2)
        fh.write("\n")

    if solution is None:
        return written
    x = solution.smesh.support_points
    T = np.asarray(solution.T)
    Y = np.asarray(solution.Y)
    header = ["x"] + [_fmt(t) for t in T]
    _write_csv(path("solution_state.csv"), header, [x] + [Y[:, c] for c in range(Y.shape[1])])
    _write_csv(path("controls.csv"), ["t", "u1", "u2"], [T[1:], solution.U1, solution.U2])

    if emit_plots:
        xx, tt = np.meshgrid(x, T, indexing="ij")
        _write_dat(path("state_surface.dat"), ["x", "t", "y"],
                   [xx.ravel(), tt.ravel(), Y.ravel()], blocks=len(T))
        _write_dat(path("controls.dat"), ["t", "u1", "u2"], [T[1:], solution.U1, solution.U2])
        rows = history.rows
        _write_dat(path("convergence.dat"), ["iteration", "eta_t_max", "eta_x_max", "objective"],
                   [[r[k] for r in rows] for k in ("iteration", "eta_t_max", "eta_x_max", "objective")])
        if history.reports:
            rep = history.reports[-1]
            b = solution.smesh.boundaries
            _write_dat(path("indicators_x.dat"), ["x_left", "x_right", "degree", "eta_x"],
                       [b[:-1], b[1:], solution.smesh.degrees, rep.eta_x])
            tm = solution.tmesh
            tb = np.array([tm.interval_bounds(j) for j in range(tm.n_intervals)])
            _write_dat(path("indicators_t.dat"), ["t_left", "t_right", "n_points", "eta_t"],
                       [tb[:, 0], tb[:, 1], tm.degrees, rep.eta_t])
    return written


def main(argv=None):
    """Run the command line interface; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = load_config(args.config) if args.config else None
        run, config = merge_config(args, file_cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hpocp: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        problem = get_problem(run["problem"], **run["problem_params"])
    except (TypeError, ValueError) as exc:
        print(f"hpocp: error: bad problem parameters: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        history = run_adaptive(problem, config)
    except Exception as exc:
        log.exception("run failed")
        print(f"hpocp: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        write_outputs(history, history.solution, run["out"], run["emit_plots"])
    except OSError as exc:
        print(f"hpocp: error: cannot write {exc.filename or run['out']}: {exc.strerror}",
              file=sys.stderr)
        return EXIT_ERROR
    final = history.rows[-1] if history.rows else None
    if final is not None:
        print(f"{history.status}: objective {final['objective']:.10e}  "
              f"eta_t {final['eta_t_max']:.3e}  eta_x {final['eta_x_max']:.3e}  "
              f"N_t {final['N_t']} J {final['J']} N_x {final['N_x']} K {final['K']}")
    else:
        print(history.status)
    if history.status == "converged":
        return EXIT_OK
    if history.status == "max-iter":
        return EXIT_MAX_ITER
    print(f"hpocp: error: {history.message}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
