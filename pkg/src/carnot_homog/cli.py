"""Command-line orchestration: config parsing, experiment tasks, persistence.

Usage::

    carnot-homog <task> --config cfg.json [--out DIR] [--seeds K]
                 [--workers W] [--plot]

Tasks: action | mu | effective-lagrangian | limit-solve | converge | verify.
Config files are JSON; every run writes a manifest embedding the fully
resolved config (all defaults explicit), its hash, the seeds and versions
needed to regenerate the outputs bit-for-bit.  Results are CSV, optional
plots are SVG.  Exit codes: 0 success, 1 verify failures, 2 config schema
violation (naming the field path), 3 solver infeasibility, 4 I/O failure.

Environment overrides: CARNOT_HOMOG_SEED (master seed) and
CARNOT_HOMOG_WORKERS (worker count).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .environment import Environment, ModelParams, RangeError
from .groups import GroupError, get_group, registered_groups
from .homogenization import (
    EffectiveLagrangianTable,
    convergence_study,
    duality_roundtrip_error,
    estimate_Lbar,
    pl_roundtrip_bound,
    solve_limit,
)
from .paths import ConnectorError
from .solver import (
    ActionProblem,
    InfeasibleError,
    SolverConfig,
    l_eps,
    mu_q,
)
from .verification import run_verify
from .workers import default_workers

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_SCHEMA = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

TASKS = ("action", "mu", "effective-lagrangian", "limit-solve", "converge", "verify")


class SchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"config field '{path}': {message}")
        self.path = path


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

_ENV_DEFAULTS = {"kind": "product", "seed": 0, "a0": 1.0, "v0": 0.0,
                 "amplitude_a": 0.0, "amplitude_v": 0.5, "bump_density": 1.5,
                 "bump_width": 0.8, "cell_size": 1.0}
_SOLVER_DEFAULTS = {"n_pieces": None, "pieces_per_unit": 4.0, "min_pieces": 8,
                    "multi_starts": 4, "maxiter": 120, "residual_tol": 1e-6,
                    "penalty_rho0": 10.0, "penalty_rounds": 6,
                    "control_cap_kappa": 8.0, "master_seed": 0}
_OUTPUT_DEFAULTS = {"dir": "out"}


def _take(d: dict, path: str, key: str, typ, required: bool = False, default=None):
    if key not in d:
        if required:
            raise SchemaError(f"{path}.{key}", "missing required field")
        return default
    v = d[key]
    if typ is float and isinstance(v, int):
        v = float(v)
    if not isinstance(v, typ):
        raise SchemaError(f"{path}.{key}", f"expected {typ}, got {type(v).__name__}")
    return v


def resolve_config(raw: dict) -> dict:
    """Validate and fill defaults; returns the fully explicit config."""
    if not isinstance(raw, dict):
        raise SchemaError("", "top level must be an object")
    out: dict = {}
    group = _take(raw, "", "group", str, default="heisenberg1")
    if group not in registered_groups():
        raise SchemaError("group", f"unknown group {group!r}; "
                                   f"registered: {registered_groups()}")
    out["group"] = group

    env_raw = raw.get("environment", {})
    if not isinstance(env_raw, dict):
        raise SchemaError("environment", "must be an object")
    env = dict(_ENV_DEFAULTS)
    for k in env_raw:
        if k not in _ENV_DEFAULTS:
            raise SchemaError(f"environment.{k}", "unknown field")
    env.update(env_raw)
    if env["kind"] not in ("constant", "product", "cells"):
        raise SchemaError("environment.kind", f"invalid kind {env['kind']!r}")
    out["environment"] = env

    model_raw = raw.get("model")
    if not isinstance(model_raw, dict):
        raise SchemaError("model", "missing required object")
    beta = _take(model_raw, "model", "beta", float, required=True)
    if beta <= 1.0:
        raise SchemaError("model.beta", "must exceed 1")
    out["model"] = {"beta": beta}

    sol_raw = raw.get("solver", {})
    if not isinstance(sol_raw, dict):
        raise SchemaError("solver", "must be an object")
    sol = dict(_SOLVER_DEFAULTS)
    for k in sol_raw:
        if k not in _SOLVER_DEFAULTS:
            raise SchemaError(f"solver.{k}", "unknown field")
    sol.update(sol_raw)
    out["solver"] = sol

    task_raw = raw.get("task")
    if not isinstance(task_raw, dict):
        raise SchemaError("task", "missing required object")
    name = _take(task_raw, "task", "name", str, required=True)
    if name not in TASKS:
        raise SchemaError("task.name", f"unknown task {name!r}; expected one of {TASKS}")
    out["task"] = dict(task_raw)

    out_raw = raw.get("output", {})
    if not isinstance(out_raw, dict):
        raise SchemaError("output", "must be an object")
    o = dict(_OUTPUT_DEFAULTS)
    o.update(out_raw)
    out["output"] = o
    return out


def config_hash(resolved: dict) -> str:
    """Hash of the semantic config (output paths excluded)."""
    payload = {k: v for k, v in resolved.items() if k != "output"}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build_objects(cfg: dict):
    g = get_group(cfg["group"])
    env = Environment(dim=g.dim, **cfg["environment"])
    model = ModelParams(**cfg["model"])
    s = cfg["solver"]
    solver_cfg = SolverConfig(
        multi_starts=s["multi_starts"], maxiter=s["maxiter"],
        penalty_rho0=s["penalty_rho0"], penalty_rounds=s["penalty_rounds"],
        residual_tol=s["residual_tol"], cap_kappa=s["control_cap_kappa"],
        pieces_per_unit=s["pieces_per_unit"], min_pieces=s["min_pieces"],
        master_seed=s["master_seed"])
    return g, env, model, solver_cfg


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: str, schema: str, header: list, rows: list, meta: dict) -> None:
    lines = [f"# format={schema}"]
    for k in sorted(meta):
        lines.append(f"# {k}={meta[k]}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_manifest(out_dir: str, resolved: dict, outputs: list, t0: float,
                   extra: dict | None = None) -> str:
    doc = {
        "format": "run-manifest/v1",
        "config": resolved,
        "config_hash": config_hash(resolved),
        "outputs": outputs,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
        "wall_time_s": round(time.time() - t0, 3),
    }
    if extra:
        doc.update(extra)
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return path


# ---------------------------------------------------------------------------
# task runners
# ---------------------------------------------------------------------------

def _task_action(cfg, g, env, model, scfg, out_dir, meta, workers, plot):
    t = cfg["task"]
    x = np.asarray(_take(t, "task", "x", list, required=True), dtype=float)
    y = np.asarray(_take(t, "task", "y", list, required=True), dtype=float)
    horizon = _take(t, "task", "t", float, required=True)
    eps = _take(t, "task", "epsilon", float, default=1.0)
    n = t.get("n_pieces") or max(scfg.min_pieces,
                                 int(np.ceil(scfg.pieces_per_unit * horizon / eps)))
    from .solver import certify_growth_cached

    prob = ActionProblem(group=g, env=env, model=model, epsilon=eps, start=y,
                         target=x, t=horizon, n_pieces=int(n), config=scfg,
                         certificate=certify_growth_cached(env, model))
    res = l_eps(prob)
    rows = [[eps, horizon, res.value, res.endpoint_residual, int(res.coord_exact),
             res.max_speed, res.cap]]
    path = os.path.join(out_dir, "action.csv")
    write_csv(path, "action/v1",
              ["epsilon", "t", "value", "endpoint_residual", "coord_exact",
               "max_speed", "control_cap"], rows, meta)
    outputs = [path]
    wpath = os.path.join(out_dir, "witness_path.csv")
    from .paths import integrate

    integrate(g, y, res.control, steps_per_piece=4).to_csv(wpath)
    outputs.append(wpath)
    if plot:
        outputs.append(_plot_path(g, y, res, out_dir))
    return outputs, {"diagnostics": _jsonable(res.diagnostics)}


def _task_mu(cfg, g, env, model, scfg, out_dir, meta, workers, plot):
    t = cfg["task"]
    q = np.asarray(_take(t, "task", "q", list, required=True), dtype=float)
    interval = _take(t, "task", "interval", list, required=True)
    a, b = float(interval[0]), float(interval[1])
    n = t.get("n_pieces") or max(scfg.min_pieces,
                                 int(np.ceil(scfg.pieces_per_unit * (b - a))))
    res = mu_q(g, env, model, q, (a, b), int(n), scfg)
    path = os.path.join(out_dir, "mu.csv")
    write_csv(path, "mu/v1",
              ["q1", "q2", "a", "b", "value", "per_unit_time",
               "endpoint_residual", "coord_exact"],
              [[q[0], q[1], a, b, res.value, res.value / (b - a),
                res.endpoint_residual, int(res.coord_exact)]], meta)
    return [path], {}


def _lbar_axes(task: dict):
    gq = task.get("q_grid", {"lo": -2.0, "hi": 2.0, "n": 9})
    lo, hi, n = float(gq["lo"]), float(gq["hi"]), int(gq["n"])
    return [np.linspace(lo, hi, n), np.linspace(lo, hi, n)]


def _task_lbar(cfg, g, env, model, scfg, out_dir, meta, workers, plot):
    t = cfg["task"]
    axes = _lbar_axes(t)
    ladder = [float(v) for v in t.get("T_ladder", [4.0, 8.0])]
    n_seeds = int(t.get("n_seeds", 8))
    tab = estimate_Lbar(g, env, model, axes, ladder, n_seeds, config=scfg,
                        pieces_per_unit=float(t.get("pieces_per_unit", 3.0)),
                        master_seed=scfg.master_seed, workers=workers)
    tab.convexified()
    tpath = os.path.join(out_dir, "lbar_table.json")
    tab.save(tpath)
    rows = []
    for (i, j), v in np.ndenumerate(tab.values):
        rows.append([tab.axes[0][i], tab.axes[1][j], v, tab.stderr[i, j],
                     tab.gap[i, j], tab.values_convex[i, j]])
    cpath = os.path.join(out_dir, "lbar_table.csv")
    write_csv(cpath, "effective-lagrangian/v1",
              ["q1", "q2", "value", "stderr", "gap", "value_convex"], rows, meta)
    outputs = [tpath, cpath]
    if plot:
        outputs.append(_plot_lbar(tab, out_dir))
    extra = {"duality_roundtrip_error": duality_roundtrip_error(tab),
             "duality_roundtrip_bound": pl_roundtrip_bound(tab)}
    return outputs, _jsonable(extra)


def _task_limit(cfg, g, env, model, scfg, out_dir, meta, workers, plot):
    t = cfg["task"]
    tab = EffectiveLagrangianTable.load(_take(t, "task", "table", str, required=True))
    datum = t.get("g_datum", {"tag": "horizontal-min", "cap": 1.0})
    grid = _take(t, "task", "eval_grid", list, required=True)
    eval_grid = [(float(e[0]), np.asarray(e[1], dtype=float)) for e in grid]
    sol = solve_limit(tab, g, datum["tag"], float(datum["cap"]), eval_grid,
                      config=scfg, workers=workers)
    rows = []
    for (tt, x), v, w in zip(sol.eval_grid, sol.values, sol.witnesses):
        rows.append([tt] + list(x) + [v] + list(w))
    path = os.path.join(out_dir, "limit_solution.csv")
    hdr = (["t"] + [f"x{i+1}" for i in range(g.dim)] + ["value"]
           + [f"y{i+1}" for i in range(g.dim)])
    write_csv(path, "limit-solution/v1", hdr, rows, meta)
    return [path], {}


def _task_converge(cfg, g, env, model, scfg, out_dir, meta, workers, plot):
    t = cfg["task"]
    ladder = [float(e) for e in t.get("eps_ladder", [1.0, 0.5, 0.25, 0.125])]
    n_seeds = int(t.get("n_seeds", 8))
    datum = t.get("g_datum", {"tag": "horizontal-min", "cap": 1.0})
    grid = _take(t, "task", "eval_grid", list, required=True)
    eval_grid = [(float(e[0]), np.asarray(e[1], dtype=float)) for e in grid]
    if "table" in t:
        tab = EffectiveLagrangianTable.load(t["table"])
    else:
        axes = _lbar_axes(t)
        tab = estimate_Lbar(g, env, model, axes,
                            [float(v) for v in t.get("T_ladder", [4.0, 8.0])],
                            int(t.get("table_seeds", max(4, n_seeds // 2))),
                            config=scfg, master_seed=scfg.master_seed,
                            workers=workers)
    rep = convergence_study(g, env, model, datum["tag"], float(datum["cap"]),
                            ladder, eval_grid, n_seeds, tab, config=scfg,
                            pieces_per_unit=scfg.pieces_per_unit,
                            master_seed=scfg.master_seed, workers=workers)
    dpath = os.path.join(out_dir, "convergence_ladder.csv")
    write_csv(dpath, "convergence-ladder/v1", ["epsilon", "D_mean", "D_sem"],
              [[e, rep.D[i],
                float(rep.D_per_seed[:, i].std(ddof=1) / np.sqrt(n_seeds))]
               for i, e in enumerate(rep.eps_ladder)],
              {**meta, "trend_ok": rep.trend_ok})
    ppath = os.path.join(out_dir, "convergence_points.csv")
    rows = []
    for s in range(n_seeds):
        for ei, e in enumerate(rep.eps_ladder):
            for pi, (tt, x) in enumerate(rep.eval_grid):
                rows.append([s, e, tt] + list(x)
                            + [rep.u_values[s, ei, pi], rep.ubar_values[pi]])
    write_csv(ppath, "convergence-points/v1",
              ["seed", "epsilon", "t"] + [f"x{i+1}" for i in range(g.dim)]
              + ["u_eps", "u_bar"], rows, meta)
    outputs = [dpath, ppath]
    if plot:
        outputs.append(_plot_ladder(rep, out_dir))
    return outputs, {"D": rep.D.tolist(), "trend_ok": rep.trend_ok}


def _task_verify(cfg, g, env, model, scfg, out_dir, meta, workers, plot):
    scope = cfg["task"].get("scope", "all")
    rep = run_verify(scope, workers=workers)
    path = os.path.join(out_dir, "verify_report.json")
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=1, sort_keys=True, default=_json_default)
    for sname, suite in rep["suites"].items():
        for cname, c in suite.items():
            print(f"[{'PASS' if c['ok'] else 'FAIL'}] {sname}/{cname}")
    return [path], {"verify_ok": rep["ok"]}


_RUNNERS = {
    "action": _task_action,
    "mu": _task_mu,
    "effective-lagrangian": _task_lbar,
    "limit-solve": _task_limit,
    "converge": _task_converge,
    "verify": _task_verify,
}


# ---------------------------------------------------------------------------
# plots (SVG, optional)
# ---------------------------------------------------------------------------

def _plot_lbar(tab, out_dir: str) -> str:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axs = plt.subplots(1, 2, figsize=(9, 4))
    X, Y = np.meshgrid(tab.axes[0], tab.axes[1], indexing="ij")
    c = axs[0].contourf(X, Y, tab.values, levels=18)
    fig.colorbar(c, ax=axs[0])
    axs[0].set_title("effective Lagrangian")
    axs[0].set_xlabel("q1")
    axs[0].set_ylabel("q2")
    mid = len(tab.axes[1]) // 2
    axs[1].errorbar(tab.axes[0], tab.values[:, mid], yerr=tab.stderr[:, mid],
                    marker="o", ms=3, lw=1, label="section q2=const")
    axs[1].plot(tab.axes[0], tab.convexified()[:, mid], lw=1, ls="--",
                label="convexified")
    axs[1].legend()
    path = os.path.join(out_dir, "lbar.svg")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _plot_ladder(rep, out_dir: str) -> str:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(rep.eps_ladder, rep.D, marker="o")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.invert_xaxis()
    ax.set_xlabel("epsilon")
    ax.set_ylabel("max gap to limit (seed mean)")
    path = os.path.join(out_dir, "convergence.svg")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _plot_path(g, y, res, out_dir: str) -> str:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from .paths import integrate

    path_obj = integrate(g, y, res.control, steps_per_piece=6)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(path_obj.points[:, 0], path_obj.points[:, 1], lw=1)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title("witness path, horizontal projection")
    path = os.path.join(out_dir, "witness_path.svg")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _jsonable(d):
    return json.loads(json.dumps(d, default=_json_default))


def run(raw_config: dict, out_dir: str | None = None, workers: int | None = None,
        plot: bool = False, seed_override: int | None = None) -> int:
    """Execute one configured task; returns the process exit code."""
    t0 = time.time()
    try:
        cfg = resolve_config(raw_config)
    except SchemaError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    if seed_override is None and "CARNOT_HOMOG_SEED" in os.environ:
        seed_override = int(os.environ["CARNOT_HOMOG_SEED"])
    if seed_override is not None:
        cfg["solver"]["master_seed"] = int(seed_override)
    if out_dir is not None:
        cfg["output"]["dir"] = out_dir
    if workers is None:
        workers = default_workers()

    try:
        g, env, model, scfg = _build_objects(cfg)
    except (GroupError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_SCHEMA

    odir = cfg["output"]["dir"]
    try:
        os.makedirs(odir, exist_ok=True)
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO

    meta = {"config_hash": config_hash(cfg), "master_seed": scfg.master_seed,
            "group": g.name, "env_seed": env.seed}
    task = cfg["task"]["name"]
    try:
        outputs, extra = _RUNNERS[task](cfg, g, env, model, scfg, odir, meta,
                                        workers, plot)
    except SchemaError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except (InfeasibleError, ConnectorError, RangeError) as e:
        print(f"solver infeasibility: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    write_manifest(odir, cfg, outputs, t0, extra)
    if task == "verify" and not extra.get("verify_ok", True):
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="carnot-homog",
        description="Stochastic homogenization lab for Hamilton-Jacobi "
                    "equations on Carnot groups")
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=False,
                    help="JSON config file (defaults applied per schema)")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--seeds", type=int, default=None,
                    help="override task replica count")
    ap.add_argument("--seed", type=int, default=None, help="override master seed")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--plot", action="store_true", help="emit SVG plots")
    args = ap.parse_args(argv)

    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as e:
            print(f"io error: {e}", file=sys.stderr)
            return EXIT_IO
        except json.JSONDecodeError as e:
            print(f"config error: not valid JSON ({e})", file=sys.stderr)
            return EXIT_SCHEMA
    else:
        raw = {"model": {"beta": 2.0}, "task": {"name": args.task}}
    raw.setdefault("task", {})["name"] = args.task
    if args.seeds is not None:
        raw["task"]["n_seeds"] = args.seeds
    return run(raw, out_dir=args.out, workers=args.workers, plot=args.plot,
               seed_override=args.seed)


if __name__ == "__main__":
    sys.exit(main())
