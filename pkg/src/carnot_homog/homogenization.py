"""Effective Lagrangian estimation and the homogenized limit problem.

The effective Lagrangian at slope q is the long-horizon limit of the
per-unit-time constrained minimum between points of the constant-velocity
flow.  It is estimated by Monte-Carlo averaging over environment replicas at
the largest horizon of a doubling ladder, with long-horizon solves seeded by
concatenating the witnesses of the half-horizon solves (the subadditive
structure of the process).  Reported uncertainty is the across-replica
standard error; the drop of the running average between the last two ladder
rungs is reported as the convergence gap.

Downstream of the table: lower convex envelope by a double discrete
Legendre transform, the effective Hamiltonian as the convex conjugate on an
automatically sized dual grid, the homogenized Hopf-Lax solution computed by
the same trajectory solver with the interpolated slope-only Lagrangian, and
rescaling-ladder convergence studies against it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import rng
from .environment import Environment, GrowthCertificate, ModelParams, RangeError
from .groups import GroupSpec, compose, get_group, inverse, pi_m, xline_point
from .paths import connector_on_grid
from .solver import (
    InitialDatum,
    SolverConfig,
    YGridConfig,
    action_of_control,
    certify_growth_cached,
    minimize_action,
    mu_q,
    search_ball_radius,
    u_eps,
    _y_candidates,
)
from .workers import pmap

TABLE_FORMAT = "effective-lagrangian-table/v1"


# ---------------------------------------------------------------------------
# table type
# ---------------------------------------------------------------------------

@dataclass
class EffectiveLagrangianTable:
    """Estimated effective Lagrangian on a rectangular slope grid."""

    axes: list                 # [ax1 (n1,), ax2 (n2,)]
    values: np.ndarray         # (n1, n2) mean over replicas at T_max
    stderr: np.ndarray         # (n1, n2)
    values_by_T: np.ndarray    # (n_ladder, n1, n2) per-unit-time means
    stderr_by_T: np.ndarray    # (n_ladder, n1, n2)
    gap: np.ndarray            # (n1, n2): |mean(T_max) - mean(T_max/2)|
    T_ladder: list
    n_seeds: int
    meta: dict
    values_convex: Optional[np.ndarray] = None

    def node_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def convexified(self) -> np.ndarray:
        if self.values_convex is None:
            self.values_convex = convex_envelope_grid(self.axes, self.values)
        return self.values_convex

    def save(self, path: str) -> None:
        doc = {
            "format": TABLE_FORMAT,
            "axes": [np.asarray(a).tolist() for a in self.axes],
            "values": self.values.tolist(),
            "stderr": self.stderr.tolist(),
            "values_by_T": self.values_by_T.tolist(),
            "stderr_by_T": self.stderr_by_T.tolist(),
            "gap": self.gap.tolist(),
            "T_ladder": list(self.T_ladder),
            "n_seeds": self.n_seeds,
            "meta": self.meta,
            "values_convex": None if self.values_convex is None
            else self.convexified().tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)

    @staticmethod
    def load(path: str) -> "EffectiveLagrangianTable":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != TABLE_FORMAT:
            raise ValueError(f"unsupported table format {doc.get('format')!r}")
        return EffectiveLagrangianTable(
            axes=[np.asarray(a) for a in doc["axes"]],
            values=np.asarray(doc["values"]),
            stderr=np.asarray(doc["stderr"]),
            values_by_T=np.asarray(doc["values_by_T"]),
            stderr_by_T=np.asarray(doc["stderr_by_T"]),
            gap=np.asarray(doc["gap"]),
            T_ladder=doc["T_ladder"],
            n_seeds=doc["n_seeds"],
            meta=doc["meta"],
            values_convex=None if doc["values_convex"] is None
            else np.asarray(doc["values_convex"]),
        )


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

def _lbar_chain_task(args) -> tuple:
    """One (node, replica): chained constrained solves along the horizon ladder."""
    (group_name, env_cfg, model_cfg, q, T_ladder, pieces_per_unit, cfg_kw) = args
    g = get_group(group_name)
    env = Environment(**env_cfg)
    model = ModelParams(**model_cfg)
    cfg = SolverConfig(**cfg_kw)
    q = np.asarray(q, dtype=float)

    values = []
    prev_ctrl: Optional[np.ndarray] = None
    prev_T = 0.0
    for T in T_ladder:
        n = max(4, int(round(pieces_per_unit * T)))
        warm = []
        if prev_ctrl is not None and T == 2 * prev_T:
            # second half on [T/2, T), then concatenate the two witnesses
            n_half = prev_ctrl.shape[0]
            res_b = mu_q(g, env, model, q, (prev_T, T), n_half, cfg)
            warm = [np.vstack([prev_ctrl, res_b.control.velocities])]
            n = 2 * n_half
        res = mu_q(g, env, model, q, (0.0, T), n, cfg, warm_controls=warm)
        values.append(res.value / T)
        prev_ctrl = res.control.velocities
        prev_T = T
    return values


def estimate_Lbar(g: GroupSpec, env: Environment, model: ModelParams,
                  q_axes: Sequence[np.ndarray], T_ladder: Sequence[float],
                  n_seeds: int, config: SolverConfig = SolverConfig(),
                  pieces_per_unit: float = 3.0,
                  master_seed: int = 0, workers: Optional[int] = None,
                  ) -> EffectiveLagrangianTable:
    """Monte-Carlo table of the effective Lagrangian on a slope grid.

    Per node: the mean over ``n_seeds`` environment replicas of the
    per-unit-time constrained minimum at the largest horizon; the ladder must
    be doubling so each solve can be seeded with the concatenation of its
    half-horizon witnesses.
    """
    if n_seeds < 2:
        raise ValueError("need at least two replicas for an uncertainty estimate")
    T_ladder = [float(T) for T in T_ladder]
    if any(T2 != 2 * T1 for T1, T2 in zip(T_ladder, T_ladder[1:])):
        raise ValueError("the horizon ladder must double at each rung")
    axes = [np.asarray(a, dtype=float) for a in q_axes]
    nodes = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    cfg_chain = replace(config, multi_starts=min(config.multi_starts, 2))

    tasks = []
    for k in range(n_seeds):
        env_k = env.with_seed(rng.derive_seed(master_seed, "lbar-replica", k)
                              ^ env.seed)
        for node in nodes:
            tasks.append((g.name, env_k.to_config(), model.to_config(),
                          tuple(node), tuple(T_ladder), pieces_per_unit,
                          cfg_chain.__dict__))
    out = pmap(_lbar_chain_task, tasks, workers)

    shape = tuple(len(a) for a in axes)
    per = np.asarray(out, dtype=float).reshape(n_seeds, nodes.shape[0], len(T_ladder))
    mean_T = per.mean(axis=0)                     # (n_nodes, n_ladder)
    se_T = per.std(axis=0, ddof=1) / math.sqrt(n_seeds)
    values = mean_T[:, -1].reshape(shape)
    stderr = se_T[:, -1].reshape(shape)
    gap = np.abs(mean_T[:, -1] - mean_T[:, -2]).reshape(shape) if len(T_ladder) > 1 \
        else np.zeros(shape)
    meta = {
        "group": g.name,
        "environment": env.to_config(),
        "model": model.to_config(),
        "master_seed": int(master_seed),
        "pieces_per_unit": pieces_per_unit,
        "solver": {k: v for k, v in config.__dict__.items()},
    }
    return EffectiveLagrangianTable(
        axes=axes, values=values, stderr=stderr,
        values_by_T=mean_T.T.reshape((len(T_ladder),) + shape),
        stderr_by_T=se_T.T.reshape((len(T_ladder),) + shape),
        gap=gap, T_ladder=T_ladder, n_seeds=n_seeds, meta=meta)


# ---------------------------------------------------------------------------
# convex envelope and conjugation on grids
# ---------------------------------------------------------------------------

def _slope_axes(axes, values, n_mult: int = 2, pad: float = 1e-6):
    """Slope ranges resolved by the grid, from one-sided finite differences."""
    out = []
    for d, ax in enumerate(axes):
        fd = np.diff(values, axis=d) / np.diff(ax)[
            (slice(None),) + (None,) * (values.ndim - d - 1)]
        lo, hi = float(np.min(fd)), float(np.max(fd))
        span = max(hi - lo, pad)
        n = n_mult * len(ax) + 1
        out.append(np.linspace(lo - pad * span, hi + pad * span, n))
    return out


def _conjugate_grid(p_axes, q_axes, f_vals) -> np.ndarray:
    """f*(p) = max_q (p.q - f(q)) for all p on a rectangular grid (m <= 2)."""
    Q = np.stack([m.ravel() for m in np.meshgrid(*q_axes, indexing="ij")], axis=-1)
    P = np.stack([m.ravel() for m in np.meshgrid(*p_axes, indexing="ij")], axis=-1)
    scores = P @ Q.T - f_vals.ravel()[None, :]
    return scores.max(axis=1).reshape(tuple(len(a) for a in p_axes))


def convex_envelope_grid(axes, values) -> np.ndarray:
    """Lower convex envelope of grid samples via a double conjugate.

    The intermediate slope grid is sized from the discrete gradients, so the
    envelope is exact on the resolved slope range and idempotent.
    """
    values = np.asarray(values, dtype=float)
    s_axes = _slope_axes(axes, values)
    fstar = _conjugate_grid(s_axes, axes, values)
    fss = _conjugate_grid(axes, s_axes, fstar)
    return np.minimum(fss, values)


def effective_hamiltonian(table: EffectiveLagrangianTable,
                          p_axes: Optional[list] = None,
                          shrink: float = 0.95):
    """Convex conjugate of the convexified table on a dual slope grid.

    Returns (p_axes, H values).  The automatic dual grid covers the slopes
    resolved by the table shrunk by ``shrink`` so that every maximizer is
    interior; a user grid that exceeds the resolved slope range raises
    :class:`RangeError`.
    """
    fc = table.convexified()
    resolved = _slope_axes(table.axes, fc, n_mult=2, pad=0.0)
    if p_axes is None:
        p_axes = [np.linspace(shrink * ax[0], shrink * ax[-1], len(ax))
                  for ax in resolved]
    else:
        p_axes = [np.asarray(a, dtype=float) for a in p_axes]
        for pa, ra in zip(p_axes, resolved):
            if pa[0] < ra[0] - 1e-12 or pa[-1] > ra[-1] + 1e-12:
                raise RangeError(
                    "requested dual grid exceeds the slope range resolved by the table")
    H = _conjugate_grid(p_axes, table.axes, fc)
    return p_axes, H


def duality_roundtrip_error(table: EffectiveLagrangianTable) -> float:
    """max |(L*)* - L_convex| on the table grid.

    The intermediate conjugate lives on the full resolved slope range
    (including the one-sided boundary slopes), so the double conjugate
    reproduces the convexified node values up to the piecewise-linear
    resolution of the dual grid; on convex-position data the supporting
    slopes are grid slopes and the round trip is exact to rounding.
    """
    fc = table.convexified()
    p_axes, H = effective_hamiltonian(table, shrink=1.0)
    back = _conjugate_grid(table.axes, p_axes, H)
    return float(np.max(np.abs(back - fc)))


def pl_roundtrip_bound(table: EffectiveLagrangianTable) -> float:
    """Resolution bound for the duality round trip on the table grid."""
    fc = table.convexified()
    scale = 1.0 + float(np.max(np.abs(fc)))
    bound = 1e-8 * scale
    for qa in table.axes:
        # one dual cell of slope resolution across one primal cell
        fd_res = float(np.max(np.diff(qa))) ** 2
        bound += 0.25 * fd_res
    return bound


# ---------------------------------------------------------------------------
# interpolated slope-only Lagrangian for the limit problem
# ---------------------------------------------------------------------------

class TableLagrangian:
    """Piecewise-linear interpolant of a convexified table, slope-only.

    The rectangular cells are split along the main diagonal; outside the
    grid box the interpolant continues linearly with the boundary gradient,
    preserving convexity along rays (the minimizers of interest stay inside).
    """

    x_independent = True

    def __init__(self, axes, values):
        if len(axes) != 2:
            raise ValueError("slope-only interpolation implemented for rank 2")
        self.ax1 = np.asarray(axes[0], dtype=float)
        self.ax2 = np.asarray(axes[1], dtype=float)
        self.vals = np.asarray(values, dtype=float)
        self.beta_star = 2.0     # only used for candidate scaling heuristics

    def _locate(self, A):
        a1 = np.clip(A[:, 0], self.ax1[0], self.ax1[-1])
        a2 = np.clip(A[:, 1], self.ax2[0], self.ax2[-1])
        i = np.clip(np.searchsorted(self.ax1, a1, side="right") - 1, 0,
                    len(self.ax1) - 2)
        j = np.clip(np.searchsorted(self.ax2, a2, side="right") - 1, 0,
                    len(self.ax2) - 2)
        return a1, a2, i, j

    def interp(self, A: np.ndarray, want_grad: bool):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        a1, a2, i, j = self._locate(A)
        x0, x1 = self.ax1[i], self.ax1[i + 1]
        y0, y1 = self.ax2[j], self.ax2[j + 1]
        u = (a1 - x0) / (x1 - x0)
        v = (a2 - y0) / (y1 - y0)
        f00 = self.vals[i, j]
        f10 = self.vals[i + 1, j]
        f01 = self.vals[i, j + 1]
        f11 = self.vals[i + 1, j + 1]
        lower = u + v <= 1.0
        # triangle (0,0)-(1,0)-(0,1):  f00 + u (f10-f00) + v (f01-f00)
        # triangle (1,1)-(1,0)-(0,1):  f11 + (1-u)(f01-f11) + (1-v)(f10-f11)
        val_lo = f00 + u * (f10 - f00) + v * (f01 - f00)
        val_hi = f11 + (1.0 - u) * (f01 - f11) + (1.0 - v) * (f10 - f11)
        val = np.where(lower, val_lo, val_hi)
        g1 = np.where(lower, (f10 - f00), (f11 - f01)) / (x1 - x0)
        g2 = np.where(lower, (f01 - f00), (f11 - f10)) / (y1 - y0)
        # linear continuation outside the box
        out1 = A[:, 0] - a1
        out2 = A[:, 1] - a2
        val = val + g1 * out1 + g2 * out2
        if want_grad:
            return val, np.stack([g1, g2], axis=-1)
        return val, None

    def eval(self, X: np.ndarray, A: np.ndarray, want_grad: bool):
        val, dA = self.interp(A, want_grad)
        return val, None, dA


def constrained_limit_value(table: EffectiveLagrangianTable, g: GroupSpec,
                            x, y, t: float) -> float:
    """Closed form t * Lbar(pi_m(y^-1 o x) / t) for plane-compatible endpoints."""
    q = pi_m(g, compose(g, inverse(g, y), x)) / t
    lag = TableLagrangian(table.axes, table.convexified())
    val, _ = lag.interp(np.asarray([q]), False)
    return float(t * val[0])


# ---------------------------------------------------------------------------
# homogenized Hopf-Lax solution
# ---------------------------------------------------------------------------

@dataclass
class LimitSolution:
    eval_grid: list            # [(t, x), ...]
    values: np.ndarray
    witnesses: list            # best initial point per evaluation
    meta: dict


def _limit_value_task(args) -> tuple:
    (group_name, axes1, axes2, vals, t, x, g_tag, g_cap, cert_kw, cfg_kw,
     ycfg_kw, pieces_per_unit) = args
    g = get_group(group_name)
    lag = TableLagrangian([np.asarray(axes1), np.asarray(axes2)], np.asarray(vals))
    cfg = SolverConfig(**cfg_kw)
    ycfg = YGridConfig(**ycfg_kw)
    cert = GrowthCertificate(**cert_kw)
    x = np.asarray(x, dtype=float)
    t = float(t)
    g_datum = _resolve_datum(g, g_tag, g_cap)
    n = max(cfg.min_pieces, int(math.ceil(pieces_per_unit * t)))
    durations = np.full(n, t / n)

    radius = search_ball_radius(cert, g_datum.bound, t)
    ys = np.vstack([_y_candidates(g, x, radius, ycfg), x[None, :]])
    gvals = g_datum(ys)
    proxy = np.empty(ys.shape[0])
    for i in range(ys.shape[0]):
        vel = connector_on_grid(g, ys[i], x, durations, budget=1)
        proxy[i] = np.inf if vel is None else gvals[i] + action_of_control(
            g, lag, ys[i], durations, vel)
    order = np.argsort(proxy, kind="stable")
    cheap = cfg.coarse()
    best_v, best_y = np.inf, None
    for idx in order[: ycfg.top_k]:
        core = minimize_action(g, lag, ys[idx], x, durations, cheap,
                               seed=cfg.master_seed)
        v = gvals[idx] + core.value
        if v < best_v:
            best_v, best_y = v, ys[idx]
    core = minimize_action(g, lag, best_y, x, durations, cfg, seed=cfg.master_seed)
    return float(g_datum(best_y) + core.value), best_y.tolist()


_DATUM_REGISTRY: dict = {}


def _resolve_datum(g: GroupSpec, tag: str, cap: float) -> InitialDatum:
    from .solver import horizontal_min_datum

    if tag == "horizontal-min":
        return horizontal_min_datum(g, cap)
    if tag == "constant":
        return InitialDatum(fn=lambda Y: np.full(Y.shape[0], cap), bound=abs(cap),
                            lipschitz=0.0)
    if tag in _DATUM_REGISTRY:
        return _DATUM_REGISTRY[tag]
    raise ValueError(f"unknown initial datum tag {tag!r}")


def register_datum(tag: str, datum: InitialDatum) -> None:
    _DATUM_REGISTRY[tag] = datum


def solve_limit(table: EffectiveLagrangianTable, g: GroupSpec, g_tag: str,
                g_cap: float, eval_grid: Sequence[tuple],
                config: SolverConfig = SolverConfig(),
                certificate: Optional[GrowthCertificate] = None,
                ycfg: YGridConfig = YGridConfig(),
                pieces_per_unit: float = 4.0,
                workers: Optional[int] = None) -> LimitSolution:
    """Hopf-Lax evaluation of the homogenized solution on (t, x) pairs.

    The inner problem runs the trajectory solver with the slope-only
    interpolated effective Lagrangian; the outer infimum is searched on the
    certified ball exactly as for the rescaled value function.
    """
    fc = table.convexified()
    if certificate is None:
        certificate = GrowthCertificate(C1=2.0, lam=2.0)
    tasks = [(g.name, table.axes[0].tolist(), table.axes[1].tolist(), fc.tolist(),
              float(t), np.asarray(x, float).tolist(), g_tag, g_cap,
              certificate.to_config(), config.__dict__, ycfg.__dict__,
              pieces_per_unit)
             for (t, x) in eval_grid]
    out = pmap(_limit_value_task, tasks, workers)
    return LimitSolution(
        eval_grid=[(float(t), np.asarray(x, float)) for (t, x) in eval_grid],
        values=np.asarray([v for v, _ in out]),
        witnesses=[np.asarray(w) for _, w in out],
        meta={"table_meta": table.meta, "g_datum": g_tag, "g_cap": g_cap})


# ---------------------------------------------------------------------------
# midpoint convexity
# ---------------------------------------------------------------------------

@dataclass
class ConvexityReport:
    n_pairs: int
    violations: list           # (pair, excess) beyond 3 sigma + slack
    max_gap: float             # most negative convexity margin observed
    path_defects: dict         # n -> |xi_n(1) - midpoint target|
    decay_ratios: list

    @property
    def ok(self) -> bool:
        return not self.violations


def midpoint_path_defect(g: GroupSpec, p, q, n: int) -> float:
    """Euclidean gap between the alternating p/q path and the midpoint flow.

    The path switches velocity between p and q on 2n equal subintervals of
    [0, 1]; its endpoint approaches the unit-time constant-velocity point of
    (p+q)/2 at first order in 1/n.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    x = g.identity()
    h = 1.0 / (2 * n)
    for i in range(1, 2 * n + 1):
        vel = p if i % 2 == 0 else q
        x = compose(g, x, xline_point(g, vel, h))
    target = xline_point(g, (p + q) / 2.0, 1.0)
    return float(np.linalg.norm(x - target))


def check_midpoint_convexity(table: EffectiveLagrangianTable, g: GroupSpec,
                             n_pairs: int = 30, seed: int = 0,
                             slack: float = 0.0,
                             path_ns: Sequence[int] = (4, 8, 16)) -> ConvexityReport:
    """Check Lbar((p+q)/2) <= (Lbar(p) + Lbar(q))/2 within noise on node pairs.

    Pairs are drawn with componentwise even index sums so the midpoint is a
    grid node; the allowance is three combined standard errors plus ``slack``.
    Also verifies the first-order approach of the alternating-velocity path
    to the midpoint flow target.
    """
    n1, n2 = (len(a) for a in table.axes)
    vals = table.values
    se = table.stderr
    u = rng.uniform(seed, "convexity-pairs", np.arange(4 * n_pairs * 8))
    picks = (u.reshape(-1, 4) * [n1, n2, n1, n2]).astype(int)
    seen = set()
    pairs = []
    for i1, j1, i2, j2 in picks:
        if (i1 + i2) % 2 or (j1 + j2) % 2 or (i1 == i2 and j1 == j2):
            continue
        key = (min((i1, j1), (i2, j2)), max((i1, j1), (i2, j2)))
        if key in seen:
            continue
        seen.add(key)
        pairs.append((i1, j1, i2, j2))
        if len(pairs) == n_pairs:
            break

    violations = []
    max_gap = -np.inf
    for i1, j1, i2, j2 in pairs:
        im, jm = (i1 + i2) // 2, (j1 + j2) // 2
        lhs = vals[im, jm]
        rhs = 0.5 * (vals[i1, j1] + vals[i2, j2])
        sigma = math.sqrt(se[im, jm] ** 2 + 0.25 * (se[i1, j1] ** 2 + se[i2, j2] ** 2))
        margin = lhs - rhs
        max_gap = max(max_gap, margin)
        if margin > 3.0 * sigma + slack:
            violations.append(((i1, j1, i2, j2), float(margin - 3.0 * sigma - slack)))

    # a non-commuting, non-antipodal velocity pair from the grid corners
    p = np.asarray([table.axes[0][-1], 0.5 * table.axes[1][0]])
    q = np.asarray([0.25 * table.axes[0][0], table.axes[1][-1]])
    defects = {n: midpoint_path_defect(g, p, q, n) for n in path_ns}
    ratios = [defects[a] / defects[b] for a, b in zip(path_ns, path_ns[1:])
              if defects[b] > 0]
    return ConvexityReport(n_pairs=len(pairs), violations=violations,
                           max_gap=float(max_gap), path_defects=defects,
                           decay_ratios=ratios)


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------

@dataclass
class StudyReport:
    eps_ladder: list
    eval_grid: list
    u_values: np.ndarray       # (n_seeds, n_eps, n_points)
    ubar_values: np.ndarray    # (n_points,)
    D: np.ndarray              # (n_eps,): seed mean of max-over-grid gap
    D_per_seed: np.ndarray     # (n_seeds, n_eps)
    trend_ok: bool
    meta: dict


def _study_point_task(args) -> list:
    (group_name, env_cfg, model_cfg, eps_ladder, t, x, g_tag, g_cap,
     n_per_unit, cfg_kw, ycfg_kw, cert_kw) = args
    g = get_group(group_name)
    env = Environment(**env_cfg)
    model = ModelParams(**model_cfg)
    cfg = SolverConfig(**cfg_kw)
    ycfg = YGridConfig(**ycfg_kw)
    cert = GrowthCertificate(**cert_kw)
    datum = _resolve_datum(g, g_tag, g_cap)
    x = np.asarray(x, dtype=float)
    vals = []
    hint = None
    for eps in eps_ladder:
        n = max(cfg.min_pieces, int(math.ceil(n_per_unit * t / eps)))
        res = u_eps(g, env, model, float(eps), float(t), x, datum, n,
                    config=cfg, certificate=cert, ycfg=ycfg, y_hint=hint)
        hint = res.y_best
        vals.append(res.value)
    return vals


def convergence_study(g: GroupSpec, env: Environment, model: ModelParams,
                      g_tag: str, g_cap: float,
                      eps_ladder: Sequence[float], eval_grid: Sequence[tuple],
                      n_seeds: int, table: EffectiveLagrangianTable,
                      config: SolverConfig = SolverConfig(),
                      ycfg: YGridConfig = YGridConfig(),
                      pieces_per_unit: float = 3.0,
                      master_seed: int = 0,
                      trend_slack: float = 0.10,
                      workers: Optional[int] = None) -> StudyReport:
    """Gap between the rescaled value function and the homogenized solution
    along a decreasing rescaling ladder, seed-averaged.

    No rate is asserted: the deliverable is the ladder itself plus a
    non-increasing-within-slack verdict on the seed-averaged gaps.
    """
    eps_ladder = [float(e) for e in eps_ladder]
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise ValueError("the rescaling ladder must decrease")
    cert = certify_growth_cached(env, model)
    ubar = solve_limit(table, g, g_tag, g_cap, eval_grid, config=config,
                       certificate=cert, ycfg=ycfg,
                       pieces_per_unit=max(pieces_per_unit, 4.0),
                       workers=workers)

    tasks = []
    for k in range(n_seeds):
        env_k = env.with_seed(rng.derive_seed(master_seed, "study-replica", k)
                              ^ env.seed)
        for (t, x) in eval_grid:
            tasks.append((g.name, env_k.to_config(), model.to_config(),
                          tuple(eps_ladder), float(t),
                          np.asarray(x, float).tolist(), g_tag, g_cap,
                          pieces_per_unit, config.__dict__, ycfg.__dict__,
                          cert.to_config()))
    out = pmap(_study_point_task, tasks, workers)
    n_pts = len(eval_grid)
    u_vals = np.asarray(out, dtype=float).reshape(n_seeds, n_pts, len(eps_ladder))
    u_vals = np.transpose(u_vals, (0, 2, 1))          # (seeds, eps, points)
    gaps = np.abs(u_vals - ubar.values[None, None, :])
    D_per_seed = gaps.max(axis=2)                     # (seeds, eps)
    D = D_per_seed.mean(axis=0)
    trend_ok = bool(np.all(D[1:] <= D[:-1] * (1.0 + trend_slack) + 1e-12))
    return StudyReport(eps_ladder=eps_ladder,
                       eval_grid=[(float(t), np.asarray(x, float)) for t, x in eval_grid],
                       u_values=u_vals, ubar_values=ubar.values,
                       D=D, D_per_seed=D_per_seed, trend_ok=trend_ok,
                       meta={"n_seeds": n_seeds, "master_seed": master_seed,
                             "environment": env.to_config(),
                             "model": model.to_config(),
                             "table_meta": table.meta, "g_datum": g_tag})
