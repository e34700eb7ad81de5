"""Named invariant suites behind the `verify` task.

Each suite runs fixed-seed spot checks at default (small) sizes and returns
a machine-readable {check_name: {"ok": bool, ...detail...}} mapping; the
full pytest suite runs the same properties at acceptance sizes.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import rng
from .environment import (
    Environment,
    ModelParams,
    certify_growth,
    lagrangian,
    legendre_numeric,
    sample_V,
)
from .groups import (
    GroupSpec,
    compose,
    dilate,
    get_group,
    hdist,
    hnorm,
    inverse,
    registered_groups,
    sigma_matrix,
    xline_point,
)
from .paths import Control, cc_bracket, connector_control, integrate
from .solver import ActionProblem, SolverConfig, l_eps, mu_q
from .homogenization import (
    check_midpoint_convexity,
    convex_envelope_grid,
    duality_roundtrip_error,
    estimate_Lbar,
    pl_roundtrip_bound,
)

_SCOPES = ("group", "paths", "env", "solver", "homog", "all")


def _rand_points(g: GroupSpec, n: int, seed: int, scale: float = 2.0) -> np.ndarray:
    u = rng.uniforms(seed, f"verify/{g.name}", 0, n * g.dim)
    return (u.reshape(n, g.dim) - 0.5) * 2.0 * scale


def verify_group(n_cases: int = 300, seed: int = 11) -> dict:
    out = {}
    for name in registered_groups():
        g = get_group(name)
        x = _rand_points(g, n_cases, seed)
        y = _rand_points(g, n_cases, seed + 1)
        z = _rand_points(g, n_cases, seed + 2)
        lam = 0.25 + 2.0 * rng.uniforms(seed + 3, name, 0, n_cases)

        assoc = np.max(np.abs(compose(g, compose(g, x, y), z)
                              - compose(g, x, compose(g, y, z))))
        ident = np.max(np.abs(compose(g, x, np.zeros(g.dim)) - x))
        inv = np.max(np.abs(compose(g, x, inverse(g, x))))
        auto = 0.0
        hom = 0.0
        dist_hom = 0.0
        for l, xi, yi in zip(lam, x, y):
            auto = max(auto, float(np.max(np.abs(
                dilate(g, l, compose(g, xi, yi))
                - compose(g, dilate(g, l, xi), dilate(g, l, yi))))))
            hom = max(hom, abs(float(hnorm(g, dilate(g, l, xi)) - l * hnorm(g, xi))))
            dist_hom = max(dist_hom, abs(float(
                hdist(g, dilate(g, l, xi), dilate(g, l, yi)) - l * hdist(g, xi, yi))))
        inv_norm = float(np.max(np.abs(hnorm(g, x) - hnorm(g, inverse(g, x)))))
        sig = sigma_matrix(g, x)
        block = float(np.max(np.abs(sig[..., : g.rank] - np.eye(g.rank))))
        out[f"{name}/axioms"] = {"ok": max(assoc, ident, inv) < 1e-11,
                                 "assoc": float(assoc), "identity": float(ident),
                                 "inverse": float(inv)}
        out[f"{name}/dilation_automorphism"] = {"ok": auto < 1e-11, "max": auto}
        out[f"{name}/hnorm_homogeneity"] = {"ok": hom < 1e-11 and inv_norm < 1e-11,
                                            "scale": hom, "inverse_sym": inv_norm}
        out[f"{name}/hdist_dilation"] = {"ok": dist_hom < 1e-11, "max": dist_hom}
        out[f"{name}/sigma_block"] = {"ok": block < 1e-12, "max": block}
    return out


def verify_paths(seed: int = 21) -> dict:
    out = {}
    for name in registered_groups():
        g = get_group(name)
        # constant-flow scaling identity
        worst = 0.0
        for k in range(100):
            u = rng.uniforms(seed, f"xline/{name}", 4 * k, 4)
            q = 4.0 * (u[:2] - 0.5)
            C, t = 0.25 + 3 * u[2], 0.25 + 3 * u[3]
            a = xline_point(g, q, C * t)
            b = dilate(g, C, xline_point(g, q, t))
            worst = max(worst, float(np.max(np.abs(a - b)) / (1 + np.max(np.abs(a)))))
        out[f"{name}/xline_scaling"] = {"ok": worst < 1e-12, "rel": worst}

        # exponential consistency: pieces multiply like flow increments
        x = _rand_points(g, 6, seed + 1)
        worst = 0.0
        for xi in x:
            vel = _rand_points(g, 5, seed + 2)[:, : g.rank]
            ctrl = Control(np.full(5, 0.4), vel)
            end = integrate(g, xi, ctrl).endpoint
            acc = xi
            for v in vel:
                acc = compose(g, acc, xline_point(g, v, 0.4))
            worst = max(worst, float(np.max(np.abs(end - acc))))
        out[f"{name}/exp_consistency"] = {"ok": worst < 1e-9, "max": worst}

        # connector exactness and bracket ordering
        worst = 0.0
        ok_order = True
        for k in range(25):
            a = _rand_points(g, 1, seed + 3 + k)[0]
            b = _rand_points(g, 1, seed + 40 + k)[0]
            ctrl = connector_control(g, a, b)
            end = integrate(g, a, ctrl).endpoint
            worst = max(worst, float(np.max(np.abs(end - b))))
            br = cc_bracket(g, a, b, budget=2)
            ok_order = ok_order and br.lower <= br.upper + 1e-12
        out[f"{name}/connector"] = {"ok": worst < 1e-8 and ok_order, "max": worst}

    # sup-norm vs L1 control distance (fitted constant, finite and stable)
    g = get_group("heisenberg1")
    ratios = []
    for k in range(50):
        u = rng.uniforms(seed + 5, "gronwall", 8 * k, 8)
        va = (u[:4].reshape(2, 2) - 0.5) * 4
        vb = (u[4:].reshape(2, 2) - 0.5) * 4
        ca = Control(np.full(2, 0.5), va)
        cb = Control(np.full(2, 0.5), vb)
        pa = integrate(g, np.zeros(3), ca, steps_per_piece=8)
        pb = integrate(g, np.zeros(3), cb, steps_per_piece=8)
        sup = float(np.max(np.linalg.norm(pa.points - pb.points, axis=1)))
        l1 = float(np.sum(np.linalg.norm(va - vb, axis=1) * 0.5))
        if l1 > 1e-9:
            ratios.append(sup / l1)
    fitted = max(ratios)
    out["heisenberg1/supnorm_vs_l1"] = {"ok": math.isfinite(fitted) and fitted < 50,
                                        "fitted_constant": fitted}
    return out


def verify_env(seed: int = 31, n_seeds: int = 400) -> dict:
    from scipy import stats

    out = {}
    env = Environment(kind="product", seed=seed, dim=3, amplitude_v=0.5)
    X = _rand_points(get_group("heisenberg1"), 200, seed, scale=4.0)
    v1 = sample_V(env, X)
    v2 = sample_V(env, X)
    out["purity"] = {"ok": bool(np.array_equal(v1, v2))}
    out["bounds"] = {"ok": bool(np.all(np.abs(v1) <= env.v_max + 1e-12)),
                     "max": float(np.max(np.abs(v1)))}

    g = get_group("heisenberg1")
    x0 = np.array([0.4, -1.1, 0.6])
    v = np.array([1.3, 0.7, -0.4])
    xv = compose(g, x0, v)
    s0 = np.array([sample_V(env.with_seed(s), x0) for s in range(n_seeds)])
    s1 = np.array([sample_V(env.with_seed(s), xv) for s in range(n_seeds)])
    ks = stats.ks_2samp(s0, s1).statistic
    crit = 1.628 * math.sqrt(2.0 / n_seeds)
    out["stationarity_ks"] = {"ok": bool(ks < crit), "statistic": float(ks),
                              "critical_1pct": crit}

    model = ModelParams(beta=2.0)
    ax = [np.linspace(-5, 5, 161)] * 2
    P = np.meshgrid(*ax, indexing="ij")
    f = 0.5 * (P[0] ** 2 + P[1] ** 2)
    lf = float(legendre_numeric(ax, f, [1.0, 1.0]))
    out["legendre_selfdual"] = {"ok": abs(lf - 1.0) < 5e-3, "value": lf}
    envc = Environment(kind="constant", seed=0, dim=3, a0=2.0, v0=0.3, amplitude_v=0)
    lag = float(lagrangian(envc, model, np.zeros(3), [2.0, 0.0]))
    out["lagrangian_closed_form"] = {"ok": abs(lag - 0.7) < 1e-12, "value": lag}
    cert = certify_growth(env, model)
    out["growth_certificate"] = {"ok": cert.C1 > 0 and cert.lam == 2.0,
                                 "C1": cert.C1, "shift": cert.shift}
    return out


def verify_solver(seed: int = 41) -> dict:
    from .solver import check_continuity_estimates

    out = {}
    g = get_group("heisenberg1")
    model = ModelParams(beta=2.0)
    envc = Environment(kind="constant", seed=0, dim=3, a0=1.0, v0=0.0, amplitude_v=0)
    cfg = SolverConfig(master_seed=seed)

    p = ActionProblem(group=g, env=envc, model=model, epsilon=1.0,
                      start=np.zeros(3), target=np.array([1.0, 0.0, 0.0]),
                      t=1.0, n_pieces=8, config=cfg)
    r = l_eps(p)
    out["constant_env_exact"] = {"ok": abs(r.value - 0.5) < 1e-9, "value": r.value}

    env = Environment(kind="product", seed=seed, dim=3, amplitude_v=0.5)
    worst = 0.0
    for y1, y2, t, eps in ((0.5, 0.25, 1.0, 0.5), (1.0, -0.5, 2.0, 0.25)):
        y = np.array([y1, y2, 0.0])
        q = y[:2] / t
        prob = ActionProblem(group=g, env=env, model=model, epsilon=eps,
                             start=np.zeros(3), target=y, t=t, n_pieces=12,
                             config=cfg)
        v1 = l_eps(prob).value
        v2 = eps * mu_q(g, env, model, q, (0.0, t / eps), 12, cfg).value
        worst = max(worst, abs(v1 - v2) / max(abs(v1), 1e-12))
    out["rescaling_identity"] = {"ok": worst < 1e-9, "rel": worst}

    cases = [(np.array([0.8, 0.2, 0.1]), np.zeros(3), 1.0),
             (np.array([-0.4, 0.6, -0.2]), np.array([0.3, 0.0, 0.0]), 1.0)]
    rep = check_continuity_estimates(g, env, model, cases, (1.0, 0.5),
                                     config=SolverConfig(master_seed=seed,
                                                         min_pieces=12))
    out["comparison_inequalities"] = {
        "ok": rep.ok, "n_checked": len(rep.records),
        "violations": [r.name for r in rep.violations],
        "fitted_time_modulus": rep.fitted_time_modulus}
    return out


def verify_homog(seed: int = 51) -> dict:
    out = {}
    g = get_group("heisenberg1")
    model = ModelParams(beta=2.0)
    envc = Environment(kind="constant", seed=0, dim=3, a0=1.0, v0=0.0, amplitude_v=0)
    ax = [np.linspace(-2, 2, 5)] * 2
    tab = estimate_Lbar(g, envc, model, ax, [2.0, 4.0], 2, master_seed=seed,
                        workers=1)
    Q = tab.node_points()
    exact = 0.5 * np.sum(Q ** 2, axis=1).reshape(5, 5)
    err = float(np.max(np.abs(tab.values - exact)))
    out["constant_env_table"] = {"ok": err < 1e-8, "max_err": err}

    rt = duality_roundtrip_error(tab)
    out["duality_roundtrip"] = {"ok": rt <= pl_roundtrip_bound(tab), "err": rt}

    rep = check_midpoint_convexity(tab, g, n_pairs=10, seed=seed)
    decay_ok = all(1.5 < r < 2.5 for r in rep.decay_ratios)
    out["midpoint_convexity"] = {"ok": rep.ok and decay_ok,
                                 "max_gap": rep.max_gap,
                                 "decay_ratios": rep.decay_ratios}

    cvx = convex_envelope_grid(ax, tab.values)
    out["envelope_below"] = {"ok": bool(np.all(cvx <= tab.values + 1e-12))}
    return out


def run_verify(scope: str = "all", workers: int | None = None) -> dict:
    """Run the named invariant suite(s); failures are report content."""
    if scope not in _SCOPES:
        raise ValueError(f"scope must be one of {_SCOPES}")
    t0 = time.time()
    suites = {}
    if scope in ("group", "all"):
        suites["group"] = verify_group()
    if scope in ("paths", "all"):
        suites["paths"] = verify_paths()
    if scope in ("env", "all"):
        suites["env"] = verify_env()
    if scope in ("solver", "all"):
        suites["solver"] = verify_solver()
    if scope in ("homog", "all"):
        suites["homog"] = verify_homog()
    n_fail = sum(1 for s in suites.values() for c in s.values() if not c["ok"])
    return {"scope": scope, "ok": n_fail == 0, "n_failed": n_fail,
            "wall_time_s": round(time.time() - t0, 3), "suites": suites}
