"""Seeded stationary-ergodic coefficient fields and the model Hamiltonian.

An :class:`Environment` supplies the random coefficients a(x, omega) and
V(x, omega); omega is played by a 64-bit seed and sampling is a pure function
of (seed, x), so replicas regenerate identically on any worker.

Field kinds
-----------
``constant``
    a = a0, V = v0 everywhere.
``product``
    V(x) = amp * tanh(f_1(x_1) + ... + f_N(x_N)) with independent 1-D factor
    fields; every f_i is a sum of compactly supported smooth bumps placed at
    Poisson points, generated window-free by counter hashing.  Independence
    plus 1-D stationarity make the field stationary under the group
    translations (and in particular the single-point law is position
    independent, which the KS checks exercise).  Short bump support gives
    short correlations, hence ergodicity.
``cells``
    An i.i.d. hashed value per integer cell of the coordinate lattice,
    mollified by smoothstep interpolation of the cell-corner values;
    stationary along the discrete translation subgroup.

The model Hamiltonian is H(x, q) = a(x) |q|^beta / beta + V(x); its exact
convex dual in q is L(x, q) = b(x) |q|^(beta*) / beta* - V(x) with
b = a^(-1/(beta-1)) and 1/beta + 1/beta* = 1.  A numeric grid transform
provides the independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng

_BUMP_POINTS_MAX = 12


class RangeError(ValueError):
    """Requested slope is outside the range resolved by the sampling grid."""


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Environment:
    """A coefficient field realization, fully determined by (kind, seed, params)."""

    kind: str                    # constant | product | cells
    seed: int
    dim: int                     # N of the ambient group
    a0: float = 1.0
    v0: float = 0.0
    amplitude_a: float = 0.0
    amplitude_v: float = 0.5
    bump_density: float = 1.5
    bump_width: float = 0.8
    cell_size: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "product", "cells"):
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.a0 - self.amplitude_a <= 0:
            raise ValueError("a must stay strictly positive: need a0 > amplitude_a")
        if self.kind != "constant" and not (0 < self.bump_width <= 1.0):
            raise ValueError("bump_width must lie in (0, 1]")

    # declared bounds

    @property
    def a_min(self) -> float:
        return self.a0 - self.amplitude_a

    @property
    def a_max(self) -> float:
        return self.a0 + self.amplitude_a

    @property
    def v_max(self) -> float:
        if self.kind == "constant":
            return abs(self.v0)
        return abs(self.v0) + self.amplitude_v

    def lipschitz_euclidean(self) -> float:
        """Analytic Lipschitz bound of (a, V) in the Euclidean metric."""
        if self.kind == "constant":
            return 0.0
        if self.kind == "product":
            # bump slope 1.72/width, <= 3 cells x _BUMP_POINTS_MAX bumps, tanh' <= 1
            per_field = 3 * _BUMP_POINTS_MAX * 1.72 / self.bump_width
            return max(self.amplitude_v, self.amplitude_a) * per_field
        return max(self.amplitude_v, self.amplitude_a) * 1.5 * 2 * self.dim / self.cell_size

    def to_config(self) -> dict:
        return {
            "kind": self.kind, "seed": int(self.seed), "dim": self.dim,
            "a0": self.a0, "v0": self.v0,
            "amplitude_a": self.amplitude_a, "amplitude_v": self.amplitude_v,
            "bump_density": self.bump_density, "bump_width": self.bump_width,
            "cell_size": self.cell_size,
        }

    def with_seed(self, seed: int) -> "Environment":
        return Environment(**{**self.to_config(), "seed": int(seed)})


def environment_from_config(cfg: dict) -> Environment:
    return Environment(**cfg)


# ---------------------------------------------------------------------------
# field sampling
# ---------------------------------------------------------------------------

def _bump(u: np.ndarray) -> np.ndarray:
    """C^2 bump (1-u^2)^3 on |u| < 1."""
    w = np.maximum(0.0, 1.0 - u * u)
    return w * w * w


def _bump_d(u: np.ndarray) -> np.ndarray:
    w = np.maximum(0.0, 1.0 - u * u)
    return -6.0 * u * w * w


_FIELD_CACHE: dict = {}
_FIELD_CACHE_LIMIT = 200_000


def _cell_bumps(seed: int, tag: str, density: float, cells: np.ndarray):
    """Bump positions/amplitudes per lattice cell, memoized.

    Amplitudes of unused point slots are zeroed so evaluation needs no count
    mask.  The cache is per process and purely derived data, so worker
    processes rebuild it identically on demand.
    """
    key = (seed, tag, density)
    cache = _FIELD_CACHE.get(key)
    if cache is None:
        if len(_FIELD_CACHE) > 64:
            _FIELD_CACHE.clear()
        cache = _FIELD_CACHE[key] = {}
    elif len(cache) > _FIELD_CACHE_LIMIT:
        cache.clear()
    missing = [int(u) for u in np.unique(cells) if int(u) not in cache]
    if missing:
        mu = np.array(missing, dtype=np.int64)
        muu = mu.view(np.uint64)
        J = _BUMP_POINTS_MAX
        counts = rng.poisson(seed, tag + "/n", muu, density, kmax=J)
        ctr = (muu[:, None] * np.uint64(J) + np.arange(J, dtype=np.uint64)).ravel()
        pos = mu[:, None] + rng.uniform(seed, tag + "/p", ctr).reshape(-1, J)
        amp = 2.0 * rng.uniform(seed, tag + "/a", ctr).reshape(-1, J) - 1.0
        amp[np.arange(J)[None, :] >= counts[:, None]] = 0.0
        for i, u in enumerate(missing):
            cache[u] = (pos[i], amp[i])
    return cache


def _factor_field(seed: int, tag: str, t: np.ndarray, density: float, width: float,
                  want_grad: bool):
    """1-D stationary bump field at positions t, with optional derivative."""
    t = np.asarray(t, dtype=float)
    K = t.shape[0]
    J = _BUMP_POINTS_MAX
    c = (np.floor(t).astype(np.int64)[:, None] + np.array([-1, 0, 1])).ravel()
    cache = _cell_bumps(seed, tag, density, c)
    pos = np.empty((K * 3, J))
    amp = np.empty((K * 3, J))
    for u in np.unique(c):
        p_, a_ = cache[int(u)]
        mask = c == u
        pos[mask] = p_
        amp[mask] = a_
    u_arg = (t[:, None, None] - pos.reshape(K, 3, J)) / width
    w = np.maximum(0.0, 1.0 - u_arg * u_arg)
    aw2 = amp.reshape(K, 3, J) * w * w
    val = np.einsum("kij->k", aw2 * w)
    grad = None
    if want_grad:
        grad = np.einsum("kij->k", aw2 * (-6.0 * u_arg)) / width
    return val, grad


def _smoothstep(u: np.ndarray) -> np.ndarray:
    return u * u * (3.0 - 2.0 * u)


def _smoothstep_d(u: np.ndarray) -> np.ndarray:
    return 6.0 * u * (1.0 - u)


def _cells_field(seed: int, tag: str, X: np.ndarray, cell: float, want_grad: bool):
    """Smoothstep interpolation of i.i.d. hashed corner values in [-1, 1]."""
    Y = X / cell
    base = np.floor(Y).astype(np.int64)
    frac = Y - base
    s = _smoothstep(frac)
    ds = _smoothstep_d(frac) / cell
    K, N = X.shape
    val = np.zeros(K)
    grad = np.zeros((K, N)) if want_grad else None
    for corner in range(1 << N):
        bits = np.array([(corner >> i) & 1 for i in range(N)], dtype=np.int64)
        h = rng.hash_ints(seed, tag, base + bits)
        hval = 2.0 * ((h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))) - 1.0
        w = np.ones(K)
        for i in range(N):
            w = w * (s[:, i] if bits[i] else (1.0 - s[:, i]))
        val += hval * w
        if want_grad:
            for i in range(N):
                wi = hval.copy()
                for jdim in range(N):
                    if jdim == i:
                        wi = wi * (ds[:, i] if bits[i] else -ds[:, i])
                    else:
                        wi = wi * (s[:, jdim] if bits[jdim] else (1.0 - s[:, jdim]))
                grad[:, i] += wi
    return val, grad


def _raw_field(env: Environment, tag: str, X: np.ndarray, want_grad: bool):
    """Bounded field in [-1, 1] with optional gradient, shape (K,), (K, N)."""
    K, N = X.shape
    if env.kind == "product":
        tot = np.zeros(K)
        grads = np.zeros((K, N)) if want_grad else None
        for i in range(N):
            v, g = _factor_field(env.seed, f"{tag}/f{i}", X[:, i],
                                 env.bump_density, env.bump_width, want_grad)
            tot += v
            if want_grad:
                grads[:, i] = g
        val = np.tanh(tot)
        if want_grad:
            grads = grads * (1.0 - val * val)[:, None]
        return val, grads
    if env.kind == "cells":
        return _cells_field(env.seed, tag, X, env.cell_size, want_grad)
    raise AssertionError(env.kind)


def _as_points(env: Environment, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[-1] != env.dim:
        raise ValueError(f"points have dimension {X.shape[-1]}, environment has {env.dim}")
    return X, single


def sample_V(env: Environment, x) -> np.ndarray:
    """Potential V at x; deterministic in (seed, x), |V| <= v_max."""
    X, single = _as_points(env, x)
    if env.kind == "constant":
        out = np.full(X.shape[0], env.v0)
    else:
        raw, _ = _raw_field(env, "V", X, False)
        out = env.v0 + env.amplitude_v * raw
    return out[0] if single else out


def sample_a(env: Environment, x) -> np.ndarray:
    """Diffusion coefficient a at x; in [a_min, a_max], strictly positive."""
    X, single = _as_points(env, x)
    if env.kind == "constant" or env.amplitude_a == 0.0:
        out = np.full(X.shape[0], env.a0)
    else:
        raw, _ = _raw_field(env, "a", X, False)
        out = env.a0 + env.amplitude_a * raw
    return out[0] if single else out


def sample_aV_grad(env: Environment, X: np.ndarray):
    """(a, V, da, dV) at points X of shape (K, N); gradients are Euclidean."""
    K, N = X.shape
    if env.kind == "constant":
        return (np.full(K, env.a0), np.full(K, env.v0),
                np.zeros((K, N)), np.zeros((K, N)))
    rawV, dV = _raw_field(env, "V", X, True)
    V = env.v0 + env.amplitude_v * rawV
    dV = env.amplitude_v * dV
    if env.amplitude_a == 0.0:
        return np.full(K, env.a0), V, np.zeros((K, N)), dV
    rawA, dA = _raw_field(env, "a", X, True)
    return env.a0 + env.amplitude_a * rawA, V, env.amplitude_a * dA, dV


# ---------------------------------------------------------------------------
# model Hamiltonian / Lagrangian
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Power-law model H = a |q|^beta / beta + V."""

    beta: float = 2.0

    def __post_init__(self):
        if self.beta <= 1.0:
            raise ValueError("beta must exceed 1")

    @property
    def beta_star(self) -> float:
        return self.beta / (self.beta - 1.0)

    def to_config(self) -> dict:
        return {"beta": self.beta}


def hamiltonian(env: Environment, model: ModelParams, x, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    a = sample_a(env, x)
    V = sample_V(env, x)
    return a * np.linalg.norm(q, axis=-1) ** model.beta / model.beta + V


def lagrangian(env: Environment, model: ModelParams, x, q) -> np.ndarray:
    """Exact convex dual of the model in q: b |q|^beta* / beta* - V."""
    q = np.asarray(q, dtype=float)
    a = sample_a(env, x)
    V = sample_V(env, x)
    b = a ** (-1.0 / (model.beta - 1.0))
    return b * np.linalg.norm(q, axis=-1) ** model.beta_star / model.beta_star - V


def lagrangian_terms(env: Environment, model: ModelParams, X: np.ndarray):
    """(b, V) at path points, for action quadrature."""
    a = sample_a(env, X)
    return a ** (-1.0 / (model.beta - 1.0)), sample_V(env, X)


def lagrangian_terms_grad(env: Environment, model: ModelParams, X: np.ndarray):
    """(b, V, db, dV) at path points."""
    a, V, da, dV = sample_aV_grad(env, X)
    p = -1.0 / (model.beta - 1.0)
    b = a ** p
    db = p * a ** (p - 1.0) * 1.0
    return b, V, db[:, None] * da, dV


# ---------------------------------------------------------------------------
# numeric Legendre transform
# ---------------------------------------------------------------------------

def legendre_numeric(axes: list[np.ndarray], values: np.ndarray, q,
                     check_interior: bool = True) -> np.ndarray:
    """Discrete Legendre-Fenchel transform sup_p (p . q - f(p)) over a grid.

    ``axes`` are the 1-D coordinate arrays of the p-grid and ``values`` the
    sampled f; ``q`` may be a single vector or a batch (..., m).  Raises
    :class:`RangeError` when the maximizer sits on the grid boundary, i.e.
    the grid does not resolve the requested slope.
    """
    axes = [np.asarray(ax, dtype=float) for ax in axes]
    values = np.asarray(values, dtype=float)
    if values.shape != tuple(len(ax) for ax in axes):
        raise ValueError("values shape does not match axes")
    m = len(axes)
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    Q = np.atleast_2d(q)
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack([g.ravel() for g in mesh], axis=-1)          # (G, m)
    scores = Q @ P.T - values.ravel()[None, :]                # (K, G)
    idx = np.argmax(scores, axis=1)
    if check_interior:
        unravel = np.unravel_index(idx, values.shape)
        for d in range(m):
            on_edge = (unravel[d] == 0) | (unravel[d] == len(axes[d]) - 1)
            if np.any(on_edge):
                bad = Q[on_edge][0]
                raise RangeError(
                    f"maximizer for slope {bad} lies on the grid boundary; enlarge the grid")
    out = scores[np.arange(Q.shape[0]), idx]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# growth certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthCertificate:
    """Constants certifying C1^-1(|q|^lam - 1) <= L + shift <= C1(|q|^lam + 1).

    ``shift`` is an additive normalization of the Lagrangian (adding a
    constant changes nothing in the variational problems); it is zero
    whenever the unshifted two-sided bound is feasible, which requires the
    potential amplitude to be small enough relative to the kinetic floor.
    """

    C1: float
    lam: float
    shift: float = 0.0

    def __post_init__(self):
        if self.C1 <= 0 or self.lam <= 1:
            raise ValueError("require C1 > 0 and lam > 1")

    def lower(self, q_norm, t: float = 1.0):
        """Lower bound (1/C1)(|q|^lam - 1), per unit time."""
        return (np.asarray(q_norm) ** self.lam - 1.0) / self.C1

    def to_config(self) -> dict:
        return {"C1": self.C1, "lam": self.lam, "shift": self.shift}


def certify_growth(env: Environment, model: ModelParams, sample_size: int = 2000,
                   seed: int = 0) -> GrowthCertificate:
    """Compute and sample-validate the polynomial growth constants.

    The minimal feasible constant for the model family is
    C1 = max(beta*/b_min, b_max/beta*, v_max); the two-sided unshifted bound
    additionally needs C1 * v_max <= 1 (the potential must not dip below the
    -1/C1 floor).  When infeasible the certificate is issued for the shifted
    Lagrangian L + v_max instead.
    """
    if not np.isfinite(env.a_min) or not np.isfinite(env.v_max) or env.a_min <= 0:
        raise ValueError("environment bounds must be finite with a_min > 0")
    bs = model.beta_star
    b_min = env.a_max ** (-1.0 / (model.beta - 1.0))
    b_max = env.a_min ** (-1.0 / (model.beta - 1.0))
    C1 = max(bs / b_min, b_max / bs, env.v_max)
    shift = 0.0
    if env.v_max > 0 and C1 * env.v_max > 1.0 + 1e-12:
        shift = env.v_max
        C1 = max(bs / b_min, b_max / bs, 2.0 * env.v_max)
    cert = GrowthCertificate(C1=C1, lam=bs, shift=shift)

    # sample validation
    u = rng.uniforms(seed, "certify", 0, sample_size * (env.dim + 1))
    X = (u[: sample_size * env.dim].reshape(sample_size, env.dim) - 0.5) * 8.0
    qn = 4.0 * u[sample_size * env.dim:]
    b, V = lagrangian_terms(env, model, X)
    L = b * qn ** bs / bs - V + shift
    lo = (qn ** bs - 1.0) / C1
    hi = C1 * (qn ** bs + 1.0)
    if np.any(L < lo - 1e-9) or np.any(L > hi + 1e-9):
        raise AssertionError("growth certificate failed sample validation")
    return cert


# ---------------------------------------------------------------------------
# velocity-scaling (power-law homogeneity) check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HomogeneityReport:
    fitted_C: float
    n_checked: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def check_L6(env: Environment, model: ModelParams, n_samples: int = 500,
             seed: int = 0, C_target: float = 1.0) -> HomogeneityReport:
    """Check |L(x, s p) - L(x, p)| <= C |1 - |s|^lam| |L(x, p)| on samples.

    Exact with C = 1 when V = 0 (pure power law); with a potential the
    right-hand side can vanish where L does, and such samples are reported
    as violations.
    """
    lam = model.beta_star
    u = rng.uniforms(seed, "check-l6", 0, n_samples * (env.dim + 3))
    k = n_samples
    X = (u[: k * env.dim].reshape(k, env.dim) - 0.5) * 6.0
    p = (u[k * env.dim: k * (env.dim + 2)].reshape(k, 2) - 0.5) * 4.0
    s = (u[k * (env.dim + 2):] - 0.5) * 4.0
    b, V = lagrangian_terms(env, model, X)
    pn = np.linalg.norm(p, axis=1)
    L0 = b * pn ** lam / lam - V
    L1 = b * (np.abs(s) * pn) ** lam / lam - V
    lhs = np.abs(L1 - L0)
    rhs_factor = np.abs(1.0 - np.abs(s) ** lam) * np.abs(L0)
    fitted = 0.0
    violations = []
    for i in range(k):
        if rhs_factor[i] > 1e-12:
            fitted = max(fitted, lhs[i] / rhs_factor[i])
            if lhs[i] > C_target * rhs_factor[i] + 1e-12:
                violations.append((X[i].tolist(), p[i].tolist(), float(s[i])))
        elif lhs[i] > 1e-12:
            violations.append((X[i].tolist(), p[i].tolist(), float(s[i])))
    return HomogeneityReport(fitted_C=fitted, n_checked=k, violations=violations)
