import numpy as np
import pytest

from carnot_homog.environment import Environment, certify_growth
from carnot_homog.groups import dilate
from carnot_homog.solver import (
    ActionProblem,
    InfeasibleError,
    ModelLagrangian,
    SolverConfig,
    action_of_control,
    check_continuity_estimates,
    horizontal_min_datum,
    l_eps,
    mu_q,
    u_eps,
    InitialDatum,
)


@pytest.fixture(scope="module")
def env_rand():
    return Environment(kind="product", seed=909, dim=3, amplitude_v=0.5)


@pytest.fixture(scope="module")
def cert(env_rand, model):
    return certify_growth(env_rand, model)


class TestObjectiveGradient:
    def test_backprop_matches_fd(self, h1, engel, model):
        from carnot_homog.solver import _fast_ops, _objective

        rs = np.random.RandomState(5)
        for gname, env in (("heisenberg1",
                            Environment(kind="product", seed=3, dim=3,
                                        amplitude_v=0.5, amplitude_a=0.3)),
                           ("engel",
                            Environment(kind="cells", seed=4, dim=4,
                                        amplitude_v=0.4))):
            from carnot_homog.groups import get_group

            g = get_group(gname)
            ops = _fast_ops(g)
            lag = ModelLagrangian(env, model)
            n, m = 6, 2
            durations = np.full(n, 0.25)
            start = rs.randn(g.dim) * 0.5
            target = rs.randn(g.dim) * 0.5
            inv_t = ops.inv(tuple(target))
            theta = rs.randn(n * m)
            val, grad = _objective(theta, ops, lag, start, inv_t, durations,
                                   10.0, n, m)
            h = 1e-6
            for i in range(n * m):
                e = np.zeros(n * m)
                e[i] = h
                vp, _ = _objective(theta + e, ops, lag, start, inv_t, durations,
                                   10.0, n, m)
                vm, _ = _objective(theta - e, ops, lag, start, inv_t, durations,
                                   10.0, n, m)
                assert np.isclose((vp - vm) / (2 * h), grad[i], rtol=2e-4,
                                  atol=1e-6)


class TestLEps:
    def test_constant_env_straight(self, h1, env_const, model):
        p = ActionProblem(group=h1, env=env_const, model=model, epsilon=1.0,
                          start=np.zeros(3), target=np.array([1.0, 0, 0]),
                          t=1.0, n_pieces=8)
        r = l_eps(p)
        assert abs(r.value - 0.5) < 1e-9
        assert r.coord_exact

    def test_rest_cost_bound(self, h1, env_rand, model, cert):
        # staying put costs at most C1 t (constant-curve candidate)
        rs = np.random.RandomState(11)
        for _ in range(4):
            x = rs.randn(3)
            t = 0.5 + rs.rand()
            p = ActionProblem(group=h1, env=env_rand, model=model, epsilon=0.5,
                              start=x, target=x, t=t, n_pieces=8,
                              certificate=cert)
            r = l_eps(p)
            assert r.value <= cert.C1 * t + 1e-9

    def test_rescaling_identity(self, h1, env_rand, model):
        # dyadic data keep the two discretizations bit-compatible
        for (y1, y2, t, eps) in ((0.5, 0.25, 1.0, 0.5), (1.0, -0.5, 2.0, 0.25),
                                 (0.75, 0.5, 0.5, 0.125)):
            y = np.array([y1, y2, 0.0])
            q = y[:2] / t
            p = ActionProblem(group=h1, env=env_rand, model=model, epsilon=eps,
                              start=np.zeros(3), target=y, t=t, n_pieces=16)
            v1 = l_eps(p).value
            v2 = eps * mu_q(h1, env_rand, model, q, (0.0, t / eps), 16).value
            assert abs(v1 - v2) <= 1e-9 * max(abs(v1), 1e-12)

    def test_deterministic(self, h1, env_rand, model):
        p = ActionProblem(group=h1, env=env_rand, model=model, epsilon=0.5,
                          start=np.zeros(3), target=np.array([0.8, 0.3, 0.2]),
                          t=1.0, n_pieces=12)
        r1, r2 = l_eps(p), l_eps(p)
        assert r1.value == r2.value
        assert np.array_equal(r1.control.velocities, r2.control.velocities)

    def test_upper_bound_under_finer_quadrature(self, h1, env_rand, model):
        eps = 0.5
        p = ActionProblem(group=h1, env=env_rand, model=model, epsilon=eps,
                          start=np.zeros(3), target=np.array([1.0, 0.5, 0.2]),
                          t=1.0, n_pieces=16)
        r = l_eps(p)
        lag = ModelLagrangian(env_rand, model)
        start_b = dilate(h1, 1 / eps, np.zeros(3))
        durs_b = np.full(16, (1.0 / eps) / 16)
        for sub in (2, 4, 8):
            finer = eps * action_of_control(h1, lag, start_b, durs_b,
                                            r.control.velocities, substeps=sub)
            assert finer <= r.value + 2e-3 * (1 + abs(r.value))

    def test_grid_refinement_monotone(self, h1, env_rand, model):
        p = ActionProblem(group=h1, env=env_rand, model=model, epsilon=0.5,
                          start=np.zeros(3), target=np.array([1.0, 0.5, 0.2]),
                          t=1.0, n_pieces=16)
        r = l_eps(p)
        p2 = ActionProblem(group=h1, env=env_rand, model=model, epsilon=0.5,
                           start=np.zeros(3), target=np.array([1.0, 0.5, 0.2]),
                           t=1.0, n_pieces=32)
        r2 = l_eps(p2, warm_controls=[np.repeat(r.control.velocities, 2, axis=0)])
        assert r2.value <= r.value + 2e-3 * (1 + abs(r.value))

    def test_diagnostics_hold(self, h1, env_rand, model, cert):
        rs = np.random.RandomState(17)
        for _ in range(4):
            p = ActionProblem(group=h1, env=env_rand, model=model,
                              epsilon=float(rs.choice([1.0, 0.5, 0.25])),
                              start=rs.randn(3) * 0.7, target=rs.randn(3) * 0.7,
                              t=0.5 + rs.rand(), n_pieces=12, certificate=cert)
            r = l_eps(p)
            for name in ("lower_growth", "upper_growth", "control_norm"):
                assert r.diagnostics[name]["ok"], (name, r.diagnostics[name])

    def test_engel_solve(self, engel, model):
        env = Environment(kind="cells", seed=5, dim=4, amplitude_v=0.3)
        p = ActionProblem(group=engel, env=env, model=model, epsilon=1.0,
                          start=np.zeros(4), target=np.array([0.6, 0.4, 0.3, 0.1]),
                          t=1.0, n_pieces=16)
        r = l_eps(p)
        assert r.accepted
        assert np.isfinite(r.value)

    def test_infeasible_cap(self, h1, env_const, model):
        p = ActionProblem(group=h1, env=env_const, model=model, epsilon=1.0,
                          start=np.zeros(3), target=np.array([4.0, 0, 0]),
                          t=1.0, n_pieces=8, control_cap=0.5)
        with pytest.raises(InfeasibleError):
            l_eps(p)


class TestMuQ:
    def test_constant_env_value(self, h1, env_const, model):
        r = mu_q(h1, env_const, model, [1.0, 0.0], (0.0, 4.0), 16)
        assert abs(r.value - 2.0) < 1e-9

    def test_zero_slope_zero_potential(self, h1, env_const, model):
        r = mu_q(h1, env_const, model, [0.0, 0.0], (0.0, 2.0), 8)
        assert abs(r.value) < 1e-12

    def test_subadditivity_with_seeding(self, h1, env_rand, model):
        q = np.array([0.8, -0.4])
        r1 = mu_q(h1, env_rand, model, q, (0.0, 2.0), 8)
        r2 = mu_q(h1, env_rand, model, q, (2.0, 4.0), 8)
        warm = np.vstack([r1.control.velocities, r2.control.velocities])
        r12 = mu_q(h1, env_rand, model, q, (0.0, 4.0), 16, warm_controls=[warm])
        assert r12.value <= r1.value + r2.value + 1e-9

    def test_interval_validation(self, h1, env_const, model):
        with pytest.raises(ValueError):
            mu_q(h1, env_const, model, [1, 0], (2.0, 1.0), 8)


class TestUEps:
    def test_constant_datum(self, h1, env_const, model):
        datum = InitialDatum(fn=lambda Y: np.full(Y.shape[0], 0.3), bound=0.3,
                             lipschitz=0.0)
        r = u_eps(h1, env_const, model, 1.0, 1.0, np.array([0.3, -0.2, 0.1]),
                  datum, 8)
        assert abs(r.value - 0.3) < 1e-9

    def test_min_at_origin(self, h1, env_const, model):
        datum = horizontal_min_datum(h1)
        r = u_eps(h1, env_const, model, 1.0, 1.0, np.zeros(3), datum, 8)
        assert abs(r.value) < 1e-12
        assert np.allclose(r.y_best, 0.0)

    def test_eps_independent_constant_env(self, h1, env_const, model):
        datum = horizontal_min_datum(h1)
        x = np.array([0.55, 0.35, 0.15])
        vals = [u_eps(h1, env_const, model, e, 1.0, x, datum, 8).value
                for e in (1.0, 0.5, 0.25)]
        assert max(vals) - min(vals) == 0.0


class TestContinuitySuite:
    def test_zero_violations_small_batch(self, h1, env_rand, model):
        cases = [(np.array([0.8, 0.2, 0.1]), np.zeros(3), 1.0),
                 (np.array([-0.4, 0.6, -0.2]), np.array([0.3, 0.0, 0.0]), 1.0),
                 (np.array([0.2, -0.5, 0.15]), np.array([-0.2, 0.3, 0.0]), 1.5)]
        rep = check_continuity_estimates(
            h1, env_rand, model, cases, (1.0, 0.5),
            config=SolverConfig(min_pieces=12))
        assert rep.ok, [(
            r.name, r.lhs, r.rhs, r.meta) for r in rep.violations]
        names = {r.name for r in rep.records}
        assert {"time_extension", "translation", "concatenation",
                "lower_growth", "upper_growth", "control_norm"} <= names
        for eps, fitted in rep.fitted_time_modulus.items():
            assert np.isfinite(fitted)
