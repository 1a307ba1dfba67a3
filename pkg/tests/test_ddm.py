"""Iterative domain decomposition schemes."""

import numpy as np
import pytest

from penaltyddm import ddm, penalty
from penaltyddm.ddm import (
    CoercivityError,
    DivergenceError,
    IterationConfig,
    Scheme,
    gamma_star,
    g_matrix,
    g_norm,
    subdomain_solve,
    variant_config,
)
from penaltyddm.forms import balanced_theta, estimate_constants, eval_Hsecond
from penaltyddm.oracle import fd_check, solve_monolithic_penalty
from penaltyddm.penalty import PenaltyConfig

TOL = 1e-10



@pytest.fixture(scope="module")
def setup(blocks2):
    theta = balanced_theta(blocks2)
    consts = estimate_constants(blocks2, theta)
    return blocks2, theta, gamma_star(consts).value


def run(model, name, theta, gamma, **kw):
    kw.setdefault("tol_rel", TOL)
    kw.setdefault("tol_res", TOL)
    kw.setdefault("max_iters", 20000)
    cfg = variant_config(name, theta, gamma=gamma, gamma_safeguard=False, **kw)
    return ddm.solve(model, cfg)


class TestTrivialCases:
    def test_single_body_one_iteration(self, one_body):
        model = one_body
        state, hist = ddm.solve(model, IterationConfig(PenaltyConfig(1.0), gamma=1.0))
        assert hist.converged and hist.iterations == 1
        np.testing.assert_allclose(model.A @ state.values, model.L, rtol=1e-12, atol=1e-14)

    def test_zero_load_open_gap(self, blocks2_gap):
        state, hist = ddm.solve(blocks2_gap, IterationConfig(PenaltyConfig(1e-3), gamma=0.5))
        assert hist.converged and hist.iterations == 1
        assert not np.any(state.values)

    def test_bad_initial_state(self, blocks2):
        with pytest.raises(ValueError, match="initial state"):
            ddm.solve(blocks2, IterationConfig(PenaltyConfig(1e-3), gamma=0.5), u0=np.zeros(3))

    @pytest.mark.parametrize("kw", [{"gamma": -1.0}, {"gamma": "big"}, {"tol_rel": 0.0}, {"max_iters": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            IterationConfig(PenaltyConfig(1e-3), **kw)


class TestGammaStar:
    def test_formula(self):
        g = gamma_star(B_phi=2.0, B_G=1.0, D_phi=4.0)
        assert g.value == pytest.approx(0.125)
        assert g.interval == (0.0, 0.25)

    def test_linear_identity_case(self):
        assert gamma_star(B_phi=1.0, B_G=1.0, D_phi=1.0).value == 1.0

    def test_theta_rescaling(self, setup):
        model, theta, _ = setup
        c = estimate_constants(model, theta)
        direct = gamma_star(estimate_constants(model, 2 * theta))
        rescaled = gamma_star(c, theta=2 * theta)
        assert rescaled.value == pytest.approx(direct.value, rel=1e-8)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            gamma_star(B_phi=0.0, B_G=1.0, D_phi=1.0)
        with pytest.raises(ValueError):
            gamma_star()


class TestAgreement:
    @pytest.mark.parametrize("name", list(ddm.SCHEME_VARIANTS))
    def test_matches_oracle(self, setup, name):
        model, theta, g = setup
        ref = solve_monolithic_penalty(model, theta).values
        state, hist = run(model, name, theta, g)
        assert hist.converged
        G = g_matrix(model, penalty.ROBIN_ROBIN, theta)
        assert g_norm(G, state.values - ref) <= 1e-7 * g_norm(G, ref)

    def test_nonlinear_matches_oracle(self, blocks2_nonlinear):
        theta = balanced_theta(blocks2_nonlinear)
        g = gamma_star(estimate_constants(blocks2_nonlinear, theta)).value
        ref = solve_monolithic_penalty(blocks2_nonlinear, theta).values
        for name in ("robin-robin", "newton-like"):
            state, hist = run(blocks2_nonlinear, name, theta, g)
            assert hist.converged
            assert np.linalg.norm(state.values - ref) <= 1e-7 * np.linalg.norm(ref)

    def test_ideal_interface(self, split4):
        theta = balanced_theta(split4)
        g = gamma_star(estimate_constants(split4, theta)).value
        ref = solve_monolithic_penalty(split4, theta).values
        state, hist = run(split4, "robin-robin", theta, g)
        assert hist.converged
        assert np.linalg.norm(state.values - ref) <= 1e-7 * np.linalg.norm(ref)

    def test_constant_schedule_is_stationary(self, setup):
        model, theta, g = setup
        base = variant_config("robin-robin", theta, gamma=g, tol_rel=TOL, tol_res=TOL, max_iters=20000)
        a, ha = ddm.solve(model, base)
        sched = IterationConfig(
            PenaltyConfig(theta, penalty.ROBIN_ROBIN),
            scheme=Scheme.NONSTATIONARY,
            gamma=g,
            gamma_schedule=lambda k: g,
            policy_schedule=lambda k: penalty.ROBIN_ROBIN,
            tol_rel=TOL,
            tol_res=TOL,
            max_iters=20000,
        )
        b, hb = ddm.solve(model, sched)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(ha.column("step_G"), hb.column("step_G"))

    def test_serial_matches_threads(self, setup):
        model, theta, g = setup
        a, ha = run(model, "robin-robin", theta, g, serial=True)
        b, hb = run(model, "robin-robin", theta, g, serial=False)
        np.testing.assert_array_equal(a.values, b.values)
        assert ha.iterations == hb.iterations

    def test_cg_subdomain_solver(self, setup):
        model, theta, g = setup
        a, _ = run(model, "robin-robin", theta, g)
        b, hb = run(model, "robin-robin", theta, g, linear_solver="cg")
        assert hb.converged
        np.testing.assert_allclose(b.values, a.values, rtol=0, atol=1e-8 * np.abs(a.values).max())


class TestSchemeStructure:
    def test_newton_equals_stationary_for_linear(self, setup):
        model, theta, g = setup
        a, ha = run(model, "robin-robin", theta, g, max_iters=30)
        b, hb = run(model, "newton-like", theta, g, max_iters=30)
        np.testing.assert_array_equal(a.values, b.values)
        assert hb.factorizations == ha.factorizations == 1

    def test_stationary_factorizes_once(self, setup):
        model, theta, g = setup
        _, hist = run(model, "neumann-neumann", theta, g)
        assert hist.factorizations == 1

    def test_newton_refactorizes(self, blocks2_nonlinear):
        theta = balanced_theta(blocks2_nonlinear)
        _, hist = run(blocks2_nonlinear, "newton-like", theta, 0.05, max_iters=5, tol_rel=1e-30, tol_res=1e-30)
        assert hist.factorizations == 5

    def test_neumann_lhs_is_A(self, setup, rng):
        model, theta, _ = setup
        u = rng.standard_normal(model.n) * 1e-3
        chars = penalty.characteristic_functions(model.traces, penalty.NEUMANN_NEUMANN)
        s = model.dofmap.body_slices[0]
        got = subdomain_solve(model, 0, u, theta, chars)
        rhs = model.L + ddm.eval_Hprime(model, u) - penalty.eval_Jprime(model.traces, u, theta)
        np.testing.assert_allclose(model.A[s, s] @ got, rhs[s], rtol=1e-9, atol=1e-12 * np.abs(rhs).max())

    def test_fixed_point(self, setup):
        model, theta, g = setup
        ref = solve_monolithic_penalty(model, theta).values
        for pol in (penalty.NEUMANN_NEUMANN, penalty.ROBIN_ROBIN):
            chars = penalty.characteristic_functions(model.traces, pol)
            for a in range(2):
                s = model.dofmap.body_slices[a]
                np.testing.assert_allclose(subdomain_solve(model, a, ref, theta, chars), ref[s], rtol=0, atol=1e-9 * np.abs(ref).max())

    def test_zero_rhs_gives_zero(self, blocks2_gap):
        chars = penalty.characteristic_functions(blocks2_gap.traces, penalty.ROBIN_ROBIN)
        u = subdomain_solve(blocks2_gap, 1, np.zeros(blocks2_gap.n), 1e-3, chars)
        assert not np.any(u)

    def test_newton_rhs_is_tangent(self, blocks2_nonlinear, rng):
        # the NewtonLike system matrix is the derivative of the operator it linearises
        from penaltyddm.forms import eval_Hprime, strain_sample

        u = strain_sample(blocks2_nonlinear, rng)
        v, w = rng.standard_normal((2, blocks2_nonlinear.n))
        rep = fd_check(
            lambda x: -(eval_Hprime(blocks2_nonlinear, x) @ w),
            lambda x, d: -(w @ (eval_Hsecond(blocks2_nonlinear, x) @ d)),
            u,
            v,
        )
        assert rep.passed, rep


class TestFailureModes:
    def test_divergence(self, setup):
        model, theta, g = setup
        with pytest.raises(DivergenceError) as exc:
            run(model, "robin-robin", theta, 40 * g)
        assert exc.value.history is not None and exc.value.iterate is not None

    def test_safeguard_recovers(self, setup):
        model, theta, g = setup
        cfg = variant_config("robin-robin", theta, gamma=30 * g, tol_rel=1e-8, tol_res=1e-8, max_iters=20000)
        _, hist = ddm.solve(model, cfg)
        assert hist.converged and hist.gamma < 30 * g

    def test_coercivity_loss(self, blocks2_nonlinear, monkeypatch):
        theta = balanced_theta(blocks2_nonlinear)

        def huge(model, u):
            return 1e6 * model.A

        monkeypatch.setattr(ddm, "eval_Hsecond", huge)
        with pytest.raises(CoercivityError):
            run(blocks2_nonlinear, "newton-like", theta, 0.05, max_iters=3)


class TestHistory:
    def test_records_and_csv(self, setup):
        model, theta, g = setup
        seen = []
        cfg = variant_config("robin-robin", theta, gamma=g, max_iters=5, tol_rel=1e-30, tol_res=1e-30)
        _, hist = ddm.solve(model, cfg, callback=lambda k, u, rec: seen.append(k))
        assert seen == [1, 2, 3, 4, 5]
        assert not hist.converged
        lines = hist.to_csv().splitlines()
        assert lines[0] == ",".join(ddm.CSV_COLUMNS) and len(lines) == 6
        assert float(lines[1].split(",")[1]) == hist.records[0].step_G

    def test_rate_of_linear_scheme(self, setup):
        model, theta, g = setup
        _, hist = run(model, "robin-robin", theta, g)
        assert 0 < hist.rate() < 1

    def test_auto_gamma(self, setup):
        model, theta, g = setup
        cfg = variant_config("robin-robin", theta, tol_rel=1e-6, tol_res=1e-6, max_iters=20000)
        _, hist = ddm.solve(model, cfg)
        assert hist.gamma_star == pytest.approx(g, rel=1e-10)
        assert hist.gamma == pytest.approx(g, rel=1e-10)
