import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpinn.errors import ConfigError, DomainError, NonFiniteError, ShapeError
from cpinn.problems import (
    PROBLEM_NAMES,
    apply_operator,
    boundary_values,
    exact_derivs,
    exact_evaluator,
    exact_solution,
    forcing,
    get_problem,
    make_collocation,
    residual,
    sample_uniform,
)
from cpinn.diff_engine import DualTriple


def _fd_derivs(prob, X, h=1e-4):
    d = prob.dim
    g = np.zeros((d, len(X)))
    H = np.zeros((d, len(X)))
    u0 = exact_solution(prob, X)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        up = exact_solution(prob, np.clip(X + e, prob.lower, prob.upper))
        um = exact_solution(prob, np.clip(X - e, prob.lower, prob.upper))
        g[i] = (up - um) / (2 * h)
        H[i] = (up - 2 * u0 + um) / h**2
    return u0, g, H


class TestExactSolutions:
    @pytest.mark.parametrize("name", PROBLEM_NAMES)
    def test_residual_vanishes(self, name):
        prob = get_problem(name)
        X = sample_uniform(prob, 10, np.random.default_rng(0))
        ev = exact_evaluator(prob)
        for x in X:
            assert abs(residual(prob, ev, x)) < 1e-8

    @pytest.mark.parametrize("name", PROBLEM_NAMES)
    def test_closed_form_derivatives_match_differences(self, name):
        prob = get_problem(name)
        lo, hi = prob.lower, prob.upper
        X = lo + 0.1 + (hi - lo - 0.2) * np.random.default_rng(1).random((8, prob.dim))
        u, g, h = exact_derivs(prob, X)
        u0, gfd, hfd = _fd_derivs(prob, X)
        np.testing.assert_allclose(u, u0)
        np.testing.assert_allclose(g, gfd, atol=1e-6)
        np.testing.assert_allclose(h, hfd, atol=5e-5 * max(1.0, np.abs(hfd).max()))

    @pytest.mark.parametrize("name", ["Poisson1D", "AllenCahn2D", "Helmholtz3D"])
    def test_forcing_is_operator_of_exact_solution(self, name):
        # forcing and operator are coded separately; they must agree on u*
        prob = get_problem(name)
        X = sample_uniform(prob, 50, np.random.default_rng(2))
        u, g, h = exact_derivs(prob, X)
        np.testing.assert_allclose(apply_operator(prob, u, g, h), forcing(prob, X), atol=1e-10)

    def test_known_values(self):
        assert exact_solution(get_problem("Poisson1D"), [0.5]) == pytest.approx(1.0)
        assert exact_solution(get_problem("AllenCahn2D"), [0.5, -0.5]) == pytest.approx(-1.0)
        assert exact_solution(get_problem("Helmholtz3D"), [0.5, 0.5, 0.5]) == pytest.approx(1.0)
        assert exact_solution(get_problem("Oscillator1D"), [0.0]) == pytest.approx(1.0)

    def test_oscillator_initial_conditions(self):
        prob = get_problem("Oscillator1D", {"u0": 0.3, "v0": -1.2})
        u, g, _ = exact_derivs(prob, np.array([[0.0]]))
        assert u[0] == pytest.approx(0.3, abs=1e-14)
        assert g[0, 0] == pytest.approx(-1.2, abs=1e-14)

    def test_oscillator_envelope_decays(self):
        prob = get_problem("Oscillator1D")
        a = prob.params["zeta"] * prob.params["omega"]
        t = np.linspace(0, 5, 400)[:, None]
        assert np.all(np.abs(exact_solution(prob, t)) <= 1.0001 * np.exp(-a * t[:, 0]) / math.sqrt(1 - 0.05**2))

    @pytest.mark.parametrize("name", ["Poisson1D", "AllenCahn2D", "Helmholtz3D"])
    def test_dirichlet_data_on_boundary(self, name):
        prob = get_problem(name)
        B = make_collocation(prob).boundary
        np.testing.assert_allclose(boundary_values(prob, B), exact_solution(prob, B), atol=1e-15)
        np.testing.assert_array_equal(exact_solution(prob, B), 0.0)


class TestValidation:
    def test_unknown_problem_lists_options(self):
        with pytest.raises(ConfigError, match="Poisson1D"):
            get_problem("Burgers")

    def test_unknown_constant(self):
        with pytest.raises(ConfigError):
            get_problem("Helmholtz3D", {"omega": 1.0})

    def test_override(self):
        assert get_problem("Helmholtz3D", {"k": 2.0}).params["k"] == 2.0

    def test_outside_domain(self):
        with pytest.raises(DomainError):
            exact_solution(get_problem("Poisson1D"), [1.5])

    def test_wrong_dimension(self):
        with pytest.raises(ShapeError):
            forcing(get_problem("AllenCahn2D"), np.zeros((3, 3)))

    def test_non_finite_evaluator(self):
        prob = get_problem("Poisson1D")
        with pytest.raises(NonFiniteError):
            residual(prob, lambda x: DualTriple(0.0, np.array([np.nan]), np.array([0.0])), [0.5])


class TestCollocation:
    def test_default_counts(self):
        expect = {
            "Poisson1D": (200, 2, 0),
            "Oscillator1D": (500, 0, 1),
            "AllenCahn2D": (1024, 800, 0),
            "Helmholtz3D": (8000, 6144, 0),
        }
        for name, counts in expect.items():
            c = make_collocation(get_problem(name))
            assert (len(c.interior), len(c.boundary), len(c.initial)) == counts

    @pytest.mark.parametrize("name", PROBLEM_NAMES)
    def test_points_in_closed_domain(self, name):
        prob = get_problem(name)
        c = make_collocation(prob)
        for P in (c.interior, c.boundary, c.initial):
            if len(P):
                assert np.all(P >= prob.lower) and np.all(P <= prob.upper)

    def test_boundary_points_lie_on_faces(self):
        prob = get_problem("Helmholtz3D")
        B = make_collocation(prob).boundary
        on_face = np.any((B == 0.0) | (B == 1.0), axis=1)
        assert on_face.all()

    def test_invalid_grid_suggests_counts(self):
        with pytest.raises(ConfigError, match=r"\[1000, 1331\]"):
            make_collocation(get_problem("Helmholtz3D"), {"n_interior": 1200})
        with pytest.raises(ConfigError, match="nearest valid"):
            make_collocation(get_problem("AllenCahn2D"), {"n_boundary": 801})
        with pytest.raises(ConfigError):
            make_collocation(get_problem("Poisson1D"), {"n_interior": 0})

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12))
    def test_any_square_grid_is_valid(self, side):
        c = make_collocation(get_problem("AllenCahn2D"), {"n_interior": side * side, "n_boundary": 4 * side})
        assert len(c.interior) == side * side
        assert len(c.boundary) == 4 * side
