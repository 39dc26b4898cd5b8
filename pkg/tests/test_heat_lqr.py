import dataclasses

import numpy as np
import pytest

from phasefno import heat_lqr as hl


def test_dispersion_values():
    assert hl.dispersion(0.0) == 1.0
    np.testing.assert_allclose(hl.dispersion(1.0), 1.4142135623730951,
                               rtol=0, atol=0)
    np.testing.assert_allclose(hl.dispersion(2.0), 4.123105625617661,
                               rtol=0, atol=0)
    k = np.linspace(-4, 4, 33)
    np.testing.assert_array_equal(hl.dispersion(k), hl.dispersion(-k))


def test_bump_and_transform():
    b = hl.GaussianBump(amplitude=2.0, center=1.0, width=0.5)
    assert b(1.0) == 2.0
    np.testing.assert_allclose(b(1.5), 2.0 * np.exp(-0.5))
    # transform at k=0 integrates the bump: a w sqrt(2 pi)
    np.testing.assert_allclose(hl.GaussianBump().transform(0.0),
                               2.5066282746310002)
    np.testing.assert_allclose(b.transform(0.0), 2.0 * 0.5 * np.sqrt(2 * np.pi))
    # shifting the center only rotates the phase
    np.testing.assert_allclose(np.abs(b.transform(3.0)),
                               np.abs(hl.GaussianBump(2.0, 0.0, 0.5).transform(3.0)))
    with pytest.raises(ValueError, match="width"):
        hl.GaussianBump(width=0.0)


def test_problem_validation():
    with pytest.raises(ValueError, match="even"):
        hl.HeatLqrProblem(n_k=801)
    with pytest.raises(ValueError, match="k_max"):
        hl.HeatLqrProblem(k_max=0.0)


def test_window_clipping_rejected():
    with pytest.raises(ValueError, match="window"):
        hl.optimal_fields(hl.HeatLqrProblem(k_max=3.0, n_k=100))


def test_initial_time_recovers_bump():
    prob = hl.HeatLqrProblem()
    phi, _ = hl.optimal_fields(prob)
    assert np.max(np.abs(phi[:, 0] - prob.bump(prob.x))) < 1e-8


def test_zero_bump_zero_fields():
    prob = hl.HeatLqrProblem(bump=hl.GaussianBump(amplitude=0.0))
    phi, u = hl.optimal_fields(prob)
    np.testing.assert_array_equal(phi, 0.0)
    np.testing.assert_array_equal(u, 0.0)


def test_optimality_residuals_small():
    state, adjoint = hl.optimality_residuals(hl.HeatLqrProblem())
    assert state < 1e-4
    assert adjoint < 1e-4


def test_sup_norm_decays():
    phi, _ = hl.optimal_fields(hl.HeatLqrProblem())
    mx = np.max(np.abs(phi), axis=0)
    assert np.all(np.diff(mx) <= 1e-12)


def test_quadrature_refinement_converged():
    prob = hl.HeatLqrProblem()
    phi, u = hl.optimal_fields(prob)
    phi2, u2 = hl.optimal_fields(dataclasses.replace(prob, n_k=2 * prob.n_k))
    assert np.max(np.abs(phi - phi2)) < 1e-8
    assert np.max(np.abs(u - u2)) < 1e-8


def test_control_coefficients_are_factored_state_coefficients():
    prob = hl.HeatLqrProblem()
    phi, _ = hl.optimal_fields(prob)
    k = prob.k
    factor = k ** 2 - hl.dispersion(k)
    assert np.all(np.abs(factor) > 1e-6)
    u_coeffs = factor * prob.bump.transform(k)
    rebuilt = hl._synthesize(prob, u_coeffs / factor, prob.x, prob.t).real
    assert np.max(np.abs(rebuilt - phi)) < 1e-9


def test_asymmetric_spectrum_trips_residue_check():
    class Lopsided(hl.GaussianBump):
        def transform(self, k):
            k = np.asarray(k, dtype=np.float64)
            return np.exp(-0.5 * (k - 2.0) ** 2)

    with pytest.raises(ValueError, match="residue"):
        hl.optimal_fields(hl.HeatLqrProblem(bump=Lopsided()))


def test_cost_probe_zero_delta_is_neutral():
    prob = hl.HeatLqrProblem()
    rep = hl.cost_optimality_probe(
        prob, deltas=[hl.GaussianBump(amplitude=0.0)])
    assert rep.entries[0].dj_plus == 0.0
    assert rep.entries[0].dj_minus == 0.0


def test_cost_probe_random_perturbations_increase_cost():
    rep = hl.cost_optimality_probe(hl.HeatLqrProblem())
    assert len(rep.entries) == 10
    assert rep.all_increasing()
    # both signs increase strictly: second-order optimality
    assert min(min(e.dj_plus, e.dj_minus) for e in rep.entries) > 0.0


def test_perturbation_response_starts_at_zero():
    prob = hl.HeatLqrProblem()
    v = hl.perturbation_response(prob, hl.GaussianBump(width=0.5))
    np.testing.assert_array_equal(v[:, 0], 0.0)
    assert np.max(np.abs(v)) > 0.0
