import math

import numpy as np
import pytest

from betalab.dos import (
    FluctuationConfig, TestFunction, bookkeeping_residual, cheb_coefficients,
    clt_variance, clt_variance_report, delta_statistic, dos_convergence,
    dos_measure, fluctuation_ensemble, gaussian_bias, ks_distance,
    linear_statistic, nu_quadrature, remainder_bound_constant,
)
from betalab.potential import Potential
from betalab.sampler import SpectrumSample, sample_gaussian


def _sample(values):
    return SpectrumSample(
        eigenvalues=np.asarray(values, float), n=len(values), beta=2.0,
        potential_coeffs=Potential.gaussian().key(), seed=0,
        method="tridiagonal")


# ---------------------------------------------------------------------------
# mu_N construction and linear statistics
# ---------------------------------------------------------------------------

def test_dos_measure_three_points():
    ds = dos_measure(_sample([0.0, 1.0, 3.0]), b_v=2.0)
    assert np.array_equal(ds.mu_n.atoms, [2.0, 3.0])
    assert np.array_equal(ds.mu_n.weights, [0.5, 0.5])
    assert ds.lambda_max == 3.0
    assert ds.epsilon_n == 1.0


def test_dos_measure_pair_is_gap_atom():
    ds = dos_measure(_sample([1.2, 1.9]), b_v=2.0)
    assert np.array_equal(ds.mu_n.atoms, [0.7])
    assert np.array_equal(ds.mu_n.weights, [1.0])


def test_dos_measure_largest_atom_is_range(rng):
    lam = np.sort(rng.normal(0.0, 1.0, 40))
    ds = dos_measure(_sample(lam), b_v=2.0)
    assert ds.mu_n.atoms[-1] == lam[-1] - lam[0]


def test_dos_measure_solves_edge_when_omitted():
    ds = dos_measure(_sample([0.0, 1.0, 3.0]))
    assert abs(ds.b_v - 2.0) <= 1e-10


def test_linear_statistic_counts_and_sums():
    ds = dos_measure(_sample([0.0, 1.0, 3.0]), b_v=2.0)
    assert linear_statistic(ds, TestFunction.constant(1.0)) == 2.0
    assert linear_statistic(ds, TestFunction.identity()) \
        == pytest.approx(5.0, abs=1e-12)


def test_delta_statistic_of_constant_is_exactly_zero(eq_gauss):
    s = sample_gaussian(150, 2.0, 3)
    assert delta_statistic(s, eq_gauss, TestFunction.constant(1.0)) == 0.0


def test_nu_quadrature_moments(eq_gauss):
    assert nu_quadrature(eq_gauss, lambda x: np.ones_like(x)) == 1.0
    assert nu_quadrature(eq_gauss, lambda x: x) == pytest.approx(2.0, abs=1e-12)
    # second moment about the mean of nu_V is the semicircle variance
    assert nu_quadrature(eq_gauss, lambda x: (x - 2.0) ** 2) \
        == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# CLT constants
# ---------------------------------------------------------------------------

def test_cheb_coefficients_constant():
    a = cheb_coefficients(lambda x: np.ones_like(x), -2.0, 2.0, 6)
    assert a[0] == pytest.approx(2.0, abs=1e-14)
    assert np.max(np.abs(a[1:])) <= 1e-14


def test_cheb_coefficients_identity():
    a = cheb_coefficients(lambda x: x, -2.0, 2.0, 6)
    assert a[0] == pytest.approx(4.0, abs=1e-13)
    assert a[1] == pytest.approx(-2.0, abs=1e-13)
    assert np.max(np.abs(a[2:])) <= 1e-13


def test_cheb_coefficients_square_about_edge():
    a = cheb_coefficients(lambda x: (x - 2.0) ** 2, -2.0, 2.0, 8)
    assert a[0] == pytest.approx(4.0, abs=1e-12)
    assert a[2] == pytest.approx(2.0, abs=1e-12)
    assert abs(a[1]) <= 1e-12 and np.max(np.abs(a[3:])) <= 1e-12


def test_cheb_coefficients_degree_truncation():
    a = cheb_coefficients(lambda x: x ** 4 - 0.3 * x, -2.0, 2.0, 12)
    assert np.max(np.abs(a[5:])) <= 1e-11


def test_clt_variance_values():
    flat = cheb_coefficients(lambda x: np.ones_like(x), -2.0, 2.0, 8)
    assert clt_variance(flat, 2.0) == pytest.approx(0.0, abs=1e-28)
    sq = cheb_coefficients(lambda x: (x - 2.0) ** 2, -2.0, 2.0, 16)
    assert clt_variance(sq, 2.0) == pytest.approx(1.0, abs=1e-12)
    ident = cheb_coefficients(lambda x: x, -2.0, 2.0, 16)
    assert clt_variance(ident, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_clt_variance_report_structure():
    sq = cheb_coefficients(lambda x: (x - 2.0) ** 2, -2.0, 2.0, 16)
    rep = clt_variance_report(sq, 2.0)
    assert set(rep) == {"value", "tail_bound", "count"}
    assert rep["count"] == 16
    assert rep["tail_bound"] <= 1e-20     # polynomial ladder terminates


def test_gaussian_bias_values():
    sq = lambda x: (np.asarray(x, float) - 2.0) ** 2
    assert gaussian_bias(sq, 2.0) == 0.0                  # prefactor vanishes
    assert gaussian_bias(lambda x: np.ones_like(np.asarray(x, float)), 1.0) \
        == 0.0                                            # atoms cancel arcsine
    assert gaussian_bias(sq, 1.0) == pytest.approx(1.0, abs=1e-9)
    assert gaussian_bias(sq, 4.0) == pytest.approx(-0.5, abs=1e-9)


def test_gaussian_bias_rejects_other_potentials(quartic):
    with pytest.raises(ValueError):
        gaussian_bias(lambda x: x, 2.0, V=quartic)


def test_bias_constant_matches_beta_shift_of_ensemble_means(eq_gauss):
    # the beta-dependence of the CLT-scaled mean is the bias measure; the
    # beta-independent part cancels in the difference
    f = TestFunction.square_about(2.0)
    nu_f = nu_quadrature(eq_gauss, f.f)
    means = {}
    for beta in (2.0, 1.0):
        vals = [500 * (dos_measure(sample_gaussian(500, beta, 21, replica=r),
                                   b_v=2.0).mu_n.integrate(f.f) - nu_f)
                for r in range(300)]
        means[beta] = np.mean(vals)
    expect = gaussian_bias(f.f, 1.0) - gaussian_bias(f.f, 2.0)
    assert abs((means[1.0] - means[2.0]) - expect) <= 0.45


# ---------------------------------------------------------------------------
# bookkeeping identity and remainder bound
# ---------------------------------------------------------------------------

def test_bookkeeping_residual_is_roundoff(eq_gauss):
    for seed in range(5):
        s = sample_gaussian(200, 2.0, seed)
        for f in (TestFunction.identity(), TestFunction.square_about(2.0)):
            assert abs(bookkeeping_residual(s, eq_gauss, f)) <= 1e-11


def test_remainder_bound_constant_square():
    # on [-2H, 2H] with H = 3: sup|f| = 64, sup|x f'| = 96, sup|f''|/2 = 1
    m = remainder_bound_constant(TestFunction.square_about(2.0))
    assert m == pytest.approx(96.0, rel=1e-3)


# ---------------------------------------------------------------------------
# KS distance
# ---------------------------------------------------------------------------

def test_ks_distance_hand_values():
    assert ks_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert ks_distance([0.0, 1.0], [2.0, 3.0]) == 1.0
    assert ks_distance([0.0, 2.0], [1.0, 3.0]) == 0.5


def test_ks_distance_symmetric(rng):
    a, b = rng.normal(0, 1, 40), rng.normal(0.2, 1.1, 55)
    assert ks_distance(a, b) == ks_distance(b, a)


# ---------------------------------------------------------------------------
# ensemble experiments
# ---------------------------------------------------------------------------

def test_fluctuation_identity_is_edge_regime(gauss):
    out = fluctuation_ensemble(FluctuationConfig(
        potential=gauss, beta=2.0, f=TestFunction.identity(),
        sizes=(100, 200), replicas=40, seed=1))
    assert out["regime"] == "edge" and not out["ambiguous"]
    assert abs(out["nu_fprime"] - 1.0) <= 1e-12
    assert list(out["ks_stabilization"]) == ["100->200"]
    for n in (100, 200):
        pn = out["per_n"][n]
        assert pn["max_bookkeeping_residual"] <= 1e-11
        assert pn["remainder_bound_ok"]
        assert pn["window_violation_rate"] == 0.0
        assert pn["alt_stats"] is None
        assert len(pn["stats"]) == 40
        assert sum(pn["histogram"]["counts"]) == 40


def test_fluctuation_square_is_clt_regime(gauss):
    out = fluctuation_ensemble(FluctuationConfig(
        potential=gauss, beta=2.0, f=TestFunction.square_about(2.0),
        sizes=(100,), replicas=30, seed=2))
    assert out["regime"] == "clt"
    assert abs(out["nu_fprime"]) <= 1e-12


def test_fluctuation_constant_is_degenerate(gauss):
    out = fluctuation_ensemble(FluctuationConfig(
        potential=gauss, beta=2.0, f=TestFunction.constant(2.5),
        sizes=(64,), replicas=10, seed=3))
    pn = out["per_n"][64]
    assert out["regime"] == "clt"
    assert pn["variance"] == 0.0
    assert max(abs(v) for v in pn["stats"]) <= 1e-12


def test_dos_convergence_shrinks(gauss):
    conv = dos_convergence(gauss, 2.0, (100, 300), replicas=25, seed=4)
    assert set(conv) == {100, 300}
    assert conv[100]["mean_w1"] > conv[300]["mean_w1"]
    assert conv[300]["mean_w1"] <= 0.05
    assert len(conv[100]["w1"]) == 25 and conv[100]["std_w1"] > 0.0


def test_fluctuation_threads_do_not_change_values(gauss):
    base = fluctuation_ensemble(FluctuationConfig(
        potential=gauss, beta=2.0, f=TestFunction.identity(),
        sizes=(80,), replicas=12, seed=9, threads=1))
    pooled = fluctuation_ensemble(FluctuationConfig(
        potential=gauss, beta=2.0, f=TestFunction.identity(),
        sizes=(80,), replicas=12, seed=9, threads=4))
    assert base["per_n"][80]["stats"] == pooled["per_n"][80]["stats"]