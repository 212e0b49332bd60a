import math

import numpy as np
import pytest

from betalab.measures import AtomicMeasure, variance, wasserstein
from betalab.potential import (
    KappaDegenerateError, Potential, g_value, kappa, validate_convex,
)
from oracles import semicircle_grid
from betalab.measures import reflect_shift


def random_atomic(rng, n=8):
    atoms = rng.normal(0.0, 1.5, n)
    w = rng.random(n) + 0.05
    return AtomicMeasure(atoms, w / math.fsum(w.tolist()))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_eval_gaussian_at_three(gauss):
    assert gauss.eval(3.0) == 4.5
    assert gauss(3.0) == 4.5


def test_deriv_gaussian(gauss):
    assert gauss.deriv(-2.0) == -2.0
    assert gauss.deriv(-2.0, 2) == 1.0


def test_quartic_values(quartic):
    assert quartic.eval(2.0) == 16.0
    assert quartic.deriv(2.0, 2) == 48.0


# ---------------------------------------------------------------------------
# convexity validation
# ---------------------------------------------------------------------------

def test_validate_convex_accepts():
    ok, _ = validate_convex([0.0, 0.0, 0.5])
    assert ok
    ok, _ = validate_convex([0.0, 0.0, 1.0, 0.0, 1.0])   # x^4 + x^2
    assert ok


def test_validate_convex_rejects_with_witness():
    ok, witness = validate_convex([0.0, 0.0, -3.0, 0.0, 1.0])  # x^4 - 3 x^2
    assert not ok
    vpp = 12.0 * witness ** 2 - 6.0
    assert vpp < 0.0


def test_constructor_enforces_assumptions():
    with pytest.raises(ValueError):
        Potential((0.0, 0.0, -3.0, 0.0, 1.0))     # non-convex
    with pytest.raises(ValueError):
        Potential((0.0, 0.0, 0.0, 1.0))           # odd degree
    with pytest.raises(ValueError):
        Potential((0.0, 0.0, -1.0))               # negative leading
    with pytest.raises(ValueError):
        Potential((1.0,))                         # degree < 2


def test_parse_and_json_roundtrip():
    V = Potential.from_string("0, 0, 0.5")
    assert V.key() == Potential.gaussian().key()
    obj = V.to_json_obj()
    assert obj["coeffs"] == [0.0, 0.0, 0.5]


# ---------------------------------------------------------------------------
# kappa
# ---------------------------------------------------------------------------

def test_kappa_quadratic_is_mean_exact(rng, gauss):
    for _ in range(20):
        nu = random_atomic(rng)
        mean = float(np.dot(nu.weights, nu.atoms))
        assert kappa(gauss, nu) == pytest.approx(mean, abs=1e-14)


def test_kappa_quartic_symmetric_pair(quartic):
    nu = AtomicMeasure([-1.0, 1.0], [0.5, 0.5])
    assert kappa(quartic, nu) == 0.0


def test_kappa_quartic_point_mass(quartic):
    for a in (-1.7, 0.3, 2.4):
        nu = AtomicMeasure([a], [1.0])
        assert kappa(quartic, nu) == pytest.approx(a, abs=1e-9)


def test_kappa_on_grid_measure(gauss):
    nu = reflect_shift(semicircle_grid(), 2.0)
    assert kappa(gauss, nu) == pytest.approx(2.0, abs=1e-8)


def test_kappa_shift_equivariance(rng, quartic):
    for _ in range(10):
        nu = random_atomic(rng)
        s = float(rng.normal(0.0, 1.0))
        shifted = AtomicMeasure(nu.atoms + s, nu.weights)
        assert kappa(quartic, shifted) == pytest.approx(
            kappa(quartic, nu) + s, abs=1e-10)


def test_kappa_degenerate_error_is_value_error():
    assert issubclass(KappaDegenerateError, ValueError)


# ---------------------------------------------------------------------------
# G_V
# ---------------------------------------------------------------------------

def test_g_value_quadratic_is_half_variance(rng, gauss):
    for _ in range(10):
        nu = random_atomic(rng)
        assert g_value(gauss, nu) == pytest.approx(
            0.5 * variance(nu), rel=1e-12, abs=1e-14)


def test_g_value_point_mass_zero(gauss, quartic):
    nu = AtomicMeasure([1.9], [1.0])
    assert g_value(gauss, nu) == pytest.approx(0.0, abs=1e-16)
    assert g_value(quartic, nu) == pytest.approx(0.0, abs=1e-16)


def test_g_value_quartic_pair(quartic):
    nu = AtomicMeasure([-1.0, 1.0], [0.5, 0.5])
    assert g_value(quartic, nu) == 1.0


def test_g_value_shift_invariant(rng, quartic):
    nu = random_atomic(rng)
    shifted = AtomicMeasure(nu.atoms + 0.8, nu.weights)
    assert g_value(quartic, shifted) == pytest.approx(
        g_value(quartic, nu), rel=1e-10)


def test_g_value_is_infimum_over_shifts(rng, gauss, quartic):
    for V in (gauss, quartic):
        for _ in range(3):
            nu = random_atomic(rng)
            g = g_value(V, nu)
            for _ in range(50):
                c = float(rng.normal(kappa(V, nu), 1.5))
                tau = reflect_shift(nu, c)
                assert g <= tau.integrate(V.eval) + 1e-10


def test_kappa_continuity_under_perturbation(rng, quartic):
    nu = random_atomic(rng, 12)
    base = kappa(quartic, nu)
    last = math.inf
    for eps in (0.1, 0.01, 0.001, 0.0001):
        shaken = AtomicMeasure(
            nu.atoms + eps * rng.normal(0.0, 1.0, nu.size), nu.weights)
        # kappa moves by at most O(d_W(p-1)); the drift shrinks with eps
        drift = abs(kappa(quartic, shaken) - base)
        assert drift <= max(10.0 * eps, 1e-12)
        assert drift <= last + 1e-12
        last = drift
