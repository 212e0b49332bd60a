"""Rate functionals for the spectrum and for the view from its right edge.

Every evaluator decomposes its value as

    value = sigma_term + potential_term + offset_term - c_V

held as an exact arithmetic identity in RateEvaluation.  sigma_term is
-Sigma for grid measures (singularity-aware kernel) or -Sigma^M for atomic
measures, with the M used always reported; offset_term is zero except for
the conditional functional, where it carries -J^-(c).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import EquilibriumResult, constrained_equilibrium, \
    equilibrium_cached
from .measures import AtomicMeasure, GridMeasure, Measure, log_energy_grid, \
    log_energy_reg, measure_to_json_obj, reflect_shift, variance
from .potential import Potential, g_value, kappa

__all__ = [
    "RateEvaluation", "rate_IV", "rate_calI", "rate_IDOS", "rate_calJ",
    "projection_J", "rate_calI_delta", "rate_calJ_delta", "calI_inf_over_c",
    "rate_report",
]


@dataclass(frozen=True)
class RateEvaluation:
    """One rate-functional evaluation, split into its defining terms."""

    sigma_term: float
    potential_term: float
    c_v: float
    value: float
    regularization: float | None   # M for atomic inputs, None = exact grid
    offset_term: float = 0.0

    def identity_residual(self) -> float:
        """value - (sigma + potential + offset - c_V); zero by construction."""
        return self.value - (self.sigma_term + self.potential_term
                             + self.offset_term - self.c_v)


def _sigma_term(mu: Measure, m: float | None) -> tuple[float, float | None]:
    """(-Sigma of mu, regularization used).  Atomic inputs get -Sigma^M with
    the default M = 2 ln N, under which the forced diagonal contribution
    M/(N-1) vanishes as N grows."""
    if isinstance(mu, AtomicMeasure):
        if m is None:
            m = 2.0 * math.log(mu.size)
        return log_energy_reg(mu, m), float(m)
    return -log_energy_grid(mu), None


def _check_nonneg_support(nu: Measure) -> None:
    lo = nu.atoms[0] if isinstance(nu, AtomicMeasure) else nu.lo
    if lo < -1e-9:
        raise ValueError(f"measure must be supported in R+, support starts at {lo}")


def rate_IV(eq: EquilibriumResult, V: Potential, mu: Measure,
            m: float | None = None) -> RateEvaluation:
    """I_V(mu) = -Sigma(mu) + int V dmu - c_V."""
    sig, reg = _sigma_term(mu, m)
    pot = mu.integrate(V.eval)
    return RateEvaluation(sigma_term=sig, potential_term=pot, c_v=eq.c_v,
                          value=sig + pot - eq.c_v, regularization=reg)


def rate_calI(eq: EquilibriumResult, V: Potential, c: float, nu: Measure,
              m: float | None = None) -> RateEvaluation:
    """calI_V(c, nu) = I_V(tau_c nu) for nu on R+, using the invariance of
    Sigma under the reflect-shift: -Sigma(nu) + int V(c - x) dnu - c_V."""
    _check_nonneg_support(nu)
    sig, reg = _sigma_term(nu, m)
    pot = nu.integrate(lambda x: V.eval(c - x))
    return RateEvaluation(sigma_term=sig, potential_term=pot, c_v=eq.c_v,
                          value=sig + pot - eq.c_v, regularization=reg)


def rate_IDOS(eq: EquilibriumResult, V: Potential, nu: Measure,
              m: float | None = None) -> RateEvaluation:
    """I_V^DOS(nu) = inf_c calI_V(c, nu) = -Sigma(nu) + G_V(nu) - c_V."""
    _check_nonneg_support(nu)
    sig, reg = _sigma_term(nu, m)
    pot = g_value(V, nu)
    return RateEvaluation(sigma_term=sig, potential_term=pot, c_v=eq.c_v,
                          value=sig + pot - eq.c_v, regularization=reg)


_PROJ_CACHE: dict = {}


def projection_J(eq: EquilibriumResult, V: Potential, c: float,
                 n: int = 2048) -> float:
    """J_V^-(c): zero at and right of b_V, else the constrained minimum."""
    if c >= eq.b_v:
        return 0.0
    key = (V.key(), float(c), n)
    if key not in _PROJ_CACHE:
        _PROJ_CACHE[key] = constrained_equilibrium(V, c, n).value
    return _PROJ_CACHE[key]


def rate_calJ(eq: EquilibriumResult, V: Potential, c: float, nu: Measure,
              m: float | None = None, n: int = 2048) -> RateEvaluation:
    """calJ_V(c, nu) = calI_V(c, nu) - J_V^-(c), the conditional rate given
    that the rightmost particle sits at c < b_V."""
    if c >= eq.b_v:
        raise ValueError(
            f"calJ needs c < b_V = {eq.b_v}; use the unconditional rate")
    base = rate_calI(eq, V, c, nu, m)
    off = -projection_J(eq, V, c, n)
    return RateEvaluation(
        sigma_term=base.sigma_term, potential_term=base.potential_term,
        c_v=base.c_v, offset_term=off,
        value=base.sigma_term + base.potential_term + off - base.c_v,
        regularization=base.regularization)


# -- infimum scans -------------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(fun, lo: float, hi: float, resolution: float) -> tuple:
    """Golden-section minimum of a scalar unimodal function on [lo, hi]."""
    a, b = lo, hi
    c1 = b - _GOLDEN * (b - a)
    c2 = a + _GOLDEN * (b - a)
    f1, f2 = fun(c1), fun(c2)
    while b - a > resolution:
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - _GOLDEN * (b - a)
            f1 = fun(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + _GOLDEN * (b - a)
            f2 = fun(c2)
    xm = 0.5 * (a + b)
    return xm, fun(xm)


def calI_inf_over_c(eq: EquilibriumResult, V: Potential, nu: Measure,
                    m: float | None = None,
                    resolution: float = 1e-6) -> tuple[float, float]:
    """(argmin, min) of c -> calI_V(c, nu), scanned around kappa_V(nu).

    The potential term is the only c-dependent piece and is convex in c, so
    a golden-section refinement of a bracket centered at kappa suffices.
    """
    k = kappa(V, nu)
    spread = 1.0 + math.sqrt(max(variance(nu), 0.0))
    cstar, val = _golden_min(
        lambda c: rate_calI(eq, V, c, nu, m).value,
        k - spread, k + spread, resolution)
    return cstar, val


def rate_calI_delta(eq: EquilibriumResult, V: Potential, c: float,
                    delta: float, nu: Measure, m: float | None = None,
                    scan: int = 33) -> float:
    """calI^delta(c, nu) = inf over a in [c, c+delta] of calI(a, nu), by scan."""
    avals = np.linspace(c, c + delta, scan)
    return min(rate_calI(eq, V, float(a), nu, m).value for a in avals)


def rate_calJ_delta(eq: EquilibriumResult, V: Potential, c: float,
                    delta: float, nu: Measure, m: float | None = None,
                    scan: int = 9, n: int = 512) -> float:
    """calJ^delta(c, nu) = inf over a in [c, c+delta] of calJ(a, nu), by scan.

    Each scan point needs its own constrained solve, so the scan is coarse
    and the grid moderate by default.
    """
    avals = np.linspace(c, c + delta, scan)
    out = math.inf
    for a in avals:
        a = float(min(a, eq.b_v - 1e-9))
        out = min(out, rate_calJ(eq, V, a, nu, m, n).value)
    return out


# -- reports -------------------------------------------------------------------

def rate_report(functional: str, evaluation: RateEvaluation,
                V: Potential, inputs: dict) -> dict:
    """JSON-ready record of one evaluation with a content hash of its inputs."""
    blob = json.dumps(
        {"functional": functional, "coeffs": list(V.key()), **inputs},
        sort_keys=True, default=_jsonify)
    return {
        "functional": functional,
        "inputs_hash": hashlib.sha256(blob.encode()).hexdigest()[:16],
        "terms": {
            "sigma_term": evaluation.sigma_term,
            "potential_term": evaluation.potential_term,
            "offset_term": evaluation.offset_term,
            "c_v": evaluation.c_v,
        },
        "value": evaluation.value,
        "M": "exact-grid" if evaluation.regularization is None
             else evaluation.regularization,
    }


def _jsonify(obj):
    if isinstance(obj, (AtomicMeasure, GridMeasure)):
        return measure_to_json_obj(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj)}")
