"""Convex polynomial potentials V and the centering functional kappa_V.

A potential is a polynomial of even degree p >= 2 with positive leading
coefficient and V'' >= 0 on all of R (checked exactly at construction via
the roots of V'').  The module also provides kappa_V(nu), the unique root
of c -> int V'(c - x) dnu(x), and G_V(nu) = int V(kappa - x) dnu(x), the
infimum over c of the potential term of a reflected measure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from numpy.polynomial import polynomial as P

from .measures import AtomicMeasure, GridMeasure, Measure, moment

__all__ = ["Potential", "validate_convex", "kappa", "g_value",
           "KappaDegenerateError"]


class KappaDegenerateError(ValueError):
    """Raised when the defining equation of kappa has a flat section of
    roots (cannot happen for polynomial V with a positive leading
    coefficient, but reported defensively)."""


def validate_convex(coeffs) -> tuple[bool, float | None]:
    """Exact convexity test for a polynomial given by ascending coefficients.

    Returns ``(True, None)`` when V'' >= 0 on all of R, else
    ``(False, x)`` with a witness point where V''(x) < 0.  Sign analysis is
    done on the real roots of V'' (companion-matrix eigenvalues), not by
    sampling.
    """
    c = np.asarray(coeffs, dtype=float)
    d2 = P.polyder(c, 2)
    if d2.size == 0 or not np.any(d2):
        return True, None          # V affine: V'' = 0 everywhere
    roots = P.polyroots(d2)
    real = np.sort(np.real(roots[np.abs(np.imag(roots)) < 1e-9]))
    # probe midpoints between consecutive real roots and beyond the extremes
    probes = [real[0] - 1.0, real[-1] + 1.0] if real.size else [0.0]
    probes += [0.5 * (real[i] + real[i + 1]) for i in range(real.size - 1)]
    for x in probes:
        if P.polyval(x, d2) < 0.0:
            return False, float(x)
    return True, None


@dataclass(frozen=True, eq=False)
class Potential:
    """Convex polynomial potential, coefficients in ascending degree."""

    coeffs: np.ndarray
    _d1: np.ndarray = field(default=None, repr=False, compare=False)
    _d2: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=float).ravel()
        c = np.trim_zeros(c, "b")
        if c.size < 3:
            raise ValueError("potential degree must be >= 2")
        p = c.size - 1
        if p % 2 != 0:
            raise ValueError(f"potential degree must be even, got {p}")
        if c[-1] <= 0.0:
            raise ValueError("leading coefficient must be positive")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        ok, witness = validate_convex(c)
        if not ok:
            raise ValueError(
                f"potential is not convex: V''({witness}) < 0")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        for name, order in (("_d1", 1), ("_d2", 2)):
            d = P.polyder(c, order)
            d.setflags(write=False)
            object.__setattr__(self, name, d)

    # -- construction helpers ------------------------------------------------
    @classmethod
    def from_string(cls, text: str) -> "Potential":
        """Parse the config form "c0,c1,...,cp" (ascending degree)."""
        try:
            coeffs = [float(t) for t in text.split(",")]
        except ValueError as exc:
            raise ValueError(f"bad potential string {text!r}: {exc}") from exc
        return cls(np.asarray(coeffs))

    @classmethod
    def gaussian(cls) -> "Potential":
        """V(x) = x^2 / 2."""
        return cls(np.array([0.0, 0.0, 0.5]))

    @classmethod
    def quartic(cls) -> "Potential":
        """V(x) = x^4."""
        return cls(np.array([0.0, 0.0, 0.0, 0.0, 1.0]))

    def to_json_obj(self) -> dict:
        return {"coeffs": [float(c) for c in self.coeffs]}

    # -- evaluation -----------------------------------------------------------
    @property
    def degree(self) -> int:
        return int(self.coeffs.size - 1)

    def eval(self, x):
        return P.polyval(np.asarray(x, dtype=float), self.coeffs)

    __call__ = eval

    def deriv(self, x, order: int = 1):
        if order == 1:
            return P.polyval(np.asarray(x, dtype=float), self._d1)
        if order == 2:
            return P.polyval(np.asarray(x, dtype=float), self._d2)
        raise ValueError(f"derivative order must be 1 or 2, got {order}")

    def key(self) -> tuple:
        """Hashable identity used for caching equilibrium artifacts."""
        return tuple(float(c) for c in self.coeffs)


def _integrate(nu: Measure, f) -> float:
    if isinstance(nu, (AtomicMeasure, GridMeasure)):
        return nu.integrate(f)
    raise TypeError(f"not a measure: {nu!r}")


def _reflected_deriv_poly(V: Potential, nu: Measure) -> np.ndarray:
    """Ascending coefficients of the polynomial c -> int V'(c - x) dnu(x).

    Expanding (c - x)^m binomially turns the integral into a combination of
    the moments of nu; the mass moment is pinned to exactly 1.0, which the
    measure types guarantee, so low-degree cases incur no quadrature error.
    """
    d1 = V._d1
    q = d1.size - 1                       # degree of V'
    mom = np.empty(q + 1)
    mom[0] = 1.0
    for k in range(1, q + 1):
        mom[k] = moment(nu, k)
    g = np.zeros(q + 1)
    for m in range(q + 1):
        if d1[m] == 0.0:
            continue
        for j in range(m + 1):
            g[j] += d1[m] * comb(m, j) * (-1.0) ** (m - j) * mom[m - j]
    return g


def kappa(V: Potential, nu: Measure, tol: float = 1e-10) -> float:
    """The unique root of the nondecreasing map c -> int V'(c - x) dnu(x).

    Bracketed Newton from the mean of nu with geometric bracket expansion
    and bisection fallback; the bracket is shrunk to 1e-10 of its width.
    """
    gpoly = _reflected_deriv_poly(V, nu)
    gppoly = P.polyder(gpoly)

    def g(c: float) -> float:
        return float(P.polyval(c, gpoly))

    def gp(c: float) -> float:
        return float(P.polyval(c, gppoly))

    m1 = moment(nu, 1)
    step = 1.0 + np.sqrt(max(variance_hint(nu), 0.0))
    lo = hi = float(m1)
    glo = ghi = g(lo)
    for _ in range(200):
        if glo <= 0.0 <= ghi:
            break
        if glo > 0.0:
            lo -= step
            glo = g(lo)
        if ghi < 0.0:
            hi += step
            ghi = g(hi)
        step *= 2.0
    else:
        raise ValueError("could not bracket the root of the kappa equation")
    if glo == 0.0 and ghi == 0.0 and hi > lo:
        raise KappaDegenerateError(
            f"flat section of roots on [{lo}, {hi}]")
    width = max(hi - lo, 1.0)
    c = 0.5 * (lo + hi)
    for _ in range(300):
        gc = g(c)
        if gc == 0.0 or hi - lo <= tol * width:
            break
        if gc > 0.0:
            hi = c
        else:
            lo = c
        d = gp(c)
        c_new = c - gc / d if d > 0.0 else None
        if c_new is None or not (lo < c_new < hi):
            c_new = 0.5 * (lo + hi)    # bisection fallback
        c = c_new
    # The expanded polynomial locates a multiple root only to the cube root
    # of roundoff; when the local derivative collapses, sharpen with the
    # direct integrand, whose sign is exact for the offending cases.
    dscale = float(P.polyval(abs(c), np.abs(gppoly))) + 1.0
    if gp(c) <= 1e-8 * dscale:
        if isinstance(nu, AtomicMeasure):
            def gd(t):
                return float(np.dot(nu.weights, V.deriv(t - nu.atoms)))
        else:
            def gd(t):
                return nu.integrate(lambda x: V.deriv(t - x))
        rlo, rhi = lo, hi
        step = max(hi - lo, 1e-15 * (1.0 + abs(c)))
        for _ in range(80):
            if gd(rlo) <= 0.0:
                break
            rlo -= step
            step *= 2.0
        step = max(hi - lo, 1e-15 * (1.0 + abs(c)))
        for _ in range(80):
            if gd(rhi) >= 0.0:
                break
            rhi += step
            step *= 2.0
        for _ in range(200):
            mid = 0.5 * (rlo + rhi)
            if mid <= rlo or mid >= rhi:
                break
            if gd(mid) >= 0.0:
                rhi = mid
            else:
                rlo = mid
        c = 0.5 * (rlo + rhi)
    return float(c)


def variance_hint(nu: Measure) -> float:
    from .measures import variance
    return variance(nu)


def g_value(V: Potential, nu: Measure) -> float:
    """G_V(nu) = int V(kappa_V(nu) - x) dnu(x) = inf_c int V d tau_c nu."""
    k = kappa(V, nu)
    return _integrate(nu, lambda x: V.eval(k - x))
