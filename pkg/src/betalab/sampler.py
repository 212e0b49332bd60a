"""Samplers for beta-ensemble eigenvalue configurations.

Two routes to the law  P ~ |Delta(lambda)|^beta exp(-(N beta / 2) sum V):
a tridiagonal matrix model, exact for V = x^2/2 after a 1/sqrt(N) rescale
that puts the semicircle edge at +-2, and a Metropolis chain on the log-gas
for general convex polynomial V.  Replicas draw from counter-based
splittable streams keyed by (seed, replica), so batched and sequential
runs are bit-identical.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from ._fsio import fmt, write_text_atomic
from .potential import Potential

__all__ = [
    "SpectrumSample", "rng_for", "sample_gaussian", "tridiag_eigenvalues",
    "sample_mcmc", "sample_mcmc_batch", "metropolis_log_density",
    "acceptance_ratio", "save_sample", "load_sample", "cached_sample",
]

MCMC_CHUNK = 64          # sweeps of randomness drawn per tape refill
TARGET_ACCEPT = 0.35


def rng_for(seed: int, replica: int = 0) -> np.random.Generator:
    """Philox stream keyed by (seed, replica): replicas are independent,
    order-free, and reproducible."""
    key = np.array([np.uint64(seed % (1 << 64)), np.uint64(replica)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True, eq=False)
class SpectrumSample:
    """One eigenvalue configuration, strictly sorted ascending."""

    eigenvalues: np.ndarray
    n: int
    beta: float
    potential_coeffs: tuple
    seed: int
    method: str                      # "tridiagonal" | "mcmc"
    replica: int = 0
    acceptance_rate: float | None = None
    tie_breaks: int = 0

    def __post_init__(self):
        lam = np.sort(np.asarray(self.eigenvalues, dtype=float))
        if lam.size != self.n or self.n < 2:
            raise ValueError("need N >= 2 eigenvalues")
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        ties = 0
        for i in range(1, lam.size):
            if lam[i] <= lam[i - 1]:            # stable perturbation upward
                lam[i] = np.nextafter(lam[i - 1], np.inf)
                ties += 1
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "tie_breaks", self.tie_breaks + ties)

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


def tridiag_eigenvalues(diagonal, offdiagonal) -> np.ndarray:
    """All eigenvalues of a symmetric tridiagonal matrix, sorted ascending."""
    d = np.asarray(diagonal, dtype=float)
    e = np.asarray(offdiagonal, dtype=float)
    if e.size != d.size - 1:
        raise ValueError("off-diagonal must have length N-1")
    if d.size == 1:
        return d.copy()
    return eigh_tridiagonal(d, e, eigvals_only=True)


def sample_gaussian(n: int, beta: float, seed: int,
                    replica: int = 0) -> SpectrumSample:
    """Gaussian beta-ensemble via its tridiagonal model.

    Diagonal N(0,1); off-diagonal k (from the top) is chi_{beta(N-k)}/sqrt2,
    drawn as sqrt(Gamma(beta(N-k)/2)); eigenvalues scaled by sqrt(2/(beta N))
    so the empirical law converges to the semicircle on [-2, 2].
    """
    if n < 2 or beta <= 0:
        raise ValueError("need n >= 2 and beta > 0")
    rng = rng_for(seed, replica)
    diag = rng.standard_normal(n)
    shapes = 0.5 * beta * np.arange(n - 1, 0, -1)
    off = np.sqrt(rng.gamma(shape=shapes))
    lam = tridiag_eigenvalues(diag, off) * math.sqrt(2.0 / (beta * n))
    return SpectrumSample(
        eigenvalues=lam, n=n, beta=float(beta),
        potential_coeffs=Potential.gaussian().key(), seed=int(seed),
        method="tridiagonal", replica=int(replica))


# -- Metropolis log-gas --------------------------------------------------------

def metropolis_log_density(V: Potential, beta: float, lam) -> float:
    """beta * [sum_{i<j} ln|l_i - l_j| - (N/2) sum V(l_k)].

    Input order never matters: the configuration is sorted first, so the
    value is exactly permutation-invariant.  Coincident coordinates give
    -inf (zero density).
    """
    lam = np.sort(np.asarray(lam, dtype=float))
    n = lam.size
    diffs = lam[1:] - lam[:-1]
    if np.any(diffs == 0.0):
        return -math.inf
    total = 0.0
    for i in range(n - 1):
        total += float(np.sum(np.log(lam[i + 1:] - lam[i])))
    return beta * (total - 0.5 * n * float(np.sum(V.eval(lam))))


def acceptance_ratio(V: Potential, beta: float, lam, site: int,
                     proposal: float) -> float:
    """Metropolis ratio pi(y)/pi(x) for a single-site move, min'd at 1."""
    lam = np.asarray(lam, dtype=float)
    newlam = lam.copy()
    newlam[site] = proposal
    dl = metropolis_log_density(V, beta, newlam) \
        - metropolis_log_density(V, beta, lam)
    return 1.0 if dl >= 0 else math.exp(dl)


def _mcmc_run(V: Potential, beta: float, n: int, sweeps: int,
              step0: float, seed: int, replicas) -> tuple:
    """Drive R parallel chains; each replica has its own stream and tape.

    Per sweep and site, all replicas propose and accept/reject together.
    Randomness is drawn per replica in fixed chunks (normals then uniforms
    per chunk), so a batch of size one reproduces any replica of a larger
    batch bit for bit.
    """
    reps = list(replicas)
    R = len(reps)
    rngs = [rng_for(seed, r) for r in reps]
    burn = 20 * n
    lam = np.empty((R, n))
    for j, rng in enumerate(rngs):
        lam[j] = np.sort(rng.uniform(-3.0, 3.0, n))
    step = np.full(R, step0)
    half_nb = 0.5 * n * beta

    acc_recent = np.zeros(R)
    post_accepted = np.zeros(R)
    z = u = None
    for s in range(sweeps):
        if s % MCMC_CHUNK == 0:
            m = min(MCMC_CHUNK, sweeps - s)
            z = np.stack([rng.standard_normal((m, n)) for rng in rngs])
            u = np.stack([rng.random((m, n)) for rng in rngs])
        zs, us = z[:, s % MCMC_CHUNK], u[:, s % MCMC_CHUNK]
        for i in range(n):
            cur = lam[:, i]
            prop = cur + step * zs[:, i]
            others = np.delete(lam, i, axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                dlog = beta * (
                    np.sum(np.log(np.abs(prop[:, None] - others)), axis=1)
                    - np.sum(np.log(np.abs(cur[:, None] - others)), axis=1))
            dlog -= half_nb * (V.eval(prop) - V.eval(cur))
            ok = np.isfinite(dlog) & (np.log(us[:, i]) < dlog)
            lam[ok, i] = prop[ok]
            acc_recent += ok
        if s < burn:
            rate = acc_recent / n
            step *= np.exp(0.5 * (rate - TARGET_ACCEPT))
            np.clip(step, 1e-4, 10.0, out=step)
        else:
            post_accepted += acc_recent
        acc_recent[:] = 0.0
    denom = max(sweeps - burn, 1) * n
    return lam, post_accepted / denom, step


def sample_mcmc_batch(V: Potential, beta: float, n: int, seed: int,
                      replicas, sweeps: int | None = None,
                      step: float = 0.5) -> list[SpectrumSample]:
    """Metropolis samples for several replicas, vectorized across chains."""
    burn = 20 * n
    if sweeps is None:
        sweeps = burn + 10 * n
    if sweeps < burn:
        raise ValueError(f"sweeps={sweeps} below burn-in {burn}")
    lam, acc, _ = _mcmc_run(V, beta, n, sweeps, step, seed, replicas)
    return [
        SpectrumSample(
            eigenvalues=lam[j], n=n, beta=float(beta),
            potential_coeffs=V.key(), seed=int(seed), method="mcmc",
            replica=int(r), acceptance_rate=float(acc[j]))
        for j, r in enumerate(replicas)
    ]


def sample_mcmc(V: Potential, beta: float, n: int, seed: int,
                sweeps: int | None = None, step: float = 0.5,
                replica: int = 0) -> SpectrumSample:
    """One Metropolis chain on the log-gas; see sample_mcmc_batch."""
    return sample_mcmc_batch(V, beta, n, seed, [replica], sweeps, step)[0]


# -- serialization and cache ---------------------------------------------------

def save_sample(sample: SpectrumSample, csv_path: str) -> None:
    """CSV of eigenvalues (one per row) plus a JSON sidecar of metadata."""
    lines = ["eigenvalue"]
    lines += [fmt(x) for x in sample.eigenvalues]
    write_text_atomic(csv_path, "\n".join(lines) + "\n")
    meta = {
        "n": sample.n, "beta": sample.beta,
        "potential_coeffs": list(sample.potential_coeffs),
        "seed": sample.seed, "replica": sample.replica,
        "method": sample.method,
        "acceptance_rate": sample.acceptance_rate,
        "tie_breaks": sample.tie_breaks,
    }
    write_text_atomic(os.path.splitext(csv_path)[0] + ".json",
                      json.dumps(meta, indent=2) + "\n")


def load_sample(csv_path: str) -> SpectrumSample:
    with open(os.path.splitext(csv_path)[0] + ".json") as fh:
        meta = json.load(fh)
    with open(csv_path) as fh:
        header = fh.readline().strip()
        if header != "eigenvalue":
            raise ValueError(f"unexpected sample CSV header {header!r}")
        lam = np.array([float(line) for line in fh if line.strip()])
    return SpectrumSample(
        eigenvalues=lam, n=meta["n"], beta=meta["beta"],
        potential_coeffs=tuple(meta["potential_coeffs"]), seed=meta["seed"],
        method=meta["method"], replica=meta.get("replica", 0),
        acceptance_rate=meta.get("acceptance_rate"),
        tie_breaks=0)


def cached_sample(cache_dir: str, method: str, V: Potential, beta: float,
                  n: int, seed: int, replica: int = 0, **kw) -> SpectrumSample:
    """Sample-through cache keyed by the content hash of all parameters."""
    params = {"method": method, "coeffs": list(V.key()), "beta": beta,
              "n": n, "seed": seed, "replica": replica, **kw}
    key = hashlib.sha256(
        json.dumps(params, sort_keys=True).encode()).hexdigest()[:20]
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, f"sample_{key}.csv")
    if os.path.exists(path):
        return load_sample(path)
    if method == "tridiagonal":
        sample = sample_gaussian(n, beta, seed, replica)
    elif method == "mcmc":
        sample = sample_mcmc(V, beta, n, seed, replica=replica, **kw)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    save_sample(sample, path)
    return sample
