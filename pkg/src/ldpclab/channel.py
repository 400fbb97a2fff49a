"""BIAWGN channel: half-LLR sampling, the LLR density and the sinh moment.

Under all-zero transmission the half-LLR of a bit with noise level ``eps`` is
Gaussian with mean and variance ``eps**-2``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate


def _stream_key(stream) -> tuple[int, ...]:
    if isinstance(stream, (int, np.integer)):
        return (int(stream),)
    if isinstance(stream, tuple):
        return tuple(k for part in stream for k in _stream_key(part))
    digest = hashlib.sha256(str(stream).encode()).digest()
    return (int.from_bytes(digest[:8], "little"),)


def make_rng(seed: int, stream=0) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, stream)``.

    ``stream`` may be an int, a string or a tuple of those; equal arguments
    give bit-identical streams on every platform.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=_stream_key(stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoiseSpec:
    """Per-bit noise standard deviations; ``0.0`` marks a perfectly received bit."""

    eps: tuple[float, ...]

    def __post_init__(self):
        for e in self.eps:
            if not math.isfinite(e) or e < 0:
                raise ValueError(f"noise level must be finite and >= 0, got {e}")

    @classmethod
    def uniform(cls, n: int, eps2: float) -> "NoiseSpec":
        if eps2 <= 0:
            raise ValueError("eps2 must be positive")
        return cls((math.sqrt(eps2),) * n)

    @property
    def n(self) -> int:
        return len(self.eps)

    @property
    def max_eps(self) -> float:
        return max(self.eps, default=0.0)

    @property
    def clamped(self) -> np.ndarray:
        return np.array([e == 0.0 for e in self.eps], dtype=bool)

    def snr(self) -> np.ndarray:
        """``eps_i**-2`` per bit, ``inf`` for perfect bits."""
        e = np.array(self.eps, dtype=float)
        with np.errstate(divide="ignore"):
            return 1.0 / e**2

    def with_perfect(self, bits: Sequence[int]) -> "NoiseSpec":
        eps = list(self.eps)
        for b in bits:
            eps[b] = 0.0
        return NoiseSpec(tuple(eps))


@dataclass(frozen=True)
class LlrVector:
    """One channel realization.

    ``values`` holds half-LLRs; entries of clamped (perfect) bits are 0.0 and
    must be read through ``clamped``.
    """

    values: np.ndarray
    clamped: np.ndarray
    noise: NoiseSpec | None = None
    stream: object = None
    counter: int = 0

    @classmethod
    def from_values(cls, values, clamped=None) -> "LlrVector":
        v = np.asarray(values, dtype=float).copy()
        c = np.zeros(v.shape, dtype=bool) if clamped is None else np.asarray(clamped, dtype=bool).copy()
        if c.shape != v.shape:
            raise ValueError("clamped mask shape mismatch")
        v[c] = 0.0
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite half-LLR; mark perfect bits as clamped")
        return cls(v, c)

    def __len__(self):
        return len(self.values)


def sample_llr_batch(noise: NoiseSpec, n_samples: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n_samples`` realizations at once: ``(values (S, n), clamped (n,))``."""
    snr = noise.snr()
    clamped = ~np.isfinite(snr)
    mean = np.where(clamped, 0.0, snr)
    z = rng.standard_normal((n_samples, noise.n))
    values = mean + np.sqrt(mean) * z
    values[:, clamped] = 0.0
    return values, clamped


def llr_from_normals(noise: NoiseSpec, z: np.ndarray) -> np.ndarray:
    """Map standard normals to half-LLRs; common random numbers for snr sweeps."""
    snr = noise.snr()
    mean = np.where(np.isfinite(snr), snr, 0.0)
    return mean + np.sqrt(mean) * z


def sample_llr(noise: NoiseSpec, rng, stream=None, counter: int = 0) -> LlrVector:
    values, clamped = sample_llr_batch(noise, 1, rng)
    return LlrVector(values[0], clamped, noise, stream, counter)


def llr_density(l, eps: float):
    """Density of the half-LLR for noise level ``eps`` (Gaussian, mean = var = eps**-2)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = eps ** -2
    l = np.asarray(l, dtype=float)
    out = np.exp(-((l - mu) ** 2) / (2 * mu)) / math.sqrt(2 * math.pi * mu)
    return out if out.ndim else float(out)


def _check_s(s: float) -> None:
    if not 0 < s < 0.5:
        raise ValueError(f"s must lie in (0, 1/2), got {s}")


def _sinh_moment_quad(eps: float, s: float) -> float:
    mu = eps ** -2
    sd = math.sqrt(mu)
    lo = min(mu - 14 * sd, -1.0)
    hi = max(mu + 14 * sd, 1.0)

    def regular(l):
        # |sinh 2l|^{-2s} = |l|^{-2s} * (|l| / |sinh 2l|)^{2s}; second factor is smooth
        if l == 0.0:
            ratio = 0.5
        else:
            al = abs(l)
            # log form avoids overflow of sinh for large |l|
            log_sinh = 2 * al + math.log1p(-math.exp(-4 * al)) - math.log(2)
            ratio = math.exp(math.log(al) - log_sinh)
        return ratio ** (2 * s) * math.exp(-((l - mu) ** 2) / (2 * mu)) / math.sqrt(2 * math.pi * mu)

    opts = dict(epsabs=1e-13, epsrel=1e-11, limit=400)
    # algebraic endpoint weights integrate the |l|^{-2s} singularity exactly
    right, _ = integrate.quad(regular, 0.0, hi, weight="alg", wvar=(-2 * s, 0.0), **opts)
    left, _ = integrate.quad(regular, lo, 0.0, weight="alg", wvar=(0.0, -2 * s), **opts)
    return left + right


def sinh_moment_mc(eps: float, s: float, samples: int, rng) -> tuple[float, float]:
    """Monte Carlo ``E|sinh 2l|^{-2s}``: ``(mean, standard error)``."""
    _check_s(s)
    mu = eps ** -2
    l = mu + math.sqrt(mu) * rng.standard_normal(samples)
    vals = np.abs(np.sinh(2 * l)) ** (-2 * s)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


def sinh_moment(eps: float, s: float, method: str = "quadrature", samples: int = 10**6, rng=None) -> float:
    """``E[|sinh 2l|^{-2s}]`` over the half-LLR density, for ``0 < s < 1/2``."""
    _check_s(s)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if method == "quadrature":
        return _sinh_moment_quad(eps, s)
    if method == "monte-carlo":
        if rng is None:
            raise ValueError("monte-carlo method needs an rng")
        return sinh_moment_mc(eps, s, samples, rng)[0]
    raise ValueError(f"unknown method {method!r}")
