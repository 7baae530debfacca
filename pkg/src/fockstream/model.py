"""System operators, photon wave packets and their discretization."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import DegenerateProfileError, DimensionError, NormalizationError
from .numerics import dag

HERMITICITY_TOL = 1e-12
PROFILE_NORM_TOL = 1e-12


def basis_state(d, i):
    psi = np.zeros(d, dtype=complex)
    psi[i] = 1.0
    return psi


def lowering(dim):
    """Truncated annihilation operator ``b`` on ``dim`` Fock levels."""
    return np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(complex)


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Open system with Hamiltonian ``H`` and coupling operator ``L`` (hbar = 1).

    ``L`` carries units of sqrt(rate); a two-level emitter with decay rate
    ``gamma`` has ``L = sqrt(gamma) |g><e|``.
    """

    H: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=complex)
        L = np.array(self.L, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] < 1:
            raise DimensionError(f"H must be square, got {H.shape}")
        if L.shape != H.shape:
            raise DimensionError(f"L shape {L.shape} does not match H shape {H.shape}")
        if np.max(np.abs(H - dag(H)), initial=0.0) > HERMITICITY_TOL:
            raise ValueError("system Hamiltonian is not Hermitian")
        H.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "L", L)

    @property
    def d(self):
        return self.H.shape[0]

    @property
    def LdL(self):
        return dag(self.L) @ self.L

    @property
    def G(self):
        """Effective non-Hermitian Hamiltonian ``H - (i/2) L^dag L``."""
        return self.H - 0.5j * self.LdL

    @classmethod
    def two_level(cls, gamma=1.0, omega=0.0):
        """Two-level emitter; basis index 0 is the ground state, 1 the excited state."""
        H = np.array([[0.0, 0.0], [0.0, omega]], dtype=complex)
        L = np.sqrt(gamma) * np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
        return cls(H, L)


@dataclass(frozen=True, eq=False)
class PhotonProfile:
    """Discrete N-photon wave packet: samples ``xi[j]`` on steps of length ``tau``.

    Samples must satisfy ``sum(tau * |xi|**2) == 1``; ``rescale`` records the
    factor that was applied to reach that normalization (1.0 if none).
    """

    n_photons: int
    tau: float
    xi: np.ndarray
    rescale: float = 1.0
    remaining: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_photons < 0:
            raise ValueError("photon number must be nonnegative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        xi = np.array(self.xi, dtype=complex).ravel()
        if xi.size < 1:
            raise ValueError("profile needs at least one sample")
        weights = self.tau * np.abs(xi) ** 2
        total = weights.sum()
        if abs(total - 1.0) > PROFILE_NORM_TOL:
            raise NormalizationError(f"profile norm is {total!r}, expected 1")
        # p_j = sum_{k >= j} tau |xi_k|^2, built by telescoping from p_0 = 1
        p = np.empty(xi.size + 1)
        p[0] = 1.0
        p[1:] = 1.0 - np.cumsum(weights)
        p[-1] = 0.0
        p = np.clip(p, 0.0, 1.0)
        xi.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "remaining", p)

    @property
    def horizon_steps(self):
        return self.xi.size

    def remaining_norm(self, j):
        return remaining_norm(self, j)

    @classmethod
    def from_samples(cls, samples, tau, n_photons=1):
        """Normalize raw samples by a single positive constant."""
        samples = np.asarray(samples, dtype=complex)
        total = tau * np.sum(np.abs(samples) ** 2)
        if total == 0.0:
            raise DegenerateProfileError("all profile samples are zero")
        factor = 1.0 / np.sqrt(total)
        xi = samples * factor
        # one more pass absorbs the rounding left by the first rescale
        xi = xi / np.sqrt(tau * np.sum(np.abs(xi) ** 2))
        return cls(n_photons, tau, xi, rescale=float(factor))


def discretize_profile(xi_fn, tau, n, n_photons=1):
    """Sample ``xi_fn`` at step midpoints ``(j + 1/2) tau`` and renormalize.

    The returned profile's ``rescale`` is the constant that restored the unit
    norm; values far from 1 mean the horizon truncates the pulse.
    """
    if n < 1 or tau <= 0:
        raise ValueError("need n >= 1 and tau > 0")
    t = (np.arange(n) + 0.5) * tau
    samples = np.asarray(xi_fn(t), dtype=complex) * np.ones(n)
    return PhotonProfile.from_samples(samples, tau, n_photons)


def remaining_norm(profile, j):
    """Profile weight not yet seen by the system at step ``j``."""
    if not 0 <= j <= profile.horizon_steps:
        raise IndexError(f"step {j} outside 0..{profile.horizon_steps}")
    return float(profile.remaining[j])


@dataclass(frozen=True, eq=False)
class Pulse:
    """Continuous-time N-photon wave packet.

    ``amplitude(t)`` evaluates the profile (vectorized), ``remaining(t)``
    the tail weight ``int_t^inf |xi|^2``. ``breakpoints`` lists times where
    the amplitude is discontinuous; integrators align their nodes with them.
    """

    n_photons: int
    amplitude: Callable
    remaining: Callable
    breakpoints: tuple = ()
    name: str = "custom"

    def discretize(self, tau, n):
        return discretize_profile(self.amplitude, tau, n, self.n_photons)

    @classmethod
    def rectangular(cls, width, n_photons=1):
        """Flat profile ``1/sqrt(width)`` on ``[0, width)``."""
        amp = 1.0 / np.sqrt(width)

        def amplitude(t):
            t = np.asarray(t, dtype=float)
            return np.where((t >= 0) & (t < width), amp, 0.0).astype(complex)

        def remaining(t):
            t = np.asarray(t, dtype=float)
            return np.clip(1.0 - t / width, 0.0, 1.0)

        return cls(n_photons, amplitude, remaining, (float(width),), "rectangular")

    @classmethod
    def exponential(cls, rate, n_photons=1):
        """Decaying profile ``sqrt(rate) exp(-rate t / 2)`` for ``t >= 0``."""

        def amplitude(t):
            t = np.asarray(t, dtype=float)
            return np.where(t >= 0, np.sqrt(rate) * np.exp(-0.5 * rate * np.maximum(t, 0.0)), 0.0).astype(complex)

        def remaining(t):
            t = np.asarray(t, dtype=float)
            return np.exp(-rate * np.maximum(t, 0.0))

        return cls(n_photons, amplitude, remaining, (), "exponential")

    @classmethod
    def gaussian(cls, center, width, n_photons=1):
        """Gaussian intensity profile of standard deviation ``width``, cut at t = 0."""
        mass = special.ndtr(center / width)

        def amplitude(t):
            t = np.asarray(t, dtype=float)
            dens = np.exp(-0.5 * ((t - center) / width) ** 2) / (np.sqrt(2 * np.pi) * width * mass)
            return np.where(t >= 0, np.sqrt(dens), 0.0).astype(complex)

        def remaining(t):
            t = np.asarray(t, dtype=float)
            return np.minimum(1.0, special.ndtr(-(np.maximum(t, 0.0) - center) / width) / mass)

        return cls(n_photons, amplitude, remaining, (), "gaussian")

    @classmethod
    def piecewise_constant(cls, profile):
        """Hold each discrete sample of ``profile`` over its step."""
        xi = profile.xi
        tau = profile.tau
        p = profile.remaining
        n = xi.size

        def amplitude(t):
            t = np.asarray(t, dtype=float)
            j = np.floor(t / tau).astype(int)
            inside = (j >= 0) & (j < n)
            return np.where(inside, xi[np.clip(j, 0, n - 1)], 0.0)

        def remaining(t):
            t = np.asarray(t, dtype=float)
            j = np.clip(np.floor(t / tau).astype(int), 0, n)
            frac = np.clip(t / tau - j, 0.0, 1.0)
            w = np.where(j < n, tau * np.abs(xi[np.clip(j, 0, n - 1)]) ** 2, 0.0)
            return np.clip(p[j] - frac * w, 0.0, 1.0)

        breaks = tuple(tau * np.arange(1, n + 1))
        return cls(profile.n_photons, amplitude, remaining, breaks, "samples")

    @classmethod
    def from_function(cls, xi_fn, n_photons=1, breakpoints=(), upper=np.inf):
        """Wrap an arbitrary normalized amplitude; tail weights by adaptive quadrature."""

        def remaining(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            out = [integrate.quad(lambda s: abs(complex(xi_fn(s))) ** 2, x, upper, limit=200)[0] for x in t]
            return np.array(out)

        def amplitude(t):
            return np.asarray(np.vectorize(lambda s: complex(xi_fn(s)))(t), dtype=complex)

        return cls(n_photons, amplitude, remaining, tuple(breakpoints), "custom")
