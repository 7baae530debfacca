"""Brute-force reference: the whole ancilla chain as one dense state vector.

Amplitudes are stored as a tensor of shape ``(D,) * n + (d,)``: one axis per
chain site (site 0 first) followed by the system axis, so the flattened
ordering is site-major and system-minor. Everything here is exact up to
the per-site Fock truncation and is meant for small chains only.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import comb, factorial

import numpy as np
import scipy.linalg

from .collision import VectorHierarchy
from .errors import CapabilityError, TruncationError
from .model import lowering

MAX_AMPLITUDES = 1_000_000
ZERO_BRANCH = 1e-300


@dataclass(frozen=True, eq=False)
class ChainState:
    """Joint (chain, system) amplitudes; ``profile`` is kept for tail projections."""

    amplitudes: np.ndarray
    D: int
    profile: object = None

    @property
    def n(self):
        return self.amplitudes.ndim - 1

    @property
    def d(self):
        return self.amplitudes.shape[-1]

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def replace(self, amplitudes):
        return ChainState(amplitudes, self.D, self.profile)


@dataclass(frozen=True, eq=False)
class SegmentState:
    """``M`` photons in the profile restricted to sites ``first..last`` (inclusive).

    Unnormalized: its squared norm is the profile weight on the segment to
    the power ``M``. An empty segment (``last < first``) is a scalar.
    """

    first: int
    last: int
    M: int
    amplitudes: np.ndarray

    @property
    def sites(self):
        return max(0, self.last - self.first + 1)


def _padded_xi(profile, n):
    xi = np.zeros(n, dtype=complex)
    k = min(n, profile.horizon_steps)
    xi[:k] = profile.xi[:k]
    return xi


def _raise_mode(field, coeffs, D):
    """Apply ``sum_k coeffs[k] b_k^dag`` to a field tensor (one axis per site)."""
    bd = lowering(D).T
    out = np.zeros_like(field)
    for k, c in enumerate(coeffs):
        if c == 0:
            continue
        out += c * np.moveaxis(np.tensordot(bd, field, axes=([1], [k])), 0, k)
    return out


def _lower_mode(field, coeffs, D):
    b = lowering(D)
    out = np.zeros_like(field)
    for k, c in enumerate(coeffs):
        if c == 0:
            continue
        out += np.conj(c) * np.moveaxis(np.tensordot(b, field, axes=([1], [k])), 0, k)
    return out


def _vacuum(sites, D):
    v = np.zeros((D,) * sites, dtype=complex)
    v[(0,) * sites] = 1.0
    return v


def photon_segment(profile, first, last, M, D):
    """``(b_seg^dag)^M |vac> / sqrt(M!)`` with ``b_seg = sum_{k in seg} sqrt(tau) conj(xi_k) b_k``."""
    if D <= M and last >= first:
        raise TruncationError(f"{D} Fock levels cannot hold {M} photons")
    sites = max(0, last - first + 1)
    if sites == 0:
        return SegmentState(first, last, M, np.array(1.0 + 0j if M == 0 else 0j))
    xi = _padded_xi(profile, last + 1)[first : last + 1]
    coeffs = np.sqrt(profile.tau) * xi
    v = _vacuum(sites, D)
    for _ in range(M):
        v = _raise_mode(v, coeffs, D)
    return SegmentState(first, last, M, v / np.sqrt(factorial(M)))


def build_chain_state(profile, n, D, psi):
    """Initial product of the N-photon wave packet on ``n`` sites and ``psi``."""
    N = profile.n_photons
    if D <= N:
        raise TruncationError(f"{D} Fock levels cannot hold {N} photons")
    if D ** n * len(psi) > MAX_AMPLITUDES:
        raise CapabilityError("chain too large for the dense oracle")
    if profile.horizon_steps > n and profile.remaining[n] > 0:
        raise ValueError("profile has weight beyond the chain")
    field = photon_segment(profile, 0, n - 1, N, D).amplitudes
    amps = np.multiply.outer(field, np.asarray(psi, dtype=complex))
    chain = ChainState(amps, D, profile)
    if abs(chain.norm() - 1.0) > 1e-10:
        raise ValueError(f"chain state norm {chain.norm()} differs from 1")
    return chain


def apply_mode_annihilator(chain):
    """Apply the profile-mode annihilator to the field part (result unnormalized)."""
    coeffs = np.sqrt(chain.profile.tau) * _padded_xi(chain.profile, chain.n)
    return chain.replace(_lower_mode(chain.amplitudes, coeffs, chain.D))


def temporal_decompose(chain, split):
    """Split the initial wave packet at site ``split`` into past and future parts.

    Returns ``[(M, (past, future), coefficient)]`` where ``past`` holds ``M``
    photons on sites ``0..split`` and ``future`` the remaining ``N - M`` on
    the later sites. Only the field factor is decomposed.
    """
    if not 0 <= split < chain.n:
        raise IndexError("split site outside the chain")
    prof = chain.profile
    N = prof.n_photons
    out = []
    for M in range(N + 1):
        past = photon_segment(prof, 0, split, M, chain.D)
        future = photon_segment(prof, split + 1, chain.n - 1, N - M, chain.D)
        out.append((M, (past, future), np.sqrt(comb(N, M))))
    return out


def reassemble(parts):
    """Inverse of ``temporal_decompose``: the field tensor on the whole chain."""
    return sum(c * np.multiply.outer(past.amplitudes, future.amplitudes) for _, (past, future), c in parts)


def collision_unitary(model, tau, D):
    """Dense one-step unitary on (site, system), shape ``(D, d, D, d)``.

    Built here from the coupling Hamiltonian rather than borrowed from the
    collision engine, so the two stay independent.
    """
    d = model.d
    b = lowering(D)
    H = np.einsum("ab,ij->aibj", np.eye(D), model.H)
    H = H + (1j / np.sqrt(tau)) * (np.einsum("ab,ij->aibj", b.conj().T, model.L) - np.einsum("ab,ij->aibj", b, model.L.conj().T))
    U = scipy.linalg.expm(-1j * tau * H.reshape(D * d, D * d))
    return U.reshape(D, d, D, d)


def apply_collision_unitary(chain, model, k, tau, unitary=None):
    """Let site ``k`` collide with the system."""
    if not 0 <= k < chain.n:
        raise IndexError("site outside the chain")
    U = collision_unitary(model, tau, chain.D) if unitary is None else unitary
    n = chain.n
    out = np.tensordot(U, chain.amplitudes, axes=([2, 3], [k, n]))
    # result axes: (site k, system, remaining sites in order)
    out = np.moveaxis(out, [0, 1], [k, n])
    return chain.replace(out)


def project_site(chain, k, m):
    """Unnormalized projection of site ``k`` onto Fock level ``m``."""
    idx = [slice(None)] * chain.amplitudes.ndim
    out = np.zeros_like(chain.amplitudes)
    idx[k] = m
    out[tuple(idx)] = chain.amplitudes[tuple(idx)]
    return chain.replace(out)


def measure_site(chain, k):
    """Photon-number measurement of site ``k``: ``[(m, probability, post_state)]``.

    Post states are normalized; zero-probability outcomes carry ``None``.
    """
    if not 0 <= k < chain.n:
        raise IndexError("site outside the chain")
    total = chain.norm() ** 2
    table = []
    for m in range(chain.D):
        proj = project_site(chain, k, m)
        p = proj.norm() ** 2 / total
        post = proj.replace(proj.amplitudes / np.sqrt(p * total)) if p > 0 else None
        table.append((m, p, post))
    return table


def site_photon_distribution(profile, site, D=None):
    """Photon-number law of one site of the bare wave packet (binomial)."""
    N = profile.n_photons
    x = profile.tau * abs(profile.xi[site]) ** 2
    D = N + 1 if D is None else D
    return np.array([comb(N, m) * x**m * (1 - x) ** (N - m) if m <= N else 0.0 for m in range(D)])


def exact_conditional_hierarchy(chain, outcomes):
    """Hierarchy vectors read off a chain whose first ``len(outcomes)`` sites were measured.

    ``chain`` must hold the unnormalized branch (projected, not renormalized)
    so that the vectors carry the trajectory weight. Returns
    ``(VectorHierarchy, residual)``; the residual is the norm of the part of
    the unmeasured tail outside ``span{|M_xi>} (x) system``.
    """
    j = len(outcomes)
    prof = chain.profile
    N = prof.n_photons
    tail = chain.amplitudes[tuple(outcomes)]
    vecs = np.zeros((N + 1, chain.d), dtype=complex)
    recon = np.zeros_like(tail)
    for M in range(N + 1):
        seg = photon_segment(prof, j, chain.n - 1, M, chain.D)
        weight = prof.remaining[min(j, prof.horizon_steps)] ** M
        if weight <= 0:
            continue
        overlap = np.tensordot(seg.amplitudes.conj(), tail, axes=seg.amplitudes.ndim)
        vecs[M] = overlap / weight
        recon = recon + np.multiply.outer(seg.amplitudes, vecs[M])
    residual = float(np.linalg.norm(tail - recon))
    return VectorHierarchy(vecs, j), residual


@dataclass(frozen=True, eq=False)
class OutcomeEntry:
    probability: float
    state: np.ndarray
    hierarchy: VectorHierarchy
    residual: float


def exact_outcome_distribution(model, profile, n, D, psi, include_prefixes=False):
    """Enumerate every outcome string by alternating collisions and measurements.

    Returns ``{outcomes: OutcomeEntry}`` for all strings of length ``n``
    (every prefix too with ``include_prefixes``). ``state`` is the normalized
    conditional system density matrix.
    """
    if D ** n * len(psi) > MAX_AMPLITUDES:
        raise CapabilityError(f"D^n * d = {D ** n * len(psi)} exceeds {MAX_AMPLITUDES}")
    chain = build_chain_state(profile, n, D, psi)
    U = collision_unitary(model, profile.tau, D)
    out = {}

    def record(branch, outcomes):
        h, res = exact_conditional_hierarchy(branch, outcomes)
        tail = branch.amplitudes[tuple(outcomes)]
        flat = tail.reshape(-1, branch.d)
        rho = flat.T @ flat.conj()
        p = float(np.trace(rho).real)
        out[tuple(outcomes)] = OutcomeEntry(p, rho / p if p > 0 else rho, h, res)

    def descend(branch, outcomes):
        j = len(outcomes)
        if include_prefixes or j == n:
            record(branch, outcomes)
        if j == n:
            return
        evolved = apply_collision_unitary(branch, model, j, profile.tau, U)
        for m in range(D):
            proj = project_site(evolved, j, m)
            if proj.norm() ** 2 <= ZERO_BRANCH:
                continue
            descend(proj, outcomes + [m])

    descend(chain, [])
    return out


def expected_total_counts(model, profile, n, D, psi):
    """Mean number of photons registered over all ``n`` sites.

    Measurements of earlier sites commute with later collisions, so the
    mean equals the number expectation in the fully evolved, unmeasured state.
    """
    chain = build_chain_state(profile, n, D, psi)
    U = collision_unitary(model, profile.tau, D)
    for k in range(n):
        chain = apply_collision_unitary(chain, model, k, profile.tau, U)
    probs = np.abs(chain.amplitudes) ** 2
    total = 0.0
    for k in range(n):
        marginal = probs.sum(axis=tuple(a for a in range(probs.ndim) if a != k))
        total += float(np.arange(D) @ marginal)
    return total


def all_outcome_strings(D, n):
    return list(product(range(D), repeat=n))
