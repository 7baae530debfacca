"""Conditional and averaged density-operator hierarchies in discrete time.

A hierarchy is an ``(N+1, N+1, d, d)`` array of blocks ``rho[M, M']``;
block ``[N, N]`` is the system state, the others carry the memory of the
wave packet. Indices that fall below zero stand for zero blocks.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import ImpossibleJumpError, NormalizationError, PositivityViolationError
from .numerics import dag

IMAG_TOL = 1e-10
POSITIVITY_TOL = 1e-10
JUMP_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class DensityHierarchy:
    blocks: np.ndarray
    step: int = 0
    normalized: bool = True

    @property
    def n_photons(self):
        return self.blocks.shape[0] - 1

    @property
    def d(self):
        return self.blocks.shape[-1]

    @property
    def state(self):
        """System density matrix, block ``[N, N]``."""
        return self.blocks[-1, -1]

    def hermiticity_defect(self):
        return float(np.max(np.abs(self.blocks - dag(self.blocks).transpose(1, 0, 2, 3))))


def init_hierarchy(psi, n_photons):
    """Blocks ``N!/M! |psi><psi|`` on the diagonal, zero elsewhere."""
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise NormalizationError("initial system state must be normalized")
    N = n_photons
    blocks = np.zeros((N + 1, N + 1, psi.size, psi.size), dtype=complex)
    proj = np.outer(psi, psi.conj())
    for M in range(N + 1):
        blocks[M, M] = factorial(N) / factorial(M) * proj
    return DensityHierarchy(blocks, 0, True)


def shift_left(blocks):
    """``out[M, M'] = blocks[M-1, M']``."""
    out = np.zeros_like(blocks)
    out[1:] = blocks[:-1]
    return out


def shift_right(blocks):
    """``out[M, M'] = blocks[M, M'-1]``."""
    out = np.zeros_like(blocks)
    out[:, 1:] = blocks[:, :-1]
    return out


def symmetrize(blocks):
    return 0.5 * (blocks + dag(blocks).transpose(1, 0, 2, 3))


def _jump_blocks(model, blocks, xi):
    """Unnormalized jump map ``(L + xi * lower) rho (L + xi * lower)^dag`` on every block."""
    L = model.L
    Ld = dag(L)
    return (
        L @ blocks @ Ld
        + np.conj(xi) * (L @ shift_right(blocks))
        + xi * (shift_left(blocks) @ Ld)
        + abs(xi) ** 2 * shift_left(shift_right(blocks))
    )


def _no_jump_generator(model, blocks, xi):
    """Linear no-jump part: ``-i[H, r] - {LdL, r}/2 - r^{M,M'-1} L xi* - L^dag r^{M-1,M'} xi - |xi|^2 r^{M-1,M'-1}``."""
    H, L = model.H, model.L
    LdL = model.LdL
    return (
        -1j * (H @ blocks - blocks @ H)
        - 0.5 * (LdL @ blocks + blocks @ LdL)
        - np.conj(xi) * (shift_right(blocks) @ L)
        - xi * (dag(L) @ shift_left(blocks))
        - abs(xi) ** 2 * shift_left(shift_right(blocks))
    )


def master_generator(model, blocks, xi):
    """Averaged generator; equals the no-jump part plus the jump map."""
    return _no_jump_generator(model, blocks, xi) + _jump_blocks(model, blocks, xi)


def intensity(model, h, xi):
    """Detector click rate for the current conditional hierarchy."""
    val = np.trace(_jump_blocks(model, h.blocks, xi)[-1, -1])
    if abs(val.imag) > IMAG_TOL * max(1.0, abs(val.real)):
        raise PositivityViolationError(f"intensity has imaginary part {val.imag}")
    if val.real < -POSITIVITY_TOL:
        raise PositivityViolationError(f"negative intensity {val.real}")
    return float(max(val.real, 0.0))


def _unnormalized_step(model, blocks, xi, tau, eta):
    """Linear update whose trace at ``[N, N]`` is the outcome probability to first order."""
    if eta == 0:
        return blocks + tau * _no_jump_generator(model, blocks, xi)
    if eta == 1:
        return tau * _jump_blocks(model, blocks, xi)
    raise ValueError("outcome must be 0 or 1")


def filter_step(model, h, xi, tau, eta):
    """Condition the hierarchy on one detector outcome ``eta``."""
    if eta == 0:
        k = intensity(model, h, xi)
        new = h.blocks + tau * (k * h.blocks + _no_jump_generator(model, h.blocks, xi))
    elif eta == 1:
        k = intensity(model, h, xi)
        if k <= JUMP_FLOOR:
            raise ImpossibleJumpError(f"click with intensity {k}")
        new = _jump_blocks(model, h.blocks, xi) / k
    else:
        raise ValueError("outcome must be 0 or 1")
    new = symmetrize(new)
    tr = np.trace(new[-1, -1]).real
    if tr <= 0:
        raise PositivityViolationError("conditional state lost its trace")
    return DensityHierarchy(new / tr, h.step + 1, True)


def apriori_step(model, h, xi, tau):
    """Outcome-averaged update of the hierarchy."""
    new = symmetrize(h.blocks + tau * master_generator(model, h.blocks, xi))
    return DensityHierarchy(new, h.step + 1, h.normalized)


def outcome_probabilities(model, h, xi, tau):
    """First-order outcome law ``(1 - k tau, k tau)``."""
    k = intensity(model, h, xi)
    return np.array([1.0 - k * tau, k * tau])


def density_from_vectors(vh, profile, j=None, normalize=True):
    """Density hierarchy built from conditional vectors.

    ``rho[M, M'] = sum_R p^R sqrt((R+N-M)!/R!) sqrt((R+N-M')!/R!) |psi^{R+N-M}><psi^{R+N-M'}|``,
    the field trace of the joint state with ``M`` and ``M'`` photons already
    taken out of the wave packet on either side. Normalized by the trace of
    block ``[N, N]`` unless ``normalize`` is false.
    """
    j = vh.step if j is None else j
    N = vh.n_photons
    p = profile.remaining[j]
    v = vh.vectors
    blocks = np.zeros((N + 1, N + 1, vh.d, vh.d), dtype=complex)
    for M in range(N + 1):
        for Mp in range(N + 1):
            for R in range(min(M, Mp) + 1):
                a, b = R + N - M, R + N - Mp
                c = p**R * np.sqrt(factorial(a) / factorial(R) * factorial(b) / factorial(R))
                blocks[M, Mp] += c * np.outer(v[a], v[b].conj())
    if normalize:
        tr = np.trace(blocks[-1, -1]).real
        if tr <= 0:
            raise NormalizationError("vector hierarchy has zero weight")
        blocks = blocks / tr
    return DensityHierarchy(blocks, j, normalize)


def run_filter(model, profile, psi, outcomes):
    """Filter a whole outcome string; returns the list of hierarchies."""
    h = init_hierarchy(psi, profile.n_photons)
    out = [h]
    for j, eta in enumerate(outcomes):
        h = filter_step(model, h, profile.xi[j], profile.tau, eta)
        out.append(h)
    return out


def run_apriori(model, profile, psi, steps=None):
    steps = profile.horizon_steps if steps is None else steps
    h = init_hierarchy(psi, profile.n_photons)
    out = [h]
    for j in range(steps):
        h = apriori_step(model, h, profile.xi[j], profile.tau)
        out.append(h)
    return out
