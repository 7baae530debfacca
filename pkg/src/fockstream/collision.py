"""Repeated-interaction (collision) engine for an N-photon input.

The environment is a chain of oscillators; site ``j`` meets the system
during ``[j tau, (j+1) tau)`` and is then measured in the Fock basis. The
joint conditional state keeps the form ``sum_M |M_xi>_[j,inf) (x) |psi^M_j>``,
so the system-side data is the list of ``N + 1`` vectors ``psi^M``, indexed
by the number of photons still stored in the unseen part of the field.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np

from .errors import (
    CapabilityError,
    DeadTrajectoryError,
    NormalizationError,
    OutcomeOutOfTruncationError,
    SingularityError,
    TruncationError,
)
from .model import basis_state, lowering
from .numerics import dag, expm
from .rng import path_uniforms

EXACT = "exact"
FIRST_ORDER = "first-order"

DEAD_WEIGHT = 1e-300
MAX_V00_CONDITION = 1e8


@dataclass(frozen=True, eq=False)
class CollisionBlocks:
    """Fock-basis blocks ``V[M, M'] = <M| exp(-i tau H_k) |M'>`` acting on the system."""

    blocks: np.ndarray
    tau: float
    mode: str = EXACT

    @property
    def D(self):
        return self.blocks.shape[0]

    @property
    def d(self):
        return self.blocks.shape[-1]

    def unitarity_defect(self, upto=None):
        """max over M, M' <= upto of ||sum_R V_RM'^dag V_RM - delta I||."""
        k = self.D if upto is None else upto + 1
        V = self.blocks[:, :k]
        gram = np.einsum("rbji,rajk->baik", V.conj(), V)
        target = np.einsum("ab,ik->baik", np.eye(k), np.eye(self.d))
        return float(np.max(np.abs(gram - target)))


def build_collision_blocks(model, tau, truncation=None, n_photons=None):
    """Exact blocks of one collision unitary on a ``truncation``-level ancilla.

    The default truncation is ``n_photons + 4``. With a photon number given,
    fewer than ``n_photons + 2`` levels is rejected.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    D = (n_photons or 0) + 4 if truncation is None else int(truncation)
    if D < 2:
        raise TruncationError("ancilla truncation needs at least 2 levels")
    if n_photons is not None and D < n_photons + 2:
        raise TruncationError(f"truncation {D} cannot hold {n_photons} + 2 Fock levels")
    d = model.d
    b = lowering(D)
    Hk = np.kron(np.eye(D), model.H) + (1j / np.sqrt(tau)) * (np.kron(dag(b), model.L) - np.kron(b, dag(model.L)))
    U = expm(Hk, -1j * tau)
    blocks = U.reshape(D, d, D, d).transpose(0, 2, 1, 3).copy()
    return CollisionBlocks(blocks, float(tau), EXACT)


def first_order_blocks(model, tau):
    """Blocks truncated at first order in tau; only outcomes 0 and 1 survive."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    d = model.d
    I = np.eye(d, dtype=complex)
    blocks = np.zeros((2, 2, d, d), dtype=complex)
    blocks[0, 0] = I - 1j * tau * model.H - 0.5 * tau * model.LdL
    blocks[1, 0] = np.sqrt(tau) * model.L
    blocks[0, 1] = -np.sqrt(tau) * dag(model.L)
    blocks[1, 1] = I
    return CollisionBlocks(blocks, float(tau), FIRST_ORDER)


@dataclass(frozen=True, eq=False)
class VectorHierarchy:
    """Unnormalized conditional vectors ``vectors[M] = |psi^M_j>`` at step ``j``."""

    vectors: np.ndarray
    step: int = 0

    @property
    def n_photons(self):
        return self.vectors.shape[0] - 1

    @property
    def d(self):
        return self.vectors.shape[1]


def initial_vectors(psi, n_photons):
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise NormalizationError("initial system state must be normalized")
    vecs = np.zeros((n_photons + 1, psi.size), dtype=complex)
    vecs[n_photons] = psi
    return VectorHierarchy(vecs, 0)


def recurrence_coefficients(n_photons, amplitude):
    """``c[M, M'] = sqrt(C(M+M', M')) amplitude**M'`` for ``M + M' <= N``, else 0."""
    K = n_photons + 1
    c = np.zeros((K, K), dtype=complex)
    for M in range(K):
        for Mp in range(K - M):
            c[M, Mp] = np.sqrt(comb(M + Mp, Mp)) * amplitude**Mp
    return c


def candidate_vectors(vectors, blocks, xi, tau):
    """Next-step hierarchies for every outcome, shape ``(..., D, N+1, d)``."""
    K = vectors.shape[-2]
    c = recurrence_coefficients(K - 1, np.sqrt(tau) * xi)
    out = np.zeros(vectors.shape[:-2] + (blocks.D, K, vectors.shape[-1]), dtype=complex)
    for Mp in range(min(K, blocks.D)):
        Vpsi = np.einsum("eij,...mj->...emi", blocks.blocks[:, Mp], vectors[..., Mp:, :])
        out[..., :, : K - Mp, :] += c[: K - Mp, Mp][:, None] * Vpsi
    return out


def step_hierarchy_vectors(h, blocks, profile, eta):
    """Advance the hierarchy by one collision followed by outcome ``eta``."""
    j = h.step
    if j >= profile.horizon_steps:
        raise IndexError(f"step {j} is at or past the horizon {profile.horizon_steps}")
    if not 0 <= eta < blocks.D:
        raise OutcomeOutOfTruncationError(f"outcome {eta} outside truncation {blocks.D}")
    cand = candidate_vectors(h.vectors, blocks, profile.xi[j], profile.tau)
    return VectorHierarchy(cand[eta], j + 1)


def _level_weights(profile, j, K):
    return profile.remaining[j] ** np.arange(K)


def trajectory_weight(h, profile, j=None):
    """Probability of the outcome string that produced ``h``."""
    j = h.step if j is None else j
    p = _level_weights(profile, j, h.vectors.shape[0])
    return float(np.sum(p * np.sum(np.abs(h.vectors) ** 2, axis=-1)))


def outcome_distribution(h, blocks, profile):
    """Conditional probabilities of the next outcome, one entry per Fock level.

    Computed by tentative stepping, so exact blocks give a table summing to 1;
    first-order blocks give the raw two-entry table (sum is 1 + O(tau^2)).
    """
    w = trajectory_weight(h, profile)
    if w <= DEAD_WEIGHT:
        raise DeadTrajectoryError("trajectory weight is zero")
    j = h.step
    cand = candidate_vectors(h.vectors, blocks, profile.xi[j], profile.tau)
    p = _level_weights(profile, j + 1, cand.shape[-2])
    return np.sum(p * np.sum(np.abs(cand) ** 2, axis=-1), axis=-1) / w


def field_photon_distribution(h, profile, j=None):
    """Probability that the unseen field still holds M photons, M = 0..N."""
    j = h.step if j is None else j
    p = _level_weights(profile, j, h.vectors.shape[0])
    w = p * np.sum(np.abs(h.vectors) ** 2, axis=-1)
    total = w.sum()
    if total <= DEAD_WEIGHT:
        raise DeadTrajectoryError("trajectory weight is zero")
    return w / total


def conditional_state(h, profile):
    """Normalized a posteriori system density matrix."""
    p = _level_weights(profile, h.step, h.vectors.shape[0])
    rho = np.einsum("m,mi,mj->ij", p, h.vectors, h.vectors.conj())
    tr = np.trace(rho).real
    if tr <= DEAD_WEIGHT:
        raise DeadTrajectoryError("trajectory weight is zero")
    return rho / tr


@dataclass(frozen=True)
class DetectionRecord:
    """Outcome string ``eta_1..eta_n`` of one sampled trajectory.

    ``weight`` is the product of the drawn conditional probabilities. A dead
    record stopped early at ``steps_done``; its remaining outcomes are absent.
    """

    outcomes: tuple
    weight: float
    tau: float
    seed: int = 0
    path_index: int = 0
    dead: bool = False
    steps_done: int = field(default=-1)

    @property
    def count_steps(self):
        """Steps ``l`` (1-based) that registered photons, repeated per photon."""
        return tuple(l + 1 for l, e in enumerate(self.outcomes) for _ in range(e))

    @property
    def count_times(self):
        return tuple(l * self.tau for l in self.count_steps)

    @property
    def total_counts(self):
        return int(sum(self.outcomes))


def _run_batch(profile, blocks, psi, uniforms, keep_history):
    P, n = uniforms.shape
    N = profile.n_photons
    vecs = np.zeros((P, N + 1, psi.size), dtype=complex)
    vecs[:, N] = psi
    weight = np.ones(P)
    # hierarchy normalized to unit trajectory weight; true weight kept apart
    outcomes = np.zeros((P, n), dtype=np.int64)
    alive = np.ones(P, dtype=bool)
    done = np.full(P, n)
    history = [vecs.copy()] if keep_history else None
    rows = np.arange(P)
    for j in range(n):
        cand = candidate_vectors(vecs, blocks, profile.xi[j], profile.tau)
        p_next = _level_weights(profile, j + 1, N + 1)
        probs = np.sum(p_next * np.sum(np.abs(cand) ** 2, axis=-1), axis=-1)
        total = probs.sum(axis=1)
        newly_dead = alive & (total <= DEAD_WEIGHT)
        done[newly_dead] = j
        alive &= ~newly_dead
        if blocks.mode == FIRST_ORDER:
            probs = probs / np.where(total > 0, total, 1.0)[:, None]
        cum = np.cumsum(probs, axis=1)
        eta = np.minimum(np.sum(cum <= uniforms[:, j : j + 1] * cum[:, -1:], axis=1), blocks.D - 1)
        # never pick a zero-probability outcome through rounding at the top of the table
        while True:
            bad = probs[rows, eta] <= 0.0
            if not np.any(bad & alive):
                break
            eta = np.where(bad & alive, eta - 1, eta)
        pe = probs[rows, eta]
        new = cand[rows, eta]
        norm = np.sqrt(np.where(pe > 0, pe, 1.0))
        new = new / norm[:, None, None]
        vecs = np.where(alive[:, None, None], new, vecs)
        weight = np.where(alive, weight * pe, weight)
        outcomes[:, j] = np.where(alive, eta, 0)
        if keep_history:
            history.append(vecs * np.sqrt(weight)[:, None, None])
    return outcomes, weight, alive, done, history


def sample_trajectories(model, profile, blocks, seed, path_indices, psi=None, keep_history=False):
    """Sample independent trajectories for the given path indices.

    Each path consumes its own counter-based stream, so results do not depend
    on batching. ``psi`` defaults to basis state 0. Returns
    ``(records, histories)``; ``histories[i]`` lists the unnormalized
    hierarchies after each step when ``keep_history`` is set.
    """
    psi = basis_state(model.d, 0) if psi is None else np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise NormalizationError("initial system state must be normalized")
    if psi.size != model.d or blocks.d != model.d:
        raise ValueError("state, model and blocks disagree on the system dimension")
    n = profile.horizon_steps
    if n < 1:
        raise ValueError("profile horizon must be at least one step")
    path_indices = list(path_indices)
    u = path_uniforms(seed, path_indices, n)
    outcomes, weight, alive, done, history = _run_batch(profile, blocks, psi, u, keep_history)
    records, histories = [], []
    for i, idx in enumerate(path_indices):
        steps = n if alive[i] else int(done[i])
        records.append(
            DetectionRecord(
                tuple(int(e) for e in outcomes[i, :steps]),
                float(weight[i]),
                profile.tau,
                int(seed),
                int(idx),
                not bool(alive[i]),
                steps,
            )
        )
        if keep_history:
            histories.append([VectorHierarchy(hs[i], j) for j, hs in enumerate(history[: steps + 1])])
    return records, (histories if keep_history else None)


def sample_trajectory(model, profile, blocks, seed, psi=None, path_index=0):
    """One trajectory: ``(DetectionRecord, [VectorHierarchy per step])``."""
    records, histories = sample_trajectories(model, profile, blocks, seed, [path_index], psi, keep_history=True)
    return records[0], histories[0]


def stacked_step_maps(blocks, profile, j):
    """Outcome-resolved step maps on the stacked vector ``(psi^0, ..., psi^N)``."""
    N = profile.n_photons
    d = blocks.d
    K = N + 1
    c = recurrence_coefficients(N, np.sqrt(profile.tau) * profile.xi[j])
    A = np.zeros((blocks.D, K * d, K * d), dtype=complex)
    for M in range(K):
        for Mp in range(min(K - M, blocks.D)):
            A[:, M * d : (M + 1) * d, (M + Mp) * d : (M + Mp + 1) * d] = c[M, Mp] * blocks.blocks[:, Mp]
    return A


def discrete_count_statistics(profile, blocks, psi, s_max):
    """Probabilities ``P[j, s]`` of exactly ``s`` counts during the first ``j`` steps.

    Sums trajectory weights sector by sector through the stacked density
    ``sum psi psi^dag`` of all strings with a given count, so the cost is
    linear in the horizon. Counts above ``s_max`` are dropped.
    """
    psi = np.asarray(psi, dtype=complex)
    N = profile.n_photons
    d = psi.size
    K = N + 1
    n = profile.horizon_steps
    R = np.zeros((s_max + 1, K * d, K * d), dtype=complex)
    R[0, N * d :, N * d :] = np.outer(psi, psi.conj())
    P = np.zeros((n + 1, s_max + 1))

    def traces(R, j):
        p = profile.remaining[j] ** np.arange(K)
        diag = np.einsum("sii->si", R).real.reshape(s_max + 1, K, d).sum(axis=-1)
        return diag @ p

    P[0] = traces(R, 0)
    for j in range(n):
        A = stacked_step_maps(blocks, profile, j)
        new = np.zeros_like(R)
        for eta in range(blocks.D):
            if eta > s_max:
                break
            moved = A[eta] @ R[: s_max + 1 - eta] @ dag(A[eta])
            new[eta:] += moved
        R = new
        P[j + 1] = traces(R, j + 1)
    return P


@dataclass(frozen=True)
class NoCounts:
    """No photon registered during steps 1..j."""

    j: int


@dataclass(frozen=True)
class SingleCount:
    """Exactly one photon, registered at step ``l1`` (1-based), within steps 1..j."""

    l1: int
    j: int


def _power_table(V, n):
    P = [np.eye(V.shape[0], dtype=complex)]
    for _ in range(n):
        P.append(V @ P[-1])
    return P


def _inverse_power_table(V, n):
    """``V^{-k-1}`` for k = 0..n-1 by repeated linear solves."""
    out = []
    X = np.eye(V.shape[0], dtype=complex)
    for _ in range(n):
        X = np.linalg.solve(V, X)
        out.append(X)
    return out


def closed_form_conditional(model, profile, condition, psi=None):
    """Explicit first-order solutions for no counts or one count.

    ``NoCounts`` is available for any photon number; ``SingleCount`` covers
    N <= 2 (all levels of the hierarchy). Returns the hierarchy at step j.
    """
    psi = basis_state(model.d, 0) if psi is None else np.asarray(psi, dtype=complex)
    N = profile.n_photons
    tau = profile.tau
    xi = profile.xi
    blocks = first_order_blocks(model, tau)
    V00, V01 = blocks.blocks[0, 0], blocks.blocks[0, 1]
    V10, V11 = blocks.blocks[1, 0], blocks.blocks[1, 1]
    j = condition.j
    if not 0 <= j <= profile.horizon_steps:
        raise IndexError("condition lies outside the horizon")
    if np.linalg.cond(V00) > MAX_V00_CONDITION:
        raise SingularityError("V00 is too ill-conditioned to invert")
    P = _power_table(V00, j)
    vecs = np.zeros((N + 1, psi.size), dtype=complex)

    if isinstance(condition, NoCounts):
        Y = _inverse_power_table(V00, j)
        W = [Y[k] @ (np.sqrt(tau) * xi[k] * V01) @ P[k] for k in range(j)]
        vecs[N] = P[j] @ psi
        # B[m] = sum over k_1 < ... < k_m <= current step of W_{k_m}...W_{k_1} psi
        B = [psi.copy()] + [np.zeros_like(psi) for _ in range(N)]
        for k in range(j):
            for m in range(N, 0, -1):
                B[m] = B[m] + W[k] @ B[m - 1]
        for M in range(1, N + 1):
            vecs[N - M] = np.sqrt(factorial(N) / factorial(N - M)) * (P[j] @ B[M])
        return VectorHierarchy(vecs, j)

    if not isinstance(condition, SingleCount):
        raise TypeError(f"unsupported condition {condition!r}")
    if N > 2:
        raise CapabilityError("single-count closed form is implemented for N <= 2")
    l = condition.l1
    if not 1 <= l <= j:
        raise IndexError("count step must satisfy 1 <= l1 <= j")
    vecs[N] = P[j - l] @ V10 @ P[l - 1] @ psi
    if N >= 1:
        Y = _inverse_power_table(V00, max(l - 1, 0))
        t1 = P[j - l] @ (xi[l - 1] * V11) @ P[l - 1] @ psi
        inner = sum((Y[k] @ (xi[k] * V01) @ P[k] @ psi for k in range(l - 1)), np.zeros_like(psi))
        t2 = P[j - l] @ V10 @ P[l - 1] @ inner
        t3 = sum(
            (P[j - k - 1] @ (xi[k] * V01) @ P[k - l] @ V10 @ P[l - 1] @ psi for k in range(l, j)),
            np.zeros_like(psi),
        )
        vecs[N - 1] = np.sqrt(tau * N) * (t1 + t2 + t3)
    if N >= 2:
        zero = np.zeros_like(psi)
        before = sum((P[l - k - 2] @ (xi[k] * V01) @ P[k] @ psi for k in range(l - 1)), zero)
        u1 = P[j - l] @ (xi[l - 1] * V11) @ before
        u2 = sum(
            (P[j - k - 1] @ (xi[k] * V01) @ P[k - l] @ (xi[l - 1] * V11) @ P[l - 1] @ psi for k in range(l, j)),
            zero,
        )
        u3 = zero
        for k2 in range(1, l - 1):
            for k1 in range(k2):
                u3 = u3 + P[l - k2 - 2] @ (xi[k2] * V01) @ P[k2 - k1 - 1] @ (xi[k1] * V01) @ P[k1] @ psi
        u3 = P[j - l] @ V10 @ u3
        u4 = zero
        emitted = V10 @ P[l - 1] @ psi
        for k2 in range(l + 1, j):
            for k1 in range(l, k2):
                u4 = u4 + P[j - k2 - 1] @ (xi[k2] * V01) @ P[k2 - k1 - 1] @ (xi[k1] * V01) @ P[k1 - l] @ emitted
        u5 = sum((P[j - k2 - 1] @ (xi[k2] * V01) @ P[k2 - l] @ V10 @ before for k2 in range(l, j)), zero)
        vecs[N - 2] = np.sqrt(N * (N - 1)) * tau * (u1 + u2 + u3 + u4 + u5)
    return VectorHierarchy(vecs, j)
