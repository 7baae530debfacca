"""Closed-form continuous-time solutions built from elementary processes.

Between detector clicks the system evolves with ``T_t = exp(-i G t)``,
``G = H - (i/2) L^dag L``. In the interaction picture of ``T`` three
kinds of events build every conditional vector:

* ``*``  a click caused by a wave-packet photon reaching the detector
  directly (factor ``xi(t_i)``),
* ``o``  a click from a photon emitted by the system
  (``T_{-t_i} L T_{t_i}``),
* ``.``  absorption of a wave-packet photon by the system at an integrated
  time ``u`` (``W_u = -xi(u) T_{-u} L^dag T_u``).

A diagram fixes the label of every click and how many absorptions happen in
each gap between clicks; within a gap the absorptions are time ordered and
integrated. The vector with ``M`` photons taken from an ``N``-photon packet is
``sqrt(N!/(N-M)!) T_t`` times the sum of all diagrams.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb, factorial

import numpy as np

from .errors import CapabilityError, HorizonTooShortError
from .model import basis_state
from .numerics import MAX_SIMPLEX_ORDER, dag, expm, iterated_integrals, quadrature_nodes, trapezoid_weights

DIRECT = "*"
EMISSION = "o"
GLYPHS = {DIRECT: "∗", EMISSION: "∘", "bullet": "•"}
TAIL_TOL = 1e-3


class Propagator:
    """No-click evolution ``T_t = exp(-i G t)`` with a small cache."""

    def __init__(self, model):
        self.G = np.asarray(model.G)
        self._cache = {}

    def matrix(self, t):
        """``T_t`` for any real ``t``; negative times give the inverse."""
        key = float(t)
        if key not in self._cache:
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = expm(self.G, -1j * key)
        return self._cache[key]

    def apply(self, t, psi):
        if t < 0:
            raise ValueError("propagation time must be nonnegative")
        return self.matrix(t) @ np.asarray(psi, dtype=complex)


def propagator_apply(model, t, psi):
    return Propagator(model).apply(t, psi)


@dataclass(frozen=True)
class Diagram:
    """Click labels (earliest first) and absorption counts per gap.

    ``bullets[g]`` sits in gap ``g``: before the first click for ``g = 0``,
    after the last one for ``g = s``.
    """

    labels: tuple
    bullets: tuple

    @property
    def s(self):
        return len(self.labels)

    @property
    def absorbed(self):
        """Photons taken from the wave packet, ``#* + #.``."""
        return self.labels.count(DIRECT) + sum(self.bullets)

    @property
    def order(self):
        return self.s + sum(self.bullets)

    def render(self):
        """Events left to right in time, e.g. ``-o-•-``."""
        parts = [GLYPHS["bullet"]] * self.bullets[0]
        for lab, n in zip(self.labels, self.bullets[1:]):
            parts.append(GLYPHS[lab])
            parts.extend([GLYPHS["bullet"]] * n)
        return "-" + "-".join(parts) + "-" if parts else "--"


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_diagrams(s, M, N=None):
    """All diagrams with ``s`` clicks that take ``M`` photons from the packet."""
    if s < 0 or M < 0 or (N is not None and M > N):
        return []
    out = []
    for a in range(min(s, M) + 1):
        for direct in combinations(range(s), a):
            labels = tuple(DIRECT if i in direct else EMISSION for i in range(s))
            for bullets in _compositions(M - a, s + 1):
                out.append(Diagram(labels, bullets))
    return out


def diagram_count(s, M):
    """Closed-form size of ``enumerate_diagrams(s, M)``."""
    return sum(comb(s, a) * comb(M - a + s, s) for a in range(min(s, M) + 1))


class _Kernels:
    """Interaction-picture events for one model and pulse."""

    def __init__(self, model, pulse):
        self.model = model
        self.pulse = pulse
        self.T = Propagator(model)
        self.L = np.asarray(model.L)
        self.Ld = dag(self.L)

    def absorption(self, eval_times, times):
        xi = self.pulse.amplitude(eval_times)
        return np.array([-x * self.T.matrix(-u) @ self.Ld @ self.T.matrix(u) for x, u in zip(xi, times)])

    def emission(self, t):
        return self.T.matrix(-t) @ self.L @ self.T.matrix(t)

    def ordered_absorptions(self, a, b, m, steps):
        """``int_{a < u_1 < ... < u_m < b} W_{u_m} ... W_{u_1}`` by nested trapezoids."""
        d = self.L.shape[0]
        if m == 0:
            return np.eye(d, dtype=complex)
        if b <= a:
            return np.zeros((d, d), dtype=complex)
        times, evals, lengths = quadrature_nodes(a, b, steps, self.pulse.breakpoints)
        W = self.absorption(evals, times)
        return iterated_integrals(W, lengths, m)[m, -1]


def _check_order(order):
    if order > MAX_SIMPLEX_ORDER:
        raise CapabilityError(f"diagram order {order} exceeds configured maximum {MAX_SIMPLEX_ORDER}")


def _check_times(count_times, t):
    c = np.asarray(count_times, dtype=float)
    if c.size and (np.any(np.diff(c) <= 0) or c[0] < 0 or c[-1] > t):
        raise ValueError("click times must be strictly increasing within [0, t]")
    return c


def _click_amplitude(pulse, c, side=-1):
    # left limit by default, so a click at a pulse edge sees the pulse
    return pulse.amplitude(np.array([c + side * 1e-12 * max(1.0, abs(c))]))[0]


def diagram_contributions(model, pulse, count_times, M, t, grid_steps=400, psi=None):
    """``[(Diagram, vector)]`` in the interaction picture, without prefactor or ``T_t``."""
    psi = basis_state(model.d, 0) if psi is None else np.asarray(psi, dtype=complex)
    c = _check_times(count_times, t)
    s = c.size
    _check_order(s + M)
    ker = _Kernels(model, pulse)
    edges = [0.0] + list(c) + [float(t)]
    cache = {}

    def gap(g, m):
        if (g, m) not in cache:
            span = edges[g + 1] - edges[g]
            steps = max(2, int(np.ceil(grid_steps * span / max(t, 1e-300))))
            cache[g, m] = ker.ordered_absorptions(edges[g], edges[g + 1], m, steps)
        return cache[g, m]

    clicks = {}
    for i, ci in enumerate(c):
        clicks[DIRECT, i] = _click_amplitude(pulse, ci) * np.eye(model.d)
        clicks[EMISSION, i] = ker.emission(ci)
    out = []
    for dg in enumerate_diagrams(s, M, pulse.n_photons):
        v = gap(0, dg.bullets[0]) @ psi
        for i, lab in enumerate(dg.labels):
            v = gap(i + 1, dg.bullets[i + 1]) @ (clicks[lab, i] @ v)
        out.append((dg, v))
    return out


def eval_conditional_vector(model, pulse, count_times, M, t=None, grid_steps=400, psi=None):
    """Conditional vector with ``M`` photons taken from the packet, clicks at ``count_times``.

    Reported as a density in the click times (no ``sqrt(dt)`` factors).
    """
    N = pulse.n_photons
    c = np.asarray(count_times, dtype=float)
    t = float(c[-1]) if t is None else float(t)
    if not 0 <= M <= N:
        raise ValueError("need 0 <= M <= N")
    parts = diagram_contributions(model, pulse, c, M, t, grid_steps, psi)
    total = sum((v for _, v in parts), np.zeros(model.d, dtype=complex))
    return np.sqrt(factorial(N) / factorial(N - M)) * Propagator(model).apply(t, total)


def conditional_vectors(model, pulse, count_times, t, grid_steps=400, psi=None):
    """Array ``v[K]`` of vectors with ``K`` photons left in the packet, K = 0..N."""
    N = pulse.n_photons
    out = np.zeros((N + 1, model.d), dtype=complex)
    for M in range(N + 1):
        out[N - M] = eval_conditional_vector(model, pulse, count_times, M, t, grid_steps, psi)
    return out


def _remaining(pulse, t):
    return float(np.clip(pulse.remaining(np.array([t]))[0], 0.0, 1.0))


def exclusive_density(model, pulse, count_times, t, grid_steps=400, psi=None):
    """Density of clicks exactly at ``count_times`` and nowhere else in ``[0, t]``."""
    v = conditional_vectors(model, pulse, count_times, t, grid_steps, psi)
    p = _remaining(pulse, t) ** np.arange(v.shape[0])
    return float(np.sum(p * np.sum(np.abs(v) ** 2, axis=1)))


def no_count_probability(model, pulse, t, grid_steps=400, psi=None):
    """Probability of no click in ``[0, t]``."""
    if t == 0:
        return 1.0
    return exclusive_density(model, pulse, (), t, grid_steps, psi)


@dataclass(frozen=True, eq=False)
class CountStatistics:
    """Click statistics on the node grid of ``[0, horizon]``.

    ``probability[s]`` is the chance of exactly ``s`` clicks in the whole
    window, ``density[s - 1, i]`` the density of the ``s``-th click at
    ``nodes[i]`` and ``weights`` the trapezoid weights of the nodes.
    """

    nodes: np.ndarray
    weights: np.ndarray
    probability: np.ndarray
    density: np.ndarray
    apriori_state: np.ndarray

    @property
    def horizon(self):
        return float(self.nodes[-1])


def _stacked_transfer(model, pulse, times, evals, lengths):
    """No-click transfer matrices between every pair of nodes on the stacked vector.

    ``P[c, b]`` maps the stack at node ``b`` to node ``c >= b``; its block
    ``(K, K + m)`` is ``sqrt((K+m)!/K!) T_c F_m(b, c) T_{-b}`` with ``F_m``
    the ordered absorption integral over ``[b, c]``.
    """
    N = pulse.n_photons
    d = model.d
    n = times.size
    ker = _Kernels(model, pulse)
    W = ker.absorption(evals, times)
    F = np.zeros((N + 1, n, n, d, d), dtype=complex)
    F[0] = np.eye(d)
    # F[m, b, i]: integral from node b to node i, built forward in i for all b at once
    for i in range(n - 1):
        half = 0.5 * lengths[i]
        for m in range(1, N + 1):
            F[m, : i + 1, i + 1] = F[m, : i + 1, i] + half * (W[i + 1] @ F[m - 1, : i + 1, i + 1] + W[i] @ F[m - 1, : i + 1, i])
    Tp = np.array([ker.T.matrix(u) for u in times])
    Tm = np.array([ker.T.matrix(-u) for u in times])
    K = N + 1
    P = np.zeros((n, n, K * d, K * d), dtype=complex)
    for k in range(K):
        for m in range(K - k):
            coef = np.sqrt(factorial(k + m) / factorial(k))
            blk = coef * np.einsum("cij,bcjk,bkl->cbil", Tp, F[m], Tm)
            P[:, :, k * d : (k + 1) * d, (k + m) * d : (k + m + 1) * d] = blk
    lower = np.tril(np.ones((n, n), dtype=bool))
    return P * lower[:, :, None, None]


def _click_maps(model, pulse, evals):
    """Stacked click map at each node: ``L`` on every level plus ``sqrt(K+1) xi`` from level K+1."""
    N = pulse.n_photons
    d = model.d
    K = N + 1
    xi = pulse.amplitude(evals)
    J = np.zeros((evals.size, K * d, K * d), dtype=complex)
    for k in range(K):
        J[:, k * d : (k + 1) * d, k * d : (k + 1) * d] = model.L
        if k < N:
            J[:, k * d : (k + 1) * d, (k + 1) * d : (k + 2) * d] = np.sqrt(k + 1) * xi[:, None, None] * np.eye(d)
    return J


def _weighted_state(R, p, d):
    """System state ``sum_K p^K R[K, K]`` of stacked density matrices ``R[..., Kd, Kd]``."""
    K = p.size
    blocks = R.reshape(R.shape[:-2] + (K, d, K, d))
    diag = np.einsum("...kikj->...kij", blocks)
    return np.einsum("k,...kij->...ij", p, diag)


def count_statistics(model, pulse, horizon, s_max, grid_steps=400, psi=None):
    """Exact-count probabilities, click-time densities and the averaged state at ``horizon``.

    All click configurations are summed on a node grid: ``R_s(c)`` collects
    the stacked conditional density matrices of every history whose ``s``-th
    click is at node ``c``, obtained from ``R_{s-1}`` with the diagram
    transfer matrices. Accuracy is that of the trapezoid rule on the grid.
    """
    psi = basis_state(model.d, 0) if psi is None else np.asarray(psi, dtype=complex)
    N = pulse.n_photons
    d = model.d
    Kd = (N + 1) * d
    times, evals, lengths = quadrature_nodes(0.0, float(horizon), grid_steps, pulse.breakpoints)
    n = times.size
    w = trapezoid_weights(lengths)
    P = _stacked_transfer(model, pulse, times, evals, lengths)
    J = _click_maps(model, pulse, evals)
    p_nodes = np.clip(pulse.remaining(times), 0.0, 1.0)
    powers = p_nodes[:, None] ** np.arange(N + 1)[None, :]

    phi0 = np.zeros(Kd, dtype=complex)
    phi0[N * d :] = psi
    R0 = np.outer(phi0, phi0.conj())
    # free[c] = P(c, 0) R0 P(c, 0)^dag
    free = np.einsum("cij,jk,clk->cil", P[:, 0], R0, P[:, 0].conj())
    R = [None] * (s_max + 1)
    R[0] = free
    prob = np.zeros(s_max + 1)
    dens = np.zeros((s_max, n))
    last = n - 1

    def sandwich(c, Rs, weights):
        # sum_b weights[b] P(c, b) Rs(b) P(c, b)^dag over b <= c
        Pc = P[c, : c + 1]
        return np.tensordot(weights, Pc @ Rs[: c + 1] @ dag(Pc), axes=(0, 0))

    state = np.zeros((d, d), dtype=complex)
    acc0 = free[last]
    st = _weighted_state(acc0, powers[last], d)
    prob[0] = np.trace(st).real
    state += st
    for s in range(1, s_max + 1):
        if s == 1:
            before = free
        else:
            # int_0^c P(c, b) R_{s-1}(b) P(c, b)^dag db, trapezoid on [0, c]
            before = np.empty_like(free)
            for c in range(n):
                wc = trapezoid_weights(lengths[:c]) if c > 0 else np.zeros(1)
                before[c] = sandwich(c, R[s - 1], wc)
        R[s] = np.einsum("cij,cjk,clk->cil", J, before, J.conj())
        dens[s - 1] = np.einsum("ck,ckii->c", powers, np.einsum("ckikj->ckij", R[s].reshape(n, N + 1, d, N + 1, d))).real
        st = _weighted_state(sandwich(last, R[s], w), powers[last], d)
        prob[s] = np.trace(st).real
        state += st
    return CountStatistics(times, w, prob, dens, state)


def count_probability(model, pulse, s, t, grid_steps=400, psi=None, s_max=None):
    """Probability of exactly ``s`` clicks in ``[0, t]``."""
    stats = count_statistics(model, pulse, t, max(s, 0) if s_max is None else s_max, grid_steps, psi)
    return float(stats.probability[s])


def count_time_density(model, pulse, s, horizon, grid_steps=400, psi=None):
    """``(nodes, density)`` of the time of the ``s``-th click."""
    if s < 1:
        raise ValueError("click index starts at 1")
    stats = count_statistics(model, pulse, horizon, s, grid_steps, psi)
    return stats.nodes, stats.density[s - 1]


def mean_count_time(model, pulse, s, horizon, grid_steps=400, psi=None):
    """Mean time of the ``s``-th click and the probability mass missing from the window.

    The missing mass is the chance of fewer than ``s`` clicks by ``horizon``;
    above 1e-3 the mean is not trustworthy and HorizonTooShortError is raised.
    """
    if s < 1:
        raise ValueError("click index starts at 1")
    stats = count_statistics(model, pulse, horizon, s, grid_steps, psi)
    tail = float(np.sum(stats.probability[:s]))
    if tail > TAIL_TOL:
        raise HorizonTooShortError(f"{tail:.3g} of the {s}-th click mass lies beyond the horizon", tail)
    mean = float(np.sum(stats.weights * stats.nodes * stats.density[s - 1]))
    return mean, tail


def reconstruct_apriori_state(model, pulse, t, s_max, grid_steps=400, psi=None):
    """Averaged system state at ``t`` summed over histories with up to ``s_max`` clicks."""
    return count_statistics(model, pulse, t, s_max, grid_steps, psi).apriori_state
