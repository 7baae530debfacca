"""Dense linear algebra and quadrature primitives shared by the other modules."""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import CapabilityError, DimensionError

MAX_SIMPLEX_ORDER = 4
# Upper bound on simplex grid points evaluated by simplex_integrate.
MAX_SIMPLEX_POINTS = 20_000_000


def dag(A):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(A, -1, -2))


def expm(A, scale=1.0):
    """Return ``exp(scale * A)`` for a square complex matrix.

    Scaling and squaring with a Pade kernel (scipy), which also handles the
    non-normal effective Hamiltonians used for no-jump propagation.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expm needs a square matrix, got shape {A.shape}")
    return scipy.linalg.expm(scale * A.astype(complex))


def _ordered_indices(grid_steps, k):
    """All index tuples 0 <= i_1 <= ... <= i_k <= grid_steps plus their weights
    (in units of h**k) for the iterated trapezoid rule."""
    top = np.arange(grid_steps + 1)
    cols = [top]
    # trapezoid weight of node i inside [0, m]: 1/2 at both ends, 0 if m == 0
    w = np.where((top == 0) | (top == grid_steps), 0.5, 1.0)
    for _ in range(k - 1):
        outer = cols[-1]
        counts = outer + 1
        rep = np.repeat(np.arange(outer.size), counts)
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        inner = np.arange(rep.size) - starts
        m = outer[rep]
        wi = np.where((inner == 0) | (inner == m), 0.5, 1.0)
        wi = np.where(m == 0, 0.0, wi)
        cols = [c[rep] for c in cols] + [inner]
        w = w[rep] * wi
    # cols run outermost (latest time) to innermost (earliest time)
    return cols[::-1], w


def simplex_integrate(f, k, t, grid_steps, max_order=MAX_SIMPLEX_ORDER):
    """Integrate ``f(t_1, ..., t_k)`` over ``0 <= t_1 <= ... <= t_k <= t``.

    Uses the iterated trapezoid rule on the uniform grid restricted to the
    ordered region, so nodes on the boundary faces (including the diagonals
    ``t_i == t_{i+1}``) carry halved weights. Error is O(grid_steps**-2) for
    smooth integrands.

    ``f`` receives ``k`` arrays of equal length (earliest time first) and
    must return an array whose leading axis matches them; trailing axes are
    integrated componentwise.
    """
    if k < 1 or grid_steps < 2:
        raise ValueError("need k >= 1 and grid_steps >= 2")
    if k > max_order:
        raise CapabilityError(f"simplex order {k} exceeds configured maximum {max_order}")
    npts = int(round(np.prod([grid_steps + 1 + i for i in range(k)]) / np.prod(range(1, k + 1))))
    if npts > MAX_SIMPLEX_POINTS:
        raise CapabilityError(f"{npts} simplex nodes exceed budget {MAX_SIMPLEX_POINTS}")
    h = t / grid_steps
    idx, w = _ordered_indices(grid_steps, k)
    nodes = [i * h for i in idx]
    total = 0.0
    chunk = 1_000_000
    for lo in range(0, w.size, chunk):
        sl = slice(lo, lo + chunk)
        vals = np.asarray(f(*[x[sl] for x in nodes]))
        total = total + np.tensordot(w[sl], vals, axes=(0, 0))
    return total * h**k


def iterated_integrals(w_nodes, lengths, order):
    """Cumulative time-ordered integrals of a matrix-valued integrand.

    ``w_nodes[i]`` is the integrand at node ``i`` and ``lengths[i]`` the
    length of the interval between nodes ``i`` and ``i+1`` (zero-length
    intervals are allowed and mark one-sided evaluations at a jump).
    Returns ``F`` with ``F[m, i] = int_{u_0 <= s_1 <= ... <= s_m <= u_i}
    W(s_m) ... W(s_1)`` by the iterated trapezoid rule; ``F[0]`` is the
    identity.
    """
    w_nodes = np.asarray(w_nodes)
    n = w_nodes.shape[0]
    d = w_nodes.shape[-1]
    F = np.zeros((order + 1, n, d, d), dtype=complex)
    F[0] = np.eye(d)
    for i in range(n - 1):
        half = 0.5 * lengths[i]
        for m in range(1, order + 1):
            F[m, i + 1] = F[m, i] + half * (w_nodes[i + 1] @ F[m - 1, i + 1] + w_nodes[i] @ F[m - 1, i])
    return F


def trapezoid_weights(lengths):
    """Node weights of the composite trapezoid rule for the given interval lengths."""
    lengths = np.asarray(lengths, dtype=float)
    w = np.zeros(lengths.size + 1)
    w[:-1] += 0.5 * lengths
    w[1:] += 0.5 * lengths
    return w


def quadrature_nodes(a, b, steps, breakpoints=()):
    """Piecewise-uniform nodes on ``[a, b]`` aligned with ``breakpoints``.

    Interior breakpoints are duplicated into a left and a right copy joined
    by a zero-length interval. Returns ``(times, eval_times, lengths)`` where
    ``eval_times`` nudges nodes into the adjacent segment so a discontinuous
    integrand is sampled by its one-sided limits.
    """
    if b < a:
        raise ValueError("interval end precedes start")
    if b == a:
        return np.array([a]), np.array([a]), np.zeros(0)
    cuts = sorted({float(x) for x in breakpoints if a < x < b})
    edges = [a] + cuts + [b]
    total = b - a
    times, evals = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = max(1, int(round(steps * (hi - lo) / total)))
        seg = np.linspace(lo, hi, m + 1)
        ev = seg.copy()
        delta = 1e-10 * (hi - lo)
        ev[0] += delta
        ev[-1] -= delta
        times.append(seg)
        evals.append(ev)
    times = np.concatenate(times)
    evals = np.concatenate(evals)
    return times, evals, np.diff(times)
