"""Continuous-time hierarchies: the averaged master equation and photon-counting paths.

All generators are linear in the stacked blocks, so they are assembled once
as dense superoperators on the flattened hierarchy. A fourth-order
Runge-Kutta step of a linear ODE is itself a matrix, which lets one step of
thousands of trajectories run as a single matrix product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import discrete_filter as df
from .errors import ImpossibleJumpError, InstabilityError, StepSizeError
from .model import basis_state
from .rng import path_generator

TRACE_DRIFT_TOL = 1e-6
MAX_JUMP_PROBABILITY = 0.1
PATH_CHUNK = 4096


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0, dt, ..., steps * dt``."""

    dt: float
    steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps < 1:
            raise ValueError("need at least one step")

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    @property
    def horizon(self):
        return self.dt * self.steps

    @classmethod
    def covering(cls, horizon, dt):
        steps = int(np.ceil(horizon / dt - 1e-9))
        return cls(horizon / steps, steps)


def _decompose(fn, size):
    """Split a map ``f(X; xi)`` into ``F0 + xi F1 + conj(xi) F2 + |xi|^2 F3`` (dense matrices)."""
    eye = np.eye(size, dtype=complex)

    def mat(xi):
        return np.stack([fn(col, xi) for col in eye], axis=1)

    F0 = mat(0.0)
    fp, fm, fi = mat(1.0), mat(-1.0), mat(1j)
    F3 = 0.5 * (fp + fm) - F0
    A = 0.5 * (fp - fm)
    B = (fi - F0 - F3) / 1j
    return F0, 0.5 * (A + B), 0.5 * (A - B), F3


class HierarchyOperators:
    """Dense superoperators for the hierarchy of ``n_photons`` on ``model``."""

    def __init__(self, model, n_photons):
        self.model = model
        self.n_photons = n_photons
        K, d = n_photons + 1, model.d
        self.shape = (K, K, d, d)
        self.size = K * K * d * d

        def wrap(block_fn):
            return lambda v, xi: block_fn(model, v.reshape(self.shape), xi).reshape(-1)

        self._no_jump = _decompose(wrap(df._no_jump_generator), self.size)
        self._jump = _decompose(wrap(df._jump_blocks), self.size)
        tr = np.zeros(self.shape)
        tr[-1, -1] = np.eye(d)
        self.trace_row = tr.reshape(-1)

    @staticmethod
    def _combine(parts, xi):
        F0, F1, F2, F3 = parts
        return F0 + xi * F1 + np.conj(xi) * F2 + abs(xi) ** 2 * F3

    def no_jump(self, xi):
        return self._combine(self._no_jump, xi)

    def jump(self, xi):
        return self._combine(self._jump, xi)

    def master(self, xi):
        return self.no_jump(xi) + self.jump(xi)

    def trace(self, vecs):
        """Trace of block ``[N, N]`` for flattened hierarchies (last axis)."""
        return (vecs @ self.trace_row).real


def _step_intervals(t0, t1, breakpoints):
    cuts = [b for b in breakpoints if t0 < b < t1]
    edges = [t0] + cuts + [t1]
    return list(zip(edges[:-1], edges[1:]))


def rk4_propagator(generator, amplitude, t0, t1, breakpoints=()):
    """RK4 propagator of ``y' = A(xi(t)) y`` over ``[t0, t1]``.

    Amplitudes are sampled at ``a + delta``, the midpoint and ``b - delta``
    of every sub-interval, so a discontinuity on a grid point or inside the
    step is seen through its one-sided limits.
    """
    out = None
    for a, b in _step_intervals(t0, t1, breakpoints):
        h = b - a
        delta = 1e-10 * h
        xs = amplitude(np.array([a + delta, 0.5 * (a + b), b - delta]))
        A1, Am, A2 = generator(xs[0]), generator(xs[1]), generator(xs[2])
        eye = np.eye(A1.shape[0])
        K1 = A1
        K2 = Am @ (eye + 0.5 * h * K1)
        K3 = Am @ (eye + 0.5 * h * K2)
        K4 = A2 @ (eye + h * K3)
        P = eye + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
        out = P if out is None else P @ out
    return out


def _initial_vector(psi, n_photons):
    return df.init_hierarchy(psi, n_photons).blocks.reshape(-1)


def _check_psi(model, psi):
    return basis_state(model.d, 0) if psi is None else np.asarray(psi, dtype=complex)


@dataclass(frozen=True, eq=False)
class MasterSolution:
    """Averaged hierarchy ``blocks[i]`` at ``times[i]``."""

    times: np.ndarray
    blocks: np.ndarray

    @property
    def states(self):
        return self.blocks[:, -1, -1]


def integrate_master(model, pulse, grid, psi=None):
    """Averaged hierarchy on the grid by RK4.

    Raises InstabilityError when the trace of the system block drifts by more
    than 1e-6 or the state leaves the physical region.
    """
    psi = _check_psi(model, psi)
    ops = HierarchyOperators(model, pulse.n_photons)
    y = _initial_vector(psi, pulse.n_photons)
    times = grid.times
    out = np.empty((times.size, ops.size), dtype=complex)
    out[0] = y
    for i in range(grid.steps):
        P = rk4_propagator(ops.master, pulse.amplitude, times[i], times[i + 1], pulse.breakpoints)
        y = P @ y
        out[i + 1] = y
    blocks = out.reshape((times.size,) + ops.shape)
    drift = np.max(np.abs(ops.trace(out) - 1.0))
    states = blocks[:, -1, -1]
    floor = np.min(np.linalg.eigvalsh(0.5 * (states + np.conj(np.swapaxes(states, -1, -2)))))
    if not np.all(np.isfinite(out)) or drift > TRACE_DRIFT_TOL or floor < -TRACE_DRIFT_TOL:
        raise InstabilityError(f"master integration unstable at dt={grid.dt}", suggested_dt=grid.dt / 4)
    return MasterSolution(times, blocks)


def no_jump_probability(model, pulse, grid, psi=None):
    """Probability of no click up to each grid time (linear no-jump hierarchy)."""
    psi = _check_psi(model, psi)
    ops = HierarchyOperators(model, pulse.n_photons)
    y = _initial_vector(psi, pulse.n_photons)
    times = grid.times
    out = np.empty(times.size)
    out[0] = ops.trace(y)
    for i in range(grid.steps):
        y = rk4_propagator(ops.no_jump, pulse.amplitude, times[i], times[i + 1], pulse.breakpoints) @ y
        out[i + 1] = ops.trace(y)
    return out


@dataclass(frozen=True, eq=False)
class SmePath:
    """One photon-counting path.

    ``snapshots[i]`` is the normalized conditional hierarchy at
    ``times[i]``; ``jump_times`` are grid points at which a click was recorded.
    """

    times: np.ndarray
    snapshots: np.ndarray
    jump_times: tuple
    seed: int
    path_index: int = 0

    @property
    def counts(self):
        return len(self.jump_times)


class _StepCache:
    """Per-step propagators, kept for reuse by later batches while memory allows."""

    BUDGET_BYTES = 200_000_000

    def __init__(self, ops, pulse, grid):
        self.ops, self.pulse, self.grid = ops, pulse, grid
        self.keep = 3 * grid.steps * ops.size**2 * 16 <= self.BUDGET_BYTES
        self._store = {}

    def __call__(self, i):
        if i in self._store:
            return self._store[i]
        t0, t1 = self.grid.times[i], self.grid.times[i + 1]
        nudge = 1e-10 * self.grid.dt
        xs = self.pulse.amplitude(np.array([t0 + nudge, t1 - nudge]))
        entry = (
            rk4_propagator(self.ops.no_jump, self.pulse.amplitude, t0, t1, self.pulse.breakpoints),
            self.ops.jump(xs[0]),
            self.ops.jump(xs[1]),
        )
        if self.keep:
            self._store[i] = entry
        return entry


def _simulate_batch(cache, seed, indices, psi, checkpoints):
    """Advance a batch of paths; returns (snapshots at checkpoints, jump steps per path)."""
    ops, grid = cache.ops, cache.grid
    P = len(indices)
    gens = [path_generator(seed, i) for i in indices]
    threshold = np.array([g.random() for g in gens])
    survival = np.ones(P)
    y = np.tile(_initial_vector(psi, cache.pulse.n_photons), (P, 1))
    snaps = np.empty((len(checkpoints), P, ops.size), dtype=complex)
    where = {c: k for k, c in enumerate(checkpoints)}
    if 0 in where:
        snaps[where[0]] = y
    jumps = [[] for _ in range(P)]
    for i in range(grid.steps):
        prop, start_jump, end_jump = cache(i)
        k_now = ops.trace(y @ start_jump.T)
        if np.max(k_now) * grid.dt > MAX_JUMP_PROBABILITY:
            raise StepSizeError(f"click probability per step {np.max(k_now) * grid.dt:.3g} exceeds {MAX_JUMP_PROBABILITY}")
        z = y @ prop.T
        s = ops.trace(z)
        survival *= s
        fire = survival < threshold
        y = z / s[:, None]
        if np.any(fire):
            idx = np.nonzero(fire)[0]
            jumped = y[idx] @ end_jump.T
            k = ops.trace(jumped)
            weak = k <= df.JUMP_FLOOR
            if np.any(weak):
                # rate vanished at the end of the step; take the jump from its start
                jumped[weak] = y[idx[weak]] @ start_jump.T
                k[weak] = ops.trace(jumped[weak])
                if np.any(k <= df.JUMP_FLOOR):
                    raise ImpossibleJumpError("click drawn where the intensity vanishes")
            y[idx] = jumped / k[:, None]
            for p in idx:
                jumps[p].append(i + 1)
                threshold[p] = gens[p].random()
                survival[p] = 1.0
        if i + 1 in where:
            snaps[where[i + 1]] = y
    return snaps, jumps


def simulate_paths(model, pulse, grid, seed, path_indices, psi=None, checkpoints=None):
    """Run several paths at once.

    Returns ``(checkpoint_steps, snapshots, jump_steps)`` with ``snapshots``
    of shape ``(len(checkpoints), n_paths, N+1, N+1, d, d)``. Each path draws
    from its own stream, so the result for a path index does not depend on
    which other paths share the batch.
    """
    psi = _check_psi(model, psi)
    checkpoints = list(range(grid.steps + 1)) if checkpoints is None else sorted(set(int(c) for c in checkpoints))
    ops = HierarchyOperators(model, pulse.n_photons)
    cache = _StepCache(ops, pulse, grid)
    path_indices = list(path_indices)
    snaps, jumps = [], []
    for lo in range(0, len(path_indices), PATH_CHUNK):
        s, j = _simulate_batch(cache, seed, path_indices[lo : lo + PATH_CHUNK], psi, checkpoints)
        snaps.append(s)
        jumps.extend(j)
    snaps = np.concatenate(snaps, axis=1).reshape((len(checkpoints), len(path_indices)) + ops.shape)
    return np.array(checkpoints), snaps, jumps


def integrate_sme(model, pulse, grid, seed, psi=None, path_index=0):
    """One photon-counting path on the grid.

    Between clicks the linear no-jump hierarchy is propagated by RK4 and
    renormalized; its trace gives the exact survival probability, and the
    click is placed at the step where the accumulated survival falls below
    a uniform threshold. Clicks apply the jump map and renormalize.
    """
    steps, snaps, jumps = simulate_paths(model, pulse, grid, seed, [path_index], psi)
    times = grid.times
    return SmePath(times, snaps[:, 0], tuple(float(times[i]) for i in jumps[0]), int(seed), int(path_index))


@dataclass(frozen=True, eq=False)
class EnsembleAverage:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_paths: int
    mean_counts: float
    counts_stderr: float


def ensemble_average(model, pulse, grid, seed, n_paths, psi=None, checkpoints=None, path_indices=None):
    """Mean conditional hierarchy and its standard error over independent paths.

    Paths are processed in fixed chunks of consecutive indices and merged in
    index order, so the result is a function of ``(seed, path indices)`` only.
    """
    path_indices = list(range(n_paths)) if path_indices is None else list(path_indices)
    if len(path_indices) < 2:
        raise ValueError("need at least two paths")
    psi = _check_psi(model, psi)
    checkpoints = list(range(grid.steps + 1)) if checkpoints is None else sorted(set(int(c) for c in checkpoints))
    ops = HierarchyOperators(model, pulse.n_photons)
    cache = _StepCache(ops, pulse, grid)
    total = np.zeros((len(checkpoints), ops.size), dtype=complex)
    sq_re = np.zeros((len(checkpoints), ops.size))
    sq_im = np.zeros((len(checkpoints), ops.size))
    counts = []
    for lo in range(0, len(path_indices), PATH_CHUNK):
        s, j = _simulate_batch(cache, seed, path_indices[lo : lo + PATH_CHUNK], psi, checkpoints)
        total += s.sum(axis=1)
        sq_re += (s.real**2).sum(axis=1)
        sq_im += (s.imag**2).sum(axis=1)
        counts.extend(len(x) for x in j)
    n = len(path_indices)
    mean = total / n
    var_re = np.maximum(sq_re / n - mean.real**2, 0.0) * n / (n - 1)
    var_im = np.maximum(sq_im / n - mean.imag**2, 0.0) * n / (n - 1)
    stderr = np.sqrt(var_re / n) + 1j * np.sqrt(var_im / n)
    shape = (len(checkpoints),) + ops.shape
    counts = np.array(counts, dtype=float)
    return EnsembleAverage(
        grid.times[checkpoints],
        mean.reshape(shape),
        stderr.reshape(shape),
        n,
        float(counts.mean()),
        float(counts.std(ddof=1) / np.sqrt(n)),
    )
