import numpy as np
import pytest
from scipy import stats

from conftest import random_model, random_state
from fockstream.continuous import (
    HierarchyOperators,
    TimeGrid,
    ensemble_average,
    integrate_master,
    integrate_sme,
    no_jump_probability,
    simulate_paths,
)
from fockstream.discrete_filter import filter_step, init_hierarchy, outcome_probabilities
from fockstream.errors import InstabilityError, StepSizeError
from fockstream.model import Pulse, SystemModel


def click_rate(model, N, xi, blocks):
    ops = HierarchyOperators(model, N)
    flat = blocks.reshape(blocks.shape[0], -1)
    return np.array([ops.trace(ops.jump(x) @ v) for x, v in zip(xi, flat)])


def test_grid():
    g = TimeGrid.covering(1.0, 0.3)
    # the step shrinks so the grid ends on the horizon
    assert g.steps == 4 and g.dt <= 0.3 and abs(g.horizon - 1.0) < 1e-15 and g.times[0] == 0
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10)


def test_vacuum_master_is_exponential_decay(atom, excited):
    grid = TimeGrid(1e-3, 5000)
    sol = integrate_master(atom, Pulse.exponential(1.0, 0), grid, excited)
    assert np.max(np.abs(sol.states[:, 1, 1].real - np.exp(-grid.times))) < 1e-6


def test_master_trace_and_symmetry():
    rng = np.random.default_rng(0)
    model = random_model(rng, 2)
    sol = integrate_master(model, Pulse.gaussian(1.5, 0.5, 2), TimeGrid(0.005, 800), random_state(rng, 2))
    assert np.max(np.abs(np.trace(sol.states, axis1=1, axis2=2) - 1)) < 1e-8
    mirror = np.conj(np.swapaxes(np.swapaxes(sol.blocks, 1, 2), 3, 4))
    assert np.max(np.abs(sol.blocks - mirror)) < 1e-10


@pytest.mark.parametrize("N", [1, 2])
def test_profile_phase_does_not_change_system_state(atom, N):
    base = Pulse.gaussian(1.5, 0.5, N)
    phase = np.exp(0.7j)
    rotated = Pulse(N, lambda t: phase * base.amplitude(t), base.remaining, base.breakpoints)
    grid = TimeGrid(0.01, 400)
    psi = np.array([0.6, 0.8j])
    a = integrate_master(atom, base, grid, psi).states
    b = integrate_master(atom, rotated, grid, psi).states
    assert np.max(np.abs(a - b)) < 1e-10


def test_master_reports_instability(ground):
    fast = SystemModel.two_level(400.0, 0.0)
    with pytest.raises(InstabilityError) as info:
        integrate_master(fast, Pulse.rectangular(1.0, 1), TimeGrid(0.05, 20), ground)
    assert info.value.suggested_dt < 0.05


def test_first_jump_times_follow_exponential_law(atom, excited):
    grid = TimeGrid(1e-3, 12000)
    _, _, jumps = simulate_paths(atom, Pulse.exponential(1.0, 0), grid, 42, range(10_000), excited, checkpoints=[0])
    first = np.array([grid.times[j[0]] for j in jumps if j])
    assert first.size > 9990
    # a click recorded at the end of step i happened somewhere inside it
    assert stats.kstest(first - 0.5 * grid.dt, "expon").pvalue > 0.01


def test_sme_path_is_reproducible(atom, ground):
    pulse, grid = Pulse.rectangular(1.0, 1), TimeGrid(0.01, 300)
    a = integrate_sme(atom, pulse, grid, 9, ground, path_index=3)
    b = integrate_sme(atom, pulse, grid, 9, ground, path_index=3)
    assert a.jump_times == b.jump_times and np.array_equal(a.snapshots, b.snapshots)
    c = integrate_sme(atom, pulse, grid, 10, ground, path_index=3)
    d = [integrate_sme(atom, pulse, grid, 9, ground, path_index=k).jump_times for k in range(20)]
    assert len(set(d)) > 1 or c.jump_times != a.jump_times


def test_sme_snapshots_stay_normalized(atom):
    path = integrate_sme(atom, Pulse.rectangular(1.0, 2), TimeGrid(0.01, 300), 3, np.array([0.6, 0.8]))
    tr = np.trace(path.snapshots[:, -1, -1], axis1=1, axis2=2)
    assert np.max(np.abs(tr - 1)) < 1e-10
    steps = np.round(np.array(path.jump_times) / 0.01).astype(int)
    assert np.all(np.diff(steps) >= 1)


def test_ensemble_matches_master(atom, ground):
    pulse, grid = Pulse.rectangular(1.0, 1), TimeGrid(0.01, 300)
    checkpoints = list(range(30, 301, 30))
    avg = ensemble_average(atom, pulse, grid, 17, 10_000, ground, checkpoints)
    sol = integrate_master(atom, pulse, grid, ground)
    ref = sol.blocks[checkpoints]
    tol = 3 * np.maximum(np.abs(avg.stderr.real), 1e-12)
    assert np.all(np.abs(avg.mean.real - ref.real) <= tol + 1e-12)
    tol = 3 * np.maximum(np.abs(avg.stderr.imag), 1e-12)
    assert np.all(np.abs(avg.mean.imag - ref.imag) <= tol + 1e-12)


def test_vacuum_ensemble_population(atom, excited):
    grid = TimeGrid(0.01, 300)
    avg = ensemble_average(atom, Pulse.exponential(1.0, 0), grid, 5, 4000, excited, [50, 100, 200])
    pop = avg.mean[:, 0, 0, 1, 1].real
    err = avg.stderr[:, 0, 0, 1, 1].real
    assert np.all(np.abs(pop - np.exp(-avg.times)) <= 3 * err)


def test_standard_error_scaling(atom, ground):
    pulse, grid = Pulse.rectangular(1.0, 1), TimeGrid(0.02, 100)
    small = ensemble_average(atom, pulse, grid, 8, 2000, ground, [50])
    large = ensemble_average(atom, pulse, grid, 8, 4000, ground, [50])
    ratio = large.stderr[0, -1, -1, 1, 1].real / small.stderr[0, -1, -1, 1, 1].real
    assert abs(ratio / (1 / np.sqrt(2)) - 1) < 0.2


def test_identical_paths_have_no_spread(atom, ground):
    avg = ensemble_average(atom, Pulse.rectangular(1.0, 1), TimeGrid(0.02, 100), 8, 2, ground, path_indices=[4, 4])
    assert np.all(avg.stderr == 0)


def test_ensemble_independent_of_chunking(atom, ground, monkeypatch):
    from fockstream import continuous

    pulse, grid = Pulse.rectangular(1.0, 1), TimeGrid(0.02, 100)
    whole = ensemble_average(atom, pulse, grid, 8, 50, ground, [100])
    monkeypatch.setattr(continuous, "PATH_CHUNK", 7)
    split = ensemble_average(atom, pulse, grid, 8, 50, ground, [100])
    assert np.allclose(whole.mean, split.mean, rtol=0, atol=1e-14)
    assert whole.mean_counts == split.mean_counts


def test_coarse_steps_rejected(excited):
    fast = SystemModel.two_level(20.0, 0.0)
    with pytest.raises(StepSizeError):
        integrate_sme(fast, Pulse.exponential(1.0, 0), TimeGrid(0.01, 10), 1, excited)


def test_jump_rate_follows_mean_intensity(atom, ground):
    pulse, grid = Pulse.rectangular(1.0, 1), TimeGrid(0.01, 300)
    paths = 10_000
    _, _, jumps = simulate_paths(atom, pulse, grid, 23, range(paths), ground, checkpoints=[0])
    sol = integrate_master(atom, pulse, grid, ground)
    mid = grid.times[:-1] + 0.5 * grid.dt
    k = click_rate(atom, 1, pulse.amplitude(mid), 0.5 * (sol.blocks[:-1] + sol.blocks[1:]))
    steps = np.concatenate([np.array(j, dtype=int) for j in jumps if j])
    edges = np.arange(0, 301, 30)
    observed = np.histogram(steps, bins=edges + 0.5)[0]
    expected = np.array([k[a:b].sum() * grid.dt * paths for a, b in zip(edges[:-1], edges[1:])])
    assert np.all(np.abs(observed - expected) <= 3 * np.sqrt(expected))


def test_no_click_law_converges_to_discrete_filter(atom, ground):
    pulse = Pulse.rectangular(1.0, 1)
    exact = no_jump_probability(atom, pulse, TimeGrid(0.01, 150), ground)[-1]
    gaps = []
    for tau in (0.02, 0.01):
        prof = pulse.discretize(tau, int(round(1.5 / tau)))
        h, survive = init_hierarchy(ground, 1), 1.0
        for j in range(prof.horizon_steps):
            survive *= outcome_probabilities(atom, h, prof.xi[j], tau)[0]
            h = filter_step(atom, h, prof.xi[j], tau, 0)
        gaps.append(abs(survive - exact))
    assert np.log2(gaps[0] / gaps[1]) > 0.8
