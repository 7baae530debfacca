import numpy as np
import pytest

from conftest import flat_profile, random_model, random_state
from fockstream.collision import first_order_blocks, initial_vectors, outcome_distribution, step_hierarchy_vectors
from fockstream.discrete_filter import (
    apriori_step,
    density_from_vectors,
    filter_step,
    init_hierarchy,
    intensity,
    outcome_probabilities,
    run_apriori,
    run_filter,
)
from fockstream.errors import ImpossibleJumpError, NormalizationError, PositivityViolationError
from fockstream.discrete_filter import DensityHierarchy
from fockstream.model import SystemModel


def test_initial_single_photon():
    psi = np.array([0.6, 0.8j])
    h = init_hierarchy(psi, 1)
    proj = np.outer(psi, psi.conj())
    assert np.allclose(h.blocks[1, 1], proj) and np.allclose(h.blocks[0, 0], proj)
    assert not h.blocks[0, 1].any() and not h.blocks[1, 0].any()


def test_initial_two_photons():
    psi = np.array([1.0, 0.0])
    h = init_hierarchy(psi, 2)
    assert np.allclose(h.blocks[0, 0], 2 * np.outer(psi, psi))
    assert np.allclose(h.blocks[1, 1], 2 * np.outer(psi, psi))
    assert np.allclose(h.blocks[2, 2], np.outer(psi, psi))


def test_initial_vacuum():
    h = init_hierarchy(np.array([0.0, 1.0]), 0)
    assert h.blocks.shape == (1, 1, 2, 2) and np.allclose(h.state, np.diag([0, 1]))


def test_initial_state_must_be_normalized():
    with pytest.raises(NormalizationError):
        init_hierarchy(np.array([1.0, 1.0]), 1)


def test_intensity_single_photon_ground(atom, ground):
    assert intensity(atom, init_hierarchy(ground, 1), 0.7 - 0.2j) == pytest.approx(0.53, abs=1e-14)


def test_intensity_vacuum_excited(excited):
    model = SystemModel.two_level(2.5, 0.0)
    assert intensity(model, init_hierarchy(excited, 0), 0.3) == pytest.approx(2.5, abs=1e-14)


def test_intensity_without_drive(atom, ground):
    assert intensity(atom, init_hierarchy(ground, 2), 0.0) == 0.0


def test_intensity_rejects_broken_hierarchy(atom):
    blocks = np.zeros((1, 1, 2, 2), dtype=complex)
    blocks[0, 0] = np.diag([0.0, -1.0])
    with pytest.raises(PositivityViolationError):
        intensity(atom, DensityHierarchy(blocks), 0.0)


def test_vacuum_no_jump_keeps_trace(atom):
    psi = np.array([0.6, 0.8])
    h = filter_step(atom, init_hierarchy(psi, 0), 0.0, 0.01, 0)
    unnorm = init_hierarchy(psi, 0).blocks[0, 0]
    assert abs(np.trace(h.state) - 1) < 1e-12
    # conditioned decay of the excited population
    assert h.state[1, 1].real < unnorm[1, 1].real


def test_vacuum_jump_resets_to_ground(atom, excited):
    h = filter_step(atom, init_hierarchy(excited, 0), 0.0, 0.01, 1)
    assert np.allclose(h.state, np.diag([1, 0]), atol=1e-14)
    assert h.step == 1


def test_impossible_jump(atom, ground):
    with pytest.raises(ImpossibleJumpError):
        filter_step(atom, init_hierarchy(ground, 0), 0.0, 0.01, 1)


def test_bad_outcome(atom, ground):
    with pytest.raises(ValueError):
        filter_step(atom, init_hierarchy(ground, 1), 1.0, 0.01, 2)


def test_filter_follows_vector_hierarchy(atom, ground):
    # from the ground state one photon gives at most one click, so these are all possible strings
    worst = []
    for tau in (0.02, 0.01):
        n = int(round(1 / tau))
        prof = flat_profile(1, tau, n)
        blocks = first_order_blocks(atom, tau)
        err = 0.0
        for click in [None] + list(range(n)):
            outcomes = [int(j == click) for j in range(n)]
            hs = run_filter(atom, prof, ground, outcomes)
            vh = initial_vectors(ground, 1)
            for j, eta in enumerate(outcomes):
                vh = step_hierarchy_vectors(vh, blocks, prof, eta)
                ref = density_from_vectors(vh, prof)
                err = max(err, np.max(np.abs(ref.state - hs[j + 1].state)))
        worst.append(err)
        assert err <= n * tau**2
    assert np.log2(worst[0] / worst[1]) >= 0.9


def test_vectors_give_initial_hierarchy(ground):
    prof = flat_profile(2, 0.05, 20)
    ref = init_hierarchy(np.array([0.6, 0.8]), 2)
    built = density_from_vectors(initial_vectors(np.array([0.6, 0.8]), 2), prof)
    assert np.allclose(built.blocks, ref.blocks, atol=1e-14)


def test_vacuum_apriori_is_trace_preserving(atom):
    h = init_hierarchy(np.array([0.6, 0.8j]), 0)
    for _ in range(50):
        h = apriori_step(atom, h, 0.0, 0.01)
    assert abs(np.trace(h.state) - 1) < 1e-12
    assert h.step == 50


@pytest.mark.parametrize("N", [1, 2])
def test_apriori_trace_over_horizon(N):
    rng = np.random.default_rng(N)
    model = random_model(rng, 3)
    prof = flat_profile(N, 0.01, 100)
    hs = run_apriori(model, prof, random_state(rng, 3))
    for j, h in enumerate(hs):
        assert abs(np.trace(h.state) - 1) <= max(j, 1) * 1e-12
        assert h.hermiticity_defect() < 1e-10


def test_branch_average_is_apriori(atom, ground):
    tau = 0.01
    prof = flat_profile(1, tau, 100)
    h = init_hierarchy(ground, 1)
    for j in range(100):
        xi = prof.xi[j]
        p0, p1 = outcome_probabilities(atom, h, xi, tau)
        mix = p0 * filter_step(atom, h, xi, tau, 0).blocks
        if p1 > 0:
            mix = mix + p1 * filter_step(atom, h, xi, tau, 1).blocks
        ref = apriori_step(atom, h, xi, tau).blocks
        assert np.max(np.abs(mix - ref)) <= 5 * tau**2
        h = filter_step(atom, h, xi, tau, 0)


def test_filter_keeps_mirror_symmetry():
    rng = np.random.default_rng(4)
    model = random_model(rng, 2)
    prof = flat_profile(2, 0.01, 50)
    h = init_hierarchy(random_state(rng, 2), 2)
    for j in range(50):
        h = filter_step(model, h, prof.xi[j], 0.01, int(j % 17 == 5))
        assert h.hermiticity_defect() < 1e-10
        assert abs(np.trace(h.state) - 1) < 1e-12


def test_first_order_probabilities_match_collision_law(atom):
    psi = np.array([0.6, 0.8])
    gaps = []
    for tau in (0.02, 0.01):
        prof = flat_profile(1, tau, int(round(1 / tau)))
        vh = initial_vectors(psi, 1)
        exact = outcome_distribution(vh, first_order_blocks(atom, tau), prof)
        approx = outcome_probabilities(atom, init_hierarchy(psi, 1), prof.xi[0], tau)
        gaps.append(abs(exact[1] - approx[1]))
    assert np.log2(gaps[0] / gaps[1]) >= 1.9
