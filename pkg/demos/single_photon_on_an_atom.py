"""
A single photon meets a two-level atom
======================================

One photon in a flat wave packet of unit length hits an atom that starts
in its ground state. We count clicks at the output and compare three ways
of getting the same numbers.
"""

import numpy as np

from fockstream.collision import build_collision_blocks, sample_trajectories
from fockstream.continuous import TimeGrid, ensemble_average, integrate_master
from fockstream.diagrams import count_statistics, mean_count_time
from fockstream.model import Pulse, SystemModel, basis_state

atom = SystemModel.two_level(1.0, 0.0)
ground = basis_state(2, 0)
pulse = Pulse.rectangular(1.0, n_photons=1)
horizon = 3.0

# The averaged state: excited population over time.
grid = TimeGrid.covering(horizon, 0.01)
master = integrate_master(atom, pulse, grid, ground)
for t in (0.5, 1.0, 1.5, 2.0, 3.0):
    i = int(round(t / grid.dt))
    print(f"t = {t:3.1f}  excited population {master.states[i, 1, 1].real:.4f}")

# The same curve as an average over photon-counting paths.
avg = ensemble_average(atom, pulse, grid, seed=1, n_paths=4000, psi=ground, checkpoints=[100, 300])
for t, blk, err in zip(avg.times, avg.mean, avg.stderr):
    print(f"t = {t:3.1f}  paths {blk[-1, -1, 1, 1].real:.4f} +/- {err[-1, -1, 1, 1].real:.4f}")

# Click statistics from the closed-form solution.
stats = count_statistics(atom, pulse, horizon, s_max=2, psi=ground)
print("P(0 clicks), P(1 click), P(2 clicks):", np.round(stats.probability, 5))
mean, tail = mean_count_time(atom, pulse, 1, 10.0, psi=ground)
print(f"mean time of the click: {mean:.4f} (missing mass {tail:.1e})")

# And from repeated collisions with a discretized chain.
prof = pulse.discretize(0.01, int(round(horizon / 0.01)))
blocks = build_collision_blocks(atom, prof.tau, n_photons=1)
records, _ = sample_trajectories(atom, prof, blocks, seed=1, path_indices=range(4000), psi=ground)
counts = np.bincount([r.total_counts for r in records], minlength=2)
print("collision sampler click histogram:", counts / counts.sum())
