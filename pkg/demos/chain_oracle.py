"""
Checking the hierarchy against the full chain
=============================================

For a chain of a few sites the whole joint state fits in memory. We let
every site collide with the atom, measure it, and compare the resulting
outcome probabilities with the compact hierarchy of conditional vectors.
"""

import numpy as np

from fockstream.collision import build_collision_blocks, initial_vectors, step_hierarchy_vectors, trajectory_weight
from fockstream.model import PhotonProfile, SystemModel
from fockstream.oracle import exact_outcome_distribution, expected_total_counts

atom = SystemModel.two_level(1.0, 0.3)
psi = np.array([0.6, 0.8])
prof = PhotonProfile.from_samples(np.array([1.0, 1.5, 1.0, 0.5]), tau=0.05, n_photons=1)
D = 4

table = exact_outcome_distribution(atom, prof, 4, D, psi)
blocks = build_collision_blocks(atom, prof.tau, truncation=D)
worst = 0.0
for outcomes, entry in sorted(table.items(), key=lambda kv: -kv[1].probability)[:6]:
    h = initial_vectors(psi, 1)
    for eta in outcomes:
        h = step_hierarchy_vectors(h, blocks, prof, eta)
    w = trajectory_weight(h, prof)
    worst = max(worst, abs(w - entry.probability))
    print(f"{outcomes}  chain {entry.probability:.8f}  hierarchy {w:.8f}")
print(f"largest difference among these: {worst:.1e}")
print(f"sum over all strings: {sum(e.probability for e in table.values()):.12f}")
print(f"expected clicks on the chain: {expected_total_counts(atom, prof, 4, D, psi):.6f}")
