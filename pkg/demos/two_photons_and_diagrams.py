"""
Two photons and the diagram expansion
=====================================

With two photons in the packet the atom can absorb one while the other
passes straight to the detector. Each way of ordering detector clicks,
emissions and absorptions is a diagram; summing them gives the state of
the atom conditioned on a click record.
"""

import numpy as np

from fockstream.diagrams import diagram_contributions, enumerate_diagrams, exclusive_density
from fockstream.model import Pulse, SystemModel, basis_state

atom = SystemModel.two_level(1.0, 0.0)
ground = basis_state(2, 0)
pulse = Pulse.rectangular(1.0, n_photons=2)

for s, M in [(0, 2), (1, 1), (1, 2)]:
    shapes = [d.render() for d in enumerate_diagrams(s, M)]
    print(f"{s} click(s), {M} photon(s) taken from the packet: {len(shapes)} diagrams  {shapes}")

# Contribution of every diagram for one click at t = 0.4, observed until t = 1.
for dg, vec in diagram_contributions(atom, pulse, (0.4,), 2, 1.0, psi=ground):
    print(f"{dg.render():>8}  amplitude {np.round(vec, 4)}")

# Density of a single click at t1 with nothing else before t = 1.
for t1 in (0.1, 0.4, 0.7, 0.95):
    print(f"t1 = {t1:4.2f}  density {exclusive_density(atom, pulse, (t1,), 1.0, psi=ground):.4f}")
