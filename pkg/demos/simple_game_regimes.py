"""Root counts of the quadratic-control consistency equation over (T, M(nu)).

Below T = 2 c0 there is one equilibrium; above it a band |M(nu)| < T - 2 c0
carries three, with two on its boundary.  At T = 2 c0 and M(nu) = 0 every
mean in [-2 c0, 2 c0] is an equilibrium.
"""
from __future__ import annotations

import numpy as np

from mfglab.simple_game import Continuum, SimpleGameSpec, enumerate_roots, regime_diagram

for T, m in ((1.0, 0.0), (2.0, 0.0), (4.0, 0.0), (3.0, 1.0)):
    rs = enumerate_roots(SimpleGameSpec(1.0, 0.0, T, m))
    found = f"continuum {rs.interval}" if isinstance(rs, Continuum) else f"roots {rs.values()}"
    print(f"T = {T}, M(nu) = {m}: {found}")

Ts = np.linspace(0.5, 4.5, 9)
ms = np.linspace(-3, 3, 13)
counts = regime_diagram(1.0, Ts, ms)
print("\nroot counts, rows T, columns M(nu) from -3 to 3")
for T, row in zip(Ts, counts):
    print(f"T = {T:4.2f}  " + " ".join("*" if np.isinf(c) else str(int(c)) for c in row))
