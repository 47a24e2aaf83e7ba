"""Three equilibria of a bang-bang game with an imitation terminal cost.

Players choose a drift in [-1, 1] and pay -x M(mu_T) at the horizon, so each
wants to end up on the side where the crowd ends up.  Everyone drifting right,
everyone drifting left and the symmetric standstill are all equilibria.
The standstill's value gradient vanishes up to roundoff, so its certificate
only records the sign of that roundoff.
"""
from __future__ import annotations

from mfglab import presets
from mfglab.branch_solver import enumerate_branches
from mfglab.certifier import regime_verdict

problem = presets.three_solutions_problem(128, 128)
catalog = enumerate_branches(problem, n_random=3, seed=0)

print(f"regime verdict for alpha = 0, beta = -1: {regime_verdict(0.0, -1.0).value}")
print(f"{len(catalog)} distinct equilibria (dedup threshold {catalog.dedup_threshold:g})")
for sol in catalog.solutions:
    s = sol.summary()
    print(f"  {s['branch_label']:>6}: mean(T) = {s['mean_T']:+.4f}  residual = {s['residual']:.1e}"
          f"  certificate = {s['certificate']}  max |v_x| = {abs(sol.value.v_x).max():.1e}")
for d in catalog.diagnostics:
    print("  seed", d["seed"], "->", d.get("duplicate_of", d.get("error")))
