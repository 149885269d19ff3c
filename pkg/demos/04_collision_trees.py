"""Backward collision trees and the expansion of the marginals.

Enumerates the attachment trees, evaluates the first signed expansion
terms by Monte Carlo along backward pseudo-trajectories, and checks the
partial sum against the deterministic solver. The finite-diameter
variant exhibits recollisions whose rate shrinks with the diameter.
"""

import numpy as np

from boltzgrad.sampling import DensitySpec
from boltzgrad.solver import HomogeneousState, VelocityGrid, lanford_time, solve_homogeneous
from boltzgrad.trees import enumerate_trees, evaluate_series_term, recollision_rate, tree_count

for n, s in [(1, 2), (2, 2), (3, 3)]:
    print(f"trees over {n} roots, {s} added: {tree_count(n, s)} "
          f"(enumerated {len(enumerate_trees(n, s))})")

spec = DensitySpec(beta=1.0, dim=2, form="two_bump")
t_star, lam = lanford_time(spec.beta, spec.mu, 2)
t = 0.1 * t_star
print(f"\nconvergence time t* = {t_star:.4f} (rate lambda = {lam:.3f}); evaluating at t = {t:.4f}")

grid = VelocityGrid(2, 24, 5.0)
sol = solve_homogeneous(HomogeneousState(grid, spec.velocity_density(grid.nodes)),
                        t, t / 8, n_angle=8, save_every=10**6)
probe = int(np.argmin(np.sum((grid.nodes - np.array([1.5, 0.0])) ** 2, axis=-1)))
z = (np.array([[0.5, 0.5]]), grid.nodes[probe][None])

rng = np.random.default_rng(4)
total = 0.0
print("\norder   term estimate      stderr")
for s in range(4):
    est = evaluate_series_term(1, s, t, spec, z, "boltzmann", 40_000, rng)
    total += est.value
    print(f"{s:<7} {est.value:<17.8f} {est.stderr:.2e}")
print(f"partial sum {total:.6f} vs solver {sol.states[-1].f[probe]:.6f}")

print("\nfinite-diameter recollision/overlap rates (n=1, s=2, t=0.2):")
for eps in (0.02, 0.01, 0.005):
    r = recollision_rate(1, 2, 0.2, eps, 600, np.random.default_rng(5))
    print(f"  diameter {eps}: {r:.4f}")
print("zero-diameter variant:",
      recollision_rate(1, 2, 0.2, 0.01, 200, np.random.default_rng(5), variant="boltzmann"))
