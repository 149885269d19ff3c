"""Geometry of the one-sided bad sets.

Estimates the measure of the backward near-contact set as the proximity
radius shrinks, its forward/backward asymmetry on a single
configuration, and the smallness of the two-sided intersection.
"""

import numpy as np

from boltzgrad.badsets import (
    BadSetSpec,
    estimate_intersection,
    in_bad_set,
    monotonicity_check,
)

rng = np.random.default_rng(1)
template = BadSetSpec(n=2, eps0=0.04, R=2.0, T=0.5, sign="minus")

ok, estimates = monotonicity_check([0.04, 0.02, 0.01, 0.005], template, 2, 50_000, rng)
print("radius   fraction   stderr")
for e in estimates:
    print(f"{e.spec.eps0:<8} {e.fraction:<10.5f} {e.stderr:.5f}")
fr = [e.fraction for e in estimates]
e0 = [e.spec.eps0 for e in estimates]
slope = np.polyfit(np.log(e0), np.log(fr), 1)[0]
print(f"log-log slope {slope:.3f}  (codimension-one scaling: d - 1 = 1)")

inter = estimate_intersection(
    BadSetSpec(2, 0.01, 2.0, 0.5, "plus"), 2, 50_000, np.random.default_rng(2)
)
print(f"\nintersection of forward and backward sets at radius 0.01: "
      f"{inter.fraction:.5f} (one-sided {fr[e0.index(0.01)]:.5f})")

# a configuration heading for a forward contact is only forward-bad
x = np.array([[0.0, 0.0], [0.3, 0.0]])
v = np.array([[1.0, 0.0], [0.0, 0.0]])
for sign in ("plus", "minus"):
    member = in_bad_set((x, v), BadSetSpec(2, 0.1, 2.0, 0.5, sign))
    print(f"collision-course pair in the {sign} set: {member}")
