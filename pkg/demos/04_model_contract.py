"""The structural contract behind the solver, checked executably.

The analysis of this model rests on sampled properties of the two
nonlinearities: the proliferation rate must be nonnegative with controlled
derivative growth, and the double well must split into a convex part with
quartic curvature growth plus a bounded-curvature remainder, sitting above
a line.  This demo prints the report for both shipped proliferation laws
and shows the checker catching a broken (sign-indefinite) rate.
"""

import numpy as np

from chcontrol import (ModelParams, QuadraticProliferation, SigmoidProliferation,
                       check_hypotheses)

for label, proliferation in (("quadratic", QuadraticProliferation(p0=0.5)),
                             ("sigmoid", SigmoidProliferation(p0=1.0, steepness=1.0))):
    report = check_hypotheses(ModelParams(beta_u=1.0, proliferation=proliferation))
    print(f"--- proliferation = {label} ---")
    for line in report.lines():
        print("  " + line)
    print()


class BrokenRate:
    """P(s) = s: goes negative, so the exchange term loses its sign."""

    growth_exponent = 1

    def value(self, s):
        return np.asarray(s, dtype=float)

    def deriv(self, s):
        return np.ones_like(np.asarray(s, dtype=float))


import copy

broken = copy.copy(ModelParams(beta_u=1.0))
broken.proliferation = BrokenRate()
report = check_hypotheses(broken)
print("--- deliberately broken rate P(s) = s ---")
print(f"  proliferation_nonnegative: {report.checks['proliferation_nonnegative']}")
print(f"  overall: {'pass' if report.passed else 'fail (as it should)'}")
