"""
Mini-batches and the equilibrium shift
======================================

With mini-batches of size M the innovation's skew shrinks, and so does the
distance between Adam's equilibrium and E[U].  We locate the zero of the
mini-batch field for a few M and fit the decay on log-log axes.
"""

from adamfield import DampingParams, minibatch_innovation, preset
from adamfield.experiments import fit_loglog_slope
from adamfield.field import find_zero

params = DampingParams(0.9, 0.99, 0.1)
base = preset("asymmetric")

batches, gaps = [], []
print("  M    theta*        99.7% CI")
for m in (4, 8, 16, 32):
    z = find_zero(minibatch_innovation(base, m), params, (-0.5, 0.5), tol_theta=1e-7, chains=(16, 256), seed=0)
    print(f"{m:3d}  {z.theta_star:.3e}  [{z.ci_low:.3e}, {z.ci_high:.3e}]")
    batches.append(m)
    gaps.append(z.theta_star - base.mean_u)

fit = fit_loglog_slope(batches, gaps)
print(f"\nslope of the shift against M: {fit.slope:.3f} (about -1)")
