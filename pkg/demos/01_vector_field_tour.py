"""
A tour of the Adam vector field
===============================

Adam run with a fixed parameter theta and an endless stationary history of
inputs has a mean step direction f(theta).  Its zeros, not the zeros of the
objective's gradient, are where the iterates settle.  This script estimates f
for the skewed two-point input law and compares it with the two-term
expansion and its error bound.
"""

import numpy as np

from adamfield import DampingParams, preset
from adamfield.field import compare_first_order, estimate_field, moment_profile, perturbation_bound

params = DampingParams(alpha=0.9, beta=0.99, epsilon=0.1)
inn = preset("asymmetric")  # U = 1 w.p. 0.8, U = -4 w.p. 0.2, so E[U] = 0
print("E[U] =", inn.mean_u)

# f changes sign near E[U] but not exactly at it
thetas = np.linspace(-0.3, 0.3, 7)
print("\n theta      f(theta)    std err")
for th in thetas:
    est = estimate_field(inn, [th], params, replicas=20_000, seed=1)
    print(f"{th:6.2f}  {est.mean[0]:+.5f}  {est.std_error[0]:.1e}")

# the expansion f~ and its explicit distance to f, at a few second-moment factors
print("\n beta    |f - f~|     bound")
for beta in (0.9, 0.99, 0.999):
    p = DampingParams(0.9, beta, 0.1)
    cmp = compare_first_order(inn, [0.5], p, replicas=4000, seed=1, method="paired")
    bound = perturbation_bound(moment_profile(inn, [0.5], p, replicas=2000, seed=2), p)
    print(f"{beta:5.3f}  {abs(cmp.gap[0]):.3e}  {bound[0]:.3e}")
# the gap shrinks like (1 - beta)^2
