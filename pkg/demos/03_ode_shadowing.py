"""
Adam iterates against the ODE of its vector field
=================================================

On the training-time clock t_n = gamma_1 + ... + gamma_n the iterates follow
the flow of f.  We freeze an estimate of f on a box, integrate the ODE with
RK4 on the same time grid and measure the root-mean-square distance of 100
runs, scaled by sqrt(gamma).
"""

import numpy as np

from adamfield import AdamState, DampingParams, StepSchedule, minibatch_innovation, preset, run_adam_batch
from adamfield.field import frozen_field
from adamfield.ode import integrate_ode, shadow_statistic

params = DampingParams(0.9, 0.99, 0.1)
inn = minibatch_innovation(preset("asymmetric"), 8)
sched = StepSchedule.preset("inv_n_2_3")
horizon, theta0 = 5000, 1.0

oracle = frozen_field(inn, params, -0.5, 1.5, n_nodes=16, chains=16, seed=0)
ode = integrate_ode(oracle, [theta0], sched.times(horizon), substeps=2)
runs = run_adam_batch(AdamState.zeros(1, theta=[theta0]), inn, params, sched, horizon, seed=0, replicas=100, stride=50)
stat = shadow_statistic(runs, ode, sched)

print("     n   ODE path   mean iterate   L2 distance / sqrt(gamma)")
for i in np.linspace(0, len(stat.n) - 1, 9).astype(int):
    n = stat.n[i]
    print(f"{n:6d}   {ode.states[n, 0]:.4f}     {runs.theta[:, i, 0].mean():.4f}        {stat.scaled[i]:.3f}")
print(f"\nsup over n of the scaled distance: {stat.sup:.3f}")
