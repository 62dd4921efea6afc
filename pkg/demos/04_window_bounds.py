"""
Window-by-window approximation bounds
=====================================

The step index is cut into windows of training-time length about
rho * sqrt(gamma).  Inside each window Adam's increments are compared with
three simplified processes: frozen parameter, stationary history and pure
drift.  Each gap has an explicit L^p bound; here we print how much room the
bounds leave.
"""

from adamfield import AdamState, DampingParams, StepSchedule, preset, run_adam_batch
from adamfield.field import frozen_field
from adamfield.ode import approx_processes, p_regularity, prop_bounds_report, rho_partition

params = DampingParams(0.9, 0.99, 0.1)
inn = preset("asymmetric")
sched = StepSchedule.preset("inv_n_2_3")
box, p = (-3.0, 3.0), 4.0

part = rho_partition(sched, 0, 1.5, horizon=1000)
print(f"{part.count} windows, first points {part.points[:8].tolist()}")

oracle = frozen_field(inn, params, *box, n_nodes=24, chains=16, seed=0)
runs = run_adam_batch(AdamState.zeros(1, theta=[0.5]), inn, params, sched, part.last, seed=0, replicas=100,
                      keep_inputs=True)
paths = approx_processes(runs, part, params, inn, oracle, seed_aux=1)
report = prop_bounds_report(paths, params, p_regularity(inn, box, p), p, box)

print("\nbound   windows  passed  smallest rhs/lhs")
for name, s in report.summary().items():
    print(f"{name:6s}  {s['windows']:7d}  {s['passed']:6d}  {s['min_ratio']:.3g}")
