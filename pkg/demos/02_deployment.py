# # Deploying the team
#
# Robots move to minimise the chance that a target goes unnoticed by all
# of its k observers.  Each robot in turn takes projected gradient steps
# with a backtracking line search, so the cost never goes up.

import numpy as np

from robustmap.deployment import DescentConfig, cyclic_descent, detection_cost, gaussian_prior, uniform_prior
from robustmap.geometry import Workspace, make_grid
from robustmap.sensing import DetectionModel

ws = Workspace(0.0, 1.0, 0.0, 1.0)
grid = make_grid(ws, 50, 50)
det = DetectionModel(sigma_d=0.2)

# Start everyone bunched in a corner.
start = 0.05 + 0.1 * np.random.default_rng(0).random((6, 2))

for k in (1, 2):
    res = cyclic_descent(start, grid, uniform_prior(grid), k, det, DescentConfig(max_sweeps=60))
    trace = np.round(res.costs[:: max(1, len(res.costs) // 8)], 4)
    print(f"k={k}: {res.sweeps} sweeps, converged={res.converged}")
    print("  cost trace:", trace)
    print("  final positions:\n", np.round(res.positions, 3))

# ## A peaked prior
#
# If targets are believed to sit near the centre, robots crowd there.

prior = gaussian_prior(grid, (0.5, 0.5), 0.15)
res = cyclic_descent(start, grid, prior, 2, det, DescentConfig(max_sweeps=60))
spread = np.linalg.norm(res.positions - 0.5, axis=1)
print("distance to centre under a peaked prior:", np.round(np.sort(spread), 3))
print("cost:", round(detection_cost(res.positions, grid, prior, 2, det), 4))
