# # Order-k partitions
#
# Every point of the workspace is watched by the k robots nearest to it.
# With k = 1 this is the ordinary Voronoi diagram; with k = 2 each point
# has a backup observer, so one broken sensor never leaves a hole.

import numpy as np

from robustmap.geometry import Workspace, make_grid, order_k_assignment

ws = Workspace(0.0, 1.0, 0.0, 1.0)
grid = make_grid(ws, 40, 40)
robots = np.random.default_rng(3).random((6, 2))

# ## Who watches what
#
# `members[i]` lists the k robots assigned to quadrature point i, nearest
# first (ties go to the lower index).

for k in (1, 2, 3):
    a = order_k_assignment(robots, grid, k)
    share = [a.contains(j).mean() for j in range(len(robots))]
    print(f"k={k}: area fraction per robot", np.round(share, 3), " total", round(sum(share), 3))

# With k robots per point the fractions add up to k: each robot now owns a
# bigger, overlapping patch.

# ## Distinct cells
#
# The number of distinct k-sets grows with k; these are the cells of the
# order-k diagram.

for k in (1, 2, 3):
    a = order_k_assignment(robots, grid, k)
    cells = {tuple(sorted(m)) for m in a.members.tolist()}
    print(f"k={k}: {len(cells)} cells")

# ## What a failure costs
#
# Knock out robot 0 and count the points left with no working observer.

for k in (1, 2):
    a = order_k_assignment(robots, grid, k)
    blind = np.all(a.members == 0, axis=1)
    print(f"k={k}: {blind.mean():.1%} of the workspace blind after robot 0 fails")
