# %% [markdown]
# # Stable holonomy versus Levi-Civita transport
#
# Push two points of a horosphere toward the boundary, transport between them
# there, and pull back.  The limit is the stable holonomy.  It agrees with the
# intrinsic transport when the horospheres are flat, and differs otherwise.

# %%
import numpy as np

from horolab import BoundaryDirection, heintze, perturbed
from horolab.holonomy import PairCoords, compare_transport, stable_holonomy, stable_holonomy_pair
from horolab.horosphere import RayHorospherePatch, loop_holonomy_curvature

special = BoundaryDirection.special()
h15 = heintze([-1.0, -1.5])
pert = perturbed(heintze([-1.25, -1.5]), eps=0.05, radius=1.5)

# %% [markdown]
# Special boundary point: horospheres of the unperturbed model are flat, so the
# two maps coincide.  The bump makes the horosphere curved.

# %%
x = np.array([0.0, 0.1, 0.1])
y = np.array([0.0, 0.4, -0.2])
print("flat discrepancy   ", compare_transport(h15, special, 0.0, x, y).discrepancy)
print("perturbed curvature", loop_holonomy_curvature(pert, special, np.array([0.0, 0.3, 0.2]), [0, 1, 0], [0, 0, 1]))
res = stable_holonomy(pert, special, 0.0, x, y)
print("perturbed holonomy\n", res.map, "\nstatus", res.status, "after", res.N_used, "steps")

# %% [markdown]
# A generic boundary point of the anisotropic model has curved horospheres.
# The successive differences of the approximants decay geometrically until
# they reach the floor set by the horosphere data.

# %%
ray = BoundaryDirection.ray(h15, [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0])
patch = RayHorospherePatch(h15, ray, [0.2, 0.3, -0.2], radius=0.15, order=11, t_max=16.0)
pc = PairCoords(patch, 0.0, np.array([-0.08, 0.05]), np.array([0.09, -0.06]))
res = stable_holonomy_pair(pc, tol=1e-14, raise_on_failure=False)
for a in res.trace[1:]:
    print(f"j = {a.N:2d}   succ_diff = {a.succ_diff:.3e}")
print(f"fitted decay rate {res.tau_fit:.3f} per unit time, status {res.status}")
