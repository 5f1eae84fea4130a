# %% [markdown]
# # The Heintze group and its lattice of levels
#
# R acts on R^n through e^{-sA}; the product metric g_A is left invariant.
# Comparing horospherical levels spaced l apart gives a bounded distortion.

# %%
import math

import numpy as np

from horolab import HeintzeGroupElement, distortion_bound, eigen_moduli, group_mul, heintze, psi_power
from horolab.heintze_analysis import g_A_eval, left_translate_vector

A = np.diag([-1.0, -2.0])
a = HeintzeGroupElement(1.0, [1.0, 0.0])
b = HeintzeGroupElement(2.0, [1.0, 1.0])
print("product", group_mul(a, b, A))

Z = np.array([0.3, 1.0, -0.5])
p = HeintzeGroupElement(0.7, [0.2, 0.1])
print("g_A before and after left translation:",
      g_A_eval(p, Z, A), g_A_eval(group_mul(a, p, A), left_translate_vector(a, Z, A), A))

# %% [markdown]
# The one-period map psi has differential e^{lA} on the horosphere through the
# axis point, so its powers are explicit.

# %%
model = heintze([-1.0, -2.0])
for k in (-2, 1, 3):
    print(k, np.round(psi_power(model, k=k), 8).tolist(), np.diag(np.exp(k * A)).round(8).tolist())

# %%
rep = distortion_bound(A, 1.0, 101, samples=5000, rng=np.random.default_rng(1))
print(f"sampled distortion {rep.C_measured:.3f} <= theory {rep.C_theory:.3f} (e^4 = {math.exp(4):.3f})")
print("eigenvalue moduli of e^A:", eigen_moduli(np.diag(np.exp([-1.0, -2.0]))))
