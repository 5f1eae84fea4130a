"""Numerical toolkit for horospherical geometry of negatively curved chart metrics."""
from .models import (
    ChartPoint, TangentVec, HeintzeParams, HeintzeModel, PerturbedModel,
    DomainError, PinchingWarning, hyperbolic, heintze, perturbed,
    metric_eval, christoffel, sectional_curvature, pinching_check,
)
from .geodesics import IntegrationError, SolverError, distance_bvp, exp_map, integrate_geodesic, shoot_velocity
from .busemann import (
    AsymptoticsError, BoundaryDirection, busemann_gradient, busemann_value, dflow, flow_phi, stable_jacobi,
)
from .horosphere import (
    GeometryError, horosphere_family, horosphere_geodesic, injectivity_probe, intrinsic_distance,
    loop_holonomy_curvature, parallel_transport_P,
)
from .holonomy import (
    HolonomyConvergenceError, compare_transport, holonomy_term, stable_holonomy, verify_holonomy_axioms,
)
from .heintze_analysis import (
    HeintzeGroupElement, bilipschitz_sampler, distortion_bound, eigen_moduli, g_A_eval, group_inverse,
    group_mul, lattice_metric_compare, psi_power,
)

__version__ = "0.1.0"
