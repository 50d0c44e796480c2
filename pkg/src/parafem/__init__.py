"""Neural-network-enhanced hr-adaptive finite elements for 2D parabolic
equations: P1 backward-Euler FEM, gradient-recovery estimators, vertex-density
size fields, size-driven remeshing, and a mesh-free MLP surrogate of the
previous time step."""

from .adapt import (
    AdaptConfig,
    AdaptRecord,
    PowerLawFit,
    adapt_initial,
    adapt_step,
    compute_ite_ro,
    fit_power_law,
    predict_nov,
    run,
    run_baseline,
)
from .bench import ManufacturedCase, convergence_slope, efficiency_index, make_case
from .fem import (
    FeFunction,
    ParabolicProblem,
    assemble_mass,
    assemble_stiffness,
    backward_euler_step,
    integrate_gradient_error,
    integrate_l2_error,
    l2_project,
    solve_spd,
)
from .gmsh_io import generate_mesh, parse_msh, write_background_field
from .mesh import (
    ElementField,
    Mesh,
    PolygonDomain,
    VertexField,
    boundary_distance,
    check_mesh,
    element_geometry,
    node_to_cell,
    uniform_mesh,
    unit_square,
)
from .recovery import combine_estimators, estimate, recover_gradient
from .refine import bisect_refine, fallback_refine, grade_size_field, nested_interpolate
from .sizefield import SizeFieldInput, size_field, vertex_averages
from .surrogate import SurrogateNet, TrainConfig, TrainReport, init_net, train

__version__ = "0.1.0"
