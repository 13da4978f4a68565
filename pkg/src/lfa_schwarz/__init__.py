"""Window-based local Fourier analysis of Schwarz smoothers in multigrid."""

from .discretization import (
    BiotParams, Discretization, DiscretizationError, GridSpec, StencilSet, assemble_biot_stencils,
    assemble_poisson_stencils, biot_discretization, poisson_discretization,
)
from .lfa import (
    PAPER_BIOT_WEIGHTS, CoarseSingularityError, FactorReport, TwoGridConfig, Window,
    asymptotic_factor, asymptotic_factors, biot_config, operator_symbol, poisson_config,
    smoother_symbol, transfer_symbols, two_grid_symbol, window_size,
)
from .optimize import BIOT_ROLE_GROUPS, WeightResult, WeightSearchSpec, optimize_weights, scalar_spec
from .schwarz import (
    BlockPattern, SingularBlockError, WeightRule, make_1d_blocks, make_biot_pressure_blocks,
    make_element_blocks,
)
from .solver import (
    CycleSpec, DivergenceError, NonConvergenceError, SolverError, biot_hierarchy,
    count_iterations, measure_rho_h, poisson_hierarchy, solve,
)

__version__ = "0.1.0"
