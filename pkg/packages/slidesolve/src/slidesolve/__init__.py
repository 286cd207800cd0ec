import logging

from .config import DEFAULT_LOG_LEVEL

if not logging.getLogger().hasHandlers():
    class _DefaultFormatter(logging.Formatter):
        def format(self, record):
            s = super().format(record)
            base = set(logging.makeLogRecord({}).__dict__)
            base.add("message")
            extras = [f"{k}={v}" for k, v in record.__dict__.items() if k not in base]
            return s + (" | " + " ".join(extras) if extras else "")

    __handler = logging.StreamHandler()
    __handler.setFormatter(_DefaultFormatter("%(name)s [%(levelname)s] %(message)s"))
    logging.getLogger().addHandler(__handler)
    logging.getLogger().setLevel(DEFAULT_LOG_LEVEL)

logger = logging.getLogger(__name__)


from .errors import *
from .config import DescentConfig, VerifyConfig, IntegratorMethod, DEFAULT_GRID_NODES, config_with_overrides, \
    config_to_dict
from .problem import ControlKind, ParamRef, SurfaceFamily, ProblemSpec, surface_eval, surface_jacobians, \
    problem_from_dict, problem_to_dict, load_problem
from .inclusion import ChannelKind, SuperdiffInterval, PSI_0, channel, support_value, h_value, psi_star, \
    superdifferential_h, h_directional_derivative, h_nodes
from .grid import TimeGrid, DerivativeGrid, StateGrid, build_state, quadrature, cumulative, reverse_cumulative, \
    cumulative_adjoint
from .controls import CubicCoeffs, ControlPartials, derive_cubic_coeffs, relay_control, u1_control, u2_control, \
    control_value_and_partials, control_nodes
from .functionals import FunctionalBreakdown, ResidualProfile, eval_phi, eval_chi, eval_omega, eval_I, eval_I12, \
    residual_profile, kink_nodes
from .gradients import GradientBundle, FunctionalHandle, grad_I, grad_I12, fd_gradient, functional_for, \
    compare_bundles
from .descent import Phase, StopReason, LineSearchResult, IterationRecord, SolveReport, line_search, solve
from .verification import InclusionResidual, VerifyReport, rk4_fixed, integrate_closed_loop, inclusion_residual, \
    forward_difference, verify_solution
from .artifacts import RunArtifacts, TrajectoryTable, write_trajectory_csv, read_trajectory_csv, write_json, \
    read_json, write_trace_csv
from .problems import example_path
