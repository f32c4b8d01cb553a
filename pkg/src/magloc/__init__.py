"""Six-DOF localization of a magnetically actuated robot under multiple EPMs."""

from .ekf import DynamicsInput, FilterParams, FilterState, predict, update
from .liegroups import Pose, Twist, exp_derivative, exp_se3, log_se3, skew
from .magnetics import Epm, PhysicalConstants, dipole_field, dipole_field_gradient, total_field
from .observability import Whitening, analyze, codistribution, workspace_condition_map
from .scenario import (
    ConvergenceCriteria,
    Workspace,
    epm_planes,
    monte_carlo,
    pose_errors,
    run_trial,
    sample_epm_configuration,
    sample_pose,
)
from .sensing import (
    EpmConfiguration,
    MeasurementBatch,
    MeasurementVector,
    NoiseSpec,
    measurement_jacobian,
    predict_measurement,
    synthesize_measurement,
)

__version__ = "0.1.0"
