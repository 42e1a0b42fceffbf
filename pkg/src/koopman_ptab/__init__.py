"""Koopman-lifted prescribed-time adaptive backstepping (PTAB) toolkit."""

from .analysis import (StabilityReport, build_report, check_vdot_bound, lemma_a1_fit,
                       lyapunov_value, settling_metrics)
from .controller import PTABConfig, adapt_step, backstep, pts_gain
from .dictionary import Dictionary, build_dictionary, lift, lift_jacobian
from .errors import (KoopmanPTABError, NonFiniteError, RankDeficientError,
                     TrajectoryEscapeError, UncontrollableError)
from .plants import ExcitationSignal, LiftedLinearPlant, Plant, van_der_pol
from .records import TrajectoryRecord, read_trajectory_csv, write_trajectory_csv
from .simulator import collect_data, integrate_rk4, run_closed_loop, split_dataset
from .sysid import (CompanionRealization, KoopmanModel, SnapshotDataset, discretize,
                    fit_edmdc, to_companion, to_continuous, to_output_chain)
from .uncertainty import ResidualSet, compute_residuals, fit_bound

__version__ = "0.1.0"

__all__ = [
    "CompanionRealization", "Dictionary", "ExcitationSignal", "KoopmanModel",
    "KoopmanPTABError", "LiftedLinearPlant", "NonFiniteError", "PTABConfig", "Plant",
    "RankDeficientError", "ResidualSet", "SnapshotDataset", "StabilityReport",
    "TrajectoryEscapeError", "TrajectoryRecord", "UncontrollableError", "adapt_step",
    "backstep", "build_dictionary", "build_report", "check_vdot_bound", "collect_data",
    "compute_residuals", "discretize", "fit_bound", "fit_edmdc", "integrate_rk4",
    "lemma_a1_fit", "lift", "lift_jacobian", "lyapunov_value", "pts_gain",
    "read_trajectory_csv", "run_closed_loop", "settling_metrics", "split_dataset",
    "to_companion", "to_continuous", "to_output_chain", "van_der_pol",
    "write_trajectory_csv",
]
