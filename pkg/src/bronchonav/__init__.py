"""Desk-scale simulator and library for vision-style localization and
autonomous driving of a bronchoscope in a branched airway tree."""

from .skeleton import (
    Airway,
    AirwayTree,
    TreeGenConfig,
    TreeError,
    generate_tree,
    generation_distance,
    insertion_length_to_bifurcation,
    load_tree,
    save_tree,
)
from .geometry import (
    AirwayGroundTruth,
    GeometryError,
    Pose,
    VisibilityConfig,
    alpha_beta_to_direction,
    direction_to_alpha_beta,
    ground_truth_observation,
    point_visible,
    pose_errors,
)
from .perception import (
    LossWeights,
    NoiseConfig,
    ObservationMatrix,
    UnlabeledObservation,
    airwaynet_loss,
    oracle_airwaynet,
    oracle_bifurcationnet,
    score_threshold_sweep,
)
from .localization import (
    BifurcationMatch,
    FilterConfig,
    FilterState,
    LocalizationError,
    align_pose,
    filter_step,
    find_consistent_bifurcation,
    fit_probability,
    prior_probability,
)
from .control import (
    Command,
    ControllerConfig,
    SupervisorState,
    Trajectory,
    insertion_command,
    plan_trajectory,
    supervisor_step,
    tendon_command,
    view_error,
)
from .simulator import (
    EpisodeLog,
    ScopeState,
    SimConfig,
    centerline_script,
    load_log,
    run_driving_episode,
    run_tracking_episode,
    save_log,
    step,
)
from .evaluation import (
    AirwayClassStats,
    PRCurve,
    TrackingReport,
    averaged_pr_curve,
    driving_summary,
    per_airway_f1,
    tracking_report,
)

__version__ = "0.1.0"
