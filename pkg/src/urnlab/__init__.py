"""Two-color drain urn and half-edge pairing laboratory.

Simulates the urn chain exactly, evaluates its closed-form trajectory
predictions and probability bounds, verifies both against a small-instance
exact law, and generates random regular multigraphs while tracking
active/inactive half-edge counts.
"""

from .urn import (
    Draw,
    UrnParams,
    UrnState,
    UrnTrajectory,
    TrajectoryStats,
    DerivedStatistics,
    step,
    run,
    predicted_x,
    predicted_y,
    k_ratio,
    l_ratio,
    threshold_step,
    last_predicted_step,
    event_k_tracking,
    event_l_tracking,
    event_drained,
    event_sigma_tracking,
)
from .oracle import (
    EventKTracking,
    EventLTracking,
    EventDrained,
    EventSigmaTracking,
    EventExhaustionAfter,
    ExactDistribution,
    HorizonCapError,
    build_distribution,
    event_probability,
    verify_martingale,
)
from .bounds import (
    BoundInputs,
    BoundReport,
    drain_product,
    k_tracking_bound,
    k_tracking_bound_at_step,
    exhaustion_tail_bound,
    exhaustion_tail_bound_at_step,
    sigma_tracking_bound,
    drained_bound,
)
from .mc import (
    EstimateReport,
    SweepReport,
    EnsembleStats,
    derive_seeds,
    estimate_event,
    sweep_thresholds,
    ensemble_stats,
    wilson_interval,
    clopper_pearson_interval,
    fit_power_law,
)

__version__ = "0.1.0"
