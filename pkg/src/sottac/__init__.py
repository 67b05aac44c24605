"""Second-order two-timescale actor-critic methods, matrix-free.

The package implements four actor update rules (vanilla gradient ascent,
natural gradient, and the two curvature approximations built from
advantage-weighted outer-product and intrinsic log-policy Hessian terms) on
natively implemented control environments, together with the brute-force
oracle suite that verifies every curvature identity numerically.
"""

__version__ = "0.1.0"

from .critic import AdvantageBatch, ValueCritic, critic_update, td0_targets
from .curvature import (
    CurvatureKind,
    CurvatureOperator,
    SpectrumEstimate,
    Weighting,
    acgn_vp,
    estimate_spectrum,
    fisher_vp,
    h1_vp,
    h2_vp,
    h12_diagnostic,
    make_operator,
)
from .envs import (
    CartPole,
    EnvSpec,
    PointMassReacher,
    TinyMdp,
    Transition,
    enumerate_exact_J,
    exact_occupancy,
    make_env,
)
from .optim import (
    Natural,
    Newton,
    UpdateReport,
    Vanilla,
    apply_update,
    policy_gradient,
    solve_direction,
    step_size_bound,
)
from .policies import GaussianMlpPolicy, SoftmaxLinearPolicy, WeightedLogProbFunctional
from .trainer import (
    RunResult,
    TrainConfig,
    Trajectory,
    collect_batch,
    episodes_to_threshold,
    train,
)

__all__ = [
    "AdvantageBatch",
    "CartPole",
    "CurvatureKind",
    "CurvatureOperator",
    "EnvSpec",
    "GaussianMlpPolicy",
    "Natural",
    "Newton",
    "PointMassReacher",
    "RunResult",
    "SoftmaxLinearPolicy",
    "SpectrumEstimate",
    "TinyMdp",
    "TrainConfig",
    "Trajectory",
    "Transition",
    "UpdateReport",
    "ValueCritic",
    "Vanilla",
    "WeightedLogProbFunctional",
    "Weighting",
    "acgn_vp",
    "apply_update",
    "collect_batch",
    "critic_update",
    "enumerate_exact_J",
    "episodes_to_threshold",
    "estimate_spectrum",
    "exact_occupancy",
    "fisher_vp",
    "h1_vp",
    "h2_vp",
    "h12_diagnostic",
    "make_env",
    "make_operator",
    "policy_gradient",
    "solve_direction",
    "step_size_bound",
    "td0_targets",
    "train",
]
