"""Belief-space learning, planning and preference training."""

from ._core import (
    ActionSpace,
    Approximator,
    ContentmentModel,
    Environment,
    FrameShape,
    LearningSystem,
    ManicError,
    ModelTopology,
    NldrOptions,
    Observation,
    PlanPool,
    RefineOptions,
    TrainConfig,
    WalkDataset,
    affine_r2,
    collect_random_walk,
    discounted_mean,
    enumerate_plans,
    estimate_beliefs,
    make_environment,
    plan_utility,
    pretrain,
    score_plan,
    spearman,
)

__all__ = [name for name in dir() if not name.startswith("_")]
