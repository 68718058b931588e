"""Tensor-train optimal control toolkit.

Parameter-augmented value/advantage functions in TT format, gradient-free
policy retrieval, core-level domain contraction against parameter
distributions, and the simulated manipulation benchmarks exercising them.
"""

from .tt import (
    Grid,
    SolverConfig,
    TensorTrain,
    contract_leading,
    tt_add,
    tt_element,
    tt_eval,
    tt_eval_partial,
    tt_round,
    tt_scale,
    tt_svd,
)
from .cross import CrossResult, cross_approximate, tt_cross
from .ttgo import OptimizeReport, PolicyRetriever, ttgo_argmax, ttgo_policy_query, ttgo_sample
from .adp import AdvantageModel, ValueModel, bellman_backup, build_advantage, value_iteration
from .contraction import (
    ParamDistribution,
    contract,
    contract_function_level,
    dist_delta,
    dist_uniform,
    dist_uniform_band,
)
from .envs import are_oracle, env_grids, make_env, rollout
from .adaptation import (
    AdaptDataset,
    ProprioHistory,
    Regressor,
    collect_dataset,
    ema_pointwise,
    estimate,
    ima_distribution,
    train_regressor,
)
from .errors import ConfigError, DataError, DomainError, SolverAbort

__all__ = [
    "Grid", "SolverConfig", "TensorTrain", "contract_leading", "tt_add",
    "tt_element", "tt_eval", "tt_eval_partial", "tt_round", "tt_scale", "tt_svd",
    "CrossResult", "cross_approximate", "tt_cross",
    "OptimizeReport", "PolicyRetriever", "ttgo_argmax", "ttgo_policy_query", "ttgo_sample",
    "AdvantageModel", "ValueModel", "bellman_backup", "build_advantage", "value_iteration",
    "ParamDistribution", "contract", "contract_function_level", "dist_delta",
    "dist_uniform", "dist_uniform_band",
    "are_oracle", "env_grids", "make_env", "rollout",
    "AdaptDataset", "ProprioHistory", "Regressor", "collect_dataset",
    "ema_pointwise", "estimate", "ima_distribution", "train_regressor",
    "ConfigError", "DataError", "DomainError", "SolverAbort",
]
