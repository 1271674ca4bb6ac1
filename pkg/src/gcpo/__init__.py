"""Guided constrained policy optimization on a planar quadruped tracking task."""

from .constraints import (ConstraintReport, ConstraintSpec, ConstraintSet,
                          RewardWeights, default_constraint_set, logistic_kernel)
from .cppo import (ObjectiveConfig, UpdateResult, acppo_update, cclip_loss,
                   clip_term, hcppo_update, total_loss)
from .env import EnvParams, EnvSnapshot, PlanarQuadEnv, add_noise
from .estimator import GCPO
from .expert import ExpertController, ExpertDataset, generate_dataset, \
    guided_policy_update
from .nets import AdamState, DenseNet, adam_step, make_dense_net, net_backward, \
    net_forward
from .policy import GaussianPolicy, ValueFunction, entropy, log_prob, mean_kl, \
    reduce_entropy, sample_action
from .returns import (Episode, RolloutBatch, constraint_surrogate,
                      cost_return_estimate, discounted_returns, gae)
from .trainer import DivergenceHalt, Trainer, TrainerConfig, TrainRecord, gcpo_train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ConstraintReport", "ConstraintSet", "ConstraintSpec",
    "DenseNet", "DivergenceHalt", "EnvParams", "EnvSnapshot", "Episode",
    "ExpertController", "ExpertDataset", "GCPO", "GaussianPolicy",
    "ObjectiveConfig", "PlanarQuadEnv", "RewardWeights", "RolloutBatch",
    "Trainer", "TrainerConfig", "TrainRecord", "UpdateResult", "acppo_update",
    "adam_step", "add_noise", "cclip_loss", "clip_term", "constraint_surrogate",
    "cost_return_estimate", "default_constraint_set", "discounted_returns",
    "entropy", "gae", "gcpo_train", "generate_dataset", "guided_policy_update",
    "hcppo_update", "log_prob", "logistic_kernel", "make_dense_net", "mean_kl",
    "net_backward", "net_forward", "reduce_entropy", "sample_action",
    "total_loss",
]
