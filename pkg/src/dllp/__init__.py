"""Learning from label proportions.

Train ordinary feed-forward classifiers when only per-bag class
proportions are observed: per-instance posteriors are averaged over each
bag and matched to the bag's proportions with a KL objective. Includes
prior-driven bag construction, two-view co-training with pseudo-bags,
soft-voting ensembles, and a seeded synthetic benchmark harness.
"""

from .bags import BagBuildParams, PriorTable, attach_priors, create_bags, \
    load_prior_table, schedule_proportions
from .cotrain import CoTrainConfig, CoTrainResult, ViewState, cotrain, \
    make_pseudo_bags, soft_vote
from .evalbench import LabeledEvalSet, ScenarioSpec, SourceSpec, SweepSpec, \
    SyntheticSpec, bag_by_score, bag_with_noise, evaluate_predictions, \
    generate_two_view, run_scenario, run_sweep, train_supervised_baseline, \
    weighted_f1
from .llp import Bag, TrainConfig, batch_average, kl_bag_grad, kl_bag_loss, \
    load_bags, make_batches, save_bags, train_llp
from .network import AdamState, LayerSpec, Model, adam_step, backward, dense, \
    dropout, forward, init_model, load_checkpoint, predict, save_checkpoint
from .numcore import EPSILON, Rng, finite_diff_grad, matmul, safe_log, softmax_temp

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Bag", "BagBuildParams", "CoTrainConfig", "CoTrainResult",
    "EPSILON", "LabeledEvalSet", "LayerSpec", "Model", "PriorTable", "Rng",
    "ScenarioSpec", "SourceSpec", "SweepSpec", "SyntheticSpec", "TrainConfig",
    "ViewState", "adam_step", "attach_priors", "backward", "bag_by_score",
    "bag_with_noise", "batch_average", "cotrain", "create_bags", "dense", "dropout",
    "evaluate_predictions", "finite_diff_grad", "forward", "generate_two_view",
    "init_model", "kl_bag_grad", "kl_bag_loss", "load_bags", "load_checkpoint",
    "load_prior_table", "make_batches", "make_pseudo_bags", "matmul", "predict",
    "run_scenario", "run_sweep", "safe_log", "save_bags", "save_checkpoint",
    "schedule_proportions", "soft_vote", "softmax_temp", "train_llp",
    "train_supervised_baseline", "weighted_f1",
]
