"""Two-view co-training on label proportions.

Views alternate: the freshly trained view predicts posteriors over a
shared unlabeled pool, those posteriors are fed back through the bag
builder as priors to form pseudo-bags, and the other view trains on its
real bags plus the pseudo-bags. The pseudo-bag set is replaced, never
accumulated, each iteration. Final per-view predictions can be blended
by soft voting.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .bags import BagBuildParams, create_bags
from .errors import DomainError, ParameterError, ShapeError, UsageError
from .llp import TrainConfig, train_llp
from .network import Model, predict, reinitialize
from .numcore import Rng


@dataclass
class ViewState:
    """One view's bags, features, model, and training setup. `pool_indices`
    selects the unlabeled pool rows; both views' pools must reference the
    same instances in the same order."""

    name: str
    features: np.ndarray
    bags: list
    model: Model
    train: TrainConfig
    pool_indices: np.ndarray = None


@dataclass
class CoTrainConfig:
    iterations: int = 6
    pseudo: BagBuildParams = field(default_factory=lambda: BagBuildParams(threshold=0.9,
                                                                          max_size=64))
    warm_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")


@dataclass
class CoTrainResult:
    models: dict
    metrics: list
    pseudo_bags: list


def make_pseudo_bags(posteriors, params: BagBuildParams, indices=None):
    """Bags built from model posteriors treated as class priors.

    Each pool instance is assigned to its argmax class first, then the
    bag builder runs per class on that class's posterior column, so no
    instance can land in two classes' bags. Returns (bags, per-bag
    target-class proportions); bags are tagged source="pseudo".
    """
    post = np.asarray(posteriors, dtype=float)
    if post.ndim != 2 or post.shape[1] < 2:
        raise ShapeError(f"posteriors must be (n, classes >= 2), got {post.shape}")
    if np.any(post < -1e-9) or np.any(np.abs(post.sum(axis=1) - 1.0) > 1e-6):
        raise DomainError("posterior rows must be probability simplexes")
    if indices is None:
        indices = np.arange(post.shape[0])
    else:
        indices = np.asarray(indices)
        if indices.shape[0] != post.shape[0]:
            raise ShapeError("indices must align with posterior rows")

    class_count = post.shape[1]
    assigned = post.argmax(axis=1)
    bags, proportions = [], []
    for y in range(class_count):
        members = np.nonzero(assigned == y)[0]
        if members.size == 0:
            continue
        b, p = create_bags(post[members, y], replace(params, target_class=y),
                           class_count=class_count, indices=indices[members],
                           source="pseudo", member_posteriors=post[members])
        bags.extend(b)
        proportions.extend(p)
    return bags, proportions


def soft_vote(posteriors_a, posteriors_b):
    """Element-wise mean of two posterior matrices and the argmax labels;
    ties break toward the lower class index."""
    a = np.asarray(posteriors_a, dtype=float)
    b = np.asarray(posteriors_b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"posterior shapes {a.shape} and {b.shape} must match")
    blended = (a + b) / 2.0
    return blended, blended.argmax(axis=1)


def _pool(view: ViewState) -> np.ndarray:
    if view.pool_indices is None:
        return np.arange(len(view.features))
    return np.asarray(view.pool_indices)


def _check_shared_pool(view1: ViewState, view2: ViewState):
    p1, p2 = _pool(view1), _pool(view2)
    if p1.shape != p2.shape or not np.array_equal(p1, p2):
        raise UsageError("views must share one unlabeled pool: pool indices differ")
    for view, pool in ((view1, p1), (view2, p2)):
        if pool.size and (pool.min() < 0 or pool.max() >= len(view.features)):
            raise UsageError(f"view {view.name!r} pool references rows outside its features")


def _evaluate(model, features, labels) -> dict:
    from .evalbench import evaluate_predictions  # local import, avoids cycle

    post = predict(model, features)
    return evaluate_predictions(post.argmax(axis=1), labels)


def cotrain(view1: ViewState, view2: ViewState, config: CoTrainConfig,
            eval_set=None) -> CoTrainResult:
    """Alternate LLP training across two views with pseudo-bag feedback.

    Odd iterations train view1, even iterations view2; by default each
    view's model is re-initialized at its turn and fit from scratch on
    its real bags plus the pseudo-bags generated by the other view last
    iteration (warm_start=True trains incrementally instead). When
    `eval_set` is given, iteration-0 metrics (each view trained on its
    own bags alone) are recorded first, then one metrics record per
    iteration for the view just trained.
    """
    _check_shared_pool(view1, view2)
    views = (view1, view2)
    base_rng = Rng(config.seed)
    metrics = []

    if eval_set is not None:
        if len(eval_set.view_features) != 2:
            raise UsageError("eval_set must carry features for both views")
        for k, view in enumerate(views):
            baseline = reinitialize(view.model, base_rng.substream(f"init-{view.name}-0"))
            if view.bags:
                train_llp(baseline, view.features, view.bags, view.train)
            scores = _evaluate(baseline, eval_set.view_features[k], eval_set.labels)
            metrics.append({"iteration": 0, "view": view.name,
                            "f1_weighted": scores["f1_weighted"],
                            "accuracy": scores["accuracy"],
                            "pseudo_bag_count": 0, "pseudo_instances": 0})

    pseudo = []
    for iteration in range(1, config.iterations + 1):
        k = (iteration - 1) % 2
        view = views[k]
        train_bags = list(view.bags) + list(pseudo)
        if not train_bags:
            raise UsageError(
                f"view {view.name!r} has no real or pseudo bags at iteration {iteration}")
        if not config.warm_start:
            view.model = reinitialize(view.model,
                                      base_rng.substream(f"init-{view.name}-{iteration}"))
        train_llp(view.model, view.features, train_bags, view.train)

        pool = _pool(view)
        posteriors = predict(view.model, view.features[pool])
        pseudo, _ = make_pseudo_bags(posteriors, config.pseudo, indices=pool)

        if eval_set is not None:
            scores = _evaluate(view.model, eval_set.view_features[k], eval_set.labels)
            metrics.append({"iteration": iteration, "view": view.name,
                            "f1_weighted": scores["f1_weighted"],
                            "accuracy": scores["accuracy"],
                            "pseudo_bag_count": len(pseudo),
                            "pseudo_instances": int(sum(b.size for b in pseudo))})

    return CoTrainResult(models={view1.name: view1.model, view2.name: view2.model},
                         metrics=metrics, pseudo_bags=pseudo)
