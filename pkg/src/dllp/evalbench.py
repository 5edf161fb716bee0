"""Synthetic two-view benchmark harness.

Gaussian-mixture data with two conditionally independent feature views,
noisy bag construction, weighted-F1 metrics, a supervised cross-entropy
baseline sharing init and optimizer with the proportion trainer, and
sweep drivers for batch size, source-subset, and proportion-noise
studies. Everything is seeded and replayable.
"""

from dataclasses import dataclass, replace

import numpy as np

from .cotrain import CoTrainConfig, ViewState
from .bags import BagBuildParams
from .errors import (DomainError, NumericError, ParameterError, ShapeError,
                     UsageError)
from .llp import Bag, TrainConfig, train_llp
from .network import (AdamState, Model, apply_gradients, backward, dense, dropout,
                      forward, init_model, predict)
from .numcore import EPSILON, Rng


@dataclass
class SyntheticSpec:
    """Two-view Gaussian mixture: class k's mean in view v is separation
    along axis k (or explicit `means`), with isotropic per-view noise."""

    class_count: int = 2
    instances: int = 1000
    view_dims: tuple = (6, 6)
    separation: float = 3.0
    view_noise: tuple = (1.0, 1.0)
    class_probs: tuple = None
    means: tuple = None
    proportion_noise: float = 0.0
    seed: int = 0


@dataclass
class LabeledEvalSet:
    """Held-out features per view with true labels; evaluation only."""

    view_features: tuple
    labels: np.ndarray


def _default_means(class_count, dim, separation):
    if dim < class_count:
        raise ParameterError(
            f"default class means need view_dim >= class_count ({dim} < {class_count}); "
            "pass explicit means instead")
    means = np.zeros((class_count, dim))
    for k in range(class_count):
        means[k, k] = separation
    return means


def generate_two_view(spec: SyntheticSpec):
    """Draw (view1 features, view2 features, labels), bit-reproducible
    under the spec's seed."""
    if spec.class_count < 2:
        raise ParameterError(f"class_count must be >= 2, got {spec.class_count}")
    if spec.instances < 1:
        raise ParameterError(f"instances must be >= 1, got {spec.instances}")
    if any(sd < 0 for sd in spec.view_noise):
        raise ParameterError(f"view noise must be >= 0, got {spec.view_noise}")
    if spec.class_probs is not None:
        probs = np.asarray(spec.class_probs, dtype=float)
        if probs.shape != (spec.class_count,) or np.any(probs < 0) \
                or abs(probs.sum() - 1.0) > 1e-9:
            raise ParameterError(f"class_probs must be a simplex of length "
                                 f"{spec.class_count}, got {spec.class_probs}")
    else:
        probs = np.full(spec.class_count, 1.0 / spec.class_count)

    rng = Rng(spec.seed)
    labels = rng.substream("labels").choice(spec.class_count, size=spec.instances, p=probs)
    views = []
    for v in range(2):
        dim = spec.view_dims[v]
        if spec.means is not None:
            means = np.asarray(spec.means[v], dtype=float)
            if means.shape != (spec.class_count, dim):
                raise ParameterError(f"means for view {v} must be "
                                     f"({spec.class_count}, {dim}), got {means.shape}")
        else:
            means = _default_means(spec.class_count, dim, spec.separation)
        noise = rng.substream(f"view-{v}").normal(size=(spec.instances, dim))
        views.append(means[labels] + spec.view_noise[v] * noise)
    return views[0], views[1], labels


def _bags_from_order(labels, order, bag_size, noise, rng, class_count, indices, source):
    bags = []
    for start in range(0, len(order), bag_size):
        chunk = order[start:start + bag_size]
        counts = np.bincount(labels[chunk], minlength=class_count)
        props = counts / len(chunk)
        if noise > 0:
            props = props + rng.uniform(-noise, noise, class_count)
            props = np.clip(props, 0.0, None)
            total = props.sum()
            props = props / total if total > 0 else np.full(class_count, 1.0 / class_count)
        bags.append(Bag(instance_indices=tuple(int(indices[i]) for i in chunk),
                        proportions=tuple(float(p) for p in props), source=source))
    return bags


def _check_bag_args(labels, bag_size, noise, indices):
    labels = np.asarray(labels)
    if not 0.0 <= noise < 1.0:
        raise ParameterError(f"noise must be in [0, 1), got {noise}")
    if bag_size < 1:
        raise ParameterError(f"bag_size must be >= 1, got {bag_size}")
    if indices is None:
        indices = np.arange(labels.size)
    else:
        indices = np.asarray(indices)
        if indices.shape != labels.shape:
            raise ShapeError("indices must align with labels")
    return labels, indices


def bag_with_noise(labels, bag_size: int, noise: float, rng: Rng, class_count: int = None,
                   indices=None, source: str = "uniform") -> list:
    """Randomly partition instances into bags of `bag_size` (remainder
    kept) and attach each bag's class proportions, perturbed by additive
    uniform noise in [-noise, noise], clamped and renormalized."""
    labels, indices = _check_bag_args(labels, bag_size, noise, indices)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 2
    perm = rng.permutation(labels.size)
    return _bags_from_order(labels, perm, bag_size, noise, rng, class_count, indices, source)


def bag_by_score(labels, scores, bag_size: int, noise: float, rng: Rng,
                 class_count: int = None, indices=None, source: str = "score") -> list:
    """Group instances into bags by descending score instead of randomly.

    With a score correlated to the class label this reproduces the
    structure of constraint-driven bags (geography, name statistics,
    search rank): proportions vary widely across bags while remaining
    exact class frequencies before noise is applied."""
    labels, indices = _check_bag_args(labels, bag_size, noise, indices)
    scores = np.asarray(scores, dtype=float)
    if scores.shape != labels.shape:
        raise ShapeError("scores must align with labels")
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 2
    order = np.argsort(-scores, kind="stable")
    return _bags_from_order(labels, order, bag_size, noise, rng, class_count, indices, source)


def weighted_f1(predictions, truth) -> float:
    """Per-class F1 averaged with weights proportional to class support
    in the truth; classes with undefined precision or recall score 0."""
    pred = np.asarray(predictions)
    t = np.asarray(truth)
    if pred.shape != t.shape or pred.ndim != 1:
        raise ShapeError(f"predictions shape {pred.shape} does not match truth {t.shape}")
    if t.size == 0:
        raise UsageError("cannot score an empty label set")
    if np.any(pred < 0) or np.any(t < 0):
        raise DomainError("labels must be nonnegative integers")
    score = 0.0
    for k in np.unique(t):
        tp = int(np.sum((pred == k) & (t == k)))
        fp = int(np.sum((pred == k) & (t != k)))
        fn = int(np.sum((pred != k) & (t == k)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        score += (tp + fn) / t.size * f1
    return float(score)


def evaluate_predictions(predictions, truth) -> dict:
    """Weighted F1, accuracy, and per-class precision/recall/F1/support."""
    pred = np.asarray(predictions)
    t = np.asarray(truth)
    per_class = {}
    for k in np.unique(t):
        tp = int(np.sum((pred == k) & (t == k)))
        fp = int(np.sum((pred == k) & (t != k)))
        fn = int(np.sum((pred != k) & (t == k)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[str(int(k))] = {"precision": precision, "recall": recall,
                                  "f1": f1, "support": tp + fn}
    return {"f1_weighted": weighted_f1(pred, t),
            "accuracy": float(np.mean(pred == t)),
            "per_class": per_class}


def train_supervised_baseline(model: Model, features, labels, config: TrainConfig,
                              adam_state=None) -> list:
    """Fit the same network with per-instance cross-entropy on true labels;
    shares the optimizer, batching, and epoch seeding scheme with the
    proportion trainer so comparisons are like for like. Returns the
    per-epoch mean cross-entropy history."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"features shape {x.shape} does not match input_dim {model.input_dim}")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match {x.shape[0]} instances")
    if y.size and (y.min() < 0 or y.max() >= model.class_count):
        raise DomainError(f"labels must lie in [0, {model.class_count})")
    if adam_state is None:
        adam_state = AdamState(learning_rate=config.learning_rate, beta1=config.beta1,
                               beta2=config.beta2, epsilon=config.epsilon)

    base = Rng(config.shuffle_seed)
    history = []
    for epoch in range(config.epochs):
        erng = base.substream(f"epoch-{epoch}")
        perm = erng.substream("batching").permutation(x.shape[0])
        drop_rng = erng.substream("dropout")
        losses = []
        for start in range(0, x.shape[0], config.max_batch_size):
            rows = perm[start:start + config.max_batch_size]
            post, cache = forward(model, x[rows], training=True, rng=drop_rng)
            picked = np.maximum(post[np.arange(rows.size), y[rows]], EPSILON)
            loss = float(-np.mean(np.log(picked)))
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            dpost = np.zeros_like(post)
            dpost[np.arange(rows.size), y[rows]] = -1.0 / (picked * rows.size)
            grads = backward(model, cache, dpost)
            apply_gradients(model, adam_state, grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


@dataclass(frozen=True)
class SourceSpec:
    """One bag provenance in a scenario: which fraction of instances it
    covers, how noisy its proportions are, and how strongly its grouping
    correlates with the class label (0 = random grouping; larger values
    emulate informative constraints like geography or name statistics)."""

    tag: str
    coverage: float = 1.0
    bag_size: int = 64
    proportion_noise: float = 0.0
    correlation: float = 0.0


@dataclass
class ScenarioSpec:
    """A full single-view experiment: data, bagging, model, training."""

    data: SyntheticSpec
    train: TrainConfig
    hidden: tuple = (16,)
    dropout_rate: float = 0.0
    activation: str = "relu"
    temperature: float = 1.0
    bag_size: int = 64
    grouping_correlation: float = 0.0
    sources: tuple = None
    view: int = 0
    eval_instances: int = 1000
    seed: int = 0


@dataclass
class ScenarioResult:
    f1_weighted: float
    accuracy: float
    per_class: dict
    history: list
    curve: list
    model: Model


def build_scenario_model(spec: ScenarioSpec, rng: Rng) -> Model:
    layers = []
    for width in spec.hidden:
        layers.append(dense(width, spec.activation))
        if spec.dropout_rate > 0:
            layers.append(dropout(spec.dropout_rate))
    return init_model(layers, spec.data.view_dims[spec.view], spec.data.class_count,
                      spec.temperature, rng)


def scenario_bags(spec: ScenarioSpec, labels, rng: Rng) -> list:
    """Bags for every source in the scenario; sources may overlap in the
    instances they cover, mirroring independently collected constraints."""
    sources = spec.sources or (SourceSpec("uniform", 1.0, spec.bag_size,
                                          spec.data.proportion_noise,
                                          spec.grouping_correlation),)
    labels = np.asarray(labels)
    n = len(labels)
    all_bags = []
    for src in sources:
        srng = rng.substream(f"source-{src.tag}")
        if src.coverage >= 1.0:
            cover = np.arange(n)
        else:
            m = max(1, int(round(n * src.coverage)))
            cover = np.sort(srng.substream("cover").choice(n, size=m, replace=False))
        if src.correlation > 0:
            scores = (src.correlation * labels[cover]
                      + srng.substream("scores").normal(size=cover.size))
            all_bags.extend(bag_by_score(labels[cover], scores, src.bag_size,
                                         src.proportion_noise, srng.substream("bags"),
                                         class_count=spec.data.class_count,
                                         indices=cover, source=src.tag))
        else:
            all_bags.extend(bag_with_noise(labels[cover], src.bag_size,
                                           src.proportion_noise, srng.substream("bags"),
                                           class_count=spec.data.class_count,
                                           indices=cover, source=src.tag))
    return all_bags


def run_scenario(spec: ScenarioSpec, record_curve: bool = False) -> ScenarioResult:
    """Generate data, build bags, train, and score on a held-out set."""
    x1, x2, labels = generate_two_view(spec.data)
    eval_spec = replace(spec.data, instances=spec.eval_instances,
                        seed=spec.data.seed + 1_000_003)
    e1, e2, eval_labels = generate_two_view(eval_spec)
    x = (x1, x2)[spec.view]
    ex = (e1, e2)[spec.view]

    rng = Rng(spec.seed)
    bags = scenario_bags(spec, labels, rng.substream("bags"))
    model = build_scenario_model(spec, rng.substream("init"))

    curve = []

    def hook(epoch, mdl, state, history):
        scores = evaluate_predictions(predict(mdl, ex).argmax(axis=1), eval_labels)
        curve.append([epoch, history[-1], scores["f1_weighted"]])

    history = train_llp(model, x, bags, spec.train,
                        epoch_hook=hook if record_curve else None)
    scores = evaluate_predictions(predict(model, ex).argmax(axis=1), eval_labels)
    return ScenarioResult(f1_weighted=scores["f1_weighted"], accuracy=scores["accuracy"],
                          per_class=scores["per_class"], history=history, curve=curve,
                          model=model)


@dataclass
class SweepSpec:
    kind: str  # "batch_size" | "sources" | "proportion_noise"
    values: tuple


def run_sweep(sweep: SweepSpec, base: ScenarioSpec) -> list:
    """Run the base scenario at every grid point; one result row each."""
    values = list(sweep.values)
    if not values:
        raise UsageError("sweep grid is empty")
    rows = []
    for value in values:
        if sweep.kind == "batch_size":
            scen = replace(base, train=replace(base.train, max_batch_size=int(value)))
            setting = str(int(value))
        elif sweep.kind == "proportion_noise":
            scen = replace(base, data=replace(base.data, proportion_noise=float(value)))
            setting = str(float(value))
        elif sweep.kind == "sources":
            if base.sources is None:
                raise UsageError("source sweep needs a scenario with tagged sources")
            tags = tuple(value) if not isinstance(value, str) else (value,)
            subset = tuple(s for s in base.sources if s.tag in tags)
            if len(subset) != len(tags):
                known = tuple(s.tag for s in base.sources)
                raise ParameterError(f"unknown source tags {tags} (scenario has {known})")
            scen = replace(base, sources=subset)
            setting = "+".join(tags)
        else:
            raise ParameterError(f"unknown sweep kind {sweep.kind!r}")
        result = run_scenario(scen, record_curve=True)
        rows.append({"kind": sweep.kind, "setting": setting,
                     "f1_weighted": result.f1_weighted, "accuracy": result.accuracy,
                     "loss_curve": result.history, "curve": result.curve})
    return rows


def cotrain_benchmark(seed: int = 7, iterations: int = 4):
    """Tuned two-view scenario: view A has plentiful informative bags, view
    B few noisy ones, so pseudo-bags from A should lift B. Returns
    (view A state, view B state, co-training config, labeled eval set)."""
    data = SyntheticSpec(class_count=2, instances=2000, view_dims=(6, 6), separation=3.0,
                         view_noise=(1.0, 1.3), class_probs=(0.6, 0.4), seed=seed)
    x1, x2, labels = generate_two_view(data)
    eval_spec = replace(data, instances=1000, seed=seed + 1_000_003)
    e1, e2, eval_labels = generate_two_view(eval_spec)

    rng = Rng(seed)
    scores_a = 1.0 * labels + rng.substream("scores-a").normal(size=labels.size)
    bags_a = bag_by_score(labels, scores_a, 64, 0.02, rng.substream("bags-a"),
                          class_count=2, source="strong")
    cover = np.sort(rng.substream("cover-b").choice(data.instances, size=256, replace=False))
    scores_b = 0.6 * labels[cover] + rng.substream("scores-b").normal(size=cover.size)
    bags_b = bag_by_score(labels[cover], scores_b, 64, 0.35, rng.substream("bags-b"),
                          class_count=2, indices=cover, source="weak")

    train_a = TrainConfig(epochs=25, max_batch_size=32, learning_rate=0.01,
                          shuffle_seed=seed)
    train_b = TrainConfig(epochs=25, max_batch_size=32, learning_rate=0.01,
                          shuffle_seed=seed + 1)
    model_a = init_model([dense(16)], data.view_dims[0], 2, 1.0, rng.substream("init-a"))
    model_b = init_model([dense(16)], data.view_dims[1], 2, 1.0, rng.substream("init-b"))

    view_a = ViewState(name="view_a", features=x1, bags=bags_a, model=model_a, train=train_a)
    view_b = ViewState(name="view_b", features=x2, bags=bags_b, model=model_b, train=train_b)
    config = CoTrainConfig(iterations=iterations,
                           pseudo=BagBuildParams(threshold=0.85, max_size=64), seed=seed)
    eval_set = LabeledEvalSet(view_features=(e1, e2), labels=eval_labels)
    return view_a, view_b, config, eval_set
