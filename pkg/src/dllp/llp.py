"""Training from label proportions.

A bag is a set of instances sharing one class-proportion vector. The
training reduction averages per-instance posteriors over the bag and
drives that average toward the bag's proportions with a KL objective;
the 1/bag-size factor in the gradient plays the role of per-instance
sample weights that sum to one per bag. Oversized bags are re-split
randomly every epoch so a bag never exceeds the configured batch size.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import (DataError, NumericError, ParameterError, ShapeError,
                     UsageError)
from .network import AdamState, apply_gradients, backward, forward
from .numcore import EPSILON, Rng


@dataclass(frozen=True)
class Bag:
    """Instance indices into a dataset plus their shared label proportions."""

    instance_indices: tuple
    proportions: tuple
    source: str = "direct"

    @property
    def size(self) -> int:
        return len(self.instance_indices)


def validate_bag(bag: Bag, class_count: int = None, dataset_size: int = None):
    if bag.size < 1:
        raise ShapeError("bag must contain at least one instance")
    if len(set(bag.instance_indices)) != bag.size:
        raise ShapeError(f"bag (source={bag.source!r}) has duplicate instance indices")
    props = np.asarray(bag.proportions, dtype=float)
    if class_count is not None and props.shape != (class_count,):
        raise ShapeError(
            f"bag (source={bag.source!r}) has {props.size} proportions, expected {class_count}")
    if np.any(props < 0) or np.any(props > 1) or abs(props.sum() - 1.0) > 1e-9:
        raise ShapeError(f"bag (source={bag.source!r}) proportions are not a simplex: {props}")
    if dataset_size is not None:
        idx = np.asarray(bag.instance_indices)
        if idx.size and (idx.min() < 0 or idx.max() >= dataset_size):
            raise ShapeError(
                f"bag (source={bag.source!r}) references instances outside the dataset")


@dataclass
class TrainConfig:
    epochs: int = 20
    max_batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    temperature: float = 1.0
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.max_batch_size < 1:
            raise ParameterError(f"max_batch_size must be >= 1, got {self.max_batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")


def batch_average(posteriors) -> np.ndarray:
    """Column-wise mean of per-instance posterior rows; a simplex itself."""
    post = np.asarray(posteriors, dtype=float)
    if post.ndim != 2 or post.shape[0] < 1:
        raise UsageError("batch_average requires at least one posterior row")
    return post.mean(axis=0)


def kl_bag_loss(prior, posterior, eps: float = EPSILON) -> float:
    """KL divergence of the bag posterior from the bag prior.

    sum_k prior_k * ln(prior_k / max(posterior_k, eps)) with the usual
    0 * ln 0 = 0 convention. The clamp can push the value a few 1e-8
    below zero when prior and posterior already agree to within eps, so
    the result is floored at exactly 0.
    """
    p = np.asarray(prior, dtype=float)
    q = np.asarray(posterior, dtype=float)
    if p.ndim != 1 or q.ndim != 1 or p.shape != q.shape:
        raise ShapeError(f"prior shape {p.shape} does not match posterior shape {q.shape}")
    mask = p > 0
    terms = p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], eps)))
    return max(float(terms.sum()), 0.0)


def kl_bag_grad(prior, posteriors, eps: float = EPSILON) -> np.ndarray:
    """Gradient of kl_bag_loss(batch_average(.)) at each posterior entry.

    Every instance in a bag of size T receives (-prior_k / mean_k) / T in
    class column k; the 1/T factor is the per-instance sample weight.
    """
    p = np.asarray(prior, dtype=float)
    post = np.asarray(posteriors, dtype=float)
    if post.ndim != 2:
        raise ShapeError(f"posteriors must be 2-d, got shape {post.shape}")
    if p.ndim != 1 or p.shape[0] != post.shape[1]:
        raise ShapeError(
            f"prior length {p.shape} does not match posterior columns {post.shape[1]}")
    t = post.shape[0]
    mean = post.mean(axis=0)
    row = np.where(p > 0, -p / np.maximum(mean, eps), 0.0) / t
    return np.broadcast_to(row, post.shape).copy()


def make_batches(bags, config: TrainConfig, rng: Rng) -> list:
    """One epoch of gradient batches: each bag is one batch, oversized bags
    are shuffled and chunked to at most max_batch_size (remainder kept),
    sub-bags inherit the parent proportions, and batch order is shuffled.
    Call again with a fresh stream to re-randomize the split."""
    out = []
    for bag in bags:
        if bag.size <= config.max_batch_size:
            out.append(bag)
            continue
        order = rng.permutation(bag.size)
        idx = tuple(bag.instance_indices[i] for i in order)
        for start in range(0, bag.size, config.max_batch_size):
            chunk = idx[start:start + config.max_batch_size]
            out.append(Bag(instance_indices=chunk, proportions=bag.proportions,
                           source=bag.source))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def train_llp(model, features, bags, config: TrainConfig, adam_state: AdamState = None,
              start_epoch: int = 0, epoch_hook=None) -> list:
    """Fit the model to bag proportions; returns per-epoch mean bag KL.

    The model and optimizer state are updated in place. Epoch randomness
    (bag order, re-splitting, dropout) is derived from named sub-streams
    of config.shuffle_seed keyed by epoch index, so training from epoch k
    with restored parameters reproduces an uninterrupted run exactly.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"features shape {x.shape} does not match input_dim {model.input_dim}")
    bags = list(bags)
    for bag in bags:
        validate_bag(bag, class_count=model.class_count, dataset_size=x.shape[0])
    if config.epochs > start_epoch and not bags:
        raise UsageError("cannot train on an empty bag list")
    if adam_state is None:
        adam_state = AdamState(learning_rate=config.learning_rate, beta1=config.beta1,
                               beta2=config.beta2, epsilon=config.epsilon)

    base = Rng(config.shuffle_seed)
    history = []
    for epoch in range(start_epoch, config.epochs):
        erng = base.substream(f"epoch-{epoch}")
        batches = make_batches(bags, config, erng.substream("batching"))
        drop_rng = erng.substream("dropout")
        losses = []
        for pos, sub in enumerate(batches):
            xb = x[list(sub.instance_indices)]
            prior = np.asarray(sub.proportions, dtype=float)
            try:
                post, cache = forward(model, xb, training=True, rng=drop_rng)
                loss = kl_bag_loss(prior, batch_average(post))
                if not np.isfinite(loss):
                    raise NumericError("loss is not finite")
            except NumericError as exc:
                raise NumericError(
                    f"non-finite values at epoch {epoch}, batch {pos} "
                    f"(bag source={sub.source!r}, size={sub.size}): {exc}") from exc
            grads = backward(model, cache, kl_bag_grad(prior, post))
            apply_gradients(model, adam_state, grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if epoch_hook is not None:
            epoch_hook(epoch, model, adam_state, history)
    return history


def save_bags(path, bags):
    """JSON lines, one bag per line: {source, proportions, instances}."""
    with open(path, "w", encoding="utf-8") as fh:
        for bag in bags:
            fh.write(json.dumps({"source": bag.source,
                                 "proportions": [float(p) for p in bag.proportions],
                                 "instances": [int(i) for i in bag.instance_indices]},
                                sort_keys=True))
            fh.write("\n")


def load_bags(path) -> list:
    bags = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                bag = Bag(instance_indices=tuple(int(i) for i in doc["instances"]),
                          proportions=tuple(float(p) for p in doc["proportions"]),
                          source=str(doc.get("source", "direct")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: malformed bag record ({exc})") from exc
            validate_bag(bag)
            bags.append(bag)
    return bags


def save_history(path, history):
    """Loss history as a JSON array for plotting."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(history), fh, sort_keys=True)
        fh.write("\n")
