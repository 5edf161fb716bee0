"""Small feed-forward classifier with hand-written reverse-mode gradients.

Layers are dense (relu/tanh/linear) and inverted dropout; the head is a
dense projection to the class count followed by a temperature-scaled
softmax. Gradients are exact analytic expressions, checked in the test
suite against central finite differences. Includes an Adam optimizer and
a versioned JSON checkpoint format that supports exact training resume.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError, UsageError
from .numcore import Rng, softmax_temp

CHECKPOINT_FORMAT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" | "dropout"
    width: int = 0
    dropout_rate: float = 0.0
    activation: str = "relu"


def dense(width: int, activation: str = "relu") -> LayerSpec:
    return LayerSpec(kind="dense", width=width, activation=activation)


def dropout(rate: float) -> LayerSpec:
    return LayerSpec(kind="dropout", dropout_rate=rate)


@dataclass
class Model:
    """Layer stack plus parameters; params alternate weight, bias per dense
    layer, output head last. `version` is bumped on every parameter update
    so stale forward caches can be detected."""

    specs: tuple
    input_dim: int
    class_count: int
    temperature: float
    params: list
    version: int = 0


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = None
    v: list = None


@dataclass
class ForwardCache:
    model: Model
    version: int
    training: bool
    records: list
    posterior: np.ndarray


def _validate_specs(specs):
    for spec in specs:
        if spec.kind == "dense":
            if spec.width < 1:
                raise ConfigError(f"dense width must be >= 1, got {spec.width}")
            if spec.activation not in _ACTIVATIONS:
                raise ConfigError(f"unknown activation {spec.activation!r}")
        elif spec.kind == "dropout":
            if not 0.0 <= spec.dropout_rate < 1.0:
                raise ConfigError(f"dropout rate must be in [0, 1), got {spec.dropout_rate}")
        else:
            raise ConfigError(f"unknown layer kind {spec.kind!r}")


def init_model(specs, input_dim: int, class_count: int, temperature: float = 1.0,
               rng: Rng = None) -> Model:
    """Build a model with uniform Glorot-style weights and zero biases.

    A dense head projecting to `class_count` is always appended after the
    configured stack; its output goes through the temperature softmax.
    """
    if class_count < 2:
        raise ConfigError(f"class_count must be >= 2, got {class_count}")
    if input_dim < 1:
        raise ConfigError(f"input_dim must be >= 1, got {input_dim}")
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    specs = tuple(specs)
    _validate_specs(specs)
    rng = rng if rng is not None else Rng(0)

    params = []
    fan_in = input_dim
    dims = [spec.width for spec in specs if spec.kind == "dense"] + [class_count]
    for fan_out in dims:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        params.append(np.zeros(fan_out))
        fan_in = fan_out
    return Model(specs=specs, input_dim=input_dim, class_count=class_count,
                 temperature=float(temperature), params=params)


def reinitialize(model: Model, rng: Rng) -> Model:
    """Fresh model with the same architecture and new random weights."""
    return init_model(model.specs, model.input_dim, model.class_count,
                      model.temperature, rng)


def parameter_count(model: Model) -> int:
    return sum(p.size for p in model.params)


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(name, z):
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def forward(model: Model, x, training: bool = False, rng: Rng = None):
    """Run the network; returns (posterior matrix, cache for backward).

    Dropout masks are sampled only when training and use inverted scaling
    1/(1-rate), so inference applies no rescale. Inference is a pure
    function of (model, x).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"expected input of shape (n, {model.input_dim}), got {x.shape}")

    records = []
    h = x
    p = 0
    for spec in model.specs:
        if spec.kind == "dense":
            w, b = model.params[p], model.params[p + 1]
            z = h @ w + b
            records.append(("dense", spec, h, z, p))
            h = _activate(spec.activation, z)
            p += 2
        else:
            if training and spec.dropout_rate > 0.0:
                if rng is None:
                    raise UsageError("training-mode forward through dropout requires an rng")
                keep = 1.0 - spec.dropout_rate
                scale = (rng.random(h.shape) >= spec.dropout_rate) / keep
                records.append(("dropout", spec, scale))
                h = h * scale
            else:
                records.append(("dropout", spec, None))
    w, b = model.params[p], model.params[p + 1]
    logits = h @ w + b
    posterior = softmax_temp(logits, model.temperature)
    records.append(("head", None, h, None, p))
    cache = ForwardCache(model=model, version=model.version, training=training,
                         records=records, posterior=posterior)
    return posterior, cache


def predict(model: Model, x) -> np.ndarray:
    """Deterministic inference posteriors (dropout inactive)."""
    post, _ = forward(model, x, training=False)
    return post


def backward(model: Model, cache: ForwardCache, dposterior) -> list:
    """Exact gradients of every parameter given d(loss)/d(posterior).

    The softmax-with-temperature Jacobian divides the logit gradient by
    the temperature; dense and dropout layers backpropagate in reverse
    cache order.
    """
    if cache.model is not model or cache.version != model.version:
        raise UsageError("stale cache: parameters changed since the matching forward call")
    dposterior = np.asarray(dposterior, dtype=float)
    if dposterior.shape != cache.posterior.shape:
        raise ShapeError(
            f"loss gradient shape {dposterior.shape} does not match posterior "
            f"shape {cache.posterior.shape}")

    grads = [None] * len(model.params)
    post = cache.posterior
    _, _, h_in, _, p = cache.records[-1]
    inner = np.sum(dposterior * post, axis=1, keepdims=True)
    dz = post * (dposterior - inner) / model.temperature
    grads[p] = h_in.T @ dz
    grads[p + 1] = dz.sum(axis=0)
    dh = dz @ model.params[p].T

    for rec in reversed(cache.records[:-1]):
        if rec[0] == "dense":
            _, spec, h_in, z, p = rec
            dz = dh * _activate_grad(spec.activation, z)
            grads[p] = h_in.T @ dz
            grads[p + 1] = dz.sum(axis=0)
            dh = dz @ model.params[p].T
        else:
            scale = rec[2]
            if scale is not None:
                dh = dh * scale
    return grads


def adam_step(state: AdamState, params, grads):
    """Standard Adam update with bias correction, in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=float)
        m[:] = state.beta1 * m + (1.0 - state.beta1) * g
        v[:] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def apply_gradients(model: Model, state: AdamState, grads):
    """Adam update on the model's parameters; invalidates existing caches."""
    adam_step(state, model.params, grads)
    model.version += 1


def _spec_to_dict(spec: LayerSpec) -> dict:
    if spec.kind == "dense":
        return {"kind": "dense", "width": spec.width, "activation": spec.activation}
    return {"kind": "dropout", "rate": spec.dropout_rate}


def _spec_from_dict(d: dict) -> LayerSpec:
    if d.get("kind") == "dense":
        return dense(int(d["width"]), d.get("activation", "relu"))
    if d.get("kind") == "dropout":
        return dropout(float(d["rate"]))
    raise DataError(f"unknown layer kind in checkpoint: {d.get('kind')!r}")


def _arrays_to_json(arrays):
    return [{"shape": list(a.shape), "data": a.ravel().tolist()} for a in arrays]


def _arrays_from_json(items):
    out = []
    for item in items:
        arr = np.asarray(item["data"], dtype=float).reshape(item["shape"])
        out.append(arr)
    return out


@dataclass
class Checkpoint:
    model: Model
    adam_state: AdamState
    rng_seed: int
    epoch: int
    history: list = field(default_factory=list)


def checkpoint_dict(model: Model, adam_state: AdamState = None, rng_seed: int = 0,
                    epoch: int = 0, history=None) -> dict:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layers": [_spec_to_dict(s) for s in model.specs],
        "input_dim": model.input_dim,
        "class_count": model.class_count,
        "temperature": model.temperature,
        "parameters": _arrays_to_json(model.params),
        "rng_seed": int(rng_seed),
        "epoch": int(epoch),
        "history": list(history) if history is not None else [],
        "optimizer": None,
    }
    if adam_state is not None:
        doc["optimizer"] = {
            "kind": "adam",
            "step": adam_state.step,
            "learning_rate": adam_state.learning_rate,
            "beta1": adam_state.beta1,
            "beta2": adam_state.beta2,
            "epsilon": adam_state.epsilon,
            "m": _arrays_to_json(adam_state.m) if adam_state.m is not None else None,
            "v": _arrays_to_json(adam_state.v) if adam_state.v is not None else None,
        }
    return doc


def save_checkpoint(path, model: Model, adam_state: AdamState = None, rng_seed: int = 0,
                    epoch: int = 0, history=None):
    doc = checkpoint_dict(model, adam_state, rng_seed, epoch, history)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"checkpoint {path}: invalid JSON ({exc})") from exc
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"checkpoint {path}: unsupported format_version {doc.get('format_version')!r}")
    specs = tuple(_spec_from_dict(d) for d in doc["layers"])
    model = Model(specs=specs, input_dim=int(doc["input_dim"]),
                  class_count=int(doc["class_count"]),
                  temperature=float(doc["temperature"]),
                  params=_arrays_from_json(doc["parameters"]))
    opt = doc.get("optimizer")
    adam = None
    if opt is not None:
        adam = AdamState(learning_rate=opt["learning_rate"], beta1=opt["beta1"],
                         beta2=opt["beta2"], epsilon=opt["epsilon"], step=int(opt["step"]),
                         m=_arrays_from_json(opt["m"]) if opt["m"] is not None else None,
                         v=_arrays_from_json(opt["v"]) if opt["v"] is not None else None)
    return Checkpoint(model=model, adam_state=adam, rng_seed=int(doc.get("rng_seed", 0)),
                      epoch=int(doc.get("epoch", 0)), history=list(doc.get("history", [])))
