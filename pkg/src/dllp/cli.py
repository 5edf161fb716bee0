"""Command-line entry point for reproducible proportion-learning runs.

Subcommands: synth, bags, train, cotrain, eval, sweep. Each run is a
pure function of (TOML config, input files, seed); metrics outputs are
byte-identical across reruns. Every command writes its artifacts under
--out together with a manifest listing their SHA-256 hashes.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 5 completed with warnings (for example an empty bag file).
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import struct
import sys

import numpy as np
import toml

from . import evalbench
from .bags import BagBuildParams, attach_priors, create_bags, load_prior_table
from .cotrain import CoTrainConfig, ViewState
from .cotrain import cotrain as run_cotrain
from .cotrain import soft_vote
from .errors import (ConfigError, DataError, DllpError, DomainError,
                     NumericError, ParameterError, ShapeError, UsageError)
from .llp import TrainConfig, load_bags, save_bags, save_history, train_llp
from .network import (AdamState, dense, dropout, init_model, load_checkpoint,
                      predict, save_checkpoint)
from .numcore import Rng

log = logging.getLogger("dllp")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_WARNINGS = 5

_MAGIC = b"LLPF1"


# ---------------------------------------------------------------------------
# file formats

def write_features(path, matrix):
    """Feature matrix to CSV (header = feature names) or, for .llpf paths,
    the compact binary format: magic LLPF1, u32 rows, u32 cols, f64 data."""
    m = np.asarray(matrix, dtype=float)
    path = str(path)
    if path.endswith(".llpf"):
        with open(path, "wb") as fh:
            fh.write(struct.pack("<5sII", _MAGIC, m.shape[0], m.shape[1]))
            fh.write(m.astype("<f8").tobytes())
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"f{j}" for j in range(m.shape[1])])
            for row in m:
                writer.writerow([repr(float(v)) for v in row])


def read_features(path) -> np.ndarray:
    """Read a feature matrix; the format is detected from the magic bytes."""
    if not os.path.exists(path):
        raise DataError(f"feature file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(len(_MAGIC))
    if head == _MAGIC:
        with open(path, "rb") as fh:
            magic, rows, cols = struct.unpack("<5sII", fh.read(13))
            data = np.frombuffer(fh.read(), dtype="<f8")
        if data.size != rows * cols:
            raise DataError(f"{path}: expected {rows * cols} values, found {data.size}")
        return data.reshape(rows, cols).copy()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if len(rows) < 2:
        raise DataError(f"{path}: feature CSV needs a header row and at least one data row")
    width = len(rows[0])
    out = np.empty((len(rows) - 1, width))
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
        try:
            out[lineno - 2] = [float(cell) for cell in row]
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: non-numeric value ({exc})") from exc
    return out


def write_labels(path, labels):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for v in labels:
            writer.writerow([int(v)])


def read_labels(path) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"label file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty label file")
    try:
        return np.asarray([int(row[0]) for row in rows[1:]], dtype=int)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed label file ({exc})") from exc


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_manifest(out_dir, command):
    """Hash every artifact in the output directory (manifest excluded)."""
    artifacts = []
    for root, _, names in os.walk(out_dir):
        for name in sorted(names):
            if name == "manifest.json":
                continue
            full = os.path.join(root, name)
            rel = os.path.relpath(full, out_dir)
            digest = hashlib.sha256()
            with open(full, "rb") as fh:
                digest.update(fh.read())
            artifacts.append({"name": rel.replace(os.sep, "/"),
                              "sha256": digest.hexdigest(),
                              "bytes": os.path.getsize(full)})
    artifacts.sort(key=lambda a: a["name"])
    write_json(os.path.join(out_dir, "manifest.json"), {"command": command,
                                                        "artifacts": artifacts})


# ---------------------------------------------------------------------------
# config handling

def _parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = toml.loads(f"v = {raw}")["v"]
    except toml.TomlDecodeError:
        value = raw  # bare strings allowed
    return key.strip(), value


def load_run_config(args) -> dict:
    cfg = {}
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        try:
            cfg = toml.load(args.config)
        except toml.TomlDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid TOML ({exc})") from exc
        cfg["_dir"] = os.path.dirname(os.path.abspath(args.config))
    else:
        cfg["_dir"] = os.getcwd()
    for item in args.set or []:
        key, value = _parse_override(item)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} conflicts with a non-table entry")
        node[parts[-1]] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if "seed" not in cfg:
        raise ConfigError("a seed is required (config key `seed` or --seed); "
                          "wall-clock seeding is not supported")
    if "out" not in cfg:
        raise ConfigError("an output directory is required (config key `out` or --out)")
    return cfg


def _resolve(cfg, path):
    """Paths in the config file are relative to the config's directory."""
    if path is None:
        return None
    path = str(path)
    if os.path.isabs(path):
        return path
    return os.path.join(cfg["_dir"], path)


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"[{where}] is missing required key {key!r}")
    return section[key]


def _train_config(cfg, seed) -> TrainConfig:
    t = cfg.get("train", {})
    try:
        return TrainConfig(epochs=int(t.get("epochs", 20)),
                           max_batch_size=int(t.get("max_batch_size", 32)),
                           learning_rate=float(t.get("learning_rate", 1e-3)),
                           beta1=float(t.get("beta1", 0.9)),
                           beta2=float(t.get("beta2", 0.999)),
                           epsilon=float(t.get("epsilon", 1e-8)),
                           temperature=float(t.get("temperature",
                                                   cfg.get("model", {}).get("temperature", 1.0))),
                           shuffle_seed=int(t.get("shuffle_seed", seed)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[train] invalid value: {exc}") from exc


def _model_layers(cfg):
    m = cfg.get("model", {})
    layers = []
    for width in m.get("hidden", [16]):
        layers.append(dense(int(width), m.get("activation", "relu")))
        rate = float(m.get("dropout", 0.0))
        if rate > 0:
            layers.append(dropout(rate))
    return layers, float(m.get("temperature", 1.0))


def _build_model(cfg, input_dim, class_count, rng):
    layers, temperature = _model_layers(cfg)
    return init_model(layers, input_dim, class_count, temperature, rng)


def _synth_spec(cfg, seed) -> evalbench.SyntheticSpec:
    s = cfg.get("synth", {})
    return evalbench.SyntheticSpec(
        class_count=int(s.get("class_count", 2)),
        instances=int(s.get("instances", 1000)),
        view_dims=tuple(int(d) for d in s.get("view_dims", [6, 6])),
        separation=float(s.get("separation", 3.0)),
        view_noise=tuple(float(v) for v in s.get("view_noise", [1.0, 1.0])),
        class_probs=tuple(float(p) for p in s["class_probs"]) if "class_probs" in s else None,
        proportion_noise=float(s.get("proportion_noise", 0.0)),
        seed=int(s.get("data_seed", seed)))


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    seed = int(cfg["seed"])
    spec = _synth_spec(cfg, seed)
    s = cfg.get("synth", {})
    fmt = s.get("format", "csv")
    if fmt not in ("csv", "llpf"):
        raise ConfigError(f"[synth] format must be 'csv' or 'llpf', got {fmt!r}")
    ext = "csv" if fmt == "csv" else "llpf"

    x1, x2, labels = evalbench.generate_two_view(spec)
    write_features(os.path.join(out, f"view1.{ext}"), x1)
    write_features(os.path.join(out, f"view2.{ext}"), x2)
    write_labels(os.path.join(out, "labels.csv"), labels)
    if s.get("emit_bags", True):
        rng = Rng(seed)
        bag_size = int(s.get("bag_size", 64))
        for name in ("view1", "view2"):
            bag_list = evalbench.bag_with_noise(labels, bag_size, spec.proportion_noise,
                                                rng.substream(f"bags-{name}"),
                                                class_count=spec.class_count, source=name)
            save_bags(os.path.join(out, f"bags_{name}.jsonl"), bag_list)
    write_json(os.path.join(out, "dataset.json"), {
        "class_count": spec.class_count, "instances": spec.instances,
        "view_dims": list(spec.view_dims), "separation": spec.separation,
        "view_noise": list(spec.view_noise), "proportion_noise": spec.proportion_noise,
        "seed": spec.seed})
    write_manifest(out, "synth")
    return EXIT_OK


def cmd_bags(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    section = cfg.get("bags", {})
    table = load_prior_table(_resolve(cfg, _require(section, "priors", "bags")))
    attr_path = _resolve(cfg, _require(section, "attributes", "bags"))
    if not os.path.exists(attr_path):
        raise DataError(f"attribute file not found: {attr_path}")
    with open(attr_path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    values = [row[0] if row else None for row in rows[1:]]

    target = section.get("target_class", 0)
    attachment = attach_priors(values, table, target)
    class_count = int(section.get("class_count",
                                  len(table.classes) if len(table.classes) >= 2 else 2))
    target_index = (table.classes.index(target) if isinstance(target, str)
                    else int(target))
    params = BagBuildParams(threshold=float(section.get("threshold", 0.8)),
                                   max_size=int(section.get("max_size", 64)),
                                   target_class=target_index)
    built, _ = create_bags(attachment.priors, params, class_count=class_count,
                                  indices=attachment.indices,
                                  source=str(section.get("source", table.attribute or "prior")))
    save_bags(os.path.join(out, "bags.jsonl"), built)
    report = dict(attachment.report)
    report["bags"] = len(built)
    report["bagged_instances"] = int(sum(b.size for b in built))
    write_json(os.path.join(out, "report.json"), report)
    write_manifest(out, "bags")
    print(f"bags: {len(built)} bags over {report['bagged_instances']} instances "
          f"(covered {report['covered']}, skipped {report['skipped']})")
    if not built:
        log.warning("no instances cleared the threshold; bag file is empty")
        return EXIT_WARNINGS
    return EXIT_OK


def cmd_train(cfg, resume: bool = False) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    seed = int(cfg["seed"])
    section = cfg.get("train", {})
    features = read_features(_resolve(cfg, _require(section, "features", "train")))
    bag_path = _resolve(cfg, _require(section, "bags", "train"))
    if not os.path.exists(bag_path):
        raise DataError(f"bag file not found: {bag_path}")
    bag_list = load_bags(bag_path)
    if not bag_list:
        raise DataError(f"bag file is empty: {bag_path}")
    class_count = len(bag_list[0].proportions)
    config = _train_config(cfg, seed)

    checkpoint_path = os.path.join(out, "checkpoint.json")
    start_epoch = 0
    prior_history = []
    adam_state = None
    if resume:
        if not os.path.exists(checkpoint_path):
            raise DataError(f"cannot resume: {checkpoint_path} does not exist")
        ck = load_checkpoint(checkpoint_path)
        model, adam_state = ck.model, ck.adam_state
        start_epoch, prior_history = ck.epoch, ck.history
    else:
        model = _build_model(cfg, features.shape[1], class_count, Rng(seed).substream("init"))
    if adam_state is None:
        adam_state = AdamState(learning_rate=config.learning_rate, beta1=config.beta1,
                               beta2=config.beta2, epsilon=config.epsilon)

    history = train_llp(model, features, bag_list, config, adam_state=adam_state,
                        start_epoch=start_epoch)
    full_history = list(prior_history) + history
    save_checkpoint(checkpoint_path, model, adam_state, rng_seed=config.shuffle_seed,
                    epoch=config.epochs, history=full_history)
    save_history(os.path.join(out, "history.json"), full_history)

    if "eval_features" in section and "eval_labels" in section:
        ex = read_features(_resolve(cfg, section["eval_features"]))
        ey = read_labels(_resolve(cfg, section["eval_labels"]))
        scores = evalbench.evaluate_predictions(predict(model, ex).argmax(axis=1), ey)
        write_json(os.path.join(out, "metrics.json"), scores)
        print(f"train: f1_weighted={scores['f1_weighted']:.4f} "
              f"accuracy={scores['accuracy']:.4f}")
    write_manifest(out, "train")
    return EXIT_OK


def _view_from_config(cfg, key, seed, defaults):
    section = cfg.get("cotrain", {})
    view_cfg = _require(section, key, "cotrain")
    name = str(view_cfg.get("name", key))
    features = read_features(_resolve(cfg, _require(view_cfg, "features", f"cotrain.{key}")))
    bag_path = _resolve(cfg, _require(view_cfg, "bags", f"cotrain.{key}"))
    if not os.path.exists(bag_path):
        raise DataError(f"bag file not found: {bag_path}")
    bag_list = load_bags(bag_path)
    class_count = defaults.get("class_count")
    if bag_list:
        class_count = len(bag_list[0].proportions)
    if class_count is None:
        raise ConfigError(f"cotrain.{key}: cannot infer class count from an empty bag "
                          "file; set cotrain.class_count")
    config = _train_config(cfg, seed)
    model = _build_model(cfg, features.shape[1], class_count,
                         Rng(seed).substream(f"init-{name}"))
    return ViewState(name=name, features=features, bags=bag_list,
                                model=model, train=config), class_count


def cmd_cotrain(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    seed = int(cfg["seed"])
    section = cfg.get("cotrain", {})
    defaults = {"class_count": section.get("class_count")}
    view1, k1 = _view_from_config(cfg, "view1", seed, defaults)
    view2, k2 = _view_from_config(cfg, "view2", seed, defaults)
    if k1 != k2:
        raise DataError(f"views disagree on class count: {k1} vs {k2}")

    eval_set = None
    if "eval_features1" in section and "eval_features2" in section \
            and "eval_labels" in section:
        eval_set = evalbench.LabeledEvalSet(
            view_features=(read_features(_resolve(cfg, section["eval_features1"])),
                           read_features(_resolve(cfg, section["eval_features2"]))),
            labels=read_labels(_resolve(cfg, section["eval_labels"])))

    config = CoTrainConfig(
        iterations=int(section.get("iterations", 6)),
        pseudo=BagBuildParams(threshold=float(section.get("pseudo_threshold", 0.9)),
                                     max_size=int(section.get("pseudo_bag_size", 64))),
        warm_start=bool(section.get("warm_start", False)),
        seed=seed)
    result = run_cotrain(view1, view2, config, eval_set=eval_set)

    for view in (view1, view2):
        save_checkpoint(os.path.join(out, f"checkpoint_{view.name}.json"), view.model,
                        rng_seed=seed, epoch=view.train.epochs)
    write_json(os.path.join(out, "metrics.json"), result.metrics)
    save_bags(os.path.join(out, "pseudo_bags.jsonl"), result.pseudo_bags)
    write_manifest(out, "cotrain")
    for record in result.metrics:
        print(f"cotrain: iteration={record['iteration']} view={record['view']} "
              f"f1_weighted={record['f1_weighted']:.4f}")
    return EXIT_OK


def cmd_eval(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    section = cfg.get("eval", {})
    ck_paths = _require(section, "checkpoints", "eval")
    feat_paths = _require(section, "features", "eval")
    if isinstance(ck_paths, str):
        ck_paths = [ck_paths]
    if isinstance(feat_paths, str):
        feat_paths = [feat_paths]
    if len(ck_paths) not in (1, 2) or len(feat_paths) != len(ck_paths):
        raise ConfigError("[eval] needs one or two checkpoints with matching feature files")
    labels = read_labels(_resolve(cfg, _require(section, "labels", "eval")))

    posteriors = []
    for ck_path, feat_path in zip(ck_paths, feat_paths):
        resolved = _resolve(cfg, ck_path)
        if not os.path.exists(resolved):
            raise DataError(f"checkpoint not found: {resolved}")
        ck = load_checkpoint(resolved)
        features = read_features(_resolve(cfg, feat_path))
        posteriors.append(predict(ck.model, features))
    if len(posteriors) == 2 and posteriors[0].shape[1] != posteriors[1].shape[1]:
        raise DataError(f"checkpoints disagree on class count: "
                        f"{posteriors[0].shape[1]} vs {posteriors[1].shape[1]}")

    if len(posteriors) == 1:
        metrics = evalbench.evaluate_predictions(posteriors[0].argmax(axis=1), labels)
    else:
        _, voted = soft_vote(posteriors[0], posteriors[1])
        metrics = {"views": [evalbench.evaluate_predictions(p.argmax(axis=1), labels)
                             for p in posteriors],
                   "ensemble": evalbench.evaluate_predictions(voted, labels)}
    write_json(os.path.join(out, "metrics.json"), metrics)
    write_manifest(out, "eval")
    flat = metrics if len(posteriors) == 1 else metrics["ensemble"]
    print(f"eval: f1_weighted={flat['f1_weighted']:.4f} accuracy={flat['accuracy']:.4f}")
    return EXIT_OK


def cmd_sweep(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    seed = int(cfg["seed"])
    section = cfg.get("sweep", {})
    kind = _require(section, "kind", "sweep")
    values = section.get("values", [])

    data = _synth_spec(cfg, seed)
    train = _train_config(cfg, seed)
    m = cfg.get("model", {})
    sources = None
    if "sources" in section:
        sources = tuple(evalbench.SourceSpec(
            tag=str(s["tag"]), coverage=float(s.get("coverage", 1.0)),
            bag_size=int(s.get("bag_size", 64)),
            proportion_noise=float(s.get("proportion_noise", 0.0)))
            for s in section["sources"])
    base = evalbench.ScenarioSpec(
        data=data, train=train,
        hidden=tuple(int(w) for w in m.get("hidden", [16])),
        dropout_rate=float(m.get("dropout", 0.0)),
        activation=m.get("activation", "relu"),
        temperature=float(m.get("temperature", 1.0)),
        bag_size=int(section.get("bag_size", 64)),
        sources=sources,
        view=int(section.get("view", 0)),
        eval_instances=int(section.get("eval_instances", 1000)),
        seed=seed)
    rows = evalbench.run_sweep(evalbench.SweepSpec(kind=kind, values=tuple(values)), base)

    curves_dir = os.path.join(out, "curves")
    os.makedirs(curves_dir, exist_ok=True)
    csv_rows = []
    for row in rows:
        # learning-curve series: [epoch, train KL, validation weighted F1]
        ref = f"curves/{row['setting'].replace('+', '_')}.json"
        write_json(os.path.join(out, ref), row["curve"])
        csv_rows.append({"kind": row["kind"], "setting": row["setting"],
                         "f1_weighted": row["f1_weighted"], "accuracy": row["accuracy"],
                         "loss_curve_ref": ref})
    write_json(os.path.join(out, "results.json"), rows)
    with open(os.path.join(out, "results.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["kind", "setting", "f1_weighted",
                                                "accuracy", "loss_curve_ref"])
        writer.writeheader()
        writer.writerows(csv_rows)
    write_manifest(out, "sweep")
    for row in rows:
        print(f"sweep: {row['kind']}={row['setting']} f1_weighted={row['f1_weighted']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dllp",
        description="Train classifiers from bag-level label proportions.")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "synth": "generate a synthetic two-view dataset (features, labels, bags)",
        "bags": "build bags from a prior table and instance attributes",
        "train": "train a proportion model from a bag file",
        "cotrain": "two-view co-training with pseudo-bags",
        "eval": "score checkpoints on a labeled set, with soft-vote ensembling",
        "sweep": "run a batch-size / source / noise sweep on a synthetic scenario",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.epochs=5")
        if name == "train":
            p.add_argument("--resume", action="store_true",
                           help="continue from the checkpoint in the output directory")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LLP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "bags":
            return cmd_bags(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "cotrain":
            return cmd_cotrain(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ParameterError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DllpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
