"""Bag construction from per-instance class priors.

Instances whose prior for the target class clears a threshold are sorted
by descending prior and chunked into bags of at most N; each bag's
proportion for the target class is the mean of its members' priors.
Also provides the decaying proportion schedule used for relevance-ranked
sources and CSV ingestion of attribute-value prior tables.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DomainError, ParameterError
from .llp import Bag

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BagBuildParams:
    threshold: float
    max_size: int = 64
    target_class: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ParameterError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.max_size < 1:
            raise ParameterError(f"max_size must be >= 1, got {self.max_size}")
        if self.target_class < 0:
            raise ParameterError(f"target_class must be >= 0, got {self.target_class}")


def _bag_proportions(mean_prior, target, class_count, member_posteriors):
    """Simplex with the target class at mean_prior. The remaining mass goes
    uniformly to the other classes, or proportionally to their mean member
    posterior when full posteriors are available."""
    props = np.zeros(class_count)
    props[target] = mean_prior
    rest = 1.0 - mean_prior
    others = [k for k in range(class_count) if k != target]
    if member_posteriors is not None:
        weights = np.asarray(member_posteriors, dtype=float).mean(axis=0)[others]
        total = weights.sum()
        if total > 0:
            props[others] = rest * weights / total
            return tuple(float(p) for p in props)
    props[others] = rest / len(others)
    return tuple(float(p) for p in props)


def create_bags(priors, params: BagBuildParams, class_count: int = 2, indices=None,
                source: str = "prior", member_posteriors=None):
    """Filter, sort descending, chunk, average: returns (bags, proportions).

    `proportions` are the per-bag target-class means; each Bag also
    carries the full class simplex. `indices` maps positions in `priors`
    to dataset indices (default: positions themselves). Ties in the sort
    keep input order, so bag membership is deterministic.
    """
    pr = np.asarray(priors, dtype=float)
    if pr.ndim != 1:
        raise DomainError(f"priors must be a flat list, got shape {pr.shape}")
    if pr.size and (pr.min() < 0 or pr.max() > 1):
        raise DomainError("priors must lie in [0, 1]")
    if params.target_class >= class_count:
        raise ParameterError(
            f"target_class {params.target_class} out of range for {class_count} classes")
    if indices is None:
        indices = np.arange(pr.size)
    else:
        indices = np.asarray(indices)
        if indices.shape != pr.shape:
            raise DomainError("indices must align with priors")
    if member_posteriors is not None:
        member_posteriors = np.asarray(member_posteriors, dtype=float)
        if member_posteriors.shape != (pr.size, class_count):
            raise DomainError("member_posteriors must be (len(priors), class_count)")

    survivors = [i for i in range(pr.size) if pr[i] > params.threshold]
    order = sorted(survivors, key=lambda i: pr[i], reverse=True)

    bags, proportions = [], []
    for start in range(0, len(order), params.max_size):
        chunk = order[start:start + params.max_size]
        mean_prior = float(pr[chunk].mean())
        rows = member_posteriors[chunk] if member_posteriors is not None else None
        bags.append(Bag(
            instance_indices=tuple(int(indices[i]) for i in chunk),
            proportions=_bag_proportions(mean_prior, params.target_class, class_count, rows),
            source=source))
        proportions.append(mean_prior)
    return bags, proportions


def schedule_proportions(bag_index: int, start: float = 0.95, step: float = 0.05,
                         floor: float = 0.55) -> float:
    """Proportion for the bag at a given rank: start minus step per bag,
    never below floor. Models sources ordered by decreasing relevance."""
    if not 0.0 < floor <= start <= 1.0:
        raise ParameterError(f"need 0 < floor <= start <= 1, got floor={floor} start={start}")
    if step < 0:
        raise ParameterError(f"step must be >= 0, got {step}")
    if bag_index < 0:
        raise ParameterError(f"bag_index must be >= 0, got {bag_index}")
    return max(start - step * bag_index, floor)


@dataclass
class PriorTable:
    """Attribute value -> per-class prior probabilities."""

    attribute: str
    classes: tuple
    entries: dict


def load_prior_table(path) -> PriorTable:
    """Read a prior table CSV: header row `attribute,class1,...`, then one
    row per attribute value. Rows with malformed or out-of-range
    probabilities are rejected with their line number."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        log.warning("prior table %s is empty", path)
        return PriorTable(attribute="", classes=(), entries={})
    header = rows[0]
    if len(header) < 2:
        raise DataError(f"{path}: line 1: header needs an attribute column and "
                        "at least one class column")
    attribute = header[0].strip()
    classes = tuple(c.strip() for c in header[1:])

    entries = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} columns, "
                            f"got {len(row)}")
        value = row[0].strip()
        if value in entries:
            raise DataError(f"{path}: line {lineno}: duplicate value {value!r}")
        try:
            probs = tuple(float(cell) for cell in row[1:])
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: non-numeric probability ({exc})") from exc
        if any(p < 0 or p > 1 for p in probs):
            raise DataError(f"{path}: line {lineno}: probability out of [0, 1]: {probs}")
        if sum(probs) > 1.0 + 1e-9:
            raise DataError(f"{path}: line {lineno}: class probabilities sum to "
                            f"{sum(probs)} > 1")
        entries[value] = probs
    if not entries:
        log.warning("prior table %s has a header but no rows", path)
    return PriorTable(attribute=attribute, classes=classes, entries=entries)


@dataclass
class PriorAttachment:
    """Priors for the covered instances plus a coverage report."""

    indices: list
    priors: list
    report: dict


def attach_priors(values, table: PriorTable, target_class) -> PriorAttachment:
    """Look up each instance's attribute value in the table and return the
    target-class prior for every covered instance. Instances with missing
    or unknown values are skipped and counted in the report."""
    if isinstance(target_class, str):
        if target_class not in table.classes:
            raise ConfigError(f"class {target_class!r} not in table classes {table.classes}")
        ci = table.classes.index(target_class)
    else:
        ci = int(target_class)
        if not 0 <= ci < len(table.classes):
            raise ConfigError(f"class index {ci} out of range for {len(table.classes)} classes")

    indices, priors = [], []
    skipped = 0
    examples = []
    for i, value in enumerate(values):
        key = None if value is None else str(value).strip()
        if key and key in table.entries:
            indices.append(i)
            priors.append(table.entries[key][ci])
        else:
            skipped += 1
            if key not in examples and len(examples) < 10:
                examples.append(key)
    report = {"covered": len(indices), "skipped": skipped, "skipped_examples": examples}
    return PriorAttachment(indices=indices, priors=priors, report=report)
