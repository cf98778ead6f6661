"""Supervision sources: an exact human oracle, a simulated weak annotator,
and a JSONL file protocol for an external weak annotator."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .correction import TransitionMatrix, normalize_rows
from .labels import coarsen

HUMAN, VLM, EXTERNAL = "human", "vlm", "external"
FULL, WEAK = "full", "weak"


class AnnotatorConfigError(ValueError):
    pass


class ProtocolError(ValueError):
    """Response file does not answer every request, or a line is malformed."""

    def __init__(self, message, line=None, missing=()):
        self.line = line
        self.missing = tuple(missing)
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def as_fraction(value):
    """Exact rational from int, Fraction or a ``"p/q"`` string. Floats refused."""
    if isinstance(value, float):
        raise TypeError(f"refusing float cost {value!r}; pass 'p/q' or a Fraction")
    return Fraction(value)


@dataclass(frozen=True)
class CostSchedule:
    c_full: Fraction = Fraction(1)
    c_weak: Fraction = Fraction(1, 50)

    def __post_init__(self):
        c_full, c_weak = as_fraction(self.c_full), as_fraction(self.c_weak)
        if c_full <= 0 or c_weak <= 0:
            raise AnnotatorConfigError("costs must be positive")
        if c_weak > c_full:
            raise AnnotatorConfigError("weak labels may not cost more than full labels")
        object.__setattr__(self, "c_full", c_full)
        object.__setattr__(self, "c_weak", c_weak)

    def cost(self, granularity):
        return self.c_full if granularity == FULL else self.c_weak


@dataclass(frozen=True)
class AnnotationRecord:
    instance_id: int
    source: str
    granularity: str
    label: int | None
    cost_charged: Fraction
    abstained: bool = False

    def __post_init__(self):
        if self.granularity == FULL and (self.source != HUMAN or self.label is None):
            raise AnnotatorConfigError("full labels come from the human annotator")
        if self.abstained != (self.label is None):
            raise AnnotatorConfigError("label is absent exactly when abstained")


def human_annotate(ds, instance_id, sched):
    inst = ds.instance(instance_id)
    return AnnotationRecord(inst.id, HUMAN, FULL, inst.true_fine, sched.c_full)


def calibrated_transition(n_coarse, accuracy, centers=None, n_confusers=3):
    """Transition matrix with ``accuracy`` on the diagonal of every row.

    The off-diagonal mass ``1 - accuracy`` is split evenly over the
    ``n_confusers`` nearest other coarse classes by center distance, or over
    all other classes when no centers are given.
    """
    if not 0.0 <= accuracy <= 1.0:
        raise AnnotatorConfigError("accuracy must lie in [0, 1]")
    if n_coarse < 2:
        return TransitionMatrix(np.ones((1, 1)))
    T = np.zeros((n_coarse, n_coarse))
    for i in range(n_coarse):
        others = np.array([j for j in range(n_coarse) if j != i])
        if centers is not None:
            dist = np.linalg.norm(centers[others] - centers[i], axis=1)
            # stable sort: equal distances resolve to the lower class index
            others = others[np.argsort(dist, kind="stable")[:n_confusers]]
        T[i, others] = (1.0 - accuracy) / len(others)
        T[i, i] = accuracy
    return TransitionMatrix(normalize_rows(T))


@dataclass(frozen=True)
class VlmSimConfig:
    true_transition: TransitionMatrix
    abstain_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.abstain_prob <= 1.0:
            raise AnnotatorConfigError("abstain_prob must lie in [0, 1]")


class SimulatedVLM:
    """Class-conditional noisy coarse annotator.

    Each call consumes exactly two uniforms from the annotator's own stream
    (abstention, then label), so the output sequence depends only on the
    seed and the order of calls.
    """

    def __init__(self, space, cfg):
        if cfg.true_transition.n != space.n_coarse:
            raise AnnotatorConfigError(
                f"transition matrix is {cfg.true_transition.n}x{cfg.true_transition.n}, "
                f"label space has {space.n_coarse} coarse classes")
        self.space = space
        self.cfg = cfg
        self._cdf = np.cumsum(cfg.true_transition.entries, axis=1)
        self._cdf[:, -1] = 1.0
        self._rng = np.random.default_rng(cfg.seed)

    def predict_coarse(self, true_coarse):
        """One draw for a known true coarse class; ``None`` on abstention."""
        u_abstain, u_label = self._rng.random(2)
        if u_abstain < self.cfg.abstain_prob:
            return None
        return int(np.searchsorted(self._cdf[true_coarse], u_label, side="right"))

    def annotate(self, ds, instance_id, sched):
        inst = ds.instance(instance_id)
        label = self.predict_coarse(coarsen(self.space, inst.true_fine))
        return AnnotationRecord(inst.id, VLM, WEAK, label, sched.c_weak,
                                abstained=label is None)


def vlm_annotate(ds, instance_id, annotator, sched):
    return annotator.annotate(ds, instance_id, sched)


def write_request(path, ids, space, hints=None):
    """Request file for an external weak annotator, one JSON object per line."""
    hints = hints or {}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in ids:
            obj = {"id": int(i), "candidates": list(space.coarse_names)}
            if i in hints:
                obj["hint"] = hints[i]
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _read_jsonl(path):
    out = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed JSON: {exc.msg}", lineno) from None
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), int):
            raise ProtocolError("each line needs an integer 'id'", lineno)
        out.append((lineno, obj))
    return out


def external_annotate_batch(request_path, response_path, space, sched):
    """Turn an external annotator's responses into weak records.

    Responses are matched to requests by id, in any order.  A label that
    names no coarse class becomes an abstention (charged, no label).
    """
    requested = [obj["id"] for _, obj in _read_jsonl(request_path)]
    answers = {}
    for lineno, obj in _read_jsonl(response_path):
        label = obj.get("label")
        if label is not None and not isinstance(label, str):
            raise ProtocolError("'label' must be a string", lineno)
        answers[obj["id"]] = label
    missing = [i for i in requested if i not in answers]
    if missing:
        raise ProtocolError(f"no response for ids {missing}", missing=missing)
    index = {name: k for k, name in enumerate(space.coarse_names)}
    records = []
    for i in requested:
        label = index.get(answers[i])
        records.append(AnnotationRecord(i, EXTERNAL, WEAK, label, sched.c_weak,
                                        abstained=label is None))
    return records
