"""Label hierarchy, datasets with hidden ground truth, splits and feature I/O.

The fine label of every instance lives in :class:`Dataset` but the learner
only ever sees a :class:`LearnerView`, which carries ids and features and
nothing else.  Annotators and the evaluator receive the full dataset.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class LabelError(ValueError):
    """Out-of-range class index or inconsistent label space."""


class ConfigError(ValueError):
    """Inconsistent generator or split configuration."""


class ParseError(ValueError):
    """Malformed feature or label-space file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SplitError(ValueError):
    pass


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LabelSpace:
    """Fine classes, coarse classes and the surjective fine -> coarse map."""

    fine_names: tuple
    coarse_names: tuple
    parent: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fine_names", tuple(self.fine_names))
        object.__setattr__(self, "coarse_names", tuple(self.coarse_names))
        parent = _frozen(self.parent, np.int64)
        object.__setattr__(self, "parent", parent)
        if len(set(self.fine_names)) != len(self.fine_names):
            raise LabelError("duplicate fine class name")
        if len(set(self.coarse_names)) != len(self.coarse_names):
            raise LabelError("duplicate coarse class name")
        if parent.shape != (self.n_fine,):
            raise LabelError(
                f"parent map has {parent.size} entries, expected {self.n_fine}")
        if self.n_coarse > self.n_fine:
            raise LabelError("more coarse classes than fine classes")
        if parent.size and (parent.min() < 0 or parent.max() >= self.n_coarse):
            raise LabelError("parent map points outside the coarse classes")
        missing = set(range(self.n_coarse)) - set(parent.tolist())
        if missing:
            raise LabelError(f"coarse classes without children: {sorted(missing)}")

    @property
    def n_fine(self):
        return len(self.fine_names)

    @property
    def n_coarse(self):
        return len(self.coarse_names)

    def membership(self):
        """K_f x K_w 0/1 matrix; ``p @ membership()`` marginalizes onto coarse."""
        m = np.zeros((self.n_fine, self.n_coarse))
        m[np.arange(self.n_fine), self.parent] = 1.0
        return m

    def fine_index(self, name):
        try:
            return self.fine_names.index(name)
        except ValueError:
            raise LabelError(f"unknown fine class {name!r}") from None

    def coarse_index(self, name):
        try:
            return self.coarse_names.index(name)
        except ValueError:
            raise LabelError(f"unknown coarse class {name!r}") from None

    @classmethod
    def identity(cls, n):
        names = [f"c{i}" for i in range(n)]
        return cls(names, names, np.arange(n))

    def to_json(self):
        return {"fine": list(self.fine_names), "coarse": list(self.coarse_names),
                "parent": [int(p) for p in self.parent]}

    @classmethod
    def from_json(cls, obj):
        try:
            return cls(obj["fine"], obj["coarse"], obj["parent"])
        except KeyError as exc:
            raise ParseError(f"label space is missing key {exc.args[0]!r}") from None


def coarsen(space, fine):
    """Coarse parent of fine class index ``fine``."""
    if isinstance(fine, (bool, np.bool_)) or not isinstance(fine, (int, np.integer)):
        raise LabelError(f"fine index must be an integer, got {fine!r}")
    if not 0 <= fine < space.n_fine:
        raise LabelError(f"fine index {fine} outside [0, {space.n_fine})")
    return int(space.parent[fine])


@dataclass(frozen=True)
class Instance:
    id: int
    features: np.ndarray
    true_fine: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus hidden fine labels, indexed by integer id.

    ``ids`` need not be contiguous; :meth:`rows` maps ids to row positions.
    """

    space: LabelSpace
    ids: np.ndarray
    features: np.ndarray
    true_fine: np.ndarray
    _pos: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = _frozen(self.ids, np.int64)
        X = _frozen(self.features, np.float64)
        y = _frozen(self.true_fine, np.int64)
        if X.ndim != 2 or X.shape[0] != ids.size or y.shape != ids.shape:
            raise ConfigError("ids, features and labels disagree in length")
        if len(np.unique(ids)) != ids.size:
            raise ConfigError("duplicate instance id")
        if not np.all(np.isfinite(X)):
            raise ConfigError("non-finite feature value")
        if y.size and (y.min() < 0 or y.max() >= self.space.n_fine):
            raise LabelError("fine label outside the label space")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "true_fine", y)
        object.__setattr__(self, "_pos", {int(i): r for r, i in enumerate(ids)})

    def __len__(self):
        return int(self.ids.size)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.space.to_json() == other.space.to_json()
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.true_fine, other.true_fine))

    @property
    def dim(self):
        return int(self.features.shape[1])

    def rows(self, ids):
        try:
            return np.fromiter((self._pos[int(i)] for i in ids), dtype=np.int64)
        except KeyError as exc:
            raise LabelError(f"unknown instance id {exc.args[0]}") from None

    def instance(self, id_):
        r = self.rows([id_])[0]
        return Instance(int(id_), self.features[r], int(self.true_fine[r]))

    def view(self):
        return LearnerView(self.ids, self.features, self._pos)


@dataclass(frozen=True, eq=False)
class LearnerView:
    """What selection code is allowed to see: ids and features only."""

    ids: np.ndarray
    features: np.ndarray
    _pos: dict = field(repr=False)

    def rows(self, ids):
        return np.fromiter((self._pos[int(i)] for i in ids), dtype=np.int64)

    def features_of(self, ids):
        return self.features[self.rows(ids)]


@dataclass(frozen=True)
class PoolPartition:
    initial: frozenset
    unlabeled: frozenset
    validation: frozenset
    test: frozenset

    def check(self, ds):
        parts = (self.initial, self.unlabeled, self.validation, self.test)
        total = sum(len(p) for p in parts)
        union = frozenset().union(*parts)
        if total != len(union):
            raise SplitError("partition sets overlap")
        if union != frozenset(int(i) for i in ds.ids):
            raise SplitError("partition does not cover the dataset")


@dataclass(frozen=True)
class SynthConfig:
    n_fine: int = 40
    n_coarse: int = 10
    children_per_coarse: int = 4
    dim: int = 32
    per_class: int = 60
    inter_spread: float = 0.5
    intra_spread: float = 0.1
    noise_scale: float = 1.0


def synth_generate(cfg, seed):
    """Gaussian clusters nested two levels deep.

    Coarse centers ~ N(0, inter^2 I), fine centers ~ coarse center +
    N(0, intra^2 I), instances ~ fine center + N(0, noise^2 I).  Instance
    ids are assigned after a seeded shuffle so class order leaks nothing.

    Returns ``(dataset, coarse_centers)``.
    """
    if cfg.n_coarse * cfg.children_per_coarse != cfg.n_fine:
        raise ConfigError(
            f"n_coarse * children_per_coarse = "
            f"{cfg.n_coarse * cfg.children_per_coarse} != n_fine = {cfg.n_fine}")
    if cfg.inter_spread <= 0 or cfg.intra_spread <= 0:
        raise ConfigError("spreads must be positive")
    if cfg.noise_scale < 0:
        raise ConfigError("noise_scale must be non-negative")
    if cfg.dim < 1 or cfg.per_class < 1 or cfg.n_coarse < 1:
        raise ConfigError("dim, per_class and n_coarse must be positive")

    rng = np.random.default_rng(seed)
    k = cfg.children_per_coarse
    parent = np.repeat(np.arange(cfg.n_coarse), k)
    space = LabelSpace(
        [f"fine_{c:02d}_{j}" for c in range(cfg.n_coarse) for j in range(k)],
        [f"coarse_{c:02d}" for c in range(cfg.n_coarse)],
        parent,
    )
    coarse_centers = rng.normal(0.0, cfg.inter_spread, (cfg.n_coarse, cfg.dim))
    fine_centers = coarse_centers[parent] + rng.normal(
        0.0, cfg.intra_spread, (cfg.n_fine, cfg.dim))

    labels = np.repeat(np.arange(cfg.n_fine), cfg.per_class)
    noise = rng.normal(0.0, 1.0, (labels.size, cfg.dim))
    X = fine_centers[labels] + cfg.noise_scale * noise
    order = rng.permutation(labels.size)
    ds = Dataset(space, np.arange(labels.size), X[order], labels[order])
    return ds, coarse_centers


def class_means(ds, coarse=True):
    """Per-class feature means (annotator-side helper, reads ground truth)."""
    labels = ds.space.parent[ds.true_fine] if coarse else ds.true_fine
    n = ds.space.n_coarse if coarse else ds.space.n_fine
    sums = np.zeros((n, ds.dim))
    np.add.at(sums, labels, ds.features)
    counts = np.bincount(labels, minlength=n).astype(float)
    return sums / np.maximum(counts, 1.0)[:, None]


def save_label_space(space, path):
    Path(path).write_text(json.dumps(space.to_json(), indent=2) + "\n",
                          encoding="utf-8")


def load_label_space(path):
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    return LabelSpace.from_json(obj)


def save_features(ds, path):
    """Write ``id,label,f0..f{d-1}``; floats use ``repr`` so reload is exact."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{j}" for j in range(ds.dim)])
        for i, x, y in zip(ds.ids, ds.features, ds.true_fine):
            w.writerow([int(i), ds.space.fine_names[y]] + [repr(float(v)) for v in x])


def load_features(path, space):
    ids, labels, rows = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if len(header) < 3 or header[0] != "id" or header[1] != "label":
            raise ParseError("header must start with 'id,label' and name "
                             "at least one feature column", 1)
        d = len(header) - 2
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != d + 2:
                raise ParseError(f"expected {d + 2} fields, found {len(row)}", line)
            try:
                id_ = int(row[0])
            except ValueError:
                raise ParseError(f"bad id {row[0]!r}", line) from None
            try:
                labels.append(space.fine_index(row[1]))
            except LabelError as exc:
                raise ParseError(str(exc), line) from None
            try:
                x = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(str(exc), line) from None
            if not all(math.isfinite(v) for v in x):
                raise ParseError("non-finite feature value", line)
            ids.append(id_)
            rows.append(x)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    try:
        return Dataset(space, ids, X, labels)
    except (ConfigError, LabelError) as exc:
        raise ParseError(str(exc)) from None


def split_initial(ds, init_per_class, val_per_class, seed, test_per_class=0):
    """Stratified split into initial / unlabeled / validation / test ids.

    Per fine class, ``test_per_class`` ids go to test first; the rest is the
    training split, from which ``init_per_class`` form D_I and
    ``val_per_class`` the validation set.  Everything left is the pool.
    """
    for name, v in (("init_per_class", init_per_class),
                    ("val_per_class", val_per_class),
                    ("test_per_class", test_per_class)):
        if v < 0:
            raise ConfigError(f"{name} must be non-negative")
    rng = np.random.default_rng(seed)
    need = test_per_class + init_per_class + val_per_class
    initial, unlabeled, validation, test = [], [], [], []
    for c in range(ds.space.n_fine):
        members = ds.ids[ds.true_fine == c]
        if members.size < need:
            raise SplitError(
                f"class {ds.space.fine_names[c]!r} has {members.size} instances, "
                f"needs {need}")
        members = rng.permutation(members)
        a = test_per_class
        b = a + init_per_class
        e = b + val_per_class
        test.extend(members[:a].tolist())
        initial.extend(members[a:b].tolist())
        validation.extend(members[b:e].tolist())
        unlabeled.extend(members[e:].tolist())
    part = PoolPartition(frozenset(initial), frozenset(unlabeled),
                         frozenset(validation), frozenset(test))
    part.check(ds)
    return part
