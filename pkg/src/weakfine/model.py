"""One-hidden-layer network with a fine head and a weak head, trained by Adam
on analytic gradients.

Training runs in two phases: the weak head (and the shared layer) on coarse
labels, then the fine head (and the shared layer) on fine labels.  The
returned parameters are those of the epoch with the lowest validation
fine cross-entropy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correction import EPS_FLOOR, TransitionMatrix, corrected_loss_gradient, softmax

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "Wf", "bf", "Ww", "bw")


class TrainingError(RuntimeError):
    def __init__(self, message, phase=None, epoch=None, batch=None):
        self.phase, self.epoch, self.batch = phase, epoch, batch
        super().__init__(f"{message} (phase={phase}, epoch={epoch}, batch={batch})")


class ShapeError(ValueError):
    pass


@dataclass
class ClassifierModel:
    dim: int
    hidden: int
    n_fine: int
    n_coarse: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            self.params = init_params(self.dim, self.hidden, self.n_fine,
                                      self.n_coarse, self.seed)

    def copy(self):
        return ClassifierModel(self.dim, self.hidden, self.n_fine, self.n_coarse,
                               self.seed, {k: v.copy() for k, v in self.params.items()})

    def equals(self, other):
        return (self.shape == other.shape and self.seed == other.seed
                and all(np.array_equal(self.params[k], other.params[k])
                        for k in PARAM_NAMES))

    @property
    def shape(self):
        return (self.dim, self.hidden, self.n_fine, self.n_coarse)

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise ShapeError(f"input has dimension {X.shape[1]}, model expects {self.dim}")
        return X, single

    def hidden_of(self, X):
        X, single = self._check(X)
        H = np.maximum(X @ self.params["W1"] + self.params["b1"], 0.0)
        return H[0] if single else H

    def logits(self, X):
        X, single = self._check(X)
        p = self.params
        H = np.maximum(X @ p["W1"] + p["b1"], 0.0)
        zf, zw = H @ p["Wf"] + p["bf"], H @ p["Ww"] + p["bw"]
        return (zf[0], zw[0]) if single else (zf, zw)


def init_params(dim, hidden, n_fine, n_coarse, seed):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return (rng.uniform(-bound, bound, (fan_in, fan_out)),
                rng.uniform(-bound, bound, fan_out))

    W1, b1 = layer(dim, hidden)
    Wf, bf = layer(hidden, n_fine)
    Ww, bw = layer(hidden, n_coarse)
    return {"W1": W1, "b1": b1, "Wf": Wf, "bf": bf, "Ww": Ww, "bw": bw}


def forward_fine(model, x):
    return softmax(model.logits(x)[0])


def forward_weak(model, x):
    return softmax(model.logits(x)[1])


def _logsumexp(Z):
    m = Z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(Z - m).sum(axis=1, keepdims=True)))[:, 0]


def cross_entropy(Z, y):
    """Mean CE from logits via log-sum-exp."""
    y = np.asarray(y)
    return float(np.mean(_logsumexp(Z) - Z[np.arange(len(y)), y]))


def corrected_cross_entropy(Z, y, T):
    q = softmax(Z) @ T.entries
    return float(np.mean(-np.log(np.maximum(q[np.arange(len(y)), y], EPS_FLOOR))))


@dataclass(frozen=True)
class LossSpec:
    """``head`` is "fine" or "weak"; a weak loss with ``T`` is forward-corrected."""

    head: str = "fine"
    T: TransitionMatrix | None = None


def loss_value(model, X, y, spec):
    zf, zw = model.logits(np.atleast_2d(X))
    y = np.atleast_1d(y)
    if spec.head == "fine":
        return cross_entropy(zf, y)
    if spec.T is None:
        return cross_entropy(zw, y)
    return corrected_cross_entropy(zw, y, spec.T)


def gradients(model, X, y, spec):
    """Mean loss over the batch and its gradient for every parameter."""
    X, _ = model._check(X)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise ShapeError("batch must be non-empty and match its labels")
    p = model.params
    n = X.shape[0]
    A = X @ p["W1"] + p["b1"]
    H = np.maximum(A, 0.0)
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    if spec.head == "fine":
        Z = H @ p["Wf"] + p["bf"]
        loss = cross_entropy(Z, y)
        dZ = softmax(Z)
        dZ[np.arange(n), y] -= 1.0
        W, wk, bk = p["Wf"], "Wf", "bf"
    elif spec.head == "weak":
        Z = H @ p["Ww"] + p["bw"]
        if spec.T is None:
            loss = cross_entropy(Z, y)
            dZ = softmax(Z)
            dZ[np.arange(n), y] -= 1.0
        else:
            loss = corrected_cross_entropy(Z, y, spec.T)
            dZ = corrected_loss_gradient(Z, spec.T, y)
        W, wk, bk = p["Ww"], "Ww", "bw"
    else:
        raise ValueError(f"unknown head {spec.head!r}")

    dZ /= n
    grads[wk] = H.T @ dZ
    grads[bk] = dZ.sum(axis=0)
    dA = (dZ @ W.T) * (A > 0)
    grads["W1"] = X.T @ dA
    grads["b1"] = dA.sum(axis=0)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int | None = None
    seed: int = 0
    freeze_shared: bool = False
    inherit_coarse: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be at least 1 when set")


class Adam:
    def __init__(self, params, cfg, keys):
        self.cfg = cfg
        self.keys = keys
        self.m = {k: np.zeros_like(params[k]) for k in keys}
        self.v = {k: np.zeros_like(params[k]) for k in keys}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k in self.keys:
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)


@dataclass
class History:
    records: list = field(default_factory=list)   # (phase, epoch, train_loss, val_loss)
    best_index: int | None = None

    @property
    def val_losses(self):
        return [r[3] for r in self.records]


def _as_xy(data, dim):
    if data is None:
        return np.zeros((0, dim)), np.zeros(0, dtype=np.int64)
    X, y = data
    return np.asarray(X, dtype=np.float64).reshape(-1, dim), np.asarray(y, dtype=np.int64)


def inherit_coarse_head(model, parent):
    """Add each coarse class's weak-head weights to its fine children.

    The fine head then starts out ranking fine classes by their parent's
    weak-head score and only has to learn the split within each parent.
    """
    p = model.params
    p["Wf"] = p["Wf"] + p["Ww"][:, parent]
    p["bf"] = p["bf"] + p["bw"][parent]


def train(model, full_set, weak_set, T, val_set, cfg, parent=None):
    """Weak phase then fine phase; keep the best epoch by validation loss.

    ``full_set``, ``weak_set`` and ``val_set`` are ``(X, y)`` pairs; an empty
    set skips its phase.  ``T=None`` trains the weak head on plain
    cross-entropy.  Returns ``(model, history)``; ``model`` is updated in
    place to the selected snapshot.
    """
    Xf, yf = _as_xy(full_set, model.dim)
    Xw, yw = _as_xy(weak_set, model.dim)
    Xv, yv = _as_xy(val_set, model.dim)
    root = np.random.SeedSequence(cfg.seed)
    rngs = [np.random.default_rng(s) for s in root.spawn(2)]
    history = History()
    best_loss, best_params = np.inf, None

    phases = (("weak", Xw, yw, LossSpec("weak", T), rngs[0]),
              ("fine", Xf, yf, LossSpec("fine"), rngs[1]))
    for phase, X, y, spec, rng in phases:
        if X.shape[0] == 0:
            continue
        if phase == "fine" and cfg.inherit_coarse and parent is not None and Xw.shape[0]:
            inherit_coarse_head(model, np.asarray(parent))
        keys = ("Wf", "bf") if phase == "fine" else ("Ww", "bw")
        if not (phase == "fine" and cfg.freeze_shared):
            keys = ("W1", "b1") + keys
        opt = Adam(model.params, cfg, keys)
        since_best = 0
        for epoch in range(cfg.epochs):
            order = rng.permutation(X.shape[0])
            total = 0.0
            for b, start in enumerate(range(0, X.shape[0], cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                loss, grads = gradients(model, X[idx], y[idx], spec)
                if not np.isfinite(loss):
                    raise TrainingError("non-finite training loss", phase, epoch, b)
                opt.step(model.params, grads)
                if not all(np.all(np.isfinite(model.params[k])) for k in keys):
                    raise TrainingError("non-finite parameters", phase, epoch, b)
                total += loss * idx.size
            val = cross_entropy(model.logits(Xv)[0], yv) if Xv.shape[0] else np.nan
            history.records.append((phase, epoch, total / X.shape[0], val))
            if Xv.shape[0] == 0 or val < best_loss:
                best_loss = val if Xv.shape[0] else best_loss
                best_params = {k: v.copy() for k, v in model.params.items()}
                history.best_index = len(history.records) - 1
                since_best = 0
            else:
                since_best += 1
            if (phase == "fine" and cfg.patience is not None
                    and since_best >= cfg.patience):
                break

    if best_params is not None:
        model.params = best_params
    return model, history


def evaluate(model, X, y):
    """Fine accuracy; ``np.argmax`` resolves ties to the lowest class index."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    pred = np.argmax(model.logits(np.atleast_2d(X))[0], axis=1)
    return float(np.mean(pred == y))


def save_checkpoint(model, path):
    blob = {
        "version": CHECKPOINT_VERSION,
        "dims": {"dim": model.dim, "hidden": model.hidden,
                 "n_fine": model.n_fine, "n_coarse": model.n_coarse},
        "seed": model.seed,
        "params": {k: {"shape": list(model.params[k].shape),
                       "data": model.params[k].ravel().tolist()}
                   for k in PARAM_NAMES},
    }
    Path(path).write_text(json.dumps(blob), encoding="utf-8")


def load_checkpoint(path):
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in blob["params"].items()}
    return ClassifierModel(seed=blob["seed"], params=params, **blob["dims"])

