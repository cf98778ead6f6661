"""Weak-annotator transition matrices and the forward-corrected loss."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

EPS_FLOOR = 1e-12
ROW_TOL = 1e-12


class TransitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic K_w x K_w matrix; entry (i, j) = P(annotator says j | true i)."""

    entries: np.ndarray

    def __post_init__(self):
        T = np.array(self.entries, dtype=np.float64, copy=True)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise TransitionError(f"transition matrix must be square, got {T.shape}")
        if not np.all(np.isfinite(T)) or np.any(T < 0):
            raise TransitionError("transition entries must be finite and non-negative")
        dev = np.abs(T.sum(axis=1) - 1.0)
        if np.any(dev > ROW_TOL):
            raise TransitionError(
                f"row {int(dev.argmax())} sums to {T.sum(axis=1)[dev.argmax()]!r}")
        T.setflags(write=False)
        object.__setattr__(self, "entries", T)

    @property
    def n(self):
        return self.entries.shape[0]

    def __eq__(self, other):
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    def is_identity(self):
        return np.array_equal(self.entries, np.eye(self.n))

    def mean_diagonal(self):
        return float(np.mean(np.diag(self.entries)))


def normalize_rows(M):
    """Divide each row by its sum, then push the residual onto the largest entry
    so that every row sums to 1 within floating-point rounding."""
    M = np.asarray(M, dtype=np.float64)
    M = M / M.sum(axis=1, keepdims=True)
    for row in M:
        row[row.argmax()] += 1.0 - row.sum()
    return M


@dataclass(frozen=True)
class TrustedPair:
    """Coarse label derived from a human fine label, and what the weak annotator said.

    ``vlm_pred`` is ``None`` when the annotator abstained.
    """

    true_coarse: int
    vlm_pred: int | None


def estimate_transition(pairs, n_coarse, smoothing=1.0):
    """Count-based estimate with additive smoothing.

    Row i is ``(count(i->j) + a) / (count(i->.) + a*K)``.  Rows with no
    observations under ``a == 0`` fall back to the identity row.
    Abstaining pairs are ignored.
    """
    if n_coarse < 2:
        raise TransitionError("need at least two coarse classes")
    if smoothing < 0:
        raise TransitionError("smoothing must be non-negative")
    counts = np.zeros((n_coarse, n_coarse))
    for p in pairs:
        if p.vlm_pred is None:
            continue
        if not (0 <= p.true_coarse < n_coarse and 0 <= p.vlm_pred < n_coarse):
            raise TransitionError(f"pair {p} outside [0, {n_coarse})")
        counts[p.true_coarse, p.vlm_pred] += 1
    totals = counts.sum(axis=1, keepdims=True)
    if smoothing > 0:
        T = (counts + smoothing) / (totals + smoothing * n_coarse)
    else:
        T = np.where(totals > 0, counts / np.maximum(totals, 1.0), np.eye(n_coarse))
    # row sums can drift by an ulp
    return TransitionMatrix(normalize_rows(T))


def corrected_probs(p_w, T):
    """T^T p for a single vector or a batch of row vectors."""
    return np.asarray(p_w) @ T.entries


def forward_corrected_loss(p_w, T, y_w, tol=1e-9):
    """``-log((T^T p_w)[y_w])`` with the log argument floored at 1e-12."""
    p_w = np.asarray(p_w, dtype=np.float64)
    if p_w.shape != (T.n,):
        raise TransitionError(f"probability vector has shape {p_w.shape}, need ({T.n},)")
    if np.any(p_w < -tol) or abs(p_w.sum() - 1.0) > tol:
        raise TransitionError("p_w is not a probability vector")
    if not 0 <= y_w < T.n:
        raise TransitionError(f"weak label {y_w} outside [0, {T.n})")
    q = corrected_probs(p_w, T)[y_w]
    return float(-np.log(max(q, EPS_FLOOR)))


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def corrected_loss_gradient(logits, T, y_w):
    """Gradient of ``forward_corrected_loss(softmax(logits), T, y_w)`` w.r.t. logits.

    Works on one logit vector or a batch (rows) with a label array; batch
    output is per-row, not averaged.  Where the floor is active the loss is
    locally constant and the gradient is zero.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    y = np.atleast_1d(np.asarray(y_w))
    P = softmax(Z)
    cols = T.entries[:, y].T                     # (n, K): T[k, y_i]
    q = np.einsum("nk,nk->n", P, cols)
    active = q > EPS_FLOOR
    g = np.where(active[:, None], -cols / np.where(active, q, 1.0)[:, None], 0.0)
    # softmax Jacobian: dL/dz = p * (g - <p, g>)
    G = P * (g - np.einsum("nk,nk->n", P, g)[:, None])
    return G[0] if single else G


def write_transition_csv(T, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in T.entries:
            w.writerow([repr(float(v)) for v in row])


def read_transition_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return TransitionMatrix(np.array(rows))
