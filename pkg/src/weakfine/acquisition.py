"""Query selection: Random, Entropy and BADGE baselines, plus the cost-aware
allocator that picks, per instance, a full label, a weak label or nothing.

Selectors only receive a :class:`~weakfine.labels.LearnerView`; they never
see ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .annotators import FULL, WEAK, as_fraction
from .model import forward_fine


class SelectionError(ValueError):
    pass


def _pool_array(pool):
    return np.array(sorted(int(i) for i in pool), dtype=np.int64)


def _check_k(k, n):
    if k < 0 or k > n:
        raise SelectionError(f"cannot select {k} from a pool of {n}")


def entropy(P):
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    P = np.asarray(P, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P), 0.0)
    return -terms.sum(axis=-1)


def select_random(pool, k, seed):
    ids = _pool_array(pool)
    _check_k(k, ids.size)
    rng = np.random.default_rng(seed)
    return ids[rng.choice(ids.size, size=k, replace=False)].tolist()


def select_entropy(model, view, pool, k):
    """Top-k fine-prediction entropy, ties to the lower id."""
    ids = _pool_array(pool)
    _check_k(k, ids.size)
    H = entropy(forward_fine(model, view.features_of(ids)))
    order = np.lexsort((ids, -H))
    return ids[order[:k]].tolist()


def gradient_embedding(model, X):
    """Last-layer fine-head gradient under the predicted label, one row per input."""
    H = model.hidden_of(np.atleast_2d(X))
    P = forward_fine(model, np.atleast_2d(X))
    P[np.arange(P.shape[0]), P.argmax(axis=1)] -= 1.0
    return (P[:, :, None] * H[:, None, :]).reshape(P.shape[0], -1)


def kmeans_pp(E, k, rng):
    """k-means++ seeding with a deterministic first pick (largest norm, lowest row)."""
    n = E.shape[0]
    if k == 0:
        return []
    norms = np.einsum("ij,ij->i", E, E)
    chosen = [int(np.argmax(norms))]
    d2 = np.sum((E - E[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # every remaining row coincides with a chosen center
            taken = set(chosen)
            nxt = next(i for i in range(n) if i not in taken)
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((E - E[nxt]) ** 2, axis=1))
        d2[chosen] = 0.0
    return chosen


def select_badge(model, view, pool, k, seed):
    ids = _pool_array(pool)
    _check_k(k, ids.size)
    E = gradient_embedding(model, view.features_of(ids))
    rows = kmeans_pp(E, k, np.random.default_rng(seed))
    return ids[rows].tolist()


@dataclass(frozen=True)
class ScoredCandidate:
    instance_id: int
    v_full: float
    v_weak: float
    weak_allowed: bool = True


def score_candidates(model, T, space, view, pool):
    """Full-label utility = fine entropy; weak-label utility = coarse entropy
    scaled by the mean diagonal of ``T``.  Both in nats."""
    ids = _pool_array(pool)
    if ids.size == 0:
        return []
    return scores_from_probs(ids, forward_fine(model, view.features_of(ids)), T, space)


def scores_from_probs(ids, P, T, space):
    """Same scores as :func:`score_candidates`, from precomputed fine probabilities."""
    P = np.asarray(P, dtype=np.float64)
    v_full = entropy(P)
    v_weak = T.mean_diagonal() * entropy(P @ space.membership())
    # coarse entropy never exceeds fine entropy; clip rounding noise
    v_weak = np.minimum(np.maximum(v_weak, 0.0), v_full)
    return [ScoredCandidate(int(i), float(a), float(b))
            for i, a, b in zip(ids, v_full, v_weak)]


@dataclass(frozen=True)
class Action:
    instance_id: int
    kind: str
    ratio: float
    cost: Fraction


@dataclass(frozen=True)
class AllocationPlan:
    full_ids: tuple
    weak_ids: tuple
    planned_cost: Fraction
    actions: tuple = ()

    def to_jsonl(self):
        return "".join(
            json.dumps({"id": a.instance_id, "action": a.kind, "ratio": a.ratio}) + "\n"
            for a in self.actions)


def _ratio(v, c):
    return float(v) * c.denominator / c.numerator


def allocate(scored, sched, budget):
    """Greedy utility-per-cost sweep over (instance, full|weak) actions.

    Actions are ordered by ratio descending, then full before weak, then
    lower id.  One pass takes each action whose cost fits the remaining
    budget and whose instance is still free.  Candidates with
    ``weak_allowed=False`` contribute only their full action.
    """
    budget = as_fraction(budget)
    if budget < 0:
        raise SelectionError("budget must be non-negative")
    actions = []
    for c in scored:
        actions.append(Action(c.instance_id, FULL, _ratio(c.v_full, sched.c_full),
                              sched.c_full))
        if c.weak_allowed:
            actions.append(Action(c.instance_id, WEAK, _ratio(c.v_weak, sched.c_weak),
                                  sched.c_weak))
    actions.sort(key=lambda a: (-a.ratio, a.kind != FULL, a.instance_id))

    remaining = budget
    taken, full, weak, log = set(), [], [], []
    for a in actions:
        if remaining < sched.c_weak:
            break
        if a.instance_id in taken or a.cost > remaining:
            continue
        taken.add(a.instance_id)
        remaining -= a.cost
        (full if a.kind == FULL else weak).append(a.instance_id)
        log.append(a)
    return AllocationPlan(tuple(full), tuple(weak), budget - remaining, tuple(log))


def full_only_plan(ids, sched, budget):
    """Plan that spends the budget on full labels for ``ids`` (already ranked)."""
    budget = as_fraction(budget)
    k = int(budget // sched.c_full)
    chosen = tuple(int(i) for i in ids[:k])
    acts = tuple(Action(i, FULL, 0.0, sched.c_full) for i in chosen)
    return AllocationPlan(chosen, (), len(chosen) * sched.c_full, acts)


def plan_utility(plan, scored):
    by_id = {c.instance_id: c for c in scored}
    return (sum(by_id[i].v_full for i in plan.full_ids)
            + sum(by_id[i].v_weak for i in plan.weak_ids))

