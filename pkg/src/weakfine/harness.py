"""Round-by-round active-learning experiments with an exact budget ledger."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import acquisition as acq
from .annotators import (FULL, WEAK, CostSchedule, SimulatedVLM,
                         VlmSimConfig, calibrated_transition, human_annotate)
from .correction import TransitionMatrix, TrustedPair, estimate_transition, read_transition_csv
from .labels import (SynthConfig, class_means, coarsen, load_features,
                     load_label_space, split_initial, synth_generate)
from .model import ClassifierModel, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

RANDOM, ENTROPY, BADGE, MIXED = "random-full", "entropy-full", "badge-full", "mixed-allocated"
METHODS = (RANDOM, ENTROPY, BADGE, MIXED)
WORKERS_ENV = "WEAKFINE_MAX_WORKERS"

# tags for SeedSequence([seed, tag, ...]) streams
_SPLIT, _TRAIN, _VLM, _SELECT, _INIT = range(5)


class ExperimentError(RuntimeError):
    def __init__(self, message, seed=None, method=None):
        self.seed, self.method = seed, method
        super().__init__(f"[method={method} seed={seed}] {message}")


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class DataSettings:
    source: str = "synthetic"
    seed: int = 0
    synth: SynthConfig = SynthConfig()
    features: str | None = None
    label_space: str | None = None


@dataclass(frozen=True)
class SplitSettings:
    init_per_class: int = 3
    val_per_class: int = 2
    test_per_class: int = 20


@dataclass(frozen=True)
class VlmSettings:
    accuracy: float = 0.8524
    abstain_prob: float = 0.0
    confusers: int = 3
    transition: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    rounds: int = 5
    budget: Fraction = Fraction(150)
    schedule: CostSchedule = CostSchedule()
    methods: tuple = (MIXED,)
    correction_enabled: bool = True
    reestimate_transition: bool = True
    transition_smoothing: float = 1.0
    allow_upgrade: bool = True
    warm_start: bool = False
    carry_over: bool = False
    seeds: tuple = (0, 1, 2)
    hidden: int = 64
    data: DataSettings = DataSettings()
    split: SplitSettings = SplitSettings()
    vlm: VlmSettings = VlmSettings()
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        object.__setattr__(self, "budget", Fraction(self.budget))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate method")
        if self.hidden < 1:
            raise ValueError("hidden must be at least 1")


@dataclass
class BudgetLedger:
    """Exact record of every charge.  Round 0 holds the initial labeled set
    and the weak annotator's calibration queries, which sit outside the
    per-round budget."""

    charges: list = field(default_factory=list)    # (round, AnnotationRecord)

    def charge(self, round_index, record):
        self.charges.append((round_index, record))

    def spent(self, round_index):
        return sum((r.cost_charged for t, r in self.charges if t == round_index), Fraction(0))

    def spent_through(self, round_index):
        """Round-budget spend in rounds 1..round_index."""
        return sum((r.cost_charged for t, r in self.charges if 1 <= t <= round_index),
                   Fraction(0))

    def totals_by_source(self):
        out = {}
        for _, r in self.charges:
            out[r.source] = out.get(r.source, Fraction(0)) + r.cost_charged
        return out


@dataclass(frozen=True)
class RoundReport:
    round: int
    accuracy: float
    full_count: int          # instances with a full label in the training set
    weak_count: int          # weak labels obtained so far (abstentions excluded)
    train_weak: int          # instances whose only label is weak
    cost_spent: Fraction
    transition: TransitionMatrix | None
    abstained: int = 0
    plan: acq.AllocationPlan | None = None
    warning: str | None = None


@dataclass
class ReplicateState:
    ds: object
    part: object
    unlabeled: set
    full_labels: dict
    weak_labels: dict
    trusted: list
    ledger: BudgetLedger
    records: list
    T: TransitionMatrix
    model: ClassifierModel
    vlm: SimulatedVLM | None
    round: int = 0
    carry: Fraction = Fraction(0)
    accuracy: float = float("nan")


def load_dataset(data):
    """Dataset plus the coarse centers used to shape the simulated annotator."""
    if data.source == "synthetic":
        return synth_generate(data.synth, data.seed)
    if data.source == "features":
        ds = load_features(data.features, load_label_space(data.label_space))
        return ds, class_means(ds, coarse=True)
    raise ValueError(f"unknown data source {data.source!r}")


def vlm_transition(cfg, space, centers):
    if cfg.vlm.transition:
        T = read_transition_csv(cfg.vlm.transition)
    else:
        T = calibrated_transition(space.n_coarse, cfg.vlm.accuracy, centers,
                                  cfg.vlm.confusers)
    return T


def _xy(ds, labels):
    ids = sorted(labels)
    return ds.features[ds.rows(ids)], np.array([labels[i] for i in ids], dtype=np.int64)


def _xy_truth(ds, ids):
    rows = ds.rows(sorted(ids))
    return ds.features[rows], ds.true_fine[rows]


def _fit(cfg, state, seed):
    ds = state.ds
    if cfg.warm_start and state.round > 0:
        model = state.model.copy()
    else:
        model = ClassifierModel(ds.dim, cfg.hidden, ds.space.n_fine, ds.space.n_coarse,
                                seed=derive_seed(seed, _INIT))
    uses_weak = bool(state.weak_labels)
    T = state.T if (cfg.correction_enabled and uses_weak) else None
    tcfg = replace(cfg.train, seed=derive_seed(seed, _TRAIN))
    model, _ = train(model, _xy(ds, state.full_labels),
                     _xy(ds, state.weak_labels) if uses_weak else None,
                     T, _xy_truth(ds, state.part.validation), tcfg,
                     parent=ds.space.parent)
    return model


def init_replicate(cfg, method, seed, ds, centers):
    """Split, label D_I, calibrate the weak annotator and fit the first model."""
    space = ds.space
    part = split_initial(ds, cfg.split.init_per_class, cfg.split.val_per_class,
                         derive_seed(seed, _SPLIT), cfg.split.test_per_class)
    ledger = BudgetLedger()
    records, full_labels = [], {}
    for i in sorted(part.initial):
        rec = human_annotate(ds, i, cfg.schedule)
        ledger.charge(0, rec)
        records.append(rec)
        full_labels[i] = rec.label

    vlm, trusted = None, []
    T = TransitionMatrix.identity(space.n_coarse)
    if method == MIXED:
        vlm = SimulatedVLM(space, VlmSimConfig(vlm_transition(cfg, space, centers),
                                               cfg.vlm.abstain_prob,
                                               derive_seed(seed, _VLM)))
        for i in sorted(part.initial):
            rec = vlm.annotate(ds, i, cfg.schedule)
            ledger.charge(0, rec)
            records.append(rec)
            trusted.append(TrustedPair(coarsen(space, full_labels[i]), rec.label))
        if cfg.correction_enabled:
            T = estimate_transition(trusted, space.n_coarse, cfg.transition_smoothing)

    state = ReplicateState(ds, part, set(part.unlabeled), full_labels, {}, trusted,
                           ledger, records, T, None, vlm)
    state.model = _fit(cfg, state, seed)
    X, y = _xy_truth(ds, part.test)
    state.accuracy = evaluate(state.model, X, y)
    return state


def plan_round(cfg, method, state, seed, budget):
    """Choose what to buy this round.  Sees only the learner view."""
    view = state.ds.view()
    pool = sorted(state.unlabeled)
    sel_seed = derive_seed(seed, _SELECT, state.round)
    sched = cfg.schedule
    if method == MIXED:
        scored = acq.score_candidates(state.model, state.T, state.ds.space, view, pool)
        if cfg.allow_upgrade and state.weak_labels:
            upgrades = acq.score_candidates(state.model, state.T, state.ds.space, view,
                                            sorted(state.weak_labels))
            scored += [replace(c, v_weak=0.0, weak_allowed=False) for c in upgrades]
        return acq.allocate(scored, sched, budget)
    k = min(int(budget // sched.c_full), len(pool))
    if method == RANDOM:
        ids = acq.select_random(pool, k, sel_seed)
    elif method == ENTROPY:
        ids = acq.select_entropy(state.model, view, pool, k)
    elif method == BADGE:
        ids = acq.select_badge(state.model, view, pool, k, sel_seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return acq.full_only_plan(ids, sched, budget)


def run_round(cfg, method, state, seed):
    """Select, annotate, re-estimate, retrain and evaluate one round.

    Mutates ``state`` and returns the round's :class:`RoundReport`.
    """
    state.round += 1
    r = state.round
    budget = cfg.budget + (state.carry if cfg.carry_over else 0)
    plan = plan_round(cfg, method, state, seed, budget)
    warning = None
    if not plan.full_ids and not plan.weak_ids:
        warning = "no affordable action; empty plan"
        log.warning("round %d (%s, seed %d): %s", r, method, seed, warning)

    ds, sched = state.ds, cfg.schedule
    abstained = 0
    for i in plan.full_ids:
        rec = human_annotate(ds, i, sched)
        state.ledger.charge(r, rec)
        state.records.append(rec)
        if i in state.weak_labels:
            # upgrade: the earlier weak answer becomes a trusted pair
            prior = state.weak_labels.pop(i)
            state.trusted.append(TrustedPair(coarsen(ds.space, rec.label), prior))
        state.unlabeled.discard(i)
        state.full_labels[i] = rec.label
    for i in plan.weak_ids:
        rec = state.vlm.annotate(ds, i, sched)
        state.ledger.charge(r, rec)
        state.records.append(rec)
        if rec.abstained:
            abstained += 1
            continue
        state.unlabeled.discard(i)
        state.weak_labels[i] = rec.label

    spent = state.ledger.spent(r)
    if spent != plan.planned_cost:
        raise ExperimentError(f"ledger {spent} disagrees with plan {plan.planned_cost}",
                              seed, method)
    state.carry = budget - spent

    if method == MIXED and cfg.correction_enabled and cfg.reestimate_transition:
        state.T = estimate_transition(state.trusted, ds.space.n_coarse,
                                      cfg.transition_smoothing)
    state.model = _fit(cfg, state, seed)
    X, y = _xy_truth(ds, state.part.test)
    state.accuracy = evaluate(state.model, X, y)
    n_weak = sum(1 for t, rec in state.ledger.charges
                 if t >= 1 and rec.granularity == WEAK and not rec.abstained)
    return RoundReport(r, state.accuracy, len(state.full_labels), n_weak,
                       len(state.weak_labels), spent, state.T, abstained, plan, warning)


@dataclass
class ReplicateResult:
    method: str
    seed: int
    initial_accuracy: float
    reports: list
    ledger: BudgetLedger
    records: list


def run_replicate(cfg, method, seed, ds=None, centers=None):
    if ds is None:
        ds, centers = load_dataset(cfg.data)
    try:
        state = init_replicate(cfg, method, seed, ds, centers)
        initial = state.accuracy
        reports = [run_round(cfg, method, state, seed) for _ in range(cfg.rounds)]
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(f"{type(exc).__name__}: {exc}", seed, method) from exc
    return ReplicateResult(method, seed, initial, reports, state.ledger, state.records)


def _replicate_job(args):
    cfg, method, seed = args
    return run_replicate(cfg, method, seed)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    replicates: dict          # method -> list[ReplicateResult] in seed order

    def aggregate(self):
        """``{method: [(round, mean_acc, std_acc), ...]}``; std is the sample std."""
        out = {}
        for method, reps in self.replicates.items():
            acc = np.array([[r.accuracy for r in rep.reports] for rep in reps])
            std = acc.std(axis=0, ddof=1) if acc.shape[0] > 1 else np.zeros(acc.shape[1])
            out[method] = [(t + 1, float(m), float(s))
                           for t, (m, s) in enumerate(zip(acc.mean(axis=0), std))]
        return out

    def mean_curve(self, method, key="accuracy"):
        reps = self.replicates[method]
        return np.array([[getattr(r, key) for r in rep.reports] for rep in reps]).mean(axis=0)


def max_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_experiment(cfg, workers=None):
    """Every method x seed replicate; results keep seed-list order."""
    jobs = [(cfg, m, s) for m in cfg.methods for s in cfg.seeds]
    workers = max_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_replicate_job, jobs))
    else:
        ds, centers = load_dataset(cfg.data)
        results = [run_replicate(cfg, m, s, ds, centers) for cfg, m, s in jobs]
    reps = {m: [] for m in cfg.methods}
    for res in results:
        reps[res.method].append(res)
    return ExperimentResult(cfg, reps)


def sweep_weak_cost(cfg, values, workers=None):
    """One experiment per weak-label cost, everything else fixed."""
    out = {}
    for v in values:
        v = Fraction(v)
        if v <= 0:
            raise ValueError("weak costs must be positive")
        sched = CostSchedule(cfg.schedule.c_full, v)
        out[v] = run_experiment(replace(cfg, schedule=sched), workers)
    return out


def label_ratio_series(reports):
    """Per round ``(full_fraction, weak_fraction)`` of the labeled training set."""
    if not reports:
        raise ValueError("no reports")
    out = []
    for rep in reports:
        n = rep.full_count + rep.train_weak
        out.append((rep.full_count / n, rep.train_weak / n) if n else (0.0, 0.0))
    return out


def ratios_from_ledger(ledger, round_index):
    """Recount (full, weak-only) training instances from the raw records
    charged up to and including ``round_index``."""
    recs = [r for t, r in ledger.charges if t <= round_index]
    full = {r.instance_id for r in recs if r.granularity == FULL}
    weak = {r.instance_id for r in recs
            if r.granularity == WEAK and not r.abstained} - full
    return len(full), len(weak)
