"""FAR/FRR/BAC metrics and the four training-testing protocols.

Scheme (letter, name), with M the legitimate user's cycle count:

a  oc_svm           train floor(0.7 M) legit; test the rest + every impostor cycle.
b  bi_imbalanced    train floor(0.7 M_j) of every subject j; test the remainders.
c  bi_balanced_all  train floor(0.5 M) legit + as many impostor cycles drawn
                    from the pooled impostors; test the other legit cycles +
                    an equal, disjoint impostor draw.
d  bi_balanced_5    as (c) but impostor cycles come evenly from
                    min(5, #subjects - 1) randomly chosen impostors.

Every subject takes the legitimate role in turn.  Within a subject, cycles
are shuffled per session and each session contributes to train/test in
proportion to its size.  Counts are floored; remainders go to test.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .classify import DEFAULT_C, DEFAULT_NU, train_one_class, train_two_class, verdicts
from .errors import ParameterError, SizingError, UndefinedMetricError
from .pipeline import Dataset

log = logging.getLogger(__name__)

SCHEMES = ("oc_svm", "bi_imbalanced", "bi_balanced_all", "bi_balanced_5")
_ALIASES = {
    "a": "oc_svm", "oc-svm": "oc_svm", "one-class": "oc_svm",
    "b": "bi_imbalanced", "imbalanced": "bi_imbalanced", "bi-imbalanced": "bi_imbalanced",
    "c": "bi_balanced_all", "balanced-all": "bi_balanced_all", "bi-balanced-all": "bi_balanced_all",
    "d": "bi_balanced_5", "balanced-5": "bi_balanced_5", "bi-balanced-5": "bi_balanced_5",
}
MIN_CYCLES = 10
MAX_IMPOSTORS_D = 5


def scheme_name(text: str) -> str:
    if text in SCHEMES:
        return text
    try:
        return _ALIASES[text.lower()]
    except KeyError:
        raise ParameterError(f"unknown scheme {text!r}; choose from {SCHEMES}") from None


# --------------------------------------------------------------------------
# Metrics

@dataclass(frozen=True)
class Metrics:
    far: float
    frr: float
    bac: float


def metrics(tp: int, tn: int, fp: int, fn: int, exact: bool = False) -> Metrics:
    """FAR = fp/(fp+tn), FRR = fn/(fn+tp), BAC = (TPR + TNR)/2.

    With ``exact=True`` the rates are :class:`fractions.Fraction` values, for
    which ``bac == 1 - (far + frr) / 2`` holds exactly.
    """
    if min(tp, tn, fp, fn) < 0:
        raise ParameterError("confusion counts must be non-negative")
    if fp + tn == 0:
        raise UndefinedMetricError("no impostor samples: FAR undefined")
    if fn + tp == 0:
        raise UndefinedMetricError("no legitimate samples: FRR undefined")
    far = Fraction(fp, fp + tn)
    frr = Fraction(fn, fn + tp)
    bac = (Fraction(tp, tp + fn) + Fraction(tn, tn + fp)) / 2
    if exact:
        return Metrics(far, frr, bac)
    return Metrics(float(far), float(frr), float(bac))


# --------------------------------------------------------------------------
# Splits

@dataclass(frozen=True)
class ProtocolConfig:
    scheme: str = "bi_balanced_5"
    seed: int = 0
    legit_subject: str | None = None
    nu: float = DEFAULT_NU
    C: float = DEFAULT_C
    gamma: float | str = "auto"
    decision_threshold: float = 0.0
    feature_mode: str = "all"
    fusion: str = "fused"

    def __post_init__(self):
        object.__setattr__(self, "scheme", scheme_name(self.scheme))

    def hyperparams(self) -> dict:
        return {"nu": self.nu, "C": self.C, "gamma": self.gamma,
                "decision_threshold": self.decision_threshold}


@dataclass
class Split:
    train_idx: np.ndarray
    train_y: np.ndarray
    test_idx: np.ndarray
    test_y: np.ndarray
    impostors: list[str] = field(default_factory=list)

    def train(self, data: Dataset):
        return data.X[self.train_idx], self.train_y

    def test(self, data: Dataset):
        return data.X[self.test_idx], self.test_y

    @property
    def counts(self) -> dict:
        return {"train_pos": int((self.train_y > 0).sum()), "train_neg": int((self.train_y < 0).sum()),
                "test_pos": int((self.test_y > 0).sum()), "test_neg": int((self.test_y < 0).sum())}


def _subject_rng(seed: int, subject_ids: list[str], subject: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, subject_ids.index(subject)]))


def stratified_order(rows: np.ndarray, sessions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shuffle ``rows`` so that every prefix draws from sessions proportionally.

    Rows are shuffled within each session, then merged by always taking the
    session whose share of the prefix lags its share of the whole the most.
    """
    rows = np.asarray(rows)
    if len(rows) == 0:
        return rows
    groups = {}
    for r in rows:
        groups.setdefault(str(sessions[r]), []).append(r)
    keys = sorted(groups)
    queues = [list(rng.permutation(groups[k])) for k in keys]
    sizes = np.array([len(q) for q in queues], dtype=float)
    share = sizes / sizes.sum()
    taken = np.zeros(len(keys))
    order = []
    for n in range(len(rows)):
        deficit = share * (n + 1) - taken
        deficit[taken >= sizes] = -np.inf
        g = int(np.argmax(deficit))
        order.append(queues[g][int(taken[g])])
        taken[g] += 1
    return np.array(order, dtype=int)


def _take(order: np.ndarray, n: int, what: str) -> tuple[np.ndarray, np.ndarray]:
    if n > len(order):
        raise SizingError(f"{what}: need {n} cycles, only {len(order)} available")
    return order[:n], order[n:]


def _quotas(total: int, k: int) -> list[int]:
    base, extra = divmod(total, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def split(data: Dataset, config: ProtocolConfig, legit: str | None = None) -> Split:
    """Train/test rows for one legitimate subject under ``config.scheme``.

    Labels are +1 (legit) / -1 (impostor).  Train and test never share a row.
    """
    legit = legit or config.legit_subject
    subject_ids = data.subject_ids
    if len(subject_ids) < 2:
        raise SizingError("a protocol needs at least two subjects")
    if legit not in subject_ids:
        raise ParameterError(f"unknown legitimate subject {legit!r}")
    for s in subject_ids:
        if len(data.rows_of(s)) < MIN_CYCLES:
            raise SizingError(f"subject {s} has {len(data.rows_of(s))} cycles, protocols need >= {MIN_CYCLES}")
    rng = _subject_rng(config.seed, subject_ids, legit)
    others = [s for s in subject_ids if s != legit]
    order = {s: stratified_order(data.rows_of(s), data.sessions, rng) for s in subject_ids}
    M = len(order[legit])

    scheme = config.scheme
    imp_train, imp_test = [], []
    chosen = list(others)
    if scheme == "oc_svm":
        pos_train, pos_test = _take(order[legit], int(np.floor(0.7 * M)), legit)
        imp_test = [data.rows_of(s) for s in others]
    elif scheme == "bi_imbalanced":
        pos_train, pos_test = _take(order[legit], int(np.floor(0.7 * M)), legit)
        for s in others:
            tr, te = _take(order[s], int(np.floor(0.7 * len(order[s]))), s)
            imp_train.append(tr)
            imp_test.append(te)
    elif scheme == "bi_balanced_all":
        pos_train, pos_test = _take(order[legit], M // 2, legit)
        pool = rng.permutation(np.concatenate([order[s] for s in others]))
        tr, rest = _take(pool, len(pos_train), "impostor pool")
        te, _ = _take(rest, len(pos_test), "impostor pool")
        imp_train, imp_test = [tr], [te]
    elif scheme == "bi_balanced_5":
        pos_train, pos_test = _take(order[legit], M // 2, legit)
        k = min(MAX_IMPOSTORS_D, len(others))
        chosen = sorted(rng.choice(others, size=k, replace=False).tolist())
        for s, q_tr, q_te in zip(chosen, _quotas(len(pos_train), k), _quotas(len(pos_test), k)):
            tr, rest = _take(order[s], q_tr, s)
            te, _ = _take(rest, q_te, s)
            imp_train.append(tr)
            imp_test.append(te)
    else:
        raise ParameterError(f"unknown scheme {scheme!r}")

    neg_train = np.concatenate(imp_train).astype(int) if imp_train else np.array([], dtype=int)
    neg_test = np.concatenate(imp_test).astype(int)
    train_idx = np.concatenate([pos_train, neg_train]).astype(int)
    test_idx = np.concatenate([pos_test, neg_test]).astype(int)
    train_y = np.concatenate([np.ones(len(pos_train)), -np.ones(len(neg_train))])
    test_y = np.concatenate([np.ones(len(pos_test)), -np.ones(len(neg_test))])
    return Split(train_idx, train_y, test_idx, test_y, chosen)


def enrollment_set(data: Dataset, config: ProtocolConfig, legit: str | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Rows and labels for a deployment model trained on all of ``legit``'s cycles.

    (a) legit rows only; (b) every row; (c) legit rows plus as many pooled
    impostor rows (all of them if fewer); (d) the same count spread over
    min(5, #impostors) randomly chosen impostors.
    """
    legit = legit or config.legit_subject
    subject_ids = data.subject_ids
    if legit not in subject_ids:
        raise ParameterError(f"unknown legitimate subject {legit!r}")
    rng = _subject_rng(config.seed, subject_ids, legit)
    pos = data.rows_of(legit)
    others = [s for s in subject_ids if s != legit]
    if config.scheme == "oc_svm":
        neg = np.array([], dtype=int)
    elif not others:
        raise SizingError("two-class enrollment needs impostor rows")
    elif config.scheme == "bi_imbalanced":
        neg = np.flatnonzero(data.subjects != legit)
    elif config.scheme == "bi_balanced_all":
        pool = rng.permutation(np.flatnonzero(data.subjects != legit))
        neg = np.sort(pool[:len(pos)])
    else:
        k = min(MAX_IMPOSTORS_D, len(others))
        chosen = sorted(rng.choice(others, size=k, replace=False).tolist())
        parts = []
        for s, q in zip(chosen, _quotas(len(pos), k)):
            parts.append(rng.permutation(data.rows_of(s))[:q])
        neg = np.sort(np.concatenate(parts))
    rows = np.concatenate([pos, neg]).astype(int)
    return rows, np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])


def train_for(data: Dataset, rows, y, config: ProtocolConfig, preprocessing: dict | None = None):
    """One-class model for scheme (a), two-class otherwise, thresholded per config."""
    X = data.X[rows]
    if config.scheme == "oc_svm":
        model = train_one_class(X, config.nu, config.gamma, data.layout, preprocessing=preprocessing)
    else:
        model = train_two_class(X, y, config.C, config.gamma, data.layout, preprocessing=preprocessing)
    return model.with_threshold(config.decision_threshold)


# --------------------------------------------------------------------------
# Protocol runs

@dataclass
class SubjectResult:
    subject: str
    far: float
    frr: float
    bac: float
    tp: int
    tn: int
    fp: int
    fn: int
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"subject": self.subject, "far": self.far, "frr": self.frr, "bac": self.bac,
                "tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn, **self.counts}


@dataclass
class EvalReport:
    per_subject: list[SubjectResult]
    mean_far: float
    mean_frr: float
    mean_bac: float
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_results(cls, results: list[SubjectResult], metadata: dict) -> "EvalReport":
        results = sorted(results, key=lambda r: r.subject)
        return cls(results,
                   float(np.mean([r.far for r in results])),
                   float(np.mean([r.frr for r in results])),
                   float(np.mean([r.bac for r in results])),
                   metadata)

    @property
    def mean_gap(self) -> float:
        """Subject-averaged |FAR - FRR|."""
        return float(np.mean([abs(r.far - r.frr) for r in self.per_subject]))

    def to_records(self, condition: str = "all") -> list[dict]:
        scheme = self.metadata.get("scheme", "")
        rows = [{"type": "subject", "scheme": scheme, "condition": condition, **r.to_dict()}
                for r in self.per_subject]
        rows.append({"type": "summary", "scheme": scheme, "condition": condition,
                     "mean_far": self.mean_far, "mean_frr": self.mean_frr, "mean_bac": self.mean_bac,
                     "mean_far_frr_gap": self.mean_gap, "n_subjects": len(self.per_subject),
                     "metadata": self.metadata})
        return rows


def _score_split(data: Dataset, sp: Split, config: ProtocolConfig, legit: str) -> SubjectResult:
    X_test, y_test = sp.test(data)
    model = train_for(data, sp.train_idx, sp.train_y, config)
    accepted = verdicts(model, X_test)
    pos = y_test > 0
    tp = int((accepted & pos).sum())
    fn = int((~accepted & pos).sum())
    fp = int((accepted & ~pos).sum())
    tn = int((~accepted & ~pos).sum())
    m = metrics(tp, tn, fp, fn)
    return SubjectResult(legit, m.far, m.frr, m.bac, tp, tn, fp, fn, sp.counts)


def _run_one(args) -> SubjectResult:
    data, config, legit = args
    return _score_split(data, split(data, config, legit), config, legit)


def _ratio(pos: int, neg: int) -> str:
    if pos == 0:
        return "0:%d" % neg
    return "1:%s" % format(round(neg / pos, 2), "g")


def _map_subjects(fn, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def run_protocol(data: Dataset, config: ProtocolConfig, jobs: int = 1) -> EvalReport:
    """Evaluate every subject (or ``config.legit_subject``) as the legitimate user.

    Scheme (a) trains one-class models, the others two-class models.  Means
    are unweighted across subjects; output order is by subject id whatever
    ``jobs`` is.
    """
    subjects = [config.legit_subject] if config.legit_subject else data.subject_ids
    results = _map_subjects(_run_one, [(data, config, s) for s in subjects], jobs)
    totals = {k: sum(r.counts[k] for r in results) for k in ("train_pos", "train_neg", "test_pos", "test_neg")}
    metadata = {
        "scheme": config.scheme, "seed": config.seed, "feature_mode": config.feature_mode,
        "fusion": config.fusion, "layout": data.layout, "hyperparams": config.hyperparams(),
        "train_pos_neg_ratio": _ratio(totals["train_pos"], totals["train_neg"]),
        "test_pos_neg_ratio": _ratio(totals["test_pos"], totals["test_neg"]),
        **{f"total_{k}": v for k, v in totals.items()},
    }
    return EvalReport.from_results(results, metadata)


# --------------------------------------------------------------------------
# Sweeps

def _sweep_one(args) -> list[SubjectResult]:
    data, config, legit, sizes, n_cycles, test_fraction = args
    subject_ids = data.subject_ids
    rng = _subject_rng(config.seed, subject_ids, legit)
    selected = {}
    for s in subject_ids:
        order = stratified_order(data.rows_of(s), data.sessions, rng)
        selected[s] = _take(order, n_cycles, s)[0]
    n_test = int(np.floor(test_fraction * n_cycles))
    pos_test, pos_pool = selected[legit][:n_test], selected[legit][n_test:]
    others = [s for s in subject_ids if s != legit]
    k = min(MAX_IMPOSTORS_D, len(others))
    chosen = sorted(rng.choice(others, size=k, replace=False).tolist())
    neg_test, neg_pool = [], []
    for s, q in zip(chosen, _quotas(n_test, k)):
        neg_test.append(selected[s][:q])
        neg_pool.append(selected[s][q:])
    results = []
    for f in sizes:
        n_train = int(np.floor(f * n_cycles + 1e-9))
        pos_train, _ = _take(pos_pool, n_train, legit)
        neg_train = [_take(pool, q, s)[0] for s, pool, q in zip(chosen, neg_pool, _quotas(n_train, k))]
        neg_train = np.concatenate(neg_train)
        sp = Split(np.concatenate([pos_train, neg_train]),
                   np.concatenate([np.ones(len(pos_train)), -np.ones(len(neg_train))]),
                   np.concatenate([pos_test] + neg_test),
                   np.concatenate([np.ones(len(pos_test)), -np.ones(sum(len(t) for t in neg_test))]),
                   chosen)
        results.append(_score_split(data, sp, config, legit))
    return results


def training_size_sweep(data: Dataset, sizes, config: ProtocolConfig = ProtocolConfig(),
                        n_cycles: int | None = 80, test_fraction: float = 0.2,
                        jobs: int = 1) -> list[EvalReport]:
    """Balanced-5 evaluation at increasing training sizes.

    ``n_cycles`` cycles are selected per subject (``None``: the smallest
    subject's count).  The first ``floor(test_fraction * n_cycles)`` legit
    cycles and matching impostor cycles form a test set shared by every
    size; training sets are nested prefixes of the remaining cycles.
    """
    sizes = [float(f) for f in sizes]
    if not sizes:
        raise SizingError("no training sizes given")
    if n_cycles is None:
        n_cycles = min(len(data.rows_of(s)) for s in data.subject_ids)
    for f in sizes:
        if not 0 < f <= 1.0 - test_fraction + 1e-12:
            raise SizingError(f"training fraction {f} outside (0, {1 - test_fraction:g}]")
        if int(np.floor(f * n_cycles + 1e-9)) < 1:
            raise SizingError(f"training fraction {f} of {n_cycles} cycles selects no cycles")
    for s in data.subject_ids:
        if len(data.rows_of(s)) < n_cycles:
            raise SizingError(f"subject {s} has {len(data.rows_of(s))} cycles, sweep needs {n_cycles}")
    config = replace(config, scheme="bi_balanced_5")
    subjects = [config.legit_subject] if config.legit_subject else data.subject_ids
    tasks = [(data, config, s, sizes, n_cycles, test_fraction) for s in subjects]
    per_subject = _map_subjects(_sweep_one, tasks, jobs)
    reports = []
    for i, f in enumerate(sizes):
        results = [res[i] for res in per_subject]
        reports.append(EvalReport.from_results(results, {
            "scheme": config.scheme, "seed": config.seed, "train_fraction": f,
            "n_cycles": n_cycles, "n_train_pos": results[0].counts["train_pos"],
            "n_test_pos": results[0].counts["test_pos"], "layout": data.layout,
        }))
    return reports


@dataclass
class ConditionReport:
    cells: dict
    skipped: list

    def to_records(self) -> list[dict]:
        out = []
        for (ground, footwear), report in self.cells.items():
            out.extend(report.to_records(f"{ground}/{footwear}"))
        for cell, reason in self.skipped:
            out.append({"type": "skipped", "condition": f"{cell[0]}/{cell[1]}", "reason": reason})
        return out


COMBINED = ("all", "all")


def condition_report(data: Dataset, config: ProtocolConfig = ProtocolConfig(),
                     jobs: int = 1) -> ConditionReport:
    """One report per (ground, footwear) cell plus the combined data.

    Cells that cannot support the protocol (fewer than two subjects, or too
    few cycles) are skipped with a logged notice.
    """
    cells, skipped = {}, []
    for cell in data.conditions() + [COMBINED]:
        if cell == COMBINED:
            sub = data
        else:
            sub = data.subset((data.grounds == cell[0]) & (data.footwear == cell[1]))
        try:
            cells[cell] = run_protocol(sub, config, jobs)
        except SizingError as exc:
            log.warning("skipping condition %s/%s: %s", cell[0], cell[1], exc)
            skipped.append((cell, str(exc)))
    return ConditionReport(cells, skipped)


def plot_rows_sweep(reports: list[EvalReport]) -> list[dict]:
    return [{"train_fraction": r.metadata["train_fraction"], "n_train_pos": r.metadata["n_train_pos"],
             "far": r.mean_far, "frr": r.mean_frr, "bac": r.mean_bac} for r in reports]


def plot_rows_conditions(cr: ConditionReport) -> list[dict]:
    return [{"ground": g, "footwear": f, "far": r.mean_far, "frr": r.mean_frr, "bac": r.mean_bac}
            for (g, f), r in cr.cells.items()]
