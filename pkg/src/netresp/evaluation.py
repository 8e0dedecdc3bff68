"""Outer evaluation protocol: stratified repeated CV, PR metrics, baselines.

Folds are drawn once per experiment from the master seed; the configured
repeats re-train the SVMs on the same splits with repeat-specific seeds
that shuffle the SMO sweep order. Average precision uses step-wise
interpolation with ties broken by stable original order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._util import derive_seed, parallel_map
from .kernels import PabsKernelParams, apply_spectrum_fix, build_kernel_matrix
from .svm import SvmConfig, predict_labels, predict_scores, train_multiclass

METRICS = ("macro_pr_auc", "macro_f1")


class EvalError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    """Outer-loop settings. `repeats` defaults to the desk-scale 50; the
    full-scale protocol uses 1000 (available via CLI/config)."""

    outer_folds: int = 5
    repeats: int = 50
    class_set: tuple[str, ...] = ("AD", "MS", "NR")
    permutation_rounds: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_set", tuple(self.class_set))
        if self.outer_folds < 2:
            raise ValueError("outer_folds must be at least 2")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.permutation_rounds < 1:
            raise ValueError("permutation_rounds must be at least 1")


def stratified_kfold(labels, k: int, seed: int) -> np.ndarray:
    """Assign each sample to one of k folds, stratified by label.

    Per-class counts across folds differ by at most one. Classes smaller
    than k raise, suggesting a smaller k.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    assignment = np.full(labels.size, -1, dtype=np.int64)
    next_fold = 0
    for cls in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise ValueError(
                f"class {cls!r} has {idx.size} members, fewer than k={k}; use a smaller k"
            )
        idx = rng.permutation(idx)
        for pos, sample in enumerate(idx):
            assignment[sample] = (next_fold + pos) % k
        next_fold = (next_fold + idx.size) % k
    return assignment


def average_precision(y_binary, scores) -> float:
    """Area under the precision-recall curve (step-wise interpolation).

    AP = sum_n (R_n - R_{n-1}) P_n over the descending-score ranking; score
    ties are broken by stable original order.
    """
    y = np.asarray(y_binary, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores must be equal-length vectors")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValueError("average precision needs both a positive and a negative")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, y.size + 1)
    return float(precision[hits == 1].sum() / n_pos)


def macro_pr_auc(labels, score_matrix, class_set) -> float:
    """Unweighted mean one-vs-rest average precision across classes."""
    labels = np.asarray(labels)
    scores = np.asarray(score_matrix, dtype=np.float64)
    class_set = tuple(class_set)
    if scores.shape != (labels.size, len(class_set)):
        raise ValueError(
            f"score matrix shape {scores.shape}, expected ({labels.size}, {len(class_set)})"
        )
    aps = []
    for j, cls in enumerate(class_set):
        y = (labels == cls).astype(np.float64)
        if y.sum() == 0:
            raise ValueError(f"class {cls!r} missing from labels")
        aps.append(average_precision(y, scores[:, j]))
    return float(np.mean(aps))


def f1_macro(labels, predictions, class_set=None) -> float:
    """Unweighted mean per-class F1; a class with neither true nor predicted
    members contributes 0."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions must have equal length")
    if class_set is None:
        class_set = sorted(set(labels.tolist()) | set(predictions.tolist()))
    f1s = []
    for cls in class_set:
        tp = int(np.sum((labels == cls) & (predictions == cls)))
        fp = int(np.sum((labels != cls) & (predictions == cls)))
        fn = int(np.sum((labels == cls) & (predictions != cls)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


@dataclass(frozen=True)
class FoldRepeatRow:
    fold: int
    repeat: int
    macro_pr_auc: float
    macro_f1: float
    per_class_ap: tuple[float, ...]


@dataclass(frozen=True)
class BoxStats:
    """Box-plot statistics: median, quartiles, Tukey whiskers."""

    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float


def box_stats(values) -> BoxStats:
    x = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(x, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    return BoxStats(
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        whisker_lo=float(inside.min()),
        whisker_hi=float(inside.max()),
    )


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[FoldRepeatRow, ...]
    class_set: tuple[str, ...]
    seed: int
    config: dict = field(default_factory=dict)

    def metric_values(self, metric: str) -> np.ndarray:
        if metric == "macro_pr_auc":
            return np.array([r.macro_pr_auc for r in self.rows])
        if metric == "macro_f1":
            return np.array([r.macro_f1 for r in self.rows])
        for j, cls in enumerate(self.class_set):
            if metric == f"ap_{cls}":
                return np.array([r.per_class_ap[j] for r in self.rows])
        raise KeyError(metric)

    def metrics(self) -> tuple[str, ...]:
        return METRICS + tuple(f"ap_{c}" for c in self.class_set)

    def aggregates(self) -> dict[str, BoxStats]:
        return {m: box_stats(self.metric_values(m)) for m in self.metrics()}

    def to_report_csv(self) -> str:
        lines = ["fold,repeat,metric,value"]
        for row in self.rows:
            lines.append(f"{row.fold},{row.repeat},macro_pr_auc,{row.macro_pr_auc!r}")
            lines.append(f"{row.fold},{row.repeat},macro_f1,{row.macro_f1!r}")
            for cls, ap in zip(self.class_set, row.per_class_ap):
                lines.append(f"{row.fold},{row.repeat},ap_{cls},{ap!r}")
        return "\n".join(lines) + "\n"

    def to_summary_csv(self) -> str:
        lines = ["metric,median,q1,q3,whisker_lo,whisker_hi"]
        for m, s in self.aggregates().items():
            lines.append(
                f"{m},{s.median!r},{s.q1!r},{s.q3!r},{s.whisker_lo!r},{s.whisker_hi!r}"
            )
        return "\n".join(lines) + "\n"


def run_experiment(
    features,
    labels,
    selected,
    kernel_params: PabsKernelParams,
    svm_cfg: SvmConfig,
    eval_cfg: EvalConfig,
    use_fnc: bool = False,
    threads: int = 1,
) -> ExperimentReport:
    """Stratified outer CV with seeded repeats on a fixed component set.

    The full raw kernel is assembled once; per fold, the training block gets
    the configured spectrum fix while test-vs-train blocks pass through
    unchanged. Fully deterministic given the master seed in `eval_cfg`.
    """
    labels = np.asarray([str(x) for x in labels])
    class_set = eval_cfg.class_set
    extra = sorted(set(labels.tolist()) - set(class_set))
    if extra:
        raise ValueError(f"labels outside class_set: {extra}")
    raw_params = replace(kernel_params, spectrum_fix="none")
    kernel = build_kernel_matrix(features, selected, raw_params, use_fnc=use_fnc)
    folds = stratified_kfold(labels, eval_cfg.outer_folds, derive_seed(eval_cfg.seed, "outer-folds"))

    fold_blocks = []
    for f in range(eval_cfg.outer_folds):
        te = np.flatnonzero(folds == f)
        tr = np.flatnonzero(folds != f)
        k_tr = apply_spectrum_fix(kernel.values[np.ix_(tr, tr)], kernel_params)
        k_te = kernel.values[np.ix_(te, tr)]
        fold_blocks.append((tr, te, k_tr, k_te))

    def one_cell(cell):
        f, rep = cell
        tr, te, k_tr, k_te = fold_blocks[f]
        try:
            cfg = SvmConfig(
                C=svm_cfg.C,
                class_weighted=svm_cfg.class_weighted,
                smo_tol=svm_cfg.smo_tol,
                max_passes=svm_cfg.max_passes,
                seed=derive_seed(eval_cfg.seed, "repeat", rep, "fold", f),
            )
            model = train_multiclass(k_tr, labels[tr], class_set, cfg)
            scores = predict_scores(model, k_te)
            preds = np.asarray(predict_labels(model, k_te))
            te_labels = labels[te]
            aps = tuple(
                average_precision((te_labels == cls).astype(float), scores[:, j])
                for j, cls in enumerate(class_set)
            )
            return FoldRepeatRow(
                fold=f,
                repeat=rep,
                macro_pr_auc=float(np.mean(aps)),
                macro_f1=f1_macro(te_labels, preds, class_set),
                per_class_ap=aps,
            )
        except Exception as e:
            raise EvalError(f"fold {f}, repeat {rep}: {e}") from e

    cells = [(f, rep) for f in range(eval_cfg.outer_folds) for rep in range(eval_cfg.repeats)]
    rows = parallel_map(one_cell, cells, threads)
    return ExperimentReport(
        rows=tuple(rows),
        class_set=class_set,
        seed=eval_cfg.seed,
        config={
            "outer_folds": eval_cfg.outer_folds,
            "repeats": eval_cfg.repeats,
            "selected": [int(i) for i in selected],
            "use_fnc": bool(use_fnc),
        },
    )


@dataclass(frozen=True)
class PermutationBaseline:
    scores: tuple[float, ...]
    mean: float
    p95: float


def cross_validated_scores(
    features,
    labels,
    selected,
    kernel_params: PabsKernelParams,
    svm_cfg: SvmConfig,
    eval_cfg: EvalConfig,
    use_fnc: bool = False,
) -> np.ndarray:
    """One held-out score row per subject from a single outer CV pass."""
    labels = np.asarray([str(x) for x in labels])
    raw_params = replace(kernel_params, spectrum_fix="none")
    kernel = build_kernel_matrix(features, selected, raw_params, use_fnc=use_fnc)
    folds = stratified_kfold(
        labels, eval_cfg.outer_folds, derive_seed(eval_cfg.seed, "outer-folds")
    )
    scores = np.zeros((labels.size, len(eval_cfg.class_set)))
    for f in range(eval_cfg.outer_folds):
        te = np.flatnonzero(folds == f)
        tr = np.flatnonzero(folds != f)
        k_tr = apply_spectrum_fix(kernel.values[np.ix_(tr, tr)], kernel_params)
        k_te = kernel.values[np.ix_(te, tr)]
        cfg = replace(svm_cfg, seed=derive_seed(eval_cfg.seed, "cv-scores", f))
        model = train_multiclass(k_tr, labels[tr], eval_cfg.class_set, cfg)
        scores[te] = predict_scores(model, k_te)
    return scores


def permutation_baseline(
    features,
    labels,
    selected,
    kernel_params: PabsKernelParams,
    svm_cfg: SvmConfig,
    eval_cfg: EvalConfig,
    rounds: int | None = None,
    seed: int | None = None,
    use_fnc: bool = False,
    threads: int = 1,
) -> PermutationBaseline:
    """Distribution of macro PR-AUC when labels are randomly permuted.

    Each round shuffles the labels, runs one outer CV pass, and computes a
    single macro PR-AUC from the held-out scores of all subjects pooled
    across folds (per-fold AP on a class with one member is biased far
    above prevalence, so pooling is what makes this comparable to the
    asymptotic chance level). The mean and 95th percentile calibrate where
    chance sits for the experiment at hand.
    """
    labels = np.asarray([str(x) for x in labels])
    rounds = eval_cfg.permutation_rounds if rounds is None else rounds
    seed = eval_cfg.seed if seed is None else seed

    def one_round(r):
        rng = np.random.default_rng(derive_seed(seed, "permutation", r))
        permuted = labels[rng.permutation(labels.size)]
        cfg = replace(eval_cfg, repeats=1, seed=derive_seed(seed, "permutation-eval", r))
        scores = cross_validated_scores(
            features, permuted, selected, kernel_params, svm_cfg, cfg, use_fnc=use_fnc
        )
        return macro_pr_auc(permuted, scores, eval_cfg.class_set)

    scores = parallel_map(one_round, range(rounds), threads)
    arr = np.asarray(scores)
    return PermutationBaseline(
        scores=tuple(float(x) for x in scores),
        mean=float(arr.mean()),
        p95=float(np.percentile(arr, 95.0)),
    )


def chance_level(labels, class_set) -> float:
    """Mean class prevalence: the asymptotic chance level of macro PR-AUC."""
    labels = np.asarray(labels)
    return float(np.mean([(labels == c).mean() for c in class_set]))
