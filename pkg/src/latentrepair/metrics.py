"""Evaluation: ROD, AUC, a naive Bayes reference classifier, latent/sensitive checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .ci_tests import pearson_table, chi2_sf
from .dataset import Dataset, RoleSpec, align_codes, factorize_rows, project
from .errors import DataError, UndefinedMetricError
from .stats import nmi_codes

DEFAULT_ROD_SMOOTHING = 0.5


def _as_matrix(cols) -> np.ndarray:
    if cols is None:
        return None
    mat = np.asarray(cols)
    if mat.ndim == 1:
        mat = mat[:, None]
    return mat.astype(np.int64)


def _group_ids(mat: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    if mat is None or mat.shape[1] == 0:
        return np.zeros(n, dtype=np.int64), 1
    sizes = [int(mat[:, j].max()) + 1 for j in range(mat.shape[1])]
    ids, uniq = factorize_rows(mat, sizes)
    return ids, len(uniq)


def rod(preds, sensitive_cols, admissible_cols=None,
        smoothing: float = DEFAULT_ROD_SMOOTHING) -> float:
    """|ln ROD|: the largest stratum-averaged conditional odds ratio over sensitive pairs.

    ``sensitive_cols`` / ``admissible_cols`` are code vectors or ``(n, c)``
    code matrices.  Each P(pred=1 | s, a) is estimated as
    ``(k + smoothing) / (m + 2 smoothing)``.  Strata where either group of a
    pair is absent are skipped.
    """
    preds = np.asarray(preds).astype(np.int64)
    n = len(preds)
    if n == 0:
        raise UndefinedMetricError("undefined ROD: no records")
    if not np.all((preds == 0) | (preds == 1)):
        raise DataError("predictions must be binary 0/1")
    if smoothing < 0:
        raise DataError("smoothing must be non-negative")
    s_ids, n_s = _group_ids(_as_matrix(sensitive_cols), n)
    if n_s < 2:
        raise UndefinedMetricError("undefined ROD: need at least two sensitive groups")
    a_ids, n_a = _group_ids(_as_matrix(admissible_cols), n)
    cell = a_ids * n_s + s_ids
    total = np.bincount(cell, minlength=n_a * n_s).reshape(n_a, n_s).astype(np.float64)
    pos = np.bincount(cell, weights=preds, minlength=n_a * n_s).reshape(n_a, n_s)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = (pos + smoothing) / (total + 2 * smoothing)
    best = None
    for s0, s1 in permutations(range(n_s), 2):
        ok = (total[:, s0] > 0) & (total[:, s1] > 0)
        if not ok.any():
            continue
        p0, p1 = p[ok, s0], p[ok, s1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = (p0 * (1 - p1)) / ((1 - p0) * p1)
        if not np.all(np.isfinite(ratio)) or np.any(ratio <= 0):
            raise UndefinedMetricError("undefined ROD: a stratum has a degenerate rate; use smoothing > 0")
        value = float(np.mean(ratio))
        best = value if best is None else max(best, value)
    if best is None:
        raise UndefinedMetricError("undefined ROD: no admissible stratum contains two sensitive groups")
    return abs(math.log(best))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape:
        raise DataError("scores and labels differ in length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos + n_neg != len(labels):
        raise DataError("labels must be binary 0/1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    # average 1-based rank over each run of tied scores
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    r_pos = float(ranks[labels == 1].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


class NaiveBayes:
    """Categorical naive Bayes with additive smoothing on integer codes.

    Codes of -1 (unseen at training time) contribute a uniform likelihood.
    """

    def __init__(self, alpha: float = 1.0):
        if alpha <= 0:
            raise DataError("alpha must be positive")
        self.alpha = alpha

    def fit(self, X: np.ndarray, y: np.ndarray, sizes, n_classes: int = 2):
        X = np.asarray(X, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = n_classes
        counts = np.bincount(y, minlength=n_classes).astype(np.float64)
        self.log_prior = np.log((counts + self.alpha) / (counts.sum() + self.alpha * n_classes))
        self.log_lik = []
        for j, k in enumerate(sizes):
            tab = np.bincount(y * k + X[:, j], minlength=n_classes * k).reshape(n_classes, k)
            tab = tab.astype(np.float64) + self.alpha
            self.log_lik.append(np.log(tab / tab.sum(axis=1, keepdims=True)))
        return self

    def log_posterior(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.int64)
        out = np.tile(self.log_prior, (len(X), 1))
        for j, table in enumerate(self.log_lik):
            col = X[:, j]
            seen = col >= 0
            out[seen] += table[:, col[seen]].T
            out[~seen] += -math.log(table.shape[1])
        out -= out.max(axis=1, keepdims=True)
        out -= np.log(np.exp(out).sum(axis=1, keepdims=True))
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.log_posterior(X))


def _require_binary(ds: Dataset, label: str) -> None:
    if ds.size(label) != 2:
        raise DataError(f"label {label!r} must be binary for evaluation, has {ds.size(label)} values")


def train_eval_reference_classifier(train: Dataset, test: Dataset, roles: RoleSpec, alpha: float = 1.0):
    """Fit naive Bayes on ``train`` and score ``test``.

    Returns ``(auc, predictions, scores)``; predictions threshold the
    positive-class probability at 0.5.  The positive class is the label's
    second value in sorted order.
    """
    y = roles.label
    feats = [a for a in train.names if a != y]
    missing = [a for a in feats + [y] if a not in test]
    if missing:
        raise DataError(f"test data lacks attribute(s) {missing}")
    _require_binary(train, y)
    ytest = align_codes(train, test, [y])[:, 0]
    if np.any(ytest < 0):
        raise DataError("test labels contain values unseen in training")
    model = NaiveBayes(alpha).fit(train.matrix(feats), train.column(y), train.sizes(feats), 2)
    scores = model.predict_proba(align_codes(train, test, feats))[:, 1]
    preds = (scores >= 0.5).astype(np.int64)
    return auc(scores, ytest), preds, scores


def latent_sensitive_diagnostics(latent, sensitive_cols, names=None) -> dict:
    """NMI and chi-square p-value of L against each sensitive attribute and their joint value."""
    latent = np.asarray(latent, dtype=np.int64)
    mat = _as_matrix(sensitive_cols)
    if mat.shape[0] != len(latent):
        raise DataError("latent column and sensitive columns differ in length")
    names = list(names) if names is not None else [f"s{j}" for j in range(mat.shape[1])]
    groups = {nm: mat[:, j] for j, nm in enumerate(names)}
    if mat.shape[1] > 1:
        groups["joint"] = _group_ids(mat, len(latent))[0]
    nmi_out, p_out = {}, {}
    kl = int(latent.max()) + 1 if len(latent) else 1
    for nm, col in groups.items():
        nmi_out[nm] = nmi_codes(latent, col)
        ks = int(col.max()) + 1
        table = np.bincount(latent * ks + col, minlength=kl * ks).reshape(kl, ks)
        stat, dof = pearson_table(table)
        p_out[nm] = chi2_sf(stat, dof)
    return {"nmi": nmi_out, "chi2_p": p_out}


@dataclass
class EvalReport:
    rod_abs_log: float
    nmi_by_sensitive: dict[str, float] = field(default_factory=dict)
    chi2_p_by_sensitive: dict[str, float] = field(default_factory=dict)
    auc: float = float("nan")
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.rod_abs_log >= 0:
            raise AssertionError("rod_abs_log must be non-negative")
        for v in list(self.chi2_p_by_sensitive.values()) + [self.auc]:
            if not (math.isnan(v) or 0.0 <= v <= 1.0):
                raise AssertionError("probabilities must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"rod_abs_log": self.rod_abs_log, "nmi_by_sensitive": dict(self.nmi_by_sensitive),
                "chi2_p_by_sensitive": dict(self.chi2_p_by_sensitive), "auc": self.auc,
                "metadata": dict(self.metadata)}


def evaluate(train: Dataset, test: Dataset, roles: RoleSpec, rod_smoothing: float = DEFAULT_ROD_SMOOTHING,
             latent_column: str | None = None) -> EvalReport:
    """Train on ``train``, report AUC and ROD of the test predictions.

    ROD strata are the test set's sensitive and admissible values.  When
    ``latent_column`` names a column of ``train``, latent/sensitive
    diagnostics are computed on ``train`` and the column is left out of the
    classifier.
    """
    nmi_by, p_by = {}, {}
    if latent_column is not None:
        if latent_column not in train:
            raise DataError(f"latent column {latent_column!r} not in training data")
        diag = latent_sensitive_diagnostics(train.column(latent_column),
                                            train.matrix(list(roles.sensitive)), roles.sensitive)
        nmi_by, p_by = diag["nmi"], diag["chi2_p"]
        keep = [a for a in train.names if a != latent_column]
        train = project(train, keep)
    score, preds, _ = train_eval_reference_classifier(train, test, roles)
    value = rod(preds, test.matrix(list(roles.sensitive)), test.matrix(list(roles.admissible)),
                rod_smoothing)
    meta = {"n_train": train.n_records, "n_test": test.n_records, "rod_smoothing": rod_smoothing}
    return EvalReport(value, nmi_by, p_by, score, meta)


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    if folds < 2 or folds > n:
        raise DataError(f"folds must lie in [2, {n}]")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cross_validate(ds: Dataset, roles: RoleSpec, folds: int = 5, seed: int = 0,
                   rod_smoothing: float = DEFAULT_ROD_SMOOTHING) -> EvalReport:
    """Seeded k-fold AUC and ROD, averaged over folds."""
    parts = kfold_indices(ds.n_records, folds, seed)
    aucs, rods = [], []
    for i, test_idx in enumerate(parts):
        train_idx = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != i]))
        rep = evaluate(ds.take(train_idx), ds.take(test_idx), roles, rod_smoothing)
        aucs.append(rep.auc)
        rods.append(rep.rod_abs_log)
    meta = {"folds": folds, "seed": seed, "fold_auc": aucs, "fold_rod_abs_log": rods,
            "n_records": ds.n_records, "rod_smoothing": rod_smoothing}
    return EvalReport(float(np.mean(rods)), {}, {}, float(np.mean(aucs)), meta)
