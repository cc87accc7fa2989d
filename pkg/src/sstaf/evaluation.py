"""Subject-wise splits, classification metrics and the cross-validation driver."""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dsp import apply_standardize, fit_channel_stats
from .ingest.store import EpochSet
from .model import ModelConfig, SstafModel
from .stft import StftConfig, stft_power_batch
from .tensor import ConfigError
from .train import TrainConfig, predict_logits, train_run

log = logging.getLogger(__name__)


LEAKY_SCHEME = "kfold-epochs"


class LeakageError(AssertionError):
    """Train and test folds share an epoch identifier or subject."""


@dataclass(frozen=True)
class Fold:
    train: tuple[int, ...]
    test: tuple[int, ...]


@dataclass
class SplitPlan:
    scheme: str
    folds: list[Fold]
    seed: int = 0

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "seed": self.seed,
                "folds": [{"train": list(f.train), "test": list(f.test)} for f in self.folds]}

    @classmethod
    def from_dict(cls, d: dict) -> SplitPlan:
        return cls(d["scheme"], [Fold(tuple(f["train"]), tuple(f["test"])) for f in d["folds"]], d.get("seed", 0))


def make_kfold(subjects: Sequence[int], k: int, seed: int = 0) -> SplitPlan:
    """Shuffle subjects and cut them into ``k`` near-equal test groups.

    Folds are listed by their smallest test subject so that ``k == n``
    reproduces the LOSO plan exactly.
    """
    subs = sorted(set(int(s) for s in subjects))
    if k < 2:
        raise ConfigError(f"k-fold needs k >= 2, got {k}")
    if k > len(subs):
        raise ConfigError(f"k={k} exceeds the {len(subs)} available subjects")
    perm = np.random.default_rng(seed).permutation(subs)
    groups = [sorted(int(s) for s in g) for g in np.array_split(perm, k)]
    groups.sort(key=lambda g: g[0])
    folds = [Fold(tuple(s for s in subs if s not in g), tuple(g)) for g in groups]
    return SplitPlan("kfold", folds, seed)


def make_loso(subjects: Sequence[int]) -> SplitPlan:
    subs = sorted(set(int(s) for s in subjects))
    if len(subs) < 2:
        raise ConfigError("leave-one-subject-out needs at least 2 subjects")
    return SplitPlan("loso", [Fold(tuple(s for s in subs if s != t), (t,)) for t in subs])


def make_epoch_kfold(n_epochs: int, k: int, seed: int = 0) -> SplitPlan:
    """Epoch-level k-fold that ignores subjects (leaky; for comparison only).

    Fold members are epoch indices rather than subject ids.
    """
    if k < 2 or k > n_epochs:
        raise ConfigError(f"epoch k-fold needs 2 <= k <= {n_epochs}, got {k}")
    perm = np.random.default_rng(seed).permutation(n_epochs)
    groups = [np.sort(g) for g in np.array_split(perm, k)]
    folds = []
    for g in groups:
        mask = np.ones(n_epochs, dtype=bool)
        mask[g] = False
        folds.append(Fold(tuple(np.flatnonzero(mask).tolist()), tuple(g.tolist())))
    return SplitPlan(LEAKY_SCHEME, folds, seed)


def check_no_leakage(eps: EpochSet, train_idx, test_idx, subjects: bool = True) -> None:
    """Raise if train and test share an epoch identifier or (with ``subjects``) a subject."""
    train_keys = set(eps.keys(train_idx))
    test_keys = set(eps.keys(test_idx))
    if train_keys & test_keys:
        raise LeakageError(f"{len(train_keys & test_keys)} epochs appear in both train and test")
    if not subjects:
        return
    shared = set(eps.subjects[train_idx].tolist()) & set(eps.subjects[test_idx].tolist())
    if shared:
        raise LeakageError(f"subjects {sorted(shared)} appear in both train and test")


# -- metrics ---------------------------------------------------------------

def confusion_matrix(preds, targets, k: int) -> np.ndarray:
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(targets, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return cm


def accuracy_f1(preds, targets, k: int) -> tuple[float, float, np.ndarray]:
    """Accuracy, macro F1 (0 for classes with P + R == 0) and the confusion matrix."""
    preds = np.asarray(preds, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if preds.shape != targets.shape:
        raise ValueError(f"{len(preds)} predictions for {len(targets)} targets")
    for arr in (preds, targets):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
    cm = confusion_matrix(preds, targets, k)
    acc = float(np.trace(cm) / cm.sum()) if cm.sum() else 0.0
    return acc, float(np.mean(_per_class_f1(cm))), cm


def _precision_recall(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    return precision, recall


def _per_class_f1(cm: np.ndarray) -> np.ndarray:
    p, r = _precision_recall(cm)
    denom = p + r
    return np.divide(2 * p * r, denom, out=np.zeros_like(p), where=denom > 0)


def binary_auc(scores, positives) -> float:
    """ROC AUC via the Mann-Whitney rank statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)  # average ranks, always multiples of 1/2
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_ovr(scores, targets) -> tuple[float, list[int]]:
    """Macro one-vs-rest AUC over classes with both positives and negatives.

    Returns the macro AUC and the list of skipped classes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    aucs, skipped = [], []
    for c in range(scores.shape[1]):
        pos = targets == c
        if pos.all() or not pos.any():
            skipped.append(c)
            continue
        aucs.append(binary_auc(scores[:, c], pos))
    return (float(np.mean(aucs)) if aucs else float("nan")), skipped


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    micro_f1: float
    macro_auc: float
    micro_auc: float
    precision: list[float]
    recall: list[float]
    confusion: list[list[int]]
    auc_skipped_classes: list[int] = field(default_factory=list)
    folds: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    label: str = ""

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def compute_metrics(logits: np.ndarray, targets, k: int) -> MetricsReport:
    targets = np.asarray(targets, dtype=np.int64)
    probs = softmax_np(np.asarray(logits, dtype=np.float64))
    preds = probs.argmax(axis=1)
    acc, f1, cm = accuracy_f1(preds, targets, k)
    p, r = _precision_recall(cm)
    macro_auc, skipped = auc_ovr(probs, targets)
    onehot = np.eye(k, dtype=bool)[targets]
    try:
        micro_auc = binary_auc(probs.ravel(), onehot.ravel())
    except ValueError:
        micro_auc = float("nan")
    return MetricsReport(acc, f1, acc, macro_auc, micro_auc, p.tolist(), r.tolist(), cm.tolist(), skipped)


# -- cross-validation --------------------------------------------------------

def _stats_fingerprint(stats) -> str:
    return hashlib.sha256(np.concatenate([stats.mean, stats.std]).tobytes()).hexdigest()[:16]


def featurize(eps: EpochSet, stats, stft_cfg: StftConfig) -> np.ndarray:
    return stft_power_batch(apply_standardize(eps.data, stats), stft_cfg)


def run_fold(eps: EpochSet, fold: Fold, fold_index: int, train_cfg: TrainConfig,
             model_cfg: ModelConfig, stft_cfg: StftConfig, by_epoch: bool = False) -> dict:
    if by_epoch:
        train_idx, test_idx = np.asarray(fold.train, dtype=np.int64), np.asarray(fold.test, dtype=np.int64)
    else:
        train_idx = np.flatnonzero(eps.subject_mask(fold.train))
        test_idx = np.flatnonzero(eps.subject_mask(fold.test))
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise ValueError(f"fold {fold_index} has an empty train or test set")
    check_no_leakage(eps, train_idx, test_idx, subjects=not by_epoch)

    tr, te = eps.select(train_idx), eps.select(test_idx)
    stats = fit_channel_stats(tr.data)
    x_tr, x_te = featurize(tr, stats, stft_cfg), featurize(te, stats, stft_cfg)
    mcfg = replace(model_cfg, channels=eps.n_channels, f_bins=x_tr.shape[2], t_frames=x_tr.shape[3],
                   n_classes=eps.n_classes, seed=model_cfg.seed * 1000 + fold_index)
    model = SstafModel(mcfg)
    tcfg = replace(train_cfg, seed=train_cfg.seed * 1000 + fold_index)
    result = train_run(model, (x_tr, tr.labels), (x_te, te.labels), tcfg)
    logits = predict_logits(model, x_te)
    m = compute_metrics(logits, te.labels, eps.n_classes)
    weights = model.attention_weights(x_te)
    return {
        "fold": fold_index,
        "train_subjects": sorted(set(eps.subjects[train_idx].tolist())),
        "test_subjects": sorted(set(eps.subjects[test_idx].tolist())),
        "n_train": int(len(train_idx)), "n_test": int(len(test_idx)),
        "accuracy": m.accuracy, "macro_f1": m.macro_f1, "macro_auc": m.macro_auc,
        "micro_auc": m.micro_auc, "confusion": m.confusion, "history": result.history,
        "stats_fingerprint": _stats_fingerprint(stats),
        "spectral_weights_mean": weights["spectral"].mean(axis=0).tolist(),
        "spatial_weights_mean": weights["spatial"].mean(axis=0).tolist(),
        "_logits": logits, "_targets": te.labels,
    }


def _workers(requested: int | None) -> int:
    cap = int(os.environ.get("SSTAF_THREADS", "0") or 0)
    n = requested or 1
    return max(1, min(n, cap) if cap > 0 else n)


def run_cv(eps: EpochSet, plan: SplitPlan, train_cfg: TrainConfig, model_cfg: ModelConfig,
           stft_cfg: StftConfig = StftConfig(), workers: int | None = None, label: str = "") -> MetricsReport:
    """Train and test a fresh model per fold, standardising with fold-train statistics only."""
    by_epoch = plan.scheme == LEAKY_SCHEME
    if by_epoch:
        if any(i < 0 or i >= len(eps) for f in plan.folds for i in f.train + f.test):
            raise ConfigError("epoch-level plan references epochs outside the store")
    else:
        missing = {s for f in plan.folds for s in f.train + f.test} - set(eps.subject_ids())
        if missing:
            raise ConfigError(f"plan references subjects absent from the store: {sorted(missing)}")
    n = _workers(workers)
    args = [(eps, fold, i, train_cfg, model_cfg, stft_cfg, by_epoch) for i, fold in enumerate(plan.folds)]
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            folds = list(pool.map(run_fold, *zip(*args)))
    else:
        folds = [run_fold(*a) for a in args]

    all_logits = np.concatenate([f.pop("_logits") for f in folds])
    all_targets = np.concatenate([f.pop("_targets") for f in folds])
    pooled = compute_metrics(all_logits, all_targets, eps.n_classes)
    agg = {}
    for key in ("accuracy", "macro_f1", "macro_auc"):
        vals = np.array([f[key] for f in folds], dtype=np.float64)
        agg[key] = {"mean": float(np.nanmean(vals)), "std": float(np.nanstd(vals))}
    pooled.accuracy = agg["accuracy"]["mean"]
    pooled.macro_f1 = agg["macro_f1"]["mean"]
    pooled.folds = folds
    pooled.aggregate = {**agg, "pooled_accuracy": float(np.mean(all_logits.argmax(1) == all_targets)),
                        "scheme": plan.scheme, "n_folds": len(folds), "leaky": by_epoch}
    pooled.label = label
    return pooled
