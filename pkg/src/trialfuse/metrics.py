"""Evaluation metrics and post-hoc temperature calibration."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_EPS = 1e-12


class MetricError(Exception):
    pass


class DegenerateLabels(MetricError):
    def __init__(self, detail: str = "labels contain a single class"):
        super().__init__(detail)


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.shape != y.shape:
        raise MetricError(f"shape mismatch: {s.shape} vs {y.shape}")
    if s.size == 0:
        raise MetricError("empty inputs")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0/1")
    return s, y


def auc_roc(scores, labels) -> float:
    """Mann-Whitney U formulation; tied scores contribute 1/2."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels()
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # mid-rank, 1-based
        i = j + 1
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """Mean of precision at each positive's rank, scores descending; a stable
    sort keeps ties in input order."""
    s, y = _as_arrays(scores, labels)
    if y.sum() == 0:
        raise DegenerateLabels("no positive labels")
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    cum_pos = np.cumsum(y_sorted)
    ranks = np.arange(1, y.size + 1)
    precision = cum_pos / ranks
    return float(precision[y_sorted == 1].mean())


def f1_at(scores, labels, threshold: float = 0.5) -> float:
    """F1 of the thresholded prediction; 0.0 when nothing is predicted
    positive or nothing is positive."""
    s, y = _as_arrays(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def tune_threshold(scores, labels) -> float:
    """Threshold maximizing F1 over the candidate set of observed scores."""
    s, y = _as_arrays(scores, labels)
    best_t, best_f1 = 0.5, -1.0
    for t in np.unique(s):
        f1 = f1_at(s, y, float(t))
        if f1 > best_f1:
            best_t, best_f1 = float(t), f1
    return best_t


def ece(scores, labels, n_bins: int = 10) -> float:
    """Expected calibration error with equal-width probability bins; empty
    bins contribute zero."""
    s, y = _as_arrays(scores, labels)
    if np.any((s < 0) | (s > 1)):
        raise MetricError("scores must be probabilities in [0, 1]")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.digitize(s, edges[1:-1]), 0, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        members = idx == b
        count = int(members.sum())
        if count == 0:
            continue
        conf = float(s[members].mean())
        acc = float(y[members].mean())
        total += (count / s.size) * abs(acc - conf)
    return total


def nll(scores, labels) -> float:
    s, y = _as_arrays(scores, labels)
    p = np.clip(s, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1.0 - p)))


def logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    return np.log(p / (1.0 - p))


def apply_temperature(scores, T: float) -> np.ndarray:
    """Rescale decision logits by 1/T and re-apply the sigmoid."""
    if T <= 0:
        raise MetricError("temperature must be positive")
    return 1.0 / (1.0 + np.exp(-logit(scores) / T))


def fit_temperature(scores, labels, lo: float = 0.05, hi: float = 20.0,
                    tol: float = 1e-4) -> float:
    """Single-parameter temperature by golden-section search on validation
    NLL. Falls back to T = 1 when no candidate beats the identity."""
    s, y = _as_arrays(scores, labels)
    if y.sum() == 0 or y.sum() == y.size:
        raise DegenerateLabels()

    def objective(T: float) -> float:
        return nll(apply_temperature(s, T), y)

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
    best = (a + b) / 2.0
    if objective(best) > objective(1.0):
        return 1.0
    return best


@dataclass
class EvalReport:
    auc: float
    ap: float
    f1: float
    ece: float
    nll: float
    n: int
    threshold: float = 0.5
    temperature: float = 1.0
    per_phase: dict[str, "EvalReport"] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"auc": self.auc, "ap": self.ap, "f1": self.f1,
               "ece": self.ece, "nll": self.nll, "n": self.n,
               "threshold": self.threshold, "temperature": self.temperature}
        if self.per_phase:
            out["per_phase"] = {k: v.to_json() for k, v in sorted(self.per_phase.items())}
        return out


def evaluate(scores, labels, threshold: float = 0.5,
             temperature: float = 1.0,
             phases: list[str] | None = None) -> EvalReport:
    """Full metric suite, optionally with calibrated probabilities and
    per-phase sub-reports."""
    s, y = _as_arrays(scores, labels)
    p = apply_temperature(s, temperature) if temperature != 1.0 else s
    report = EvalReport(
        auc=auc_roc(p, y), ap=average_precision(p, y),
        f1=f1_at(p, y, threshold), ece=ece(p, y), nll=nll(p, y),
        n=int(y.size), threshold=threshold, temperature=temperature)
    if phases is not None:
        phases = list(phases)
        if len(phases) != y.size:
            raise MetricError("phase list length mismatch")
        for phase in sorted(set(phases)):
            members = np.array([ph == phase for ph in phases])
            sub_y = y[members]
            if sub_y.sum() in (0, sub_y.size):
                continue  # degenerate stratum, skipped from breakdown
            report.per_phase[phase] = evaluate(p[members], sub_y, threshold)
    return report
