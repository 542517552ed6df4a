"""Detection metrics for language identification trials.

Trials are one-vs-rest: for target language t every utterance of t is a
target trial and every other utterance a non-target trial, scored by
its column-t log-likelihood. P_miss/P_FA come either from a
per-language minimum-cost threshold sweep or from a fixed threshold;
EER is read off the exact ROC staircase with linear interpolation at
the crossing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lidkit.errors import LidKitError, ShapeError

DEFAULT_P_TARGET = 0.5


@dataclass
class TrialScores:
    """Per-utterance per-language scores plus ground truth."""

    utterance_ids: list[str]
    languages: list[str]
    true_labels: list[str]
    scores: np.ndarray  # (num_utterances, num_languages)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        u, n = len(self.utterance_ids), len(self.languages)
        if self.scores.shape != (u, n):
            raise ShapeError(f"scores shape {self.scores.shape} != ({u}, {n})")
        if not np.isfinite(self.scores).all():
            raise LidKitError("non-finite trial scores", code="non-finite-scores")
        unknown = set(self.true_labels) - set(self.languages)
        if unknown:
            raise LidKitError(f"labels not in inventory: {sorted(unknown)}",
                              code="unknown-label")

    @property
    def true_index(self) -> np.ndarray:
        lookup = {lang: i for i, lang in enumerate(self.languages)}
        return np.array([lookup[l] for l in self.true_labels], dtype=np.intp)


@dataclass
class DetectionCounts:
    """Miss rate per target language and false-alarm rate per ordered
    (target, non-target) pair; the diagonal of p_fa is unused."""

    languages: list[str]
    p_miss: np.ndarray  # (N,)
    p_fa: np.ndarray  # (N, N)
    p_target: float = DEFAULT_P_TARGET
    thresholds: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.languages)
        if n < 2:
            raise LidKitError("need at least 2 languages", code="too-few-languages")
        self.p_miss = np.asarray(self.p_miss, dtype=np.float64)
        self.p_fa = np.asarray(self.p_fa, dtype=np.float64)
        if self.p_miss.shape != (n,) or self.p_fa.shape != (n, n):
            raise ShapeError("detection count shapes inconsistent with languages")


def pairwise_cost(counts: DetectionCounts, target: int, nontarget: int) -> float:
    """P_target*P_miss(t) + (1-P_target)*P_FA(t, n) for one ordered pair."""
    if target == nontarget:
        raise LidKitError("target and non-target language must differ",
                          code="bad-language-pair")
    return float(counts.p_target * counts.p_miss[target]
                 + (1.0 - counts.p_target) * counts.p_fa[target, nontarget])


def cavg(counts: DetectionCounts) -> float:
    """Average pair-wise cost over all N*(N-1) language pairs."""
    n = len(counts.languages)
    off_diag = counts.p_fa.sum() - np.trace(counts.p_fa)
    total = (counts.p_target * counts.p_miss.sum()
             + (1.0 - counts.p_target) * off_diag / (n - 1))
    return float(total / n)


def _miss_fa_at(column: np.ndarray, is_target: np.ndarray,
                true_index: np.ndarray, threshold: float, n: int, t: int):
    """Miss rate and per-nontarget-language FA rates at one threshold
    (accept when score >= threshold)."""
    accept = column >= threshold
    p_miss = float(np.mean(~accept[is_target]))
    p_fa = np.zeros(n)
    for other in range(n):
        if other == t:
            continue
        rows = true_index == other
        p_fa[other] = float(np.mean(accept[rows])) if rows.any() else 0.0
    return p_miss, p_fa


def decisions_from_scores(trials: TrialScores, policy: str = "min-cavg",
                          p_target: float = DEFAULT_P_TARGET,
                          fixed_threshold: float = 0.0,
                          log_odds_normalize: bool = True) -> DetectionCounts:
    """Turn a score matrix into detection counts.

    policy "min-cavg": per target language, sweep every candidate
    threshold and keep the one minimising that language's share of the
    average cost. policy "fixed": apply ``fixed_threshold`` everywhere,
    optionally after renormalising each score to the log-odds of its
    language against the rest.
    """
    n = len(trials.languages)
    if n < 2:
        raise LidKitError("need at least 2 languages", code="too-few-languages")
    true_index = trials.true_index
    for t in range(n):
        if not (true_index == t).any():
            raise LidKitError(f"no trials for language {trials.languages[t]}",
                              code="empty-language")

    scores = trials.scores
    if policy == "fixed" and log_odds_normalize:
        scores = log_odds(scores)

    p_miss = np.zeros(n)
    p_fa = np.zeros((n, n))
    thresholds = np.zeros(n)
    for t in range(n):
        column = scores[:, t]
        is_target = true_index == t
        if policy == "fixed":
            thresholds[t] = fixed_threshold
        elif policy == "min-cavg":
            candidates = np.unique(column)
            candidates = np.append(candidates, candidates[-1] + 1.0)
            best_cost, best_threshold = np.inf, candidates[0]
            for threshold in candidates:
                miss, fa = _miss_fa_at(column, is_target, true_index, threshold, n, t)
                cost = p_target * miss + (1.0 - p_target) * fa.sum() / (n - 1)
                if cost < best_cost:
                    best_cost, best_threshold = cost, threshold
            thresholds[t] = best_threshold
        else:
            raise LidKitError(f"unknown threshold policy {policy!r}",
                              code="bad-threshold-policy")
        p_miss[t], p_fa[t] = _miss_fa_at(column, is_target, true_index,
                                         thresholds[t], n, t)
    return DetectionCounts(languages=list(trials.languages), p_miss=p_miss,
                           p_fa=p_fa, p_target=p_target, thresholds=thresholds)


def log_odds(scores: np.ndarray) -> np.ndarray:
    """Per row: score of language t minus log-mean-exp of the others."""
    n = scores.shape[1]
    out = np.empty_like(scores)
    for t in range(n):
        rest = np.delete(scores, t, axis=1)
        peak = rest.max(axis=1, keepdims=True)
        lme = peak[:, 0] + np.log(np.exp(rest - peak).mean(axis=1))
        out[:, t] = scores[:, t] - lme
    return out


def roc_points(target_scores: np.ndarray,
               nontarget_scores: np.ndarray) -> np.ndarray:
    """Exact ROC staircase vertices (P_FA, P_miss), threshold descending
    from accept-none to accept-all. Ties are accepted together."""
    scores = np.concatenate([target_scores, nontarget_scores])
    is_target = np.concatenate([np.ones(len(target_scores), dtype=bool),
                                np.zeros(len(nontarget_scores), dtype=bool)])
    order = np.argsort(-scores, kind="stable")
    scores, is_target = scores[order], is_target[order]

    points = [(0.0, 1.0)]
    accepted_targets = accepted_nontargets = 0
    idx = 0
    total = len(scores)
    while idx < total:
        j = idx
        while j < total and scores[j] == scores[idx]:
            j += 1
        accepted_targets += int(is_target[idx:j].sum())
        accepted_nontargets += (j - idx) - int(is_target[idx:j].sum())
        points.append((accepted_nontargets / max(len(nontarget_scores), 1),
                       1.0 - accepted_targets / max(len(target_scores), 1)))
        idx = j
    return np.asarray(points)


def eer(target_scores, nontarget_scores) -> float:
    """Rate where miss equals false alarm, linearly interpolated between
    the bracketing ROC vertices."""
    target_scores = np.asarray(target_scores, dtype=np.float64)
    nontarget_scores = np.asarray(nontarget_scores, dtype=np.float64)
    if len(target_scores) == 0 or len(nontarget_scores) == 0:
        raise LidKitError("need both target and non-target scores",
                          code="empty-score-list")

    points = roc_points(target_scores, nontarget_scores)
    gap = points[:, 1] - points[:, 0]  # P_miss - P_FA; starts at +1, ends at -1
    k = int(np.flatnonzero(gap <= 0)[0])
    if gap[k] == 0:
        return float(points[k, 0])
    x1, y1 = points[k - 1]
    x2, y2 = points[k]
    d1, d2 = y1 - x1, y2 - x2
    t = d1 / (d1 - d2)
    return float((1.0 - t) * y1 + t * y2)


def one_vs_rest_scores(trials: TrialScores, t: int) -> tuple[np.ndarray, np.ndarray]:
    mask = trials.true_index == t
    column = trials.scores[:, t]
    return column[mask], column[~mask]


def pooled_eer(trials: TrialScores) -> float:
    """EER over the union of all one-vs-rest trials."""
    targets, nontargets = [], []
    for t in range(len(trials.languages)):
        ts, ns = one_vs_rest_scores(trials, t)
        targets.append(ts)
        nontargets.append(ns)
    return eer(np.concatenate(targets), np.concatenate(nontargets))


def per_language_eer(trials: TrialScores) -> dict[str, float]:
    return {lang: eer(*one_vs_rest_scores(trials, t))
            for t, lang in enumerate(trials.languages)}


def accuracy(trials: TrialScores) -> float:
    predictions = trials.scores.argmax(axis=1)
    return float(np.mean(predictions == trials.true_index))


def evaluate_trials(trials: TrialScores,
                    p_target: float = DEFAULT_P_TARGET) -> dict:
    """Full metric report for one trial set: C_avg under both threshold
    policies, pooled and per-language EER, and identification accuracy."""
    sweep = decisions_from_scores(trials, policy="min-cavg", p_target=p_target)
    fixed = decisions_from_scores(trials, policy="fixed", p_target=p_target,
                                  fixed_threshold=0.0, log_odds_normalize=True)
    by_language = per_language_eer(trials)
    return {
        "num_trials": len(trials.utterance_ids),
        "num_languages": len(trials.languages),
        "p_target": p_target,
        "accuracy": accuracy(trials),
        "cavg_min_sweep": cavg(sweep),
        "cavg_fixed_log_odds": cavg(fixed),
        "eer_pooled": pooled_eer(trials),
        "eer_mean_per_language": float(np.mean(list(by_language.values()))),
        "eer_per_language": by_language,
        "threshold_policies": ["min-cavg", "fixed-log-odds-0"],
    }
