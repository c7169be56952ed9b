"""Ranking evaluation for the two tasks: click prediction and preference prediction.

Click prediction ranks every item the user has not interacted with in
training and asks whether their future (held-out) clicks surface in the
top K. Preference prediction ranks only the user's rated held-out items and
asks whether the top-rated ones come first; it probes whether a score orders
by true preference rather than by exposure.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import InteractionLog


@dataclass(frozen=True)
class RankedList:
    """Top-ranked items for one user, scores descending, ids break ties."""

    user: int
    items: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        if self.items.shape != self.scores.shape:
            raise ValueError("items and scores lengths differ")


@dataclass
class EvalReport:
    method: str
    mode: str
    k_click: int
    k_pref: int
    cp_rec: float | None = None
    cp_pre: float | None = None
    cp_ndcg: float | None = None
    pp_rec: float | None = None
    pp_pre: float | None = None
    n_users_click: int = 0
    n_users_pref: int = 0
    n_skipped_click: int = 0
    n_skipped_pref: int = 0
    per_user: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        if not self.per_user:
            out.pop("per_user")
        return out


def rank_topk(scores: np.ndarray, user: int, k: int, exclusions=()) -> RankedList:
    """Top-k items by score with excluded ids removed; ties go to lower id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.arange(scores.size, dtype=np.int64)
    if len(exclusions):
        mask = np.ones(scores.size, dtype=bool)
        mask[np.fromiter(exclusions, dtype=np.int64, count=len(exclusions))] = False
        candidates = candidates[mask]
    if candidates.size == 0:
        raise ValueError("no candidates remain after exclusion")
    return rank_among(scores, user, k, candidates)


def rank_among(scores: np.ndarray, user: int, k: int, candidates: np.ndarray) -> RankedList:
    """Rank an explicit candidate set by precomputed all-item scores."""
    sub = np.asarray(scores, dtype=np.float64)[candidates]
    order = np.lexsort((candidates, -sub))[:k]
    return RankedList(user=int(user), items=candidates[order], scores=sub[order])


def recall_at_k(top: RankedList, relevant, k: int) -> float:
    rel = set(relevant)
    if not rel:
        raise ValueError("recall needs a non-empty relevant set")
    hits = sum(1 for i in top.items[:k].tolist() if i in rel)
    return hits / len(rel)


def precision_at_k(top: RankedList, relevant, k: int) -> float:
    rel = set(relevant)
    hits = sum(1 for i in top.items[:k].tolist() if i in rel)
    return hits / k


def ndcg_at_k(top: RankedList, relevant, k: int) -> float:
    """Binary-gain NDCG; ideal DCG uses min(k, |relevant|) leading slots."""
    rel = set(relevant)
    if not rel:
        raise ValueError("ndcg needs a non-empty relevant set")
    dcg = sum(
        1.0 / math.log2(r + 1)
        for r, item in enumerate(top.items[:k].tolist(), start=1)
        if item in rel
    )
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(rel)) + 1))
    return dcg / idcg


def _group_by_user(log: InteractionLog) -> dict[int, np.ndarray]:
    """User -> indices into the log, in ascending user order."""
    order = np.argsort(log.users, kind="stable")
    users = log.users[order]
    bounds = np.flatnonzero(np.r_[True, users[1:] != users[:-1]]) if users.size else np.array([], dtype=np.int64)
    ends = np.r_[bounds[1:], users.size] if users.size else bounds
    return {int(users[s]): order[s:e] for s, e in zip(bounds, ends)}


def click_prediction_eval(
    score_all,
    train: InteractionLog,
    eval_log: InteractionLog,
    k: int = 20,
    collect_per_user: bool = False,
) -> dict:
    """Macro-averaged Recall/Precision/NDCG@k over held-out click lists.

    ``score_all(user)`` must return scores for every item id. Candidates are
    all items minus the user's training positives; relevant items are the
    user's held-out items restricted to those candidates (an item already
    consumed in training cannot be recommended again, so it cannot count
    against the ranking either). Users left with no relevant item are skipped.
    """
    n_items = train.n_items
    train_by_user = _group_by_user(train)
    rec, pre, ndcg = [], [], []
    skipped = 0
    per_user = {}
    for user, idx in sorted(_group_by_user(eval_log).items()):
        seen = np.unique(train.items[train_by_user[user]]) if user in train_by_user else np.array([], dtype=np.int64)
        relevant = np.setdiff1d(np.unique(eval_log.items[idx]), seen)
        if relevant.size == 0 or seen.size >= n_items:
            skipped += 1
            continue
        top = rank_topk(score_all(user), user, k, exclusions=seen)
        r = recall_at_k(top, relevant, k)
        p = precision_at_k(top, relevant, k)
        n = ndcg_at_k(top, relevant, k)
        rec.append(r)
        pre.append(p)
        ndcg.append(n)
        if collect_per_user:
            per_user[user] = {"recall": r, "precision": p, "ndcg": n, "n_relevant": int(relevant.size)}
    out = {
        "k": k,
        "n_users": len(rec),
        "n_skipped": skipped,
        "recall": float(np.mean(rec)) if rec else None,
        "precision": float(np.mean(pre)) if pre else None,
        "ndcg": float(np.mean(ndcg)) if ndcg else None,
    }
    if collect_per_user:
        out["per_user"] = per_user
    return out


def preference_prediction_eval(
    score_all,
    eval_log: InteractionLog,
    k: int = 3,
    positive_rating: float = 5.0,
    collect_per_user: bool = False,
) -> dict:
    """Rank each user's rated held-out items; positives are top-rated ones.

    Users whose rated items are all positive or all negative carry no
    within-user ranking signal and are skipped. When an item was rated more
    than once in the held-out window, the latest rating stands. Precision
    keeps the fixed denominator k even for users with fewer than k items.
    """
    rec, pre = [], []
    skipped = 0
    per_user = {}
    for user, idx in sorted(_group_by_user(eval_log).items()):
        rated = idx[~np.isnan(eval_log.ratings[idx])]
        if rated.size == 0:
            skipped += 1
            continue
        latest: dict[int, float] = {}
        for j in rated[np.argsort(eval_log.times[rated], kind="stable")]:
            latest[int(eval_log.items[j])] = float(eval_log.ratings[j])
        cand = np.array(sorted(latest), dtype=np.int64)
        positives = {i for i, r in latest.items() if r == positive_rating}
        if not positives or len(positives) == len(latest):
            skipped += 1
            continue
        top = rank_among(score_all(user), user, k, cand)
        r = recall_at_k(top, positives, k)
        p = precision_at_k(top, positives, k)
        rec.append(r)
        pre.append(p)
        if collect_per_user:
            per_user[user] = {"recall": r, "precision": p, "n_rated": len(latest), "n_positive": len(positives)}
    out = {
        "k": k,
        "n_users": len(rec),
        "n_skipped": skipped,
        "recall": float(np.mean(rec)) if rec else None,
        "precision": float(np.mean(pre)) if pre else None,
    }
    if collect_per_user:
        out["per_user"] = per_user
    return out


def combine_report(
    method: str,
    mode: str,
    click: dict | None,
    pref: dict | None,
    k_click: int = 20,
    k_pref: int = 3,
) -> EvalReport:
    report = EvalReport(method=method, mode=mode, k_click=k_click, k_pref=k_pref)
    if click is not None:
        report.cp_rec = click["recall"]
        report.cp_pre = click["precision"]
        report.cp_ndcg = click["ndcg"]
        report.n_users_click = click["n_users"]
        report.n_skipped_click = click["n_skipped"]
    if pref is not None:
        report.pp_rec = pref["recall"]
        report.pp_pre = pref["precision"]
        report.n_users_pref = pref["n_users"]
        report.n_skipped_pref = pref["n_skipped"]
    return report
