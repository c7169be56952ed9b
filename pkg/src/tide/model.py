"""Quality/conformity-disentangled scoring model over a matching backbone.

An item's score at time t is Tanh(q_i + c_i^t) * Softplus(m_ui):

* q_i >= 0 is a static per-item quality, parameterized q_i = softplus(q_raw_i);
* c_i^t = beta_i * sum_l exp(-(t - t_l) / tau) is time-decayed conformity over
  the item's strictly earlier interactions, beta_i = softplus(beta_raw_i);
* m_ui is the user/item match from a dot-product embedding backbone.

Because q_i + c_i^t > 0, the popularity coefficient Tanh(.) lies in (0, 1) and
multiplies, never flips, the matching signal. Inference modes recombine the
same fitted parameters: zeroing conformity at serving time keeps the benign
quality effect while discarding the herd effect.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import InteractionLog
from .numerics import bounded_tanh, softplus

_MAX_EXPONENT = 700.0  # exp overflows float64 just above 709

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class InferenceMode:
    """Serving-time recombination of the fitted score components."""

    kind: str
    fixed_quality: float | None = None

    def needs_history(self) -> bool:
        return self.kind in ("full", "no-quality")


FULL = InferenceMode("full")
INTERVENED = InferenceMode("intervened")
MATCHING_ONLY = InferenceMode("matching-only")
NO_QUALITY = InferenceMode("no-quality")
NO_CONFORMITY = InferenceMode("no-conformity")


def fixed_quality(value: float) -> InferenceMode:
    return InferenceMode("fixed-quality", float(value))


_MODE_ALIASES = {
    "full": FULL,
    "int": INTERVENED,
    "e": MATCHING_ONLY,
    "noq": NO_QUALITY,
    "noc": NO_CONFORMITY,
}


def parse_mode(text: str) -> InferenceMode:
    """Parse a mode flag: full, int, e, noq, noc, or fixq:<value>."""
    text = text.strip()
    if text in _MODE_ALIASES:
        return _MODE_ALIASES[text]
    if text.startswith("fixq"):
        _, sep, raw = text.partition(":")
        if not sep or not raw:
            raise ValueError("fixq mode needs a value, e.g. fixq:1.5")
        return fixed_quality(float(raw))
    raise ValueError(f"unknown inference mode {text!r}")


class ConformityIndex:
    """Per-item decayed interaction sums with O(log n) point queries.

    For item i at time t the raw conformity weight is
    sum over earlier clicks l of exp(-(t - t_l) / tau), t_l < t strictly.
    Item histories are stored segment-wise (CSR layout) with prefix sums of
    exp((t_l - anchor) / tau), so a query is one binary search plus a lookup:
    exp(-(t - anchor) / tau) * prefix[k - 1].
    """

    def __init__(self, items, times, n_items: int, tau: float, anchor: int | None = None):
        items = np.asarray(items, dtype=np.int64)
        times = np.asarray(times, dtype=np.int64)
        if items.size != times.size:
            raise ValueError("items and times differ in length")
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.tau = float(tau)
        self.n_items = int(n_items)
        if anchor is None:
            anchor = int(times.min()) if times.size else 0
        self.anchor = int(anchor)
        order = np.lexsort((times, items))
        seg_items = items[order]
        self.times = times[order]
        counts = np.bincount(seg_items, minlength=self.n_items)
        self.offsets = np.concatenate(([0], np.cumsum(counts)))
        scaled = (self.times - self.anchor) / self.tau
        if scaled.size and scaled.max() > _MAX_EXPONENT:
            raise ValueError(
                f"history span {self.times.max() - self.anchor} overflows exp at "
                f"tau={self.tau}; use a larger tau or rescale the timestamps"
            )
        weights = np.exp(scaled)
        # summed per item: a cumsum across segments followed by subtraction
        # would cancel catastrophically once weights span many decades
        self.prefix = np.empty_like(weights)
        for j in range(self.n_items):
            o0, o1 = self.offsets[j], self.offsets[j + 1]
            if o1 > o0:
                self.prefix[o0:o1] = np.cumsum(weights[o0:o1])

    @classmethod
    def from_log(cls, log: InteractionLog, tau: float, anchor: int | None = None) -> "ConformityIndex":
        return cls(log.items, log.times, log.n_items, tau, anchor)

    def _decay_from_anchor(self, ts: np.ndarray) -> np.ndarray:
        scaled = (self.anchor - np.asarray(ts, dtype=np.float64)) / self.tau
        if scaled.size and scaled.max() > _MAX_EXPONENT:
            raise ValueError("query time precedes anchor by more than exp can span")
        return np.exp(scaled)

    def query(self, items, times) -> np.ndarray:
        """Raw decayed sums for (item, time) pairs; strictly earlier clicks only."""
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        ts = np.atleast_1d(np.asarray(times, dtype=np.int64))
        if items.shape != ts.shape:
            raise ValueError("items and times differ in shape")
        out = np.zeros(items.size, dtype=np.float64)
        order = np.argsort(items, kind="stable")
        si, st = items[order], ts[order]
        starts = np.flatnonzero(np.r_[True, si[1:] != si[:-1]]) if si.size else np.array([], dtype=np.int64)
        ends = np.r_[starts[1:], si.size] if si.size else starts
        for s, e in zip(starts, ends):
            o0, o1 = self.offsets[si[s]], self.offsets[si[s] + 1]
            k = np.searchsorted(self.times[o0:o1], st[s:e], side="left")
            sums = np.where(k > 0, self.prefix[o0:o1][np.maximum(k - 1, 0)], 0.0) if o1 > o0 else np.zeros(e - s)
            out[order[s:e]] = self._decay_from_anchor(st[s:e]) * sums
        return out

    def query_at(self, t: int) -> np.ndarray:
        """Raw decayed sums for every item at one shared time t."""
        if self.prefix.size == 0:
            return np.zeros(self.n_items)
        before = self.times < t
        cs = np.cumsum(before)
        at = lambda j: np.where(j > 0, cs[np.maximum(j - 1, 0)], 0)
        k = at(self.offsets[1:]) - at(self.offsets[:-1])
        idx = self.offsets[:-1] + np.maximum(k - 1, 0)
        sums = np.where(k > 0, self.prefix[np.minimum(idx, max(self.prefix.size - 1, 0))], 0.0)
        return self._decay_from_anchor(np.full(self.n_items, t)) * sums

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)


@dataclass
class TideModel:
    """Fitted parameters; all arrays are float64."""

    user_emb: np.ndarray
    item_emb: np.ndarray
    q_raw: np.ndarray
    beta_raw: np.ndarray
    tau: float

    @classmethod
    def init(
        cls,
        n_users: int,
        n_items: int,
        dim: int,
        seed: int = 0,
        init_std: float = 0.1,
        init_qb: float = 0.0,
        tau: float = 1e7,
    ) -> "TideModel":
        rng = np.random.default_rng(seed)
        return cls(
            user_emb=rng.normal(0.0, init_std, size=(n_users, dim)),
            item_emb=rng.normal(0.0, init_std, size=(n_items, dim)),
            q_raw=np.full(n_items, float(init_qb)),
            beta_raw=np.full(n_items, float(init_qb)),
            tau=float(tau),
        )

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @property
    def quality(self) -> np.ndarray:
        return softplus(self.q_raw)

    @property
    def conformity_scale(self) -> np.ndarray:
        return softplus(self.beta_raw)

    def matching(self, users, items) -> np.ndarray:
        """Backbone match m_ui, a plain embedding dot product."""
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        return np.einsum("ij,ij->i", self.user_emb[users], self.item_emb[items])

    def conformity(self, items, times, index: ConformityIndex) -> np.ndarray:
        """c_i^t = beta_i * decayed count of item i's strictly earlier clicks."""
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        return self.conformity_scale[items] * index.query(items, times)

    def score(
        self,
        users,
        items,
        times=None,
        index: ConformityIndex | None = None,
        mode: InferenceMode = FULL,
    ) -> np.ndarray:
        """Scores under an inference mode; history-dependent modes need times + index."""
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        m = self.matching(users, items)
        if mode.kind == "matching-only":
            return m
        if mode.kind in ("intervened", "no-conformity"):
            a = self.quality[items]
        elif mode.kind == "fixed-quality":
            a = np.full(items.size, mode.fixed_quality)
        elif mode.kind in ("full", "no-quality"):
            if index is None or times is None:
                raise ValueError(f"mode {mode.kind!r} requires interaction history (times and index)")
            c = self.conformity(items, times, index)
            a = self.quality[items] + c if mode.kind == "full" else c
        else:
            raise ValueError(f"unknown inference mode {mode.kind!r}")
        return bounded_tanh(a) * softplus(m)

    def score_all_items(
        self,
        user: int,
        t: int | None = None,
        index: ConformityIndex | None = None,
        mode: InferenceMode = FULL,
        raw_conformity: np.ndarray | None = None,
    ) -> np.ndarray:
        """One user's scores over every item at one time.

        ``raw_conformity`` may carry a precomputed ``index.query_at(t)`` so the
        per-item sums are shared across users during ranking.
        """
        m = self.item_emb @ self.user_emb[user]
        if mode.kind == "matching-only":
            return m
        if mode.kind in ("intervened", "no-conformity"):
            a = self.quality
        elif mode.kind == "fixed-quality":
            a = np.full(self.n_items, mode.fixed_quality)
        elif mode.kind in ("full", "no-quality"):
            if raw_conformity is None:
                if index is None or t is None:
                    raise ValueError(f"mode {mode.kind!r} requires interaction history (t and index)")
                raw_conformity = index.query_at(t)
            c = self.conformity_scale * raw_conformity
            a = self.quality + c if mode.kind == "full" else c
        else:
            raise ValueError(f"unknown inference mode {mode.kind!r}")
        return bounded_tanh(a) * softplus(m)

    def copy(self) -> "TideModel":
        return replace(
            self,
            user_emb=self.user_emb.copy(),
            item_emb=self.item_emb.copy(),
            q_raw=self.q_raw.copy(),
            beta_raw=self.beta_raw.copy(),
        )


def save_checkpoint(model: TideModel, path, anchor: int | None = None, meta: dict | None = None) -> None:
    """Persist parameters as an uncompressed npz with a JSON sidecar field."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        version=np.int64(CHECKPOINT_VERSION),
        n_users=np.int64(model.n_users),
        n_items=np.int64(model.n_items),
        dim=np.int64(model.dim),
        tau=np.float64(model.tau),
        anchor=np.float64(np.nan if anchor is None else anchor),
        user_emb=model.user_emb,
        item_emb=model.item_emb,
        q_raw=model.q_raw,
        beta_raw=model.beta_raw,
        meta_json=np.str_(json.dumps(meta or {}, sort_keys=True)),
    )


def load_checkpoint(path) -> tuple[TideModel, int | None, dict]:
    """Load a checkpoint; returns (model, anchor, meta)."""
    with np.load(Path(path), allow_pickle=False) as npz:
        version = int(npz["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        model = TideModel(
            user_emb=npz["user_emb"].astype(np.float64),
            item_emb=npz["item_emb"].astype(np.float64),
            q_raw=npz["q_raw"].astype(np.float64),
            beta_raw=npz["beta_raw"].astype(np.float64),
            tau=float(npz["tau"]),
        )
        raw_anchor = float(npz["anchor"])
        anchor = None if np.isnan(raw_anchor) else int(raw_anchor)
        meta = json.loads(str(npz["meta_json"]))
    return model, anchor, meta
