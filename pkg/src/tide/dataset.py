"""Timestamped click logs: loading, n-core filtering, and chronological splits.

All operations are pure: inputs are never mutated and every function returns a
new log. Backing arrays are marked read-only, so logs can be shared freely
across threads.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np


class DataFormatError(ValueError):
    """Raised for unreadable or malformed interaction files."""


class Interaction(NamedTuple):
    user: int
    item: int
    time: int
    rating: float | None = None


@dataclass(frozen=True)
class ColumnFormat:
    """Column layout of a delimiter-separated interaction file."""

    delimiter: str = "\t"
    user_col: int = 0
    item_col: int = 1
    rating_col: int | None = 2
    time_col: int = 3
    skip_header: bool = False


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InteractionLog:
    """Click records sorted ascending by time, ids compacted to dense ranges.

    ``ratings`` holds NaN where a record carries no rating. Duplicate
    (user, item) pairs are legal and intentionally retained: repeat clicks
    count toward popularity and conformity.
    """

    users: np.ndarray
    items: np.ndarray
    times: np.ndarray
    ratings: np.ndarray
    n_users: int
    n_items: int

    @classmethod
    def build(
        cls,
        users,
        items,
        times,
        ratings=None,
        n_users: int | None = None,
        n_items: int | None = None,
    ) -> "InteractionLog":
        """Assemble a log from parallel columns, sorting stably by time."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        times = np.asarray(times, dtype=np.int64)
        if ratings is None:
            ratings = np.full(users.size, np.nan)
        else:
            ratings = np.asarray(ratings, dtype=np.float64)
        if not (users.size == items.size == times.size == ratings.size):
            raise ValueError("column lengths differ")
        if n_users is None:
            n_users = int(users.max()) + 1 if users.size else 0
        if n_items is None:
            n_items = int(items.max()) + 1 if items.size else 0
        if users.size:
            if users.min() < 0 or users.max() >= n_users:
                raise ValueError("user id out of range")
            if items.min() < 0 or items.max() >= n_items:
                raise ValueError("item id out of range")
            if times.min() < 0:
                raise ValueError("negative timestamp")
        order = np.argsort(times, kind="stable")
        return cls(
            users=_frozen(users[order]),
            items=_frozen(items[order]),
            times=_frozen(times[order]),
            ratings=_frozen(ratings[order]),
            n_users=int(n_users),
            n_items=int(n_items),
        )

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def t_min(self) -> int:
        if not len(self):
            raise ValueError("empty log has no t_min")
        return int(self.times[0])

    @property
    def t_max(self) -> int:
        if not len(self):
            raise ValueError("empty log has no t_max")
        return int(self.times[-1])

    def records(self) -> Iterator[Interaction]:
        for u, i, t, r in zip(self.users, self.items, self.times, self.ratings):
            yield Interaction(int(u), int(i), int(t), None if math.isnan(r) else float(r))

    def subset(self, mask: np.ndarray) -> "InteractionLog":
        """Row-filtered copy keeping the parent id space (no recompaction)."""
        return InteractionLog(
            users=_frozen(self.users[mask]),
            items=_frozen(self.items[mask]),
            times=_frozen(self.times[mask]),
            ratings=_frozen(self.ratings[mask]),
            n_users=self.n_users,
            n_items=self.n_items,
        )


@dataclass(frozen=True)
class ChronoSplit:
    """Temporal train/validation/test partition over one id space."""

    train: InteractionLog
    validation: InteractionLog
    test: InteractionLog
    boundaries: list[float]
    parts: int
    split_seed: int


def user_item_sets(log: InteractionLog) -> dict[int, set[int]]:
    """Map each user to the set of items they interacted with."""
    out: dict[int, set[int]] = {}
    for u, i in zip(log.users.tolist(), log.items.tolist()):
        out.setdefault(u, set()).add(i)
    return out


def _read_rows(path, fmt: ColumnFormat):
    """Parse raw token rows; user/item kept as strings for later compaction."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such interaction file: {path}")
    users, items, ratings, times = [], [], [], []
    needed = max(
        fmt.user_col, fmt.item_col, fmt.time_col,
        fmt.rating_col if fmt.rating_col is not None else 0,
    )
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if fmt.skip_header and lineno == 1:
                continue
            line = line.strip("\n\r")
            if not line.strip():
                continue
            parts = line.split(fmt.delimiter)
            if len(parts) <= needed:
                raise DataFormatError(f"line {lineno}: expected at least {needed + 1} columns")
            try:
                t = int(parts[fmt.time_col].strip())
            except ValueError:
                raise DataFormatError(f"line {lineno}: non-numeric timestamp {parts[fmt.time_col]!r}") from None
            if t < 0:
                raise DataFormatError(f"line {lineno}: negative timestamp")
            r = math.nan
            if fmt.rating_col is not None:
                tok = parts[fmt.rating_col].strip()
                try:
                    r = float(tok)
                except ValueError:
                    raise DataFormatError(f"line {lineno}: non-numeric rating {tok!r}") from None
                if not math.isnan(r) and not (1.0 <= r <= 5.0):
                    raise DataFormatError(f"line {lineno}: rating {r} outside [1, 5]")
            users.append(parts[fmt.user_col].strip())
            items.append(parts[fmt.item_col].strip())
            ratings.append(r)
            times.append(t)
    if not users:
        raise DataFormatError("empty input")
    return users, items, ratings, times


def _compact(tokens: list[str]) -> tuple[np.ndarray, int]:
    """Dense 0-based ids; numeric ascending order when all tokens are ints."""
    uniq = set(tokens)
    try:
        key = {tok: int(tok) for tok in uniq}
        ordered = sorted(uniq, key=key.__getitem__)
    except ValueError:
        ordered = sorted(uniq)
    index = {tok: k for k, tok in enumerate(ordered)}
    return np.fromiter((index[t] for t in tokens), dtype=np.int64, count=len(tokens)), len(ordered)


def load_interactions(path, fmt: ColumnFormat = ColumnFormat()) -> InteractionLog:
    """Load a delimiter-separated log, compacting ids and sorting by time."""
    users, items, ratings, times = _read_rows(path, fmt)
    u_ids, n_users = _compact(users)
    i_ids, n_items = _compact(items)
    return InteractionLog.build(u_ids, i_ids, times, ratings, n_users, n_items)


def save_interactions(log: InteractionLog, path, fmt: ColumnFormat = ColumnFormat()) -> None:
    """Write a log in the same delimiter-separated layout ``load_interactions`` reads."""
    if fmt.rating_col is None:
        cols = sorted([(fmt.user_col, "u"), (fmt.item_col, "i"), (fmt.time_col, "t")])
    else:
        cols = sorted([(fmt.user_col, "u"), (fmt.item_col, "i"),
                       (fmt.rating_col, "r"), (fmt.time_col, "t")])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in log.records():
            field = {
                "u": str(rec.user),
                "i": str(rec.item),
                "t": str(rec.time),
                "r": "nan" if rec.rating is None else format(rec.rating, "g"),
            }
            fh.write(fmt.delimiter.join(field[tag] for _, tag in cols) + "\n")


def n_core_filter(log: InteractionLog, n: int) -> InteractionLog:
    """Iteratively drop users/items with fewer than ``n`` interactions (fixpoint).

    Ids are recompacted to dense 0-based ranges afterwards, preserving
    ascending order of the retained ids.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    keep = np.ones(len(log), dtype=bool)
    while True:
        uc = np.bincount(log.users[keep], minlength=log.n_users)
        ic = np.bincount(log.items[keep], minlength=log.n_items)
        bad = keep & ((uc[log.users] < n) | (ic[log.items] < n))
        if not bad.any():
            break
        keep &= ~bad
    if not keep.any():
        raise ValueError("filter eliminated all data")
    users = log.users[keep]
    items = log.items[keep]
    u_uniq, u_new = np.unique(users, return_inverse=True)
    i_uniq, i_new = np.unique(items, return_inverse=True)
    return InteractionLog.build(
        u_new, i_new, log.times[keep], log.ratings[keep],
        n_users=u_uniq.size, n_items=i_uniq.size,
    )


def binarize(log: InteractionLog) -> InteractionLog:
    """Mark every record as a positive click; ratings stay available.

    Any rated interaction counts as implicit positive feedback downstream, so
    the record content is unchanged; the returned log is an independent copy.
    """
    return log.subset(np.ones(len(log), dtype=bool))


def part_assignments(times: np.ndarray, t_min: int, t_max: int, parts: int) -> np.ndarray:
    """Uniform-interval part index per timestamp; boundary ties go to the later part."""
    span = int(t_max) - int(t_min)
    if span == 0:
        return np.full(times.size, parts - 1, dtype=np.int64)
    idx = ((times.astype(np.int64) - t_min) * parts) // span
    return np.minimum(idx, parts - 1)


def chrono_split(log: InteractionLog, parts: int = 10, split_seed: int = 0) -> ChronoSplit:
    """Split chronologically into uniform time parts; first ``parts - 1`` train.

    The last part's users are shuffled with ``split_seed`` and split in half:
    the first ceil(half) become validation users, the rest test users, so the
    two user sets are disjoint and every held-out record is no earlier than
    any training record.
    """
    if parts < 2:
        raise ValueError("parts must be >= 2")
    if not len(log):
        raise ValueError("cannot split an empty log")
    t_min, t_max = log.t_min, log.t_max
    span = t_max - t_min
    if span == 0:
        warnings.warn("all records share one timestamp; training part is empty")
    boundaries = [t_min + span * k / parts for k in range(parts + 1)]
    part_idx = part_assignments(log.times, t_min, t_max, parts)
    counts = np.bincount(part_idx, minlength=parts)
    empty = [k for k in range(parts) if counts[k] == 0]
    if empty:
        warnings.warn(f"empty time parts: {empty}")
    train = log.subset(part_idx < parts - 1)
    last = log.subset(part_idx == parts - 1)
    last_users = np.unique(last.users)
    rng = np.random.default_rng(split_seed)
    perm = rng.permutation(last_users)
    n_val = math.ceil(perm.size / 2)
    val_users = set(perm[:n_val].tolist())
    val_mask = np.fromiter((int(u) in val_users for u in last.users), dtype=bool, count=len(last))
    return ChronoSplit(
        train=train,
        validation=last.subset(val_mask),
        test=last.subset(~val_mask),
        boundaries=boundaries,
        parts=parts,
        split_seed=split_seed,
    )


_SPLIT_FILES = {"train": "train.tsv", "validation": "validation.tsv", "test": "test.tsv"}


def save_split(split: ChronoSplit, outdir) -> Path:
    """Persist a split as three TSV partitions plus a JSON manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, fname in _SPLIT_FILES.items():
        save_interactions(getattr(split, name), outdir / fname)
    manifest = {
        "boundaries": split.boundaries,
        "parts": split.parts,
        "seed": split.split_seed,
        "n_users": split.train.n_users,
        "n_items": split.train.n_items,
        "counts": {name: len(getattr(split, name)) for name in _SPLIT_FILES},
    }
    manifest_path = outdir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_split(indir) -> ChronoSplit:
    """Reload a split written by ``save_split``."""
    indir = Path(indir)
    manifest = json.loads((indir / "manifest.json").read_text())
    logs = {}
    for name, fname in _SPLIT_FILES.items():
        path = indir / fname
        if manifest["counts"][name] == 0:
            logs[name] = InteractionLog.build(
                [], [], [], None, manifest["n_users"], manifest["n_items"]
            )
            continue
        users, items, ratings, times = _read_rows(path, ColumnFormat())
        logs[name] = InteractionLog.build(
            [int(u) for u in users], [int(i) for i in items], times, ratings,
            manifest["n_users"], manifest["n_items"],
        )
    return ChronoSplit(
        train=logs["train"],
        validation=logs["validation"],
        test=logs["test"],
        boundaries=list(manifest["boundaries"]),
        parts=int(manifest["parts"]),
        split_seed=int(manifest["seed"]),
    )
