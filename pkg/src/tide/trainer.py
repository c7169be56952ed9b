"""Pairwise-ranking trainer shared by the disentangled model and all baselines.

One positive instance is paired with one uniformly sampled non-interacted
item; the loss is -log sigmoid(score_pos - score_neg). Gradients are written
out analytically (chain rule through tanh, softplus, the dot-product
backbone, and the softplus reparameterizations) and applied with a sparse
Adam update touching only the rows a batch actually used. Weight decay is
decoupled and hits touched embedding rows only; the per-item quality and
conformity scales are never decayed.

The negative instance is scored at the positive's timestamp, so both sides
of a pair see the same conformity landscape.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import PopularityTable, ips_instance_weights, pd_infer, pda_infer
from .dataset import ChronoSplit, InteractionLog, part_assignments
from .evaluation import click_prediction_eval
from .model import (
    FULL,
    INTERVENED,
    MATCHING_ONLY,
    NO_QUALITY,
    ConformityIndex,
    InferenceMode,
    TideModel,
    fixed_quality,
)
from .numerics import bounded_tanh, elu_plus_one, elu_plus_one_grad, inv_softplus, sigmoid, softplus

METHODS = ("tide", "mf", "mf-ips", "pd", "pda")
TIDE_VARIANTS = ("full", "noq", "noc", "fixq")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "tide"
    variant: str = "full"        # tide only: full | noq | noc | fixq
    fixed_q: float = 1.0         # quality value for the fixq variant
    embed_dim: int = 32
    lr_emb: float = 1e-2
    lr_qb: float = 1e-2
    weight_decay_emb: float = 1e-4
    init_qb: float = 0.0
    init_std: float = 0.1
    batch_size: int = 8192
    epochs: int = 100
    seed: int = 0
    early_stop_patience: int = 10
    tau: float = 1e7
    gamma: float = 0.1           # pd/pda popularity exponent
    ips_cap: float = 30.0        # mf-ips weight cap
    k_select: int = 20           # validation CP-Rec@K for model selection

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "tide" and self.variant not in TIDE_VARIANTS:
            raise ValueError(f"unknown tide variant {self.variant!r}")
        if self.lr_emb <= 0 or self.lr_qb <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.early_stop_patience < 0:
            raise ValueError("epochs and patience must be nonnegative")
        if self.weight_decay_emb < 0:
            raise ValueError("weight decay must be nonnegative")
        if self.method == "tide" and self.variant == "fixq" and self.fixed_q <= 0:
            raise ValueError("fixq needs a positive quality value")

    def trained_params(self) -> tuple[str, ...]:
        if self.method != "tide":
            return ("user_emb", "item_emb")
        extra = {
            "full": ("q_raw", "beta_raw"),
            "noq": ("beta_raw",),
            "noc": ("q_raw",),
            "fixq": ("beta_raw",),
        }[self.variant]
        return ("user_emb", "item_emb") + extra

    def uses_conformity(self) -> bool:
        return self.method == "tide" and self.variant in ("full", "noq", "fixq")


@dataclass
class TrainBatch:
    """One mini-batch plus the precomputed constants its forward pass needs.

    ``s_pos``/``s_neg`` are raw decayed history sums (parameter-free),
    ``pop_pos``/``pop_neg`` are period-normalized popularities, and
    ``weights`` are per-instance loss weights; unused fields stay None.
    """

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    times: np.ndarray
    s_pos: np.ndarray | None = None
    s_neg: np.ndarray | None = None
    pop_pos: np.ndarray | None = None
    pop_neg: np.ndarray | None = None
    weights: np.ndarray | None = None


class AdamState:
    """Sparse Adam: moments advance only on rows the batch touched."""

    def __init__(self, model: TideModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m1 = {name: np.zeros_like(getattr(model, name)) for name in
                   ("user_emb", "item_emb", "q_raw", "beta_raw")}
        self.m2 = {name: np.zeros_like(v) for name, v in self.m1.items()}

    def apply(self, model: TideModel, grads: dict, touched: dict, lrs: dict, decay: dict) -> None:
        self.step += 1
        bc1 = 1.0 - self.beta1 ** self.step
        bc2 = 1.0 - self.beta2 ** self.step
        for name, rows in touched.items():
            g = grads[name][rows]
            m1, m2 = self.m1[name], self.m2[name]
            m1[rows] = self.beta1 * m1[rows] + (1.0 - self.beta1) * g
            m2[rows] = self.beta2 * m2[rows] + (1.0 - self.beta2) * g * g
            update = (m1[rows] / bc1) / (np.sqrt(m2[rows] / bc2) + self.eps)
            param = getattr(model, name)
            param[rows] -= lrs[name] * update
            if decay.get(name, 0.0):
                param[rows] -= lrs[name] * decay[name] * param[rows]


def init_model(cfg: TrainConfig, n_users: int, n_items: int) -> TideModel:
    """Fresh parameters; ablated variants pin the frozen component exactly.

    noq pins quality at softplus(-inf) = 0 and noc pins the conformity scale
    at 0, so every inference mode of the saved checkpoint stays consistent
    with how the model was trained.
    """
    model = TideModel.init(
        n_users, n_items, cfg.embed_dim,
        seed=cfg.seed, init_std=cfg.init_std, init_qb=cfg.init_qb, tau=cfg.tau,
    )
    if cfg.method == "tide":
        if cfg.variant == "noq":
            model.q_raw[:] = -np.inf
        elif cfg.variant == "noc":
            model.beta_raw[:] = -np.inf
        elif cfg.variant == "fixq":
            model.q_raw[:] = inv_softplus(cfg.fixed_q)
    return model


def _pair_scores(model: TideModel, cfg: TrainConfig, items, m, s):
    """Training-time tide forward for one side of a pair; returns (y, a)."""
    a = np.zeros_like(m)
    if cfg.variant in ("full", "noc"):
        a = a + softplus(model.q_raw[items])
    elif cfg.variant == "fixq":
        a = a + cfg.fixed_q
    if cfg.uses_conformity():
        a = a + softplus(model.beta_raw[items]) * s
    return bounded_tanh(a) * softplus(m), a


def batch_loss_and_grads(model: TideModel, batch: TrainBatch, cfg: TrainConfig) -> tuple[float, dict]:
    """Mean pairwise loss and dense analytic gradients for one batch."""
    u, p, n = batch.users, batch.pos, batch.neg
    b = u.size
    w = batch.weights if batch.weights is not None else np.ones(b)
    m_p = model.matching(u, p)
    m_n = model.matching(u, n)

    grads = {
        "user_emb": np.zeros_like(model.user_emb),
        "item_emb": np.zeros_like(model.item_emb),
        "q_raw": np.zeros_like(model.q_raw),
        "beta_raw": np.zeros_like(model.beta_raw),
    }

    if cfg.method in ("pd", "pda"):
        c_p = batch.pop_pos ** cfg.gamma
        c_n = batch.pop_neg ** cfg.gamma
        y_p = c_p * elu_plus_one(m_p)
        y_n = c_n * elu_plus_one(m_n)
        d = sigmoid(y_n - y_p)
        gm_p = -(w * d / b) * c_p * elu_plus_one_grad(m_p)
        gm_n = +(w * d / b) * c_n * elu_plus_one_grad(m_n)
    elif cfg.method in ("mf", "mf-ips"):
        y_p, y_n = m_p, m_n
        d = sigmoid(y_n - y_p)
        gm_p = -(w * d / b)
        gm_n = +(w * d / b)
    else:
        y_p, a_p = _pair_scores(model, cfg, p, m_p, batch.s_pos)
        y_n, a_n = _pair_scores(model, cfg, n, m_n, batch.s_neg)
        d = sigmoid(y_n - y_p)
        gy_p = -(w * d / b)
        gy_n = +(w * d / b)
        gm_p = gy_p * bounded_tanh(a_p) * sigmoid(m_p)
        gm_n = gy_n * bounded_tanh(a_n) * sigmoid(m_n)
        ga_p = gy_p * (1.0 - np.tanh(a_p) ** 2) * softplus(m_p)
        ga_n = gy_n * (1.0 - np.tanh(a_n) ** 2) * softplus(m_n)
        if "q_raw" in cfg.trained_params():
            np.add.at(grads["q_raw"], p, ga_p * sigmoid(model.q_raw[p]))
            np.add.at(grads["q_raw"], n, ga_n * sigmoid(model.q_raw[n]))
        if "beta_raw" in cfg.trained_params():
            np.add.at(grads["beta_raw"], p, ga_p * batch.s_pos * sigmoid(model.beta_raw[p]))
            np.add.at(grads["beta_raw"], n, ga_n * batch.s_neg * sigmoid(model.beta_raw[n]))

    np.add.at(grads["user_emb"], u, gm_p[:, None] * model.item_emb[p] + gm_n[:, None] * model.item_emb[n])
    np.add.at(grads["item_emb"], p, gm_p[:, None] * model.user_emb[u])
    np.add.at(grads["item_emb"], n, gm_n[:, None] * model.user_emb[u])

    loss = float(np.mean(w * softplus(y_n - y_p)))
    return loss, grads


def grad_step(model: TideModel, batch: TrainBatch, cfg: TrainConfig, adam: AdamState) -> float:
    """One analytic-gradient Adam step; returns the batch's mean loss."""
    loss, grads = batch_loss_and_grads(model, batch, cfg)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss at adam step {adam.step + 1}")
    trained = cfg.trained_params()
    touched = {}
    for name in trained:
        rows = np.unique(batch.users) if name == "user_emb" else np.unique(np.concatenate([batch.pos, batch.neg]))
        if not np.all(np.isfinite(grads[name][rows])):
            raise FloatingPointError(f"non-finite gradient in {name} at adam step {adam.step + 1}")
        touched[name] = rows
    lrs = {"user_emb": cfg.lr_emb, "item_emb": cfg.lr_emb, "q_raw": cfg.lr_qb, "beta_raw": cfg.lr_qb}
    decay = {"user_emb": cfg.weight_decay_emb, "item_emb": cfg.weight_decay_emb}
    adam.apply(model, grads, touched, lrs, decay)
    return loss


def sample_negative(user: int, positives, n_items: int, rng: np.random.Generator) -> int:
    """Uniform draw over the items outside the user's training positives."""
    positives = set(positives)
    if len(positives) >= n_items:
        raise ValueError(f"user {user} interacted with every item; no negative exists")
    while True:
        candidate = int(rng.integers(0, n_items))
        if candidate not in positives:
            return candidate


def _in_sorted(sorted_keys: np.ndarray, keys: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(sorted_keys, keys)
    idx_c = np.minimum(idx, sorted_keys.size - 1)
    return (idx < sorted_keys.size) & (sorted_keys[idx_c] == keys)


def sample_negatives(users: np.ndarray, pos_keys: np.ndarray, n_items: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized rejection sampling; matches sample_negative's distribution."""
    neg = rng.integers(0, n_items, users.size)
    bad = np.flatnonzero(_in_sorted(pos_keys, users * n_items + neg))
    while bad.size:
        neg[bad] = rng.integers(0, n_items, bad.size)
        still = _in_sorted(pos_keys, users[bad] * n_items + neg[bad])
        bad = bad[still]
    return neg


def make_scorer(
    model: TideModel,
    method: str,
    mode: InferenceMode,
    t_eval: int | None = None,
    index: ConformityIndex | None = None,
    table: PopularityTable | None = None,
    gamma: float = 0.0,
):
    """Build score_all(user) -> per-item scores for evaluation/ranking."""
    if method in ("mf", "mf-ips"):
        return lambda user: model.item_emb @ model.user_emb[user]
    if method == "pd":
        return lambda user: pd_infer(model.item_emb @ model.user_emb[user])
    if method == "pda":
        if table is None:
            raise ValueError("pda scoring needs a popularity table")
        pop_tilde = table.last_train_normalized()
        return lambda user: pda_infer(model.item_emb @ model.user_emb[user], pop_tilde, gamma)
    raw = None
    if mode.needs_history():
        if index is None or t_eval is None:
            raise ValueError(f"mode {mode.kind!r} requires interaction history (t and index)")
        raw = index.query_at(t_eval)
    return lambda user: model.score_all_items(user, t=t_eval, index=index, mode=mode, raw_conformity=raw)


def selection_mode(cfg: TrainConfig) -> InferenceMode:
    """Native predictive mode used for validation-based selection."""
    if cfg.method != "tide":
        return MATCHING_ONLY
    return {
        "full": FULL,
        "noq": NO_QUALITY,
        "noc": INTERVENED,
        "fixq": FULL,
    }[cfg.variant]


@dataclass
class FitResult:
    model: TideModel
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    best_metric: float | None = None


def fit(split: ChronoSplit, cfg: TrainConfig) -> FitResult:
    """Train on the split's first parts, select on validation CP-Rec@K.

    Keeps the best-validation parameters and stops once the metric has not
    improved for ``early_stop_patience`` epochs. With an empty validation
    partition the final parameters stand and no early stopping happens.
    """
    cfg.validate()
    train = split.train
    if not len(train):
        raise ValueError("training partition is empty")
    model = init_model(cfg, train.n_users, train.n_items)
    adam = AdamState(model)
    rng = np.random.default_rng(cfg.seed)

    index = None
    s_pos = None
    if cfg.uses_conformity():
        index = ConformityIndex.from_log(train, cfg.tau)
        s_pos = index.query(train.items, train.times)

    table = None
    pop_hat_pos = None
    periods = None
    norm = None
    if cfg.method in ("pd", "pda", "mf-ips"):
        table = PopularityTable.from_split(split)
        if cfg.method in ("pd", "pda"):
            t_lo, t_hi = int(split.boundaries[0]), int(split.boundaries[-1])
            periods = part_assignments(train.times, t_lo, t_hi, split.parts)
            norm = np.stack([table.normalized(k) for k in range(split.parts)])
            pop_hat_pos = norm[periods, train.items]

    weights = None
    if cfg.method == "mf-ips":
        weights = ips_instance_weights(train, table, cfg.ips_cap)

    per_user_unique = {u: len(s) for u, s in _positive_sets(train).items()}
    full_users = [u for u, c in per_user_unique.items() if c >= train.n_items]
    if full_users:
        raise ValueError(f"user {full_users[0]} interacted with every item; no negative exists")
    pos_keys = np.unique(train.users * np.int64(train.n_items) + train.items)

    t_eval = train.t_max
    has_val = len(split.validation) > 0

    def validation_metric(current: TideModel) -> float | None:
        if not has_val:
            return None
        scorer = make_scorer(
            current, cfg.method, selection_mode(cfg),
            t_eval=t_eval, index=index, table=table, gamma=cfg.gamma,
        )
        report = click_prediction_eval(scorer, train, split.validation, k=cfg.k_select)
        return report["recall"]

    result = FitResult(model=model)
    best = model.copy()
    best_metric = -np.inf
    since_best = 0
    t0 = time.perf_counter()
    n = len(train)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        users = train.users[perm]
        pos = train.items[perm]
        times = train.times[perm]
        neg = sample_negatives(users, pos_keys, train.n_items, rng)
        s_neg = index.query(neg, times) if index is not None else None
        pop_neg = norm[periods[perm], neg] if norm is not None else None
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            hi = min(lo + cfg.batch_size, n)
            sl = slice(lo, hi)
            batch = TrainBatch(
                users=users[sl], pos=pos[sl], neg=neg[sl], times=times[sl],
                s_pos=s_pos[perm[sl]] if s_pos is not None else None,
                s_neg=s_neg[sl] if s_neg is not None else None,
                pop_pos=pop_hat_pos[perm[sl]] if pop_hat_pos is not None else None,
                pop_neg=pop_neg[sl] if pop_neg is not None else None,
                weights=weights[perm[sl]] if weights is not None else None,
            )
            loss_sum += grad_step(model, batch, cfg, adam) * (hi - lo)
        epoch_loss = loss_sum / n
        metric = validation_metric(model)
        result.history.append({
            "epoch": epoch,
            "loss": epoch_loss,
            "val_cp_rec": metric,
            "wall_time": time.perf_counter() - t0,
        })
        if metric is not None:
            if metric > best_metric:
                best_metric = metric
                best = model.copy()
                result.best_epoch = epoch
                result.best_metric = metric
                since_best = 0
            else:
                since_best += 1
                if since_best > cfg.early_stop_patience:
                    break
    result.model = best if result.best_epoch is not None else model
    return result


def _positive_sets(log: InteractionLog) -> dict[int, set]:
    out: dict[int, set] = {}
    for u, i in zip(log.users.tolist(), log.items.tolist()):
        out.setdefault(u, set()).add(i)
    return out


def write_history(history: list, path) -> None:
    """Emit the per-epoch log as CSV: epoch, loss, val_CP-Rec@20, wall_time."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "val_cp_rec", "wall_time"])
        for row in history:
            writer.writerow([
                row["epoch"],
                f"{row['loss']:.10g}",
                "" if row["val_cp_rec"] is None else f"{row['val_cp_rec']:.10g}",
                f"{row['wall_time']:.3f}",
            ])
