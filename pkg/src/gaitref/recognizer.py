"""Fusion head, training objectives, Adam and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import numerics as nx
from .datamodel import ConfigError, SampleRecord
from .encoders import FeatureBundle, init_weight
from .numerics import ContractError, Parameter, Tape, Tensor

log = logging.getLogger(__name__)


class FusionParams:
    """Shared per-part linear identity encoder (C -> d) and a shared classifier (d -> ids)."""

    def __init__(self, channels: int, embed_dim: int, num_classes: int, rng: np.random.Generator,
                 mode: str = "gaitref", combine: str = "concat"):
        self.mode = mode
        self.combine = combine
        self.mlp_w = Parameter(init_weight(rng, (channels, embed_dim), channels, 1.0), "fusion.mlp_w")
        self.mlp_b = Parameter(np.zeros(embed_dim), "fusion.mlp_b")
        self.cls_w = Parameter(rng.normal(0, 0.01, size=(embed_dim, num_classes)), "fusion.cls_w")

    def parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in (self.mlp_w, self.mlp_b, self.cls_w)}


def stack_parts(bundle: FeatureBundle, F_J_refined: Optional[Tensor], mode: str, combine: str) -> Tensor:
    """Part features (B, P, C) before the shared MLP."""
    if mode == "gaitref" and F_J_refined is None:
        raise ContractError("gaitref fusion needs the refined skeleton feature")
    if mode == "silhouette":
        return bundle.F_S
    skel = [bundle.F_J] + ([F_J_refined] if mode == "gaitref" else [])
    if mode == "skeleton":
        B, C = bundle.F_J.shape
        return nx.reshape(bundle.F_J, (B, 1, C))
    fs = bundle.F_S
    B, S, C = fs.shape
    if combine == "concat":
        return nx.concat([fs] + [nx.reshape(f, (B, 1, C)) for f in skel], axis=1)
    out = fs
    for f in skel:
        out = nx.add(out, nx.broadcast_repeat(nx.reshape(f, (B, 1, C)), (B, S, C)))
    return out


def fuse(bundle: FeatureBundle, F_J_refined: Optional[Tensor], params: FusionParams) -> tuple[Tensor, Tensor]:
    """Returns (embeddings (B, P, d), logits (B, classes) averaged over parts)."""
    parts = stack_parts(bundle, F_J_refined, params.mode, params.combine)
    B, P, C = parts.shape
    d = params.mlp_w.shape[1]
    flat = nx.matmul(nx.reshape(parts, (B * P, C)), params.mlp_w)
    flat = nx.add(flat, nx.broadcast_repeat(nx.reshape(params.mlp_b, (1, d)), (B * P, d)))
    emb = nx.reshape(flat, (B, P, d))
    logits = nx.matmul(flat, params.cls_w)
    logits = nx.mean_pool_over_axes(nx.reshape(logits, (B, P, params.cls_w.shape[1])), 1)
    return emb, logits


# --- objectives --------------------------------------------------------------

def part_distance_matrix(emb: Tensor) -> Tensor:
    """(B, P, d) -> (B, B): Euclidean distance per part, averaged over parts."""
    B, P, d = emb.shape
    a = nx.broadcast_repeat(nx.reshape(emb, (B, 1, P, d)), (B, B, P, d))
    b = nx.broadcast_repeat(nx.reshape(emb, (1, B, P, d)), (B, B, P, d))
    diff = nx.sub(a, b)
    dist = nx.sqrt(nx.sum_over_axes(nx.mul(diff, diff), 3))
    return nx.mean_pool_over_axes(dist, 2)


@dataclass
class TripletStats:
    num_triplets: int
    num_active: int

    @property
    def valid(self) -> bool:
        return self.num_triplets > 0


def triplet_mask(labels) -> np.ndarray:
    """mask[a, p, n] is 1 for every valid (anchor, positive, negative) index triple."""
    y = np.asarray(labels)
    same = y[:, None] == y[None, :]
    pos = same & ~np.eye(len(y), dtype=bool)
    return (pos[:, :, None] & ~same[:, None, :]).astype(np.float64)


def triplet_loss(emb: Tensor, labels, margin: float = 0.2) -> tuple[Tensor, TripletStats]:
    """Batch-all triplet loss; the hinge is averaged over its nonzero terms only.

    With no valid triplet the loss is a constant zero and ``stats.valid`` is False.
    """
    mask = triplet_mask(labels)
    n = int(mask.sum())
    if n == 0:
        log.warning("batch has no valid triplet; triplet loss set to zero")
        return Tensor(0.0), TripletStats(0, 0)
    D = part_distance_matrix(emb)
    B = D.shape[0]
    d_ap = nx.broadcast_repeat(nx.reshape(D, (B, B, 1)), (B, B, B))
    d_an = nx.broadcast_repeat(nx.reshape(D, (B, 1, B)), (B, B, B))
    gap = nx.add(nx.sub(d_ap, d_an), Tensor(np.full((B, B, B), margin)))
    hinge = nx.mul(nx.relu(gap), Tensor(mask))
    active = int((hinge.data > 0).sum())
    total = nx.sum_over_axes(hinge)
    return nx.scale(total, 1.0 / max(active, 1)), TripletStats(n, active)


def classification_loss(logits: Tensor, labels) -> Tensor:
    """Softmax cross-entropy averaged over the batch."""
    y = np.asarray(labels, dtype=np.intp)
    B, n = logits.shape
    if y.shape != (B,) or y.min(initial=0) < 0 or y.max(initial=0) >= n:
        raise ContractError("labels must be B class indices in [0, num_classes)")
    onehot = np.zeros((B, n))
    onehot[np.arange(B), y] = 1.0
    picked = nx.sum_over_axes(nx.mul(nx.log_softmax(logits, 1), Tensor(onehot)))
    return nx.scale(picked, -1.0 / B)


def total_loss(trip, cls, config: "TrainConfig"):
    if isinstance(trip, Tensor) or isinstance(cls, Tensor):
        return nx.add(nx.scale(nx.reshape(trip, ()), config.lambda1), nx.scale(nx.reshape(cls, ()), config.lambda2))
    return config.lambda1 * trip + config.lambda2 * cls


# --- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def lr_at(base_lr: float, step: int, milestones: Sequence[int] = (), gamma: float = 0.1) -> float:
    """Learning rate for (0-based) ``step``: multiplied by ``gamma`` at each reached milestone."""
    return base_lr * gamma ** sum(step >= m for m in milestones)


def adam_step(values: dict, grads: dict, state: AdamState, lr: float, betas=(0.9, 0.999),
              eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; entries without a gradient are left as they are."""
    b1, b2 = betas
    t = state.step + 1
    new_values, m, v = dict(values), dict(state.m), dict(state.v)
    for k, val in values.items():
        g = grads.get(k)
        if g is None:
            continue
        m[k] = b1 * m.get(k, 0.0) + (1 - b1) * g
        v[k] = b2 * v.get(k, 0.0) + (1 - b2) * g * g
        mhat = m[k] / (1 - b1 ** t)
        vhat = v[k] / (1 - b2 ** t)
        new_values[k] = val - lr * mhat / (np.sqrt(vhat) + eps)
    return new_values, AdamState(t, m, v)


# --- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    margin: float = 0.2
    lr: float = 1e-4
    milestones: tuple = ()
    iterations: int = 1000
    batch_ids: int = 8
    batch_seqs: int = 4
    clip_len: Optional[int] = None  # frames per training clip; None uses whole sequences
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.margin <= 0 or self.lr < 0:
            raise ConfigError("lambdas must be >= 0, margin > 0 and lr >= 0")
        if self.batch_ids < 2 or self.batch_seqs < 2:
            raise ConfigError("need at least 2 identities x 2 sequences per batch")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")


@dataclass
class LossRecord:
    iteration: int
    triplet: float
    cls: float
    total: float


@dataclass
class TrainResult:
    model: object
    curve: list
    label_map: dict


def _arrays(records: Sequence[SampleRecord], model):
    sils = [r.silhouette.frames.astype(np.float64) for r in records]
    skels = [model.preprocess_skeleton(r.skeleton.joints) for r in records]
    return sils, skels


class BatchSampler:
    """P identities x K sequences per batch, each cut to a random clip of ``clip_len`` frames."""

    def __init__(self, records: Sequence[SampleRecord], config: TrainConfig):
        self.by_id: dict[str, list[int]] = {}
        for i, r in enumerate(records):
            self.by_id.setdefault(r.subject_id, []).append(i)
        self.ids = sorted(self.by_id)
        if len(self.ids) < config.batch_ids:
            raise ConfigError(f"dataset has {len(self.ids)} identities, batch needs {config.batch_ids}")
        self.lengths = [min(len(r.silhouette), len(r.skeleton)) for r in records]
        self.clip_len = config.clip_len or min(self.lengths)
        if self.clip_len > min(self.lengths):
            raise ConfigError(f"clip_len {self.clip_len} exceeds shortest sequence ({min(self.lengths)} frames)")
        self.config = config
        self.rng = np.random.default_rng([config.seed, 0xBA7C])

    def sample(self):
        c, rng = self.config, self.rng
        chosen = rng.choice(len(self.ids), size=c.batch_ids, replace=False)
        items, labels = [], []
        for lab in chosen:
            pool = self.by_id[self.ids[lab]]
            picks = rng.choice(len(pool), size=c.batch_seqs, replace=len(pool) < c.batch_seqs)
            for p in picks:
                idx = pool[p]
                start = int(rng.integers(0, self.lengths[idx] - self.clip_len + 1))
                items.append((idx, start))
                labels.append(int(lab))
        return items, np.array(labels)


def train(records: Sequence[SampleRecord], model, config: TrainConfig, progress=None) -> TrainResult:
    """Optimize ``model`` in place on ``records`` with lambda1 * triplet + lambda2 * cross-entropy."""
    sampler = BatchSampler(records, config)
    if model.config.num_classes < len(sampler.ids):
        raise ConfigError(f"model has {model.config.num_classes} classes, dataset has {len(sampler.ids)} ids")
    sils, skels = _arrays(records, model)
    params = model.parameters()
    state = AdamState()
    curve: list[LossRecord] = []
    L = sampler.clip_len
    need_sil = model.config.uses_silhouette
    need_skel = model.config.uses_skeleton
    for it in range(config.iterations):
        items, labels = sampler.sample()
        sil = np.stack([sils[i][s:s + L] for i, s in items]) if need_sil else None
        skel = np.stack([skels[i][s:s + L] for i, s in items]) if need_skel else None
        with Tape() as tape:
            out = model.forward(sil, skel)
            trip, _ = triplet_loss(out.embeddings, labels, config.margin)
            cls = classification_loss(out.logits, labels)
            loss = total_loss(trip, cls, config)
        grads = tape.backward(loss)
        values = {k: p.data for k, p in params.items()}
        g = {k: grads[p] for k, p in params.items() if p in grads}
        new_values, state = adam_step(values, g, state, lr_at(config.lr, it, config.milestones))
        for k, p in params.items():
            if new_values[k] is not values[k]:
                p.assign(new_values[k])
        rec = LossRecord(it, trip.item(), cls.item(), loss.item())
        curve.append(rec)
        if progress is not None:
            progress(rec)
    return TrainResult(model, curve, {sid: i for i, sid in enumerate(sampler.ids)})

