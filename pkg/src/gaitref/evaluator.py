"""Probe/gallery retrieval metrics over part-based identity embeddings."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class IdentityEmbedding:
    parts: np.ndarray  # (P, d)
    label: str
    view_tag: Optional[str] = None


def distance(a, b, reduction: str = "part-mean") -> float:
    """Mean over parts of the per-part Euclidean distance (or plain L2 of the flattened parts)."""
    pa = np.asarray(getattr(a, "parts", a), dtype=np.float64)
    pb = np.asarray(getattr(b, "parts", b), dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValueError(f"embedding shapes differ: {pa.shape} vs {pb.shape}")
    if reduction == "concat":
        return float(np.linalg.norm((pa - pb).reshape(-1)))
    return float(np.linalg.norm(pa - pb, axis=-1).mean())


def distance_matrix(probes: np.ndarray, gallery: np.ndarray, reduction: str = "part-mean") -> np.ndarray:
    """(n_p, P, d) x (n_g, P, d) -> (n_p, n_g)."""
    p = np.asarray(probes, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    diff = p[:, None] - g[None, :]
    if reduction == "concat":
        return np.sqrt((diff ** 2).sum(axis=(2, 3)))
    return np.sqrt((diff ** 2).sum(axis=3)).mean(axis=2)


ExcludeFn = Callable[[int, int], bool]


def same_view(probe_views: Sequence, gallery_views: Sequence) -> ExcludeFn:
    """Exclusion predicate dropping gallery items recorded from the probe's view."""
    return lambda i, j: probe_views[i] is not None and probe_views[i] == gallery_views[j]


@dataclass
class ProbeTrace:
    probe: int
    label: str
    ranked_gallery: list       # gallery indices, nearest first, exclusions removed
    hits: list                 # 1 where the ranked item shares the probe's label
    first_hit_rank: int
    ap: float
    inp: float


def rank_probes(dist: np.ndarray, probe_labels, gallery_labels, exclude: Optional[ExcludeFn] = None) -> list:
    """Per-probe ranking with excluded candidates removed first; ties keep gallery order."""
    probe_labels = list(probe_labels)
    gallery_labels = np.asarray(list(gallery_labels), dtype=object)
    traces = []
    for i, row in enumerate(dist):
        cand = np.arange(len(gallery_labels))
        if exclude is not None:
            cand = np.array([j for j in cand if not exclude(i, j)], dtype=int)
        if cand.size == 0:
            raise ProtocolError(f"probe {i} ({probe_labels[i]}) has no gallery candidates after exclusion")
        order = cand[np.argsort(row[cand], kind="stable")]
        hits = (gallery_labels[order] == probe_labels[i]).astype(int)
        if hits.sum() == 0:
            raise ProtocolError(f"probe {i} ({probe_labels[i]}) has no positive in the gallery")
        ranks = np.flatnonzero(hits) + 1
        ap = float(np.mean(np.arange(1, len(ranks) + 1) / ranks))
        inp = float(len(ranks) / ranks[-1])
        traces.append(ProbeTrace(i, probe_labels[i], order.tolist(), hits.tolist(), int(ranks[0]), ap, inp))
    return traces


def rank_k_accuracy(dist, probe_labels, gallery_labels, k: int, exclude=None) -> float:
    traces = rank_probes(dist, probe_labels, gallery_labels, exclude)
    return float(np.mean([t.first_hit_rank <= k for t in traces]))


def mean_average_precision(dist, probe_labels, gallery_labels, exclude=None) -> float:
    return float(np.mean([t.ap for t in rank_probes(dist, probe_labels, gallery_labels, exclude)]))


def mean_inverse_negative_penalty(dist, probe_labels, gallery_labels, exclude=None) -> float:
    return float(np.mean([t.inp for t in rank_probes(dist, probe_labels, gallery_labels, exclude)]))


@dataclass
class RetrievalReport:
    rank_k: dict
    mAP: float
    mINP: float
    traces: list = field(default_factory=list, repr=False)

    @property
    def rank1(self) -> float:
        return self.rank_k[1]

    def rows(self) -> list:
        rows = [(f"rank{k}", v) for k, v in sorted(self.rank_k.items())]
        return rows + [("mAP", self.mAP), ("mINP", self.mINP)]

    def table(self) -> str:
        return "\n".join(f"{name:<8} {100 * v:6.2f}" for name, v in self.rows())

    def write_csv(self, path, trace_path=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for name, v in self.rows():
                w.writerow([name, repr(float(v))])
        if trace_path is not None:
            with open(trace_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["probe", "label", "first_hit_rank", "ap", "inp", "ranked_gallery"])
                for t in self.traces:
                    w.writerow([t.probe, t.label, t.first_hit_rank, repr(t.ap), repr(t.inp),
                                " ".join(map(str, t.ranked_gallery))])


def report_from_distances(dist, probe_labels, gallery_labels, exclude=None, ks=(1, 5, 10, 20)) -> RetrievalReport:
    traces = rank_probes(dist, probe_labels, gallery_labels, exclude)
    first = np.array([t.first_hit_rank for t in traces])
    rank_k = {k: float(np.mean(first <= k)) for k in ks}
    return RetrievalReport(rank_k, float(np.mean([t.ap for t in traces])),
                           float(np.mean([t.inp for t in traces])), traces)


def embed_records(model, records, batch_size: int = 8) -> np.ndarray:
    """Identity embeddings (n, P, d) for records, batched over equal-length sequences."""
    from .model import iter_batches

    out = [None] * len(records)
    for chunk, sil, skel in iter_batches(model, records, batch_size):
        emb = model.forward(sil, skel).embeddings.data
        for j, i in enumerate(chunk):
            out[i] = emb[j]
    return np.stack(out)


def evaluate(model, probe_records, gallery_records, exclude_same_view: bool = False,
             reduction: str = "part-mean", ks=(1, 5, 10, 20)) -> RetrievalReport:
    pe = embed_records(model, probe_records)
    ge = embed_records(model, gallery_records)
    dist = distance_matrix(pe, ge, reduction)
    exclude = (same_view([r.view_tag for r in probe_records], [r.view_tag for r in gallery_records])
               if exclude_same_view else None)
    return report_from_distances(dist, [r.subject_id for r in probe_records],
                                 [r.subject_id for r in gallery_records], exclude, ks)
