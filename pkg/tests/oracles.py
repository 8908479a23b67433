"""Definition-level reference implementations, written with plain loops."""

from __future__ import annotations

import math

import numpy as np


def precedes(row, j, i) -> bool:
    """Candidate j is ranked before candidate i: closer, or equally close and earlier in the gallery."""
    return row[j] < row[i] or (row[j] == row[i] and j < i)


def candidate_ranks(row, candidates) -> dict:
    """1-based rank of every candidate, by counting the candidates ranked before it."""
    return {i: 1 + sum(precedes(row, j, i) for j in candidates if j != i) for i in candidates}


def _per_probe(dist, probe_labels, gallery_labels, exclude):
    for p, row in enumerate(dist):
        cands = [g for g in range(len(gallery_labels)) if not (exclude and exclude(p, g))]
        ranks = candidate_ranks(row, cands)
        pos = sorted(ranks[g] for g in cands if gallery_labels[g] == probe_labels[p])
        yield pos


def oracle_rank_k(dist, probe_labels, gallery_labels, k, exclude=None) -> float:
    hits = [min(pos) <= k for pos in _per_probe(dist, probe_labels, gallery_labels, exclude)]
    return sum(hits) / len(hits)


def oracle_map(dist, probe_labels, gallery_labels, exclude=None) -> float:
    aps = []
    for pos in _per_probe(dist, probe_labels, gallery_labels, exclude):
        prec = [sum(q <= r for q in pos) / r for r in pos]
        aps.append(sum(prec) / len(prec))
    return sum(aps) / len(aps)


def oracle_minp(dist, probe_labels, gallery_labels, exclude=None) -> float:
    vals = [len(pos) / max(pos) for pos in _per_probe(dist, probe_labels, gallery_labels, exclude)]
    return sum(vals) / len(vals)


def part_mean_distance(a, b) -> float:
    total = 0.0
    for p in range(len(a)):
        total += math.sqrt(sum((x - y) ** 2 for x, y in zip(a[p], b[p])))
    return total / len(a)


def oracle_triplet(emb, labels, margin) -> float:
    """Average of the positive hinge terms over every (anchor, positive, negative) triple."""
    emb = np.asarray(emb)
    n = len(labels)
    terms = []
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for q in range(n):
                if labels[q] == labels[a]:
                    continue
                h = part_mean_distance(emb[a], emb[p]) - part_mean_distance(emb[a], emb[q]) + margin
                if h > 0:
                    terms.append(h)
    return sum(terms) / len(terms) if terms else 0.0


def oracle_cross_entropy(logits, labels) -> float:
    total = 0.0
    for row, y in zip(np.asarray(logits), labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)
