"""Gallery ranking and multi-ground-truth retrieval metrics.

AP@K follows the multi-ground-truth convention: the precision-weighted
relevance sum over the top K ranks is normalized by min(K, |gt|), so a
ranking that fills its first min(K, |gt|) slots with ground truths scores
exactly 1 at every K. Recall@K is hit-based: 1 if any ground truth appears
in the top K. Ties in the ranking break by ascending id so reports are
platform-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVectorError, ShapeError, ValidationError
from .store import EmbeddingTable

DEFAULT_KS = (5, 10, 25, 50)


@dataclass
class RankedList:
    query_id: str
    entries: list[tuple[str, float]]  # (clip_id, score), score non-increasing

    def ids(self) -> list[str]:
        return [cid for cid, _ in self.entries]


@dataclass
class EvalReport:
    map_at_k: dict[int, float]
    recall_at_k: dict[int, float]
    per_query: list[dict]
    gallery_size: int
    query_count: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "map_at_k": {str(k): v for k, v in sorted(self.map_at_k.items())},
            "recall_at_k": {str(k): v for k, v in sorted(self.recall_at_k.items())},
            "gallery_size": self.gallery_size,
            "query_count": self.query_count,
            "per_query": self.per_query,
            **self.extra,
        }


def rank_gallery(
    z_qm: np.ndarray,
    gallery: EmbeddingTable,
    exclude: set[str] | None = None,
    query_id: str = "",
) -> RankedList:
    """Rank every non-excluded gallery clip by cosine against ``z_qm``."""
    exclude = exclude or set()
    ids = [i for i in gallery.ids() if i not in exclude]
    if not ids:
        raise ValidationError("effective gallery is empty")
    q = np.asarray(z_qm, dtype=np.float64)
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise DegenerateVectorError("cannot rank with a zero query embedding")
    mat = gallery.matrix(ids)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateVectorError("zero vector in gallery")
    scores = (mat @ q) / (norms * qn)
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return RankedList(query_id=query_id, entries=[(ids[i], float(scores[i])) for i in order])


def average_precision_at_k(ranked: RankedList, gt: set[str], k: int) -> float:
    """AP@K = (1 / min(K, |gt|)) * sum_{r<=K} P(r) * rel(r)."""
    if not gt:
        raise ValidationError("ground-truth set is empty")
    if k < 1:
        raise ValidationError(f"K must be >= 1, got {k}")
    hits = 0
    total = 0.0
    for rank, (clip_id, _score) in enumerate(ranked.entries[:k], start=1):
        if clip_id in gt:
            hits += 1
            total += hits / rank
    return total / min(k, len(gt))


def recall_at_k(ranked: RankedList, gt: set[str], k: int) -> int:
    """1 iff any ground truth appears in the top K."""
    if not gt:
        raise ValidationError("ground-truth set is empty")
    return int(any(clip_id in gt for clip_id, _ in ranked.entries[:k]))


def map_at_k(
    queries: list,
    rankings: dict[str, RankedList],
    gts: dict[str, set[str]],
    ks: tuple[int, ...] = DEFAULT_KS,
    gallery_size: int = 0,
) -> EvalReport:
    """Mean AP@K and Recall@K over queries, with the per-query breakdown.

    ``queries`` is a list of query ids (or objects with ``.query_key``);
    every query id must appear in ``rankings`` and ``gts``.
    """
    qids = [q if isinstance(q, str) else q.query_key for q in queries]
    if not qids:
        raise ValidationError("no queries to evaluate")
    per_query = []
    for qid in qids:
        ranked = rankings.get(qid)
        if ranked is None:
            raise ValidationError(f"missing ranking for query {qid!r}")
        gt = gts[qid]
        row = {"query_id": qid, "gt_size": len(gt)}
        for k in ks:
            row[f"ap@{k}"] = average_precision_at_k(ranked, gt, k)
            row[f"recall@{k}"] = recall_at_k(ranked, gt, k)
        per_query.append(row)
    maps = {k: float(np.mean([r[f"ap@{k}"] for r in per_query])) for k in ks}
    recalls = {k: float(np.mean([r[f"recall@{k}"] for r in per_query])) for k in ks}
    return EvalReport(
        map_at_k=maps,
        recall_at_k=recalls,
        per_query=per_query,
        gallery_size=gallery_size,
        query_count=len(qids),
    )


def evaluate_queries(
    params,
    queries: list,
    video_table: EmbeddingTable,
    text_table: EmbeddingTable,
    gallery: EmbeddingTable,
    ks: tuple[int, ...] = DEFAULT_KS,
    exclude_self: bool = True,
    threads: int = 1,
) -> EvalReport:
    """Full composed-query evaluation against a gallery table.

    Each query's video embedding and modification-text embedding run
    through the retrieval head, the gallery is ranked by cosine (the query
    clip itself excluded unless asked otherwise), and AP/recall are
    averaged. Per-query work is independent, so it may fan out to threads;
    results are assembled in query order either way.
    """
    from .model import composed_forward

    def rank_one(q) -> RankedList:
        z_q = video_table.vector(q.query_clip_id)
        z_text = text_table.vector(q.modification_text)
        zqm, _cache = composed_forward(z_q, z_text, params)
        exclude = {q.query_clip_id} if exclude_self else set()
        return rank_gallery(zqm[0], gallery, exclude, query_id=q.query_key)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranked_lists = list(pool.map(rank_one, queries))
    else:
        ranked_lists = [rank_one(q) for q in queries]

    rankings = {q.query_key: r for q, r in zip(queries, ranked_lists)}
    gts = {q.query_key: set(q.gt_target_ids) for q in queries}
    return map_at_k(queries, rankings, gts, ks=ks, gallery_size=len(gallery))
