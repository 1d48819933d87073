"""Synthetic benchmark corpus for tests and the acceptance suite.

Builds a desk-scale world with the same shape as the real one: clustered
clip embeddings standing in for encoder outputs, caption embeddings that
make designated label pairs similar, and modification-text embeddings laid
along the target-minus-query center direction so the retrieval task is
learnable by construction.

Cluster centers are rejection-sampled until every pairwise cosine is below
a separation bound, so chance retrieval stays near zero while intra-cluster
similarity stays near one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .store import EmbeddingRecord, EmbeddingTable, KIND_FRAME_SEQUENCE, KIND_TEXT, KIND_VIDEO, save_table
from .taxonomy import ClipRecord, LabelPair, LabelRecord, LabelStore, classify_pairs
from .triplets import Modification, TemplatedGenerator, modifications_for_pairs

_UNITS = ("turn", "twist", "salto", "somersault")


@dataclass
class SyntheticCorpus:
    labels: LabelStore
    clips: list[ClipRecord]
    caption_table: EmbeddingTable      # keyed by label id
    video_table: EmbeddingTable        # keyed by clip id, kind=video
    frames_table: EmbeddingTable       # keyed by clip id, kind=frame_sequence
    text_table: EmbeddingTable         # keyed by modification text
    pairs: list[LabelPair]
    mods: dict[tuple[str, str], Modification]
    centers: np.ndarray
    clip_class: dict[str, int]

    def write(self, outdir: str | Path) -> dict[str, Path]:
        """Serialize every artifact the CLI pipeline consumes."""
        from .triplets import write_jsonl

        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "labels": outdir / "labels.jsonl",
            "clips": outdir / "clips.jsonl",
            "captions": outdir / "captions.tfcv",
            "videos": outdir / "videos.tfcv",
            "frames": outdir / "frames.tfcv",
            "texts": outdir / "texts.tfcv",
        }
        write_jsonl(
            paths["labels"],
            [
                {
                    "label_id": lab.label_id,
                    "caption": lab.caption,
                    "source_dataset": lab.source_dataset,
                }
                for lab in self.labels.labels
            ],
        )
        write_jsonl(
            paths["clips"],
            [
                {
                    "clip_id": c.clip_id,
                    "label_id": c.label_id,
                    "source_video_id": c.source_video_id,
                    "duration_s": c.duration_s,
                }
                for c in self.clips
            ],
        )
        save_table(self.caption_table, paths["captions"], source={"generator": "synthetic"})
        save_table(self.video_table, paths["videos"], source={"generator": "synthetic"})
        save_table(self.frames_table, paths["frames"], source={"generator": "synthetic"})
        save_table(self.text_table, paths["texts"], source={"generator": "synthetic"})
        return paths


def _separated_unit_vectors(
    rng: np.random.Generator, count: int, dim: int, max_cosine: float, tries: int = 2000
) -> np.ndarray:
    vectors: list[np.ndarray] = []
    for _ in range(tries):
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        if all(float(np.dot(v, u)) < max_cosine for u in vectors):
            vectors.append(v)
            if len(vectors) == count:
                return np.stack(vectors)
    raise ValidationError(
        f"could not draw {count} centers with pairwise cosine < {max_cosine} in {dim} dims"
    )


def make_synthetic_corpus(
    n_clusters: int = 20,
    clips_per_cluster: int = 30,
    n_videos: int = 40,
    dim: int = 64,
    noise: float = 0.05,
    frames_per_clip: int = 4,
    center_max_cosine: float = 0.3,
    seed: int = 0,
) -> SyntheticCorpus:
    """Build the synthetic world. Deterministic for a fixed seed.

    Clusters are paired (0,1), (2,3), ...; even pairs differ temporally
    (a count substitution in the caption), odd pairs differ by apparatus.
    Captions use the gym grammar so the templated modification generator
    applies unchanged. Counts, units, and apparatus codes are varied so
    every directed pair gets a unique modification text, which the text
    table is keyed by.
    """
    if n_clusters % 2 != 0:
        raise ValidationError("n_clusters must be even (clusters are paired)")
    rng = np.random.default_rng(seed)
    centers = _separated_unit_vectors(rng, n_clusters, dim, center_max_cosine)

    labels: list[LabelRecord] = []
    pairs: list[LabelPair] = []
    for p in range(n_clusters // 2):
        a, b = 2 * p, 2 * p + 1
        id_a, id_b = f"L{a:02d}", f"L{b:02d}"
        if p % 2 == 0:
            unit = _UNITS[(p // 2) % len(_UNITS)]
            cap_a = f"(FX) drill p{p} with {p + 1} {unit}"
            cap_b = f"(FX) drill p{p} with {p + 2} {unit}"
        else:
            cap_a = f"(E{p}A) routine p{p} with 1 turn"
            cap_b = f"(E{p}B) routine p{p} with 1 turn"
        labels.append(LabelRecord.from_caption(id_a, cap_a))
        labels.append(LabelRecord.from_caption(id_b, cap_b))
        pairs.append(LabelPair(id_a, id_b, similarity=1.0))
        pairs.append(LabelPair(id_b, id_a, similarity=1.0))
    store = LabelStore(labels)
    pairs = classify_pairs(sorted(pairs, key=lambda q: q.key()), store)

    # caption embeddings: shared per-pair direction plus small jitter, so
    # designated pairs sit near cosine 1 and everything else far below
    pair_dirs = _separated_unit_vectors(rng, n_clusters // 2, dim, 0.5)
    caption_records = []
    for idx, lab in enumerate(store.labels):
        base = pair_dirs[idx // 2]
        vec = base + 0.02 * rng.normal(size=dim)
        caption_records.append(
            EmbeddingRecord(id=lab.label_id, vector=vec.astype(np.float32), kind=KIND_TEXT)
        )
    caption_table = EmbeddingTable.from_records(dim, caption_records)

    # clips: spread each cluster across the synthetic source videos
    clips: list[ClipRecord] = []
    clip_class: dict[str, int] = {}
    video_records = []
    frame_records = []
    for c in range(n_clusters):
        for j in range(clips_per_cluster):
            serial = c * clips_per_cluster + j
            clip_id = f"c{serial:04d}"
            clips.append(
                ClipRecord(
                    clip_id=clip_id,
                    label_id=f"L{c:02d}",
                    source_video_id=f"v{serial % n_videos:02d}",
                    duration_s=float(rng.uniform(0.5, 3.0)),
                )
            )
            clip_class[clip_id] = c
            vec = centers[c] + noise * rng.normal(size=dim)
            video_records.append(
                EmbeddingRecord(id=clip_id, vector=vec.astype(np.float32), kind=KIND_VIDEO)
            )
            frames = centers[c][None, :] + noise * rng.normal(size=(frames_per_clip, dim))
            frame_records.append(
                EmbeddingRecord(
                    id=clip_id,
                    vector=frames.mean(axis=0).astype(np.float32),
                    kind=KIND_FRAME_SEQUENCE,
                    frames=frames.astype(np.float32),
                )
            )
    video_table = EmbeddingTable.from_records(dim, video_records)
    frames_table = EmbeddingTable.from_records(dim, frame_records)

    # modification texts and their constructed embeddings
    mods = modifications_for_pairs(pairs, TemplatedGenerator(store))
    cluster_of = {lab.label_id: i for i, lab in enumerate(store.labels)}
    text_records = []
    seen_texts: set[str] = set()
    for pair in pairs:
        text = mods[pair.key()].text
        if text in seen_texts:
            raise ValidationError(f"synthetic corpus produced duplicate text {text!r}")
        seen_texts.add(text)
        direction = centers[cluster_of[pair.dst_label]] - centers[cluster_of[pair.src_label]]
        vec = direction + noise * rng.normal(size=dim)
        text_records.append(
            EmbeddingRecord(id=text, vector=vec.astype(np.float32), kind=KIND_TEXT)
        )
    text_table = EmbeddingTable.from_records(dim, text_records)

    return SyntheticCorpus(
        labels=store,
        clips=clips,
        caption_table=caption_table,
        video_table=video_table,
        frames_table=frames_table,
        text_table=text_table,
        pairs=pairs,
        mods=mods,
        centers=centers,
        clip_class=clip_class,
    )


def make_separable_classes(
    n_classes: int = 2,
    per_class: int = 40,
    dim: int = 8,
    frames_per_clip: int = 3,
    seed: int = 0,
) -> tuple[EmbeddingTable, dict[str, int]]:
    """Small linearly separable frame-sequence table for classifier tests."""
    rng = np.random.default_rng(seed)
    centers = _separated_unit_vectors(rng, n_classes, dim, 0.2) * 4.0
    records = []
    labels: dict[str, int] = {}
    for c in range(n_classes):
        for j in range(per_class):
            clip_id = f"k{c}_{j:03d}"
            frames = centers[c][None, :] + 0.3 * rng.normal(size=(frames_per_clip, dim))
            records.append(
                EmbeddingRecord(
                    id=clip_id,
                    vector=frames.mean(axis=0).astype(np.float32),
                    kind=KIND_FRAME_SEQUENCE,
                    frames=frames.astype(np.float32),
                )
            )
            labels[clip_id] = c
    return EmbeddingTable.from_records(dim, records), labels
