"""Triplet and test-query construction from label pairs and a clip catalog.

The pipeline is: split source videos into train/test, attach a modification
text to every classified label pair, exhaustively enumerate (query clip,
modification, target clip) triplets within each partition, then merge the
test-side triplets into multi-ground-truth queries where every test clip
bearing the target label counts as a valid target.

Everything is deterministic given (seed, threshold, templates): splits use
a seeded generator over sorted video ids, enumeration walks pairs and clips
in sorted order, and the templated modification generator is a pure
function of the two captions.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidPairError, MissingIdError, ValidationError
from .taxonomy import (
    CHANGE_EVENT,
    CHANGE_TEMPORAL,
    ClipRecord,
    LabelPair,
    LabelStore,
    SOURCE_DIVING,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# split


@dataclass
class SplitPlan:
    train_video_ids: set[str]
    test_video_ids: set[str]
    seed: int

    def partition_of(self, source_video_id: str) -> str:
        if source_video_id in self.test_video_ids:
            return "test"
        if source_video_id in self.train_video_ids:
            return "train"
        raise MissingIdError(f"source video {source_video_id!r} not in split plan")

    def to_dict(self) -> dict:
        return {
            "train_video_ids": sorted(self.train_video_ids),
            "test_video_ids": sorted(self.test_video_ids),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SplitPlan":
        return cls(
            train_video_ids=set(obj["train_video_ids"]),
            test_video_ids=set(obj["test_video_ids"]),
            seed=int(obj["seed"]),
        )


def split_by_source_video(clips: list[ClipRecord], test_fraction: float, seed: int) -> SplitPlan:
    """Disjoint train/test partition over source videos, seeded shuffle.

    The test side gets round(n_videos * test_fraction) videos, clamped so
    both sides stay nonempty.
    """
    if not 0 < test_fraction < 1:
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    videos = sorted({c.source_video_id for c in clips})
    if len(videos) < 2:
        raise ValidationError(f"need at least 2 source videos, got {len(videos)}")
    n_test = int(round(len(videos) * test_fraction))
    n_test = min(max(n_test, 1), len(videos) - 1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(videos))
    test = {videos[i] for i in order[:n_test]}
    train = {v for v in videos if v not in test}
    return SplitPlan(train_video_ids=train, test_video_ids=test, seed=seed)


# ---------------------------------------------------------------------------
# modification texts


@dataclass(frozen=True)
class Modification:
    text: str
    rule: str
    flagged: bool = False


ModificationGenerator = Callable[[LabelPair], Modification]

_NUMBER_RE = re.compile(r"^\d+(\.\d+)?$")

# Unit words that follow a count in the gym caption grammar.
_GYM_UNITS = {"turn", "turns", "twist", "twists", "salto", "saltos", "somersault", "somersaults"}
_GYM_POSITIONS = {"stretched", "tucked", "piked", "layout", "free"}

_SOMS_RE = re.compile(r"^(\d+(?:\.\d+)?)\s+Soms\.(\w+)$")
_TWISTS_RE = re.compile(r"^(\d+(?:\.\d+)?)\s+Twists?$")


def _tokens(remainder: str) -> list[str]:
    return [t.strip(".,") for t in remainder.split() if t.strip(".,")]


def _gym_modification(src_rem: str, dst_rem: str) -> Modification:
    src_t, dst_t = _tokens(src_rem), _tokens(dst_rem)
    if src_t == dst_t:
        raise InvalidPairError("captions carry no delta")

    if len(src_t) == len(dst_t):
        diff = [i for i, (a, b) in enumerate(zip(src_t, dst_t)) if a != b]
        num_idx = [i for i in diff if _NUMBER_RE.match(dst_t[i])]
        pos_idx = [i for i in diff if dst_t[i].lower() in _GYM_POSITIONS]
        # count substitution: one number changed, followed by its unit word
        if len(diff) == 1 and num_idx:
            i = diff[0]
            if i + 1 < len(dst_t) and dst_t[i + 1].lower() in _GYM_UNITS:
                return Modification(f"show with {dst_t[i]} {dst_t[i + 1]}.", rule="count")
        # body-position substitution, optionally with a count change
        if pos_idx and len(diff) <= 2 and len(num_idx) == len(diff) - 1:
            pos = dst_t[pos_idx[0]]
            if num_idx:
                i = num_idx[0]
                unit = dst_t[i + 1] if i + 1 < len(dst_t) and dst_t[i + 1].lower() in _GYM_UNITS else ""
                suffix = f" with {dst_t[i]} {unit}".rstrip() if unit else f" with {dst_t[i]}"
                return Modification(f"show {pos}{suffix}.", rule="position")
            nxt = dst_t[pos_idx[0] + 1] if pos_idx[0] + 1 < len(dst_t) else ""
            tail = f" {nxt}" if nxt.lower() in _GYM_UNITS else ""
            return Modification(f"show {pos}{tail}.", rule="position")

    # generic fallback: the destination tokens outside the longest shared
    # prefix/suffix, prefixed by a shared "with" when one directly precedes
    pre = 0
    while pre < min(len(src_t), len(dst_t)) and src_t[pre] == dst_t[pre]:
        pre += 1
    suf = 0
    while (
        suf < min(len(src_t), len(dst_t)) - pre
        and src_t[len(src_t) - 1 - suf] == dst_t[len(dst_t) - 1 - suf]
    ):
        suf += 1
    delta = dst_t[pre : len(dst_t) - suf]
    if not delta:
        delta = dst_t
    else:
        if pre > 0 and dst_t[pre - 1].lower() == "with":
            delta = ["with"] + delta
        if suf > 0 and dst_t[len(dst_t) - suf].lower() in _GYM_UNITS:
            delta = delta + [dst_t[len(dst_t) - suf]]
    return Modification(f"show {' '.join(delta)}.", rule="fallback", flagged=True)


def _diving_fields(remainder: str) -> dict:
    fields: dict = {"twists": None, "soms": None, "position": None, "other": []}
    for part in [p.strip() for p in remainder.split(",") if p.strip()]:
        m = _SOMS_RE.match(part)
        if m:
            fields["soms"] = m.group(1)
            fields["position"] = m.group(2)
            continue
        m = _TWISTS_RE.match(part)
        if m:
            fields["twists"] = m.group(1)
            continue
        fields["other"].append(part)
    return fields


def _diving_modification(src_rem: str, dst_rem: str) -> Modification:
    src_f, dst_f = _diving_fields(src_rem), _diving_fields(dst_rem)
    if src_rem == dst_rem:
        raise InvalidPairError("captions carry no delta")
    if src_f["other"] != dst_f["other"]:
        return Modification(f"Show {dst_rem}.", rule="fallback", flagged=True)
    clauses = []
    if src_f["twists"] != dst_f["twists"] and dst_f["twists"] is not None:
        clauses.append(f"{dst_f['twists']} twists")
    if src_f["soms"] != dst_f["soms"] and dst_f["soms"] is not None:
        soms = f"{dst_f['soms']} somersaults"
        if src_f["position"] != dst_f["position"] and dst_f["position"] is not None:
            soms += f" {dst_f['position']}"
        clauses.append(soms)
    if clauses:
        return Modification(f"Show with {' and '.join(clauses)}.", rule="count")
    if src_f["position"] != dst_f["position"] and dst_f["position"] is not None:
        return Modification(f"Show {dst_f['position']}.", rule="position")
    return Modification(f"Show {dst_rem}.", rule="fallback", flagged=True)


class TemplatedGenerator:
    """Deterministic modification texts from caption deltas.

    Covers count substitution ("show with 1 turn."), apparatus substitution
    ("show on BB."), and body-position substitution ("show tucked with 1
    turn."); anything else gets the generic flagged form.
    """

    def __init__(self, labels: LabelStore):
        self.labels = labels

    def __call__(self, pair: LabelPair) -> Modification:
        src = self.labels.get(pair.src_label)
        dst = self.labels.get(pair.dst_label)
        if src.caption == dst.caption:
            raise InvalidPairError(
                f"identical captions for pair {pair.src_label!r} -> {pair.dst_label!r}"
            )
        kind = pair.change_kind
        if kind == CHANGE_EVENT or (kind is None and src.event_tag != dst.event_tag):
            return Modification(f"show on {dst.event_tag}.", rule="apparatus")
        if src.source_dataset == SOURCE_DIVING:
            return _diving_modification(src.remainder, dst.remainder)
        return _gym_modification(src.remainder, dst.remainder)


def generate_modification(pair: LabelPair, generator: ModificationGenerator) -> Modification:
    """Run one pair through a generator, wrapping failures with pair context."""
    try:
        mod = generator(pair)
    except InvalidPairError:
        raise
    except Exception as exc:
        raise ValidationError(
            f"modification generator failed for {pair.src_label!r} -> {pair.dst_label!r}: {exc}"
        ) from exc
    if not mod.text.strip():
        raise ValidationError(
            f"empty modification for pair {pair.src_label!r} -> {pair.dst_label!r}"
        )
    return mod


def modifications_for_pairs(
    pairs: list[LabelPair], generator: ModificationGenerator
) -> dict[tuple[str, str], Modification]:
    return {pair.key(): generate_modification(pair, generator) for pair in pairs}


# ---------------------------------------------------------------------------
# triplets


@dataclass(frozen=True)
class Triplet:
    query_clip_id: str
    modification_text: str
    target_clip_id: str
    change_kind: str | None = None

    def to_dict(self) -> dict:
        return {
            "query_clip_id": self.query_clip_id,
            "modification_text": self.modification_text,
            "target_clip_id": self.target_clip_id,
            "change_kind": self.change_kind,
        }


@dataclass
class TestQuery:
    query_clip_id: str
    modification_text: str
    gt_target_ids: set[str]
    target_label_id: str

    @property
    def query_key(self) -> str:
        return f"{self.query_clip_id}||{self.modification_text}"

    def to_dict(self) -> dict:
        return {
            "query_clip_id": self.query_clip_id,
            "modification_text": self.modification_text,
            "gt_target_ids": sorted(self.gt_target_ids),
            "target_label_id": self.target_label_id,
        }


def enumerate_triplets(
    pairs: list[LabelPair],
    clips: list[ClipRecord],
    plan: SplitPlan,
    mods: Mapping[tuple[str, str], Modification | str],
) -> list[Triplet]:
    """One triplet per (pair, same-partition query clip, target clip).

    Output is duplicate-free under the (query, modification, target) key and
    ordered by pair key, then query clip id, then target clip id.
    """
    by_label: dict[str, list[ClipRecord]] = {}
    for clip in sorted(clips, key=lambda c: c.clip_id):
        by_label.setdefault(clip.label_id, []).append(clip)

    seen: set[tuple[str, str, str]] = set()
    out: list[Triplet] = []
    for pair in sorted(pairs, key=lambda p: p.key()):
        mod = mods.get(pair.key())
        if mod is None:
            raise MissingIdError(f"no modification for pair {pair.key()}")
        text = mod.text if isinstance(mod, Modification) else str(mod)
        for q in by_label.get(pair.src_label, []):
            q_part = plan.partition_of(q.source_video_id)
            for t in by_label.get(pair.dst_label, []):
                if t.clip_id == q.clip_id:
                    continue
                if plan.partition_of(t.source_video_id) != q_part:
                    continue
                key = (q.clip_id, text, t.clip_id)
                if key in seen:
                    continue
                seen.add(key)
                out.append(Triplet(q.clip_id, text, t.clip_id, pair.change_kind))
    return out


def partition_triplets(
    triplets: list[Triplet], clips: list[ClipRecord], plan: SplitPlan
) -> tuple[list[Triplet], list[Triplet]]:
    """Split an enumerated triplet list into (train, test) by query clip."""
    by_id = {c.clip_id: c for c in clips}
    train, test = [], []
    for t in triplets:
        part = plan.partition_of(by_id[t.query_clip_id].source_video_id)
        (train if part == "train" else test).append(t)
    return train, test


def build_test_queries(test_triplets: list[Triplet], clips: list[ClipRecord]) -> list[TestQuery]:
    """Merge test triplets into multi-ground-truth queries.

    ``clips`` is the test-gallery catalog; the ground-truth set of a query
    is every gallery clip bearing the target label. Triplets sharing
    (query clip, modification text) collapse into one query.
    """
    by_id = {c.clip_id: c for c in clips}
    by_label: dict[str, list[str]] = {}
    for c in clips:
        by_label.setdefault(c.label_id, []).append(c.clip_id)

    grouped: dict[tuple[str, str], set[str]] = {}
    order: list[tuple[str, str]] = []
    for t in test_triplets:
        target = by_id.get(t.target_clip_id)
        if target is None:
            logger.info("dropping triplet with off-gallery target %r", t.target_clip_id)
            continue
        key = (t.query_clip_id, t.modification_text)
        if key not in grouped:
            grouped[key] = set()
            order.append(key)
        grouped[key].add(target.label_id)

    queries: list[TestQuery] = []
    for key in order:
        labels = sorted(grouped[key])
        gt: set[str] = set()
        for lab in labels:
            gt.update(by_label.get(lab, []))
        gt.discard(key[0])
        if not gt:
            logger.info("dropping query %r: target label absent from gallery", key)
            continue
        if len(labels) > 1:
            logger.warning("query %r merges %d target labels", key, len(labels))
        queries.append(
            TestQuery(
                query_clip_id=key[0],
                modification_text=key[1],
                gt_target_ids=gt,
                target_label_id=labels[0],
            )
        )
    return queries


# ---------------------------------------------------------------------------
# stats


@dataclass
class Stats:
    triplet_count: int
    query_count: int
    mean_gt_per_query: float
    label_count: int
    modification_words: dict[str, float]
    clip_duration_s: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "triplet_count": self.triplet_count,
            "query_count": self.query_count,
            "mean_gt_per_query": self.mean_gt_per_query,
            "label_count": self.label_count,
            "modification_words": self.modification_words,
            "clip_duration_s": self.clip_duration_s,
        }

    def to_text(self) -> str:
        rows = [
            ("training triplets", f"{self.triplet_count}"),
            ("test queries", f"{self.query_count}"),
            ("mean targets per query", f"{self.mean_gt_per_query:.2f}"),
            ("labels", f"{self.label_count}"),
            (
                "modification words (min/mean/max)",
                "{min:.0f} / {mean:.2f} / {max:.0f}".format(**self.modification_words),
            ),
            (
                "clip duration s (min/mean/max)",
                "{min:.2f} / {mean:.2f} / {max:.2f}".format(**self.clip_duration_s),
            ),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def dataset_stats(
    triplets: list[Triplet],
    queries: list[TestQuery],
    clips: list[ClipRecord],
    mods: list[str],
) -> Stats:
    if not triplets or not queries or not clips or not mods:
        raise ValidationError("dataset_stats requires nonempty triplets, queries, clips, mods")
    labels = {c.label_id for c in clips}
    word_counts = [len(m.split()) for m in mods]
    durations = [c.duration_s for c in clips]
    return Stats(
        triplet_count=len(triplets),
        query_count=len(queries),
        mean_gt_per_query=float(np.mean([len(q.gt_target_ids) for q in queries])),
        label_count=len(labels),
        modification_words={
            "min": float(min(word_counts)),
            "mean": float(np.mean(word_counts)),
            "max": float(max(word_counts)),
        },
        clip_duration_s={
            "min": float(min(durations)),
            "mean": float(np.mean(durations)),
            "max": float(max(durations)),
        },
    )


# ---------------------------------------------------------------------------
# serialization


def write_jsonl(path: str | Path, items: list) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        for item in items:
            obj = item.to_dict() if hasattr(item, "to_dict") else item
            f.write(json.dumps(obj, sort_keys=True) + "\n")
    tmp.replace(path)


def read_triplets_jsonl(path: str | Path) -> list[Triplet]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        out.append(
            Triplet(
                query_clip_id=obj["query_clip_id"],
                modification_text=obj["modification_text"],
                target_clip_id=obj["target_clip_id"],
                change_kind=obj.get("change_kind"),
            )
        )
    return out


def read_test_queries_jsonl(path: str | Path) -> list[TestQuery]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        out.append(
            TestQuery(
                query_clip_id=obj["query_clip_id"],
                modification_text=obj["modification_text"],
                gt_target_ids=set(obj["gt_target_ids"]),
                target_label_id=obj["target_label_id"],
            )
        )
    return out
