"""Fine-grained label space: catalog parsing, pairing, and pair classification.

Labels arrive as captions in two grammars. Gymnastics captions start with a
parenthesized apparatus token, e.g. "(VT) tsukahara stretched with 2 turn";
long-form apparatus names are canonicalized to the usual codes. Diving
captions are comma-separated and start with the takeoff family, e.g.
"Forward, 3.5 Soms.Pike, Entry". The event tag is that leading token and
the remainder is everything after it.

A pair of similar labels is a temporal change when the tags match but the
remainders differ, and an event change when the tags differ but the
remainders match. Pairs that differ in both are not usable and are dropped
by the batch classifier with a logged reason.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidPairError, MissingIdError, ValidationError
from .store import EmbeddingTable, cosine

logger = logging.getLogger(__name__)

SOURCE_GYM = "gym"
SOURCE_DIVING = "diving"

CHANGE_TEMPORAL = "temporal"
CHANGE_EVENT = "event"

# Long-form apparatus names seen in captions, canonicalized to codes.
_APPARATUS_CODES = {
    "VAULT": "VT",
    "FLOOR EXERCISE": "FX",
    "BALANCE BEAM": "BB",
    "UNEVEN BARS": "UB",
}

_GYM_TAG_RE = re.compile(r"^\(([^)]+)\)\s*(.*)$")
_DIVING_TAG_RE = re.compile(r"^(Forward|Back|Reverse|Inward|Arm(?:\.\w+)?)\s*,\s*(.*)$")


def parse_event_tag(caption: str) -> tuple[str, str]:
    """Split a caption into (event tag, remainder).

    Returns the canonical apparatus code for gym captions and the takeoff
    family for diving captions. Raises ValidationError when neither grammar
    matches.
    """
    caption = caption.strip()
    m = _GYM_TAG_RE.match(caption)
    if m:
        tag = m.group(1).strip()
        tag = _APPARATUS_CODES.get(tag.upper(), tag)
        return tag, m.group(2).strip()
    m = _DIVING_TAG_RE.match(caption)
    if m:
        return m.group(1), m.group(2).strip()
    raise ValidationError(f"caption has no recognizable event tag: {caption!r}")


@dataclass(frozen=True)
class LabelRecord:
    label_id: str
    caption: str
    event_tag: str
    remainder: str
    source_dataset: str

    @classmethod
    def from_caption(
        cls,
        label_id: str | int,
        caption: str,
        event_tag: str | None = None,
        source_dataset: str | None = None,
    ) -> "LabelRecord":
        if not caption or not caption.strip():
            raise ValidationError(f"label {label_id!r}: empty caption")
        caption = caption.strip()
        if event_tag is None:
            tag, remainder = parse_event_tag(caption)
        else:
            tag = event_tag
            try:
                _parsed, remainder = parse_event_tag(caption)
            except ValidationError:
                remainder = caption
        if source_dataset is None:
            source_dataset = SOURCE_GYM if _GYM_TAG_RE.match(caption) else SOURCE_DIVING
        return cls(
            label_id=str(label_id),
            caption=caption,
            event_tag=tag,
            remainder=remainder,
            source_dataset=source_dataset,
        )


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    label_id: str
    source_video_id: str
    duration_s: float

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValidationError(f"clip {self.clip_id!r}: duration must be positive")


@dataclass
class LabelPair:
    src_label: str
    dst_label: str
    similarity: float
    change_kind: str | None = None

    def key(self) -> tuple[str, str]:
        return (self.src_label, self.dst_label)

    def unordered_key(self) -> tuple[str, str]:
        a, b = sorted((self.src_label, self.dst_label))
        return (a, b)


class LabelStore:
    """Id-indexed label catalog."""

    def __init__(self, labels: list[LabelRecord]):
        self._by_id: dict[str, LabelRecord] = {}
        for lab in labels:
            if lab.label_id in self._by_id:
                raise ValidationError(f"duplicate label id {lab.label_id!r}")
            self._by_id[lab.label_id] = lab
        self.labels = labels

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label_id: str) -> bool:
        return str(label_id) in self._by_id

    def get(self, label_id: str) -> LabelRecord:
        rec = self._by_id.get(str(label_id))
        if rec is None:
            raise MissingIdError(f"unknown label id {label_id!r}")
        return rec

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "LabelStore":
        labels = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{line_no}: bad JSON") from exc
            labels.append(
                LabelRecord.from_caption(
                    label_id=obj["label_id"],
                    caption=obj["caption"],
                    event_tag=obj.get("event_tag"),
                    source_dataset=obj.get("source_dataset"),
                )
            )
        return cls(labels)


def load_clips_jsonl(path: str | Path) -> list[ClipRecord]:
    clips = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{line_no}: bad JSON") from exc
        clips.append(
            ClipRecord(
                clip_id=str(obj["clip_id"]),
                label_id=str(obj["label_id"]),
                source_video_id=str(obj["source_video_id"]),
                duration_s=float(obj["duration_s"]),
            )
        )
    return clips


def load_pair_overrides(path: str | Path) -> dict[tuple[str, str], bool]:
    """Allow/deny list: unordered pair key -> keep flag."""
    overrides: dict[tuple[str, str], bool] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        a, b = sorted((str(obj["src_label"]), str(obj["dst_label"])))
        overrides[(a, b)] = bool(obj["keep"])
    return overrides


def pair_labels(
    labels: list[LabelRecord],
    caption_embeddings: EmbeddingTable,
    threshold: float,
    overrides: dict[tuple[str, str], bool] | None = None,
) -> list[LabelPair]:
    """All ordered pairs of distinct labels whose caption cosine clears the threshold.

    Overrides stand in for manual verification: keep=False removes a pair
    regardless of similarity, keep=True admits it below threshold. Output
    is sorted by (src, dst) and symmetric as a set of unordered pairs.
    """
    if not 0 < threshold < 1:
        raise ValidationError(f"threshold must be in (0, 1), got {threshold}")
    overrides = overrides or {}
    for lab in labels:
        if lab.label_id not in caption_embeddings:
            raise MissingIdError(f"no caption embedding for label {lab.label_id!r}")

    ordered = sorted(labels, key=lambda l: l.label_id)
    pairs: list[LabelPair] = []
    for i, a in enumerate(ordered):
        va = caption_embeddings.vector(a.label_id)
        for b in ordered[i + 1 :]:
            sim = cosine(va, caption_embeddings.vector(b.label_id))
            keep = overrides.get((a.label_id, b.label_id))
            if keep is False:
                continue
            if sim >= threshold or keep is True:
                pairs.append(LabelPair(a.label_id, b.label_id, sim))
                pairs.append(LabelPair(b.label_id, a.label_id, sim))
    pairs.sort(key=lambda p: p.key())
    return pairs


def classify_pair(pair: LabelPair, labels: LabelStore) -> str:
    """Temporal vs event change for one pair; raises on degenerate pairs."""
    src = labels.get(pair.src_label)
    dst = labels.get(pair.dst_label)
    same_tag = src.event_tag == dst.event_tag
    same_remainder = src.remainder == dst.remainder
    if same_tag and same_remainder:
        raise InvalidPairError(
            f"labels {pair.src_label!r} and {pair.dst_label!r} are identical in tag and remainder"
        )
    if same_tag:
        return CHANGE_TEMPORAL
    if same_remainder:
        return CHANGE_EVENT
    raise InvalidPairError(
        f"pair {pair.src_label!r} -> {pair.dst_label!r} differs in both tag and remainder"
    )


def classify_pairs(pairs: list[LabelPair], labels: LabelStore) -> list[LabelPair]:
    """Classify every pair, dropping unusable ones with a logged reason."""
    kept = []
    for pair in pairs:
        try:
            pair.change_kind = classify_pair(pair, labels)
        except InvalidPairError as exc:
            logger.info("dropping pair %s->%s: %s", pair.src_label, pair.dst_label, exc)
            continue
        kept.append(pair)
    return kept
