"""Label grammar, pair discovery, and pair classification."""

import numpy as np
import pytest

from covrbench.errors import InvalidPairError, MissingIdError, ValidationError
from covrbench.store import EmbeddingRecord, EmbeddingTable, cosine
from covrbench.taxonomy import (
    CHANGE_EVENT,
    CHANGE_TEMPORAL,
    LabelPair,
    LabelRecord,
    LabelStore,
    classify_pair,
    classify_pairs,
    pair_labels,
    parse_event_tag,
)


class TestEventTagParsing:
    @pytest.mark.parametrize(
        "caption,tag,remainder",
        [
            ("(VT) tsukahara stretched with 2 turn", "VT", "tsukahara stretched with 2 turn"),
            ("(FX) switch leap with 0.5 turn", "FX", "switch leap with 0.5 turn"),
            ("(Vault) tsukahara stretched with 2 turn", "VT", "tsukahara stretched with 2 turn"),
            ("(Floor Exercise) switch leap with 1 turn", "FX", "switch leap with 1 turn"),
            ("(Balance Beam) switch leap with 1 turn", "BB", "switch leap with 1 turn"),
            ("Forward, 3.5 Soms.Pike, Entry", "Forward", "3.5 Soms.Pike, Entry"),
            ("Arm.Back, 2.5 Twists, 2 Soms.Pike, Entry", "Arm.Back", "2.5 Twists, 2 Soms.Pike, Entry"),
            ("Inward, 4.5 Soms.Tuck, Entry", "Inward", "4.5 Soms.Tuck, Entry"),
            ("Reverse, 1.5 Soms.Pike, Entry", "Reverse", "1.5 Soms.Pike, Entry"),
        ],
    )
    def test_grammars(self, caption, tag, remainder):
        got_tag, got_rem = parse_event_tag(caption)
        assert got_tag == tag
        assert got_rem == remainder

    def test_unparseable_caption(self):
        with pytest.raises(ValidationError):
            parse_event_tag("just words with no structure")

    def test_empty_caption_rejected(self):
        with pytest.raises(ValidationError):
            LabelRecord.from_caption("x", "   ")

    def test_source_dataset_inferred(self):
        gym = LabelRecord.from_caption("a", "(UB) giant circle backward")
        dive = LabelRecord.from_caption("b", "Back, 2.5 Soms.Pike, Entry")
        assert gym.source_dataset == "gym"
        assert dive.source_dataset == "diving"


def caption_table(captions: dict[str, np.ndarray], dim: int) -> EmbeddingTable:
    records = [
        EmbeddingRecord(id=k, vector=v.astype(np.float32), kind="text")
        for k, v in captions.items()
    ]
    return EmbeddingTable.from_records(dim, records)


class TestPairLabels:
    def test_duplicate_captions_pair_at_similarity_one(self):
        v = np.array([1.0, 2.0, 3.0])
        table = caption_table({"a": v, "b": v.copy()}, 3)
        labels = [
            LabelRecord.from_caption("a", "(VT) tsukahara stretched with 2 turn"),
            LabelRecord.from_caption("b", "(VT) tsukahara stretched with 2 turn"),
        ]
        pairs = pair_labels(labels, table, threshold=0.9)
        assert {p.key() for p in pairs} == {("a", "b"), ("b", "a")}
        assert pairs[0].similarity == pytest.approx(1.0, abs=1e-6)

    def test_near_identical_captions_pair(self, rng):
        base = rng.normal(size=16)
        table = caption_table({"t2": base, "t1": base + 0.01 * rng.normal(size=16)}, 16)
        labels = [
            LabelRecord.from_caption("t2", "(VT) tsukahara stretched with 2 turn"),
            LabelRecord.from_caption("t1", "(VT) tsukahara stretched with 1 turn"),
        ]
        pairs = pair_labels(labels, table, threshold=0.9)
        assert {p.key() for p in pairs} == {("t1", "t2"), ("t2", "t1")}

    def test_matches_brute_force_enumeration(self, rng):
        n, dim, threshold = 10, 8, 0.6
        vectors = {f"L{i}": rng.normal(size=dim) for i in range(n)}
        table = caption_table(vectors, dim)
        labels = [
            LabelRecord.from_caption(f"L{i}", f"(FX) routine {i} with 1 turn") for i in range(n)
        ]
        got = {p.key() for p in pair_labels(labels, table, threshold)}
        want = set()
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                a, b = f"L{i}", f"L{j}"
                if cosine(table.vector(a), table.vector(b)) >= threshold:
                    want.add((a, b))
        assert got == want

    def test_symmetric_as_unordered_set(self, rng):
        vectors = {f"L{i}": rng.normal(size=6) for i in range(8)}
        table = caption_table(vectors, 6)
        labels = [LabelRecord.from_caption(f"L{i}", f"(BB) move {i}") for i in range(8)]
        pairs = {p.key() for p in pair_labels(labels, table, threshold=0.3)}
        assert all((b, a) in pairs for a, b in pairs)

    def test_threshold_anti_monotone(self, rng):
        vectors = {f"L{i}": rng.normal(size=6) for i in range(8)}
        table = caption_table(vectors, 6)
        labels = [LabelRecord.from_caption(f"L{i}", f"(BB) move {i}") for i in range(8)]
        low = {p.key() for p in pair_labels(labels, table, threshold=0.2)}
        high = {p.key() for p in pair_labels(labels, table, threshold=0.6)}
        assert high <= low

    def test_missing_embedding(self, rng):
        table = caption_table({"a": rng.normal(size=4)}, 4)
        labels = [
            LabelRecord.from_caption("a", "(FX) move one"),
            LabelRecord.from_caption("b", "(FX) move two"),
        ]
        with pytest.raises(MissingIdError):
            pair_labels(labels, table, threshold=0.5)

    def test_overrides(self, rng):
        v = rng.normal(size=4)
        table = caption_table({"a": v, "b": v + 0.001, "c": -v}, 4)
        labels = [
            LabelRecord.from_caption("a", "(FX) move with 1 turn"),
            LabelRecord.from_caption("b", "(FX) move with 2 turn"),
            LabelRecord.from_caption("c", "(FX) move with 3 turn"),
        ]
        deny = {("a", "b"): False}
        got = {p.key() for p in pair_labels(labels, table, 0.9, overrides=deny)}
        assert ("a", "b") not in got and ("b", "a") not in got
        allow = {("a", "c"): True}
        got = {p.key() for p in pair_labels(labels, table, 0.9, overrides=allow)}
        assert ("a", "c") in got and ("c", "a") in got


class TestClassifyPair:
    def _store(self):
        return LabelStore(
            [
                LabelRecord.from_caption("fx", "(FX) switch leap with 0.5 turn"),
                LabelRecord.from_caption("bb", "(BB) switch leap with 0.5 turn"),
                LabelRecord.from_caption("t2", "(VT) stretched salto forward with 2 turn off"),
                LabelRecord.from_caption("t05", "(VT) stretched salto forward with 0.5 turn off"),
                LabelRecord.from_caption("fx2", "(FX) switch leap with 0.5 turn"),
                LabelRecord.from_caption("other", "(UB) clear hip circle"),
            ]
        )

    def test_event_change(self):
        store = self._store()
        assert classify_pair(LabelPair("fx", "bb", 0.99), store) == CHANGE_EVENT

    def test_temporal_change(self):
        store = self._store()
        assert classify_pair(LabelPair("t2", "t05", 0.99), store) == CHANGE_TEMPORAL

    def test_identical_pair_rejected(self):
        store = self._store()
        with pytest.raises(InvalidPairError):
            classify_pair(LabelPair("fx", "fx2", 1.0), store)

    def test_both_differ_rejected(self):
        store = self._store()
        with pytest.raises(InvalidPairError):
            classify_pair(LabelPair("fx", "other", 0.5), store)

    def test_never_temporal_when_tags_differ(self):
        store = self._store()
        for a in ("fx", "bb", "other"):
            for b in ("fx", "bb", "other"):
                if a == b:
                    continue
                try:
                    kind = classify_pair(LabelPair(a, b, 0.5), store)
                except InvalidPairError:
                    continue
                src, dst = store.get(a), store.get(b)
                if src.event_tag != dst.event_tag:
                    assert kind == CHANGE_EVENT

    def test_batch_classification_drops_invalid(self):
        store = self._store()
        pairs = [
            LabelPair("fx", "bb", 0.99),
            LabelPair("fx", "other", 0.5),
            LabelPair("t2", "t05", 0.95),
        ]
        kept = classify_pairs(pairs, store)
        assert [(p.key(), p.change_kind) for p in kept] == [
            (("fx", "bb"), CHANGE_EVENT),
            (("t2", "t05"), CHANGE_TEMPORAL),
        ]


class TestLabelStore:
    def test_jsonl_roundtrip(self, tmp_path):
        import json

        path = tmp_path / "labels.jsonl"
        rows = [
            {"label_id": "a", "caption": "(VT) tsukahara stretched with 2 turn"},
            {"label_id": "b", "caption": "Inward, 3.5 Soms.Tuck, Entry", "source_dataset": "diving"},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        store = LabelStore.from_jsonl(path)
        assert len(store) == 2
        assert store.get("a").event_tag == "VT"
        assert store.get("b").event_tag == "Inward"

    def test_duplicate_ids_rejected(self):
        lab = LabelRecord.from_caption("a", "(FX) move")
        with pytest.raises(ValidationError):
            LabelStore([lab, lab])
