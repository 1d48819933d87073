import numpy as np
import pytest

from covrbench.store import EmbeddingRecord, EmbeddingTable


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_table(vectors: np.ndarray, prefix: str = "id", kind: str = "video") -> EmbeddingTable:
    records = [
        EmbeddingRecord(id=f"{prefix}{i:03d}", vector=v.astype(np.float32), kind=kind)
        for i, v in enumerate(vectors)
    ]
    return EmbeddingTable.from_records(vectors.shape[1], records)
