"""Hybrid dense + keyword embeddings, exact cosine top-k and MMR selection."""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Hashable, Protocol, Sequence, TypeVar

import numpy as np

SPARSE_DIM = 256

T = TypeVar("T")


class RankingError(ValueError):
    pass


class Tokenizer(Protocol):
    def encode(self, text: str) -> list[int]: ...


class Embedder(Protocol):
    model_id: str

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


_WORD = re.compile(r"[A-Za-z0-9]+(?:[-'][A-Za-z0-9]+)*")


class WordHashTokenizer:
    """Offline tokenizer: one id per lowercase word, ``crc32`` of the word."""

    def encode(self, text: str) -> list[int]:
        return [zlib.crc32(w.lower().encode()) for w in _WORD.findall(text)]


class TiktokenTokenizer:
    def __init__(self, encoding: str = "cl100k_base"):
        import tiktoken

        self._enc = tiktoken.get_encoding(encoding)

    def encode(self, text: str) -> list[int]:
        return self._enc.encode(text)


def default_tokenizer() -> Tokenizer:
    try:
        return TiktokenTokenizer()
    except Exception:
        return WordHashTokenizer()


def sparse_encode(token_ids: Sequence[int]) -> np.ndarray:
    """Count token ids modulo 256 and L2-normalize; empty input gives zeros."""
    counts = np.zeros(SPARSE_DIM, dtype=np.float64)
    if len(token_ids):
        np.add.at(counts, np.asarray(token_ids, dtype=np.int64) % SPARSE_DIM, 1.0)
        counts /= np.linalg.norm(counts)
    return counts


class HashingEmbedder:
    """Deterministic dense embedder for offline runs (signed feature hashing of words)."""

    def __init__(self, dim: int = 64, model_id: str = "hashing-64"):
        self.dim = dim
        self.model_id = model_id

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            vec = np.zeros(self.dim)
            for word in _WORD.findall(text.lower()):
                h = zlib.crc32(word.encode())
                vec[h % self.dim] += 1.0 if (h >> 16) & 1 else -1.0
            norm = np.linalg.norm(vec)
            out.append(vec / norm if norm else vec)
        return out


@dataclass(frozen=True)
class HybridVector:
    dense: np.ndarray
    sparse: np.ndarray

    def __post_init__(self) -> None:
        if self.sparse.shape != (SPARSE_DIM,):
            raise RankingError(f"sparse part must have dimension {SPARSE_DIM}")
        norm = float(np.linalg.norm(self.sparse))
        if norm and abs(norm - 1.0) > 1e-9:
            raise RankingError("sparse part must be unit norm or zero")

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.dense, self.sparse])

    def __len__(self) -> int:
        return self.dense.shape[0] + SPARSE_DIM


def hybrid_embed(texts: Sequence[str], embedder: Embedder, tokenizer: Tokenizer) -> list[HybridVector]:
    dense = embedder.embed(texts)
    return [HybridVector(np.asarray(d, dtype=np.float64), sparse_encode(tokenizer.encode(t))) for d, t in zip(dense, texts)]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise RankingError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def rank_topk(
    query: HybridVector,
    items: Sequence[tuple[T, HybridVector]],
    k: int,
    *,
    tiebreak: Callable[[T], Any] = lambda item: (item.doc_key, item.chunk_id),
) -> list[tuple[T, float]]:
    """Items sorted by descending cosine on the concatenated vector, cut at ``k``.

    Ties are broken by ``tiebreak(item)`` (``(doc_key, chunk_id)`` for chunks).
    """
    if not items or k <= 0:
        return []
    q = query.full
    matrix = np.stack([vec.full for _, vec in items])
    if matrix.shape[1] != q.shape[0]:
        raise RankingError(f"dimension mismatch: query {q.shape[0]} vs items {matrix.shape[1]}")
    norms = np.linalg.norm(matrix, axis=1) * (np.linalg.norm(q) or 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0, matrix @ q / np.where(norms > 0, norms, 1.0), 0.0)
    sims = np.clip(sims, -1.0, 1.0)
    order = sorted(range(len(items)), key=lambda i: (-sims[i], tiebreak(items[i][0])))
    return [(items[i][0], float(sims[i])) for i in order[:k]]


def mmr_filter(
    candidates: Sequence[tuple[T, float]],
    lam: float,
    k: int,
    item_vector: Callable[[T], np.ndarray] | None = None,
) -> list[T]:
    """Greedy maximal-marginal-relevance selection of up to ``k`` items.

    ``candidates`` carry their query similarity.  The next pick maximizes
    ``lam * sim(query, item) - (1 - lam) * max(sim(item, s) for s in selected)``;
    earlier candidates win ties, so ``lam == 1`` keeps the input order.
    """
    if not 0.0 <= lam <= 1.0:
        raise RankingError("MMR lambda must lie in [0, 1]")
    k = min(k, len(candidates))
    if lam == 1.0 or k == 0:
        return [item for item, _ in candidates[:k]]
    if item_vector is None:
        raise RankingError("item_vector is required when lambda < 1")
    vectors = [np.asarray(item_vector(item), dtype=np.float64) for item, _ in candidates]
    remaining = list(range(len(candidates)))
    # max similarity to the selected set; no penalty before the first pick
    redundancy = [0.0] * len(candidates)
    selected: list[int] = []
    while remaining and len(selected) < k:
        best = max(remaining, key=lambda i: (lam * candidates[i][1] - (1 - lam) * redundancy[i], -i))
        first = not selected
        selected.append(best)
        remaining.remove(best)
        for i in remaining:
            sim = cosine(vectors[i], vectors[best])
            redundancy[i] = sim if first else max(redundancy[i], sim)
    return [candidates[i][0] for i in selected]


class VectorCache:
    """Vectors keyed by (doc_key, chunk_id, model id), persisted as JSON lines."""

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path else None
        self._store: dict[tuple[str, int, str], HybridVector] = {}
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line:
                    continue
                rec = json.loads(line)
                self._store[(rec["doc_key"], rec["chunk_id"], rec["model"])] = HybridVector(
                    np.asarray(rec["dense"]), np.asarray(rec["sparse"])
                )

    def get(self, key: tuple[str, int, str]) -> HybridVector | None:
        return self._store.get(key)

    def put(self, key: tuple[str, int, str], vector: HybridVector) -> None:
        self._store[key] = vector
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(
                    json.dumps(
                        {
                            "doc_key": key[0],
                            "chunk_id": key[1],
                            "model": key[2],
                            "dense": vector.dense.tolist(),
                            "sparse": vector.sparse.tolist(),
                        }
                    )
                    + "\n"
                )

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, key: Hashable) -> bool:
        return key in self._store
