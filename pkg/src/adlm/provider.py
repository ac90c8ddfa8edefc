"""Next-token-distribution providers and the built-in n-gram language model.

The codec only ever talks to a provider: something that can tokenize text,
detokenize ids, describe itself (model identity, vocab size), and produce a
sorted, quantized top-N ``TokenDistribution`` for a context.  This module
supplies the built-in provider: a word-level add-k smoothed n-gram model with
longest-context backoff, trained from plain text and serialized to a
content-addressed binary file.  The content hash doubles as ``model_id``, the
value both codec ends compare before trusting each other's arithmetic.

Tokenization is whitespace word splitting; newlines are significant and map
to the reserved ``<eos>`` token, so ``detokenize`` can render end-of-sentence
as a line break and ``tokenize`` can find it again.  Out-of-vocabulary words
become ``<unk>``, which no provider ever offers as a candidate.
"""

from __future__ import annotations

import hashlib
import io
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from adlm.entropy import TokenDistribution

BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
RESERVED_WORDS = ("<bos>", "<eos>", "<unk>")

MODEL_MAGIC = b"ADLMNG01"

DEFAULT_ORDER = 3
DEFAULT_SMOOTHING_K = 0.01
DEFAULT_TOP_N = 512

PROVIDER_KINDS = frozenset({"builtin_ngram", "bridge"})


@dataclass(frozen=True)
class ProviderDescriptor:
    """Identity card a provider shows the codec before any step runs."""

    kind: str
    model_id: str
    vocab_size: int
    top_n: int

    def __post_init__(self) -> None:
        if self.kind not in PROVIDER_KINDS:
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.top_n < 2:
            raise ValueError("top_n must be >= 2")


def _split_words(text: str) -> list[list[str]]:
    return [line.split() for line in text.split("\n")]


@dataclass
class NgramModel:
    """Word-level add-k n-gram model with longest-context backoff.

    ``counts[L]`` maps a length-L context tuple to a {token_id: count} table;
    backoff walks L from ``order - 1`` down to 0 and uses the first context
    it has seen.  A context nothing was seen for (including the untrained
    model) degrades to pure add-k smoothing: uniform over the vocabulary.
    """

    order: int
    smoothing_k: float
    words: tuple[str, ...]
    counts: list[dict[tuple[int, ...], dict[int, int]]] = field(default_factory=list)
    _index: dict[str, int] = field(init=False, repr=False)
    _totals: list[dict[tuple[int, ...], int]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.smoothing_k <= 0.0:
            raise ValueError("smoothing_k must be > 0")
        if tuple(self.words[:3]) != RESERVED_WORDS:
            raise ValueError("vocab must start with the reserved tokens")
        if len(set(self.words)) != len(self.words):
            raise ValueError("vocab contains duplicate words")
        if not self.counts:
            self.counts = [{} for _ in range(self.order)]
        if len(self.counts) != self.order:
            raise ValueError("counts must hold one table per context length")
        self._index = {w: i for i, w in enumerate(self.words)}
        self._totals = [
            {ctx: sum(succ.values()) for ctx, succ in table.items()}
            for table in self.counts
        ]

    @property
    def vocab_size(self) -> int:
        return len(self.words)

    # --- tokenization ---

    def tokenize(self, text: str) -> list[int]:
        ids: list[int] = []
        for i, line in enumerate(_split_words(text)):
            if i > 0:
                ids.append(EOS_ID)
            ids.extend(self._index.get(w, UNK_ID) for w in line)
        return ids

    def detokenize(self, ids: Sequence[int]) -> str:
        parts: list[str] = []
        for tid in ids:
            if not (0 <= tid < len(self.words)):
                raise ValueError(f"token id {tid} outside vocab")
            if tid == EOS_ID:
                parts.append("\n")
            else:
                if parts and not parts[-1].endswith("\n"):
                    parts.append(" ")
                parts.append(self.words[tid])
        return "".join(parts)

    # --- conditionals ---

    def _backoff_table(self, ctx: Sequence[int]) -> tuple[dict[int, int], int]:
        history = tuple(ctx[-(self.order - 1):]) if self.order > 1 else ()
        for length in range(len(history), -1, -1):
            key = history[len(history) - length:]
            table = self.counts[length].get(key)
            if table is not None:
                return table, self._totals[length][key]
        return {}, 0

    def token_prob(self, ctx: Sequence[int], token_id: int) -> float:
        """Exact smoothed conditional p(token | ctx), no truncation."""
        if not (0 <= token_id < self.vocab_size):
            raise ValueError(f"token id {token_id} outside vocab")
        table, total = self._backoff_table(ctx)
        k = self.smoothing_k
        return (table.get(token_id, 0) + k) / (total + k * self.vocab_size)

    def conditional_distribution(self, ctx: Sequence[int]) -> dict[int, float]:
        """Full conditional over every vocab id; sums to 1."""
        table, total = self._backoff_table(ctx)
        k = self.smoothing_k
        denom = total + k * self.vocab_size
        return {i: (table.get(i, 0) + k) / denom for i in range(self.vocab_size)}

    def next_entries(self, ctx: Sequence[int], top_n: int) -> list[tuple[int, float]]:
        """Top-N emittable (id, prob) pairs; <bos>/<unk> never offered."""
        for tid in ctx:
            if not (0 <= tid < self.vocab_size):
                raise ValueError(f"token id {tid} outside vocab")
        table, total = self._backoff_table(ctx)
        k = self.smoothing_k
        denom = total + k * self.vocab_size
        pairs = [
            (i, (table.get(i, 0) + k) / denom)
            for i in range(self.vocab_size)
            if i not in (BOS_ID, UNK_ID)
        ]
        pairs.sort(key=lambda e: (-e[1], e[0]))
        return pairs[:top_n]

    # --- serialization ---

    def _serialize(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        buf.write(struct.pack("<I", self.order))
        buf.write(struct.pack("<d", self.smoothing_k))
        buf.write(struct.pack("<I", len(self.words)))
        for w in self.words:
            raw = w.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
        for table in self.counts:
            buf.write(struct.pack("<Q", len(table)))
            for ctx in sorted(table):
                buf.write(struct.pack(f"<{len(ctx)}I", *ctx))
                succ = table[ctx]
                buf.write(struct.pack("<I", len(succ)))
                for tid in sorted(succ):
                    buf.write(struct.pack("<IQ", tid, succ[tid]))
        return buf.getvalue()

    def content_id(self) -> str:
        """Hash of the serialized form; what save() stamps as model_id."""
        return hashlib.sha256(self._serialize()).hexdigest()

    def save(self, path: str | Path) -> str:
        """Write the versioned binary form; returns the model_id hash."""
        body = self._serialize()
        digest = hashlib.sha256(body).digest()
        Path(path).write_bytes(body + digest)
        return digest.hex()

    @classmethod
    def load(cls, path: str | Path) -> tuple["NgramModel", str]:
        """Read a model file; returns (model, model_id).  Verifies the hash."""
        blob = Path(path).read_bytes()
        if len(blob) < len(MODEL_MAGIC) + 32 or not blob.startswith(MODEL_MAGIC):
            raise ValueError(f"{path}: not a recognized model file")
        body, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise ValueError(f"{path}: content hash mismatch (corrupt file)")
        buf = io.BytesIO(body)
        buf.read(len(MODEL_MAGIC))

        def read(fmt: str):
            size = struct.calcsize(fmt)
            raw = buf.read(size)
            if len(raw) != size:
                raise ValueError(f"{path}: truncated model file")
            return struct.unpack(fmt, raw)

        (order,) = read("<I")
        (smoothing_k,) = read("<d")
        (n_words,) = read("<I")
        words = []
        for _ in range(n_words):
            (length,) = read("<I")
            raw = buf.read(length)
            if len(raw) != length:
                raise ValueError(f"{path}: truncated model file")
            words.append(raw.decode("utf-8"))
        counts: list[dict[tuple[int, ...], dict[int, int]]] = []
        for length in range(order):
            (n_ctx,) = read("<Q")
            table: dict[tuple[int, ...], dict[int, int]] = {}
            for _ in range(n_ctx):
                ctx = tuple(read(f"<{length}I")) if length else ()
                (n_succ,) = read("<I")
                succ = {}
                for _ in range(n_succ):
                    tid, count = read("<IQ")
                    succ[tid] = count
                table[ctx] = succ
            counts.append(table)
        if buf.read(1):
            raise ValueError(f"{path}: trailing bytes after model data")
        model = cls(order=order, smoothing_k=smoothing_k, words=tuple(words),
                    counts=counts)
        return model, digest.hex()


def train_ngram_text(
    text: str,
    order: int = DEFAULT_ORDER,
    smoothing_k: float = DEFAULT_SMOOTHING_K,
) -> NgramModel:
    """Train on raw text: vocab from its words, counts from its id stream."""
    if order < 1:
        raise ValueError("order must be >= 1")
    lines = _split_words(text)
    seen = sorted({w for line in lines for w in line} - set(RESERVED_WORDS))
    if not seen:
        raise ValueError("corpus is empty after tokenization")
    model = NgramModel(order=order, smoothing_k=smoothing_k,
                       words=RESERVED_WORDS + tuple(seen))
    stream = model.tokenize(text)
    if not stream or stream[-1] != EOS_ID:
        stream.append(EOS_ID)
    for t, token in enumerate(stream):
        for length in range(min(order - 1, t) + 1):
            ctx = tuple(stream[t - length:t])
            succ = model.counts[length].setdefault(ctx, {})
            succ[token] = succ.get(token, 0) + 1
    # recompute cached totals now that counts are filled in
    model.__post_init__()
    return model


def train_ngram(
    corpus_path: str | Path,
    order: int = DEFAULT_ORDER,
    smoothing_k: float = DEFAULT_SMOOTHING_K,
) -> NgramModel:
    return train_ngram_text(Path(corpus_path).read_text(encoding="utf-8"),
                            order=order, smoothing_k=smoothing_k)


class NgramProvider:
    """Provider facade over ``NgramModel`` with a small distribution cache.

    Distributions depend only on the last ``order - 1`` context tokens, so
    the cache keys on that suffix.  Safe for concurrent readers.
    """

    def __init__(self, model: NgramModel, model_id: Optional[str] = None,
                 top_n: int = DEFAULT_TOP_N, cache_size: int = 4096):
        if top_n < 2:
            raise ValueError("top_n must be >= 2")
        self._model = model
        self._model_id = model_id if model_id is not None else model.content_id()
        self._top_n = top_n
        self._cache: OrderedDict[tuple[int, ...], TokenDistribution] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, top_n: int = DEFAULT_TOP_N) -> "NgramProvider":
        model, model_id = NgramModel.load(path)
        return cls(model, model_id, top_n=top_n)

    @property
    def model(self) -> NgramModel:
        return self._model

    @property
    def eos_token_id(self) -> int:
        return EOS_ID

    @property
    def unk_token_id(self) -> int:
        return UNK_ID

    def describe(self) -> ProviderDescriptor:
        return ProviderDescriptor(
            kind="builtin_ngram",
            model_id=self._model_id,
            vocab_size=self._model.vocab_size,
            top_n=self._top_n,
        )

    def tokenize(self, text: str) -> list[int]:
        return self._model.tokenize(text)

    def detokenize(self, ids: Sequence[int]) -> str:
        return self._model.detokenize(ids)

    def token_prob(self, ctx: Sequence[int], token_id: int) -> float:
        return self._model.token_prob(ctx, token_id)

    def next_distribution(self, ctx: Sequence[int]) -> TokenDistribution:
        order = self._model.order
        key = tuple(ctx[-(order - 1):]) if order > 1 else ()
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        entries = self._model.next_entries(ctx, self._top_n)
        dist = TokenDistribution.from_probs(entries, self._model.vocab_size)
        with self._lock:
            self._cache[key] = dist
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return dist
