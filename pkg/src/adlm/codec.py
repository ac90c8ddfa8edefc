"""Steganographic encoder/decoder over a next-token provider.

Embedding walks the language model one step at a time.  At each step the
entropy-core truncation yields a candidate pool of size m; the step can carry
k = floor(log2(m)) bits, bounded by the key's per-step cap and by how many
bits are still owed in the current framing phase.  The pending k bits, read
most-significant first, select the candidate at that rank.  A pool of size 1
forces the single candidate and carries nothing.  Extraction replays the
identical walk: the same key, model and arithmetic rebuild each pool, and the
observed token's rank gives the bits back.

The payload is framed as a fixed-width big-endian bit-length header followed
by the payload bits.  Length clipping is phase-aware: while the header is
incomplete a step never codes past the header boundary, so the receiver can
always finish decoding the header before it needs to know the payload length.

After the last bit, generation continues without embedding until the sentence
closes, so the carrier does not stop mid-thought.  Any single-token change to
the carrier that leaves a step's coding set surfaces as ``DesyncError``,
never as silently wrong bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from adlm.entropy import CandidatePool, StopReason, partial_confidence, truncate
from adlm.provider import ProviderDescriptor, UNK_ID

SENTENCE_END = (".", "!", "?")
TRAILING_CAP = 64

VALID_HEADER_BITS = (16, 32)
MAX_BITS_LIMIT = 16

_KEY_FIELDS = {
    "prefix", "epsilon", "model_id", "max_pool", "max_bits_per_step",
    "header_bits", "delta_double_norm",
}


class CodecError(Exception):
    """Base for everything the codec can signal."""


class ModelMismatchError(CodecError):
    """Provider's model_id differs from the key's."""


class DesyncError(CodecError):
    """Replay diverged from the observed carrier at a specific step."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class CapacityError(CodecError):
    """The model stopped offering pools that can carry bits."""


class StegoTextError(CodecError):
    """Carrier text cannot be mapped back onto model tokens."""


class Provider(Protocol):
    """What the codec requires of any distribution source."""

    def describe(self) -> ProviderDescriptor: ...
    def tokenize(self, text: str) -> list[int]: ...
    def detokenize(self, ids: Sequence[int]) -> str: ...
    def next_distribution(self, ctx: Sequence[int]): ...


@dataclass(frozen=True)
class StegoKey:
    """Everything both parties must agree on before exchanging carriers."""

    prefix_text: str
    epsilon: float
    model_id: str
    max_pool: int = 512
    max_bits_per_step: Optional[int] = None
    header_bits: int = 32
    delta_double_norm: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise ValueError("epsilon must be finite and >= 0")
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.max_pool < 1:
            raise ValueError("max_pool must be >= 1")
        if self.max_bits_per_step is not None and not (
            1 <= self.max_bits_per_step <= MAX_BITS_LIMIT
        ):
            raise ValueError(f"max_bits_per_step must be in [1, {MAX_BITS_LIMIT}]")
        if self.header_bits not in VALID_HEADER_BITS:
            raise ValueError(f"header_bits must be one of {VALID_HEADER_BITS}")

    def to_dict(self) -> dict:
        return {
            "prefix": self.prefix_text,
            "epsilon": self.epsilon,
            "model_id": self.model_id,
            "max_pool": self.max_pool,
            "max_bits_per_step": self.max_bits_per_step,
            "header_bits": self.header_bits,
            "delta_double_norm": self.delta_double_norm,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StegoKey":
        unknown = set(data) - _KEY_FIELDS
        if unknown:
            raise ValueError(f"unknown key fields: {sorted(unknown)}")
        missing = {"prefix", "epsilon", "model_id"} - set(data)
        if missing:
            raise ValueError(f"missing key fields: {sorted(missing)}")
        return cls(
            prefix_text=data["prefix"],
            epsilon=float(data["epsilon"]),
            model_id=data["model_id"],
            max_pool=int(data.get("max_pool", 512)),
            max_bits_per_step=(
                None if data.get("max_bits_per_step") is None
                else int(data["max_bits_per_step"])
            ),
            header_bits=int(data.get("header_bits", 32)),
            delta_double_norm=bool(data.get("delta_double_norm", False)),
        )


@dataclass
class Bitstream:
    """A bit sequence with a read cursor; bits are 0/1 ints, MSB-first."""

    bits: tuple[int, ...]
    cursor: int = 0

    def __post_init__(self) -> None:
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")
        if not (0 <= self.cursor <= len(self.bits)):
            raise ValueError("cursor outside the stream")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        bits = []
        for byte in data:
            for shift in range(7, -1, -1):
                bits.append((byte >> shift) & 1)
        return cls(bits=tuple(bits))

    @property
    def remaining(self) -> int:
        return len(self.bits) - self.cursor

    def read(self, k: int) -> int:
        """Consume k bits and return them as a big-endian integer."""
        if k < 0 or k > self.remaining:
            raise ValueError(f"cannot read {k} bits, {self.remaining} remain")
        value = 0
        for b in self.bits[self.cursor:self.cursor + k]:
            value = (value << 1) | b
        self.cursor += k
        return value


def bits_to_bytes(bits: Sequence[int]) -> bytes:
    if len(bits) % 8 != 0:
        raise ValueError("bit count not a multiple of 8")
    out = bytearray()
    for i in range(0, len(bits), 8):
        byte = 0
        for b in bits[i:i + 8]:
            byte = (byte << 1) | b
        out.append(byte)
    return bytes(out)


def int_to_bits(value: int, width: int) -> tuple[int, ...]:
    if value < 0 or value >= (1 << width):
        raise ValueError(f"{value} does not fit in {width} bits")
    return tuple((value >> shift) & 1 for shift in range(width - 1, -1, -1))


def frame_message(payload: bytes, header_bits: int = 32) -> Bitstream:
    """Prepend the payload's bit length as a fixed-width big-endian header."""
    if header_bits not in VALID_HEADER_BITS:
        raise ValueError(f"header_bits must be one of {VALID_HEADER_BITS}")
    bit_len = len(payload) * 8
    if bit_len >= (1 << header_bits):
        raise ValueError(f"payload of {bit_len} bits overflows a "
                         f"{header_bits}-bit length header")
    header = int_to_bits(bit_len, header_bits)
    return Bitstream(bits=header + Bitstream.from_bytes(payload).bits)


@dataclass(frozen=True)
class StepTrace:
    """One generation step's bookkeeping, for audits and fuzzing."""

    step: int
    token_id: int
    token_text: str
    pool_size: int
    stop_reason: str
    bits_consumed: int
    code_index: Optional[int]
    conf: float
    phase: str  # header | payload | trailing
    coding_tokens: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "token_id": self.token_id,
            "token_text": self.token_text,
            "pool_size": self.pool_size,
            "stop_reason": self.stop_reason,
            "bits_consumed": self.bits_consumed,
            "code_index": self.code_index,
            "conf": self.conf,
            "phase": self.phase,
            "coding_tokens": list(self.coding_tokens),
        }


@dataclass(frozen=True)
class StegoText:
    """The carrier: generated token ids (prefix excluded) and their rendering."""

    token_ids: tuple[int, ...]
    rendered: str
    trace: Optional[tuple[StepTrace, ...]] = None


def block_code(pool: CandidatePool, k: int) -> list[str]:
    """Codeword table of the perfect binary tree over the first 2^k candidates.

    Rank r (probability-descending) maps to the k-bit big-endian codeword of
    r, so the table is just every k-bit string in order.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if (1 << k) > pool.pool_size:
        raise ValueError(f"2^{k} codewords exceed pool of {pool.pool_size}")
    return [format(r, f"0{k}b") if k else "" for r in range(1 << k)]


def _check_model(key: StegoKey, provider: Provider) -> None:
    desc = provider.describe()
    if desc.model_id != key.model_id:
        raise ModelMismatchError(
            f"key expects model {key.model_id}, provider reports {desc.model_id}"
        )


def _prefix_context(key: StegoKey, provider: Provider) -> list[int]:
    ctx = provider.tokenize(key.prefix_text)
    if not ctx:
        raise ValueError("key prefix tokenizes to no tokens")
    return ctx


def _step_pool(
    dist, key: StegoKey, fixed_pool: Optional[int]
) -> CandidatePool:
    if fixed_pool is None:
        return truncate(dist, key.epsilon, key.max_pool,
                        double_norm=key.delta_double_norm)
    size = min(fixed_pool, len(dist.entries))
    return CandidatePool(
        tokens=tuple(t for t, _ in dist.entries[:size]),
        probs=tuple(p for _, p in dist.entries[:size]),
        pool_size=size,
        stop_reason=StopReason.MAX_POOL_CAP,
        conf=partial_confidence(dist, size),
    )


def _step_bits(pool_size: int, key: StegoKey, phase_remaining: int) -> int:
    k = pool_size.bit_length() - 1
    if key.max_bits_per_step is not None:
        k = min(k, key.max_bits_per_step)
    return min(k, phase_remaining)


def _sentence_final(provider: Provider, token_id: int) -> bool:
    eos = getattr(provider, "eos_token_id", None)
    if eos is not None and token_id == eos:
        return True
    return provider.detokenize([token_id]).rstrip().endswith(SENTENCE_END)


def embed(
    key: StegoKey,
    bits: Bitstream,
    provider: Provider,
    *,
    collect_trace: bool = False,
    fixed_pool: Optional[int] = None,
) -> StegoText:
    """Generate carrier text holding every unread bit of ``bits``.

    ``fixed_pool`` replaces adaptive truncation with a constant-size pool
    (the ablation arm of the evaluation harness); everything else is shared.
    """
    if fixed_pool is not None and fixed_pool < 1:
        raise ValueError("fixed_pool must be >= 1")
    _check_model(key, provider)
    context = _prefix_context(key, provider)
    total = len(bits.bits)
    emitted: list[int] = []
    trace: list[StepTrace] = []
    forced_run = 0

    def record(token_id: int, pool: CandidatePool, consumed: int,
               index: Optional[int], phase: str, coding: tuple[int, ...]) -> None:
        if collect_trace:
            trace.append(StepTrace(
                step=len(emitted) - 1,
                token_id=token_id,
                token_text=provider.detokenize([token_id]),
                pool_size=pool.pool_size,
                stop_reason=pool.stop_reason.value,
                bits_consumed=consumed,
                code_index=index,
                conf=pool.conf,
                phase=phase,
                coding_tokens=coding,
            ))

    while bits.cursor < total:
        in_header = bits.cursor < key.header_bits
        phase = "header" if in_header else "payload"
        phase_remaining = (key.header_bits - bits.cursor) if in_header \
            else (total - bits.cursor)
        dist = provider.next_distribution(context)
        pool = _step_pool(dist, key, fixed_pool)
        if pool.pool_size == 1:
            token = pool.tokens[0]
            emitted.append(token)
            context.append(token)
            record(token, pool, 0, None, phase, (token,))
            forced_run += 1
            if forced_run > 10 * total:
                raise CapacityError(
                    f"{forced_run} consecutive single-candidate steps; "
                    f"epsilon {key.epsilon} leaves no room for data"
                )
            continue
        forced_run = 0
        k = _step_bits(pool.pool_size, key, phase_remaining)
        index = bits.read(k)
        token = pool.tokens[index]
        emitted.append(token)
        context.append(token)
        record(token, pool, k, index, phase, pool.tokens[:1 << k])

    # round off the sentence without carrying any more bits
    trailing = 0
    while trailing < TRAILING_CAP:
        if emitted and _sentence_final(provider, emitted[-1]):
            break
        dist = provider.next_distribution(context)
        pool = _step_pool(dist, key, fixed_pool)
        token = pool.tokens[0]
        emitted.append(token)
        context.append(token)
        record(token, pool, 0, None, "trailing", (token,))
        trailing += 1

    return StegoText(
        token_ids=tuple(emitted),
        rendered=provider.detokenize(emitted),
        trace=tuple(trace) if collect_trace else None,
    )


def extract(
    key: StegoKey,
    stego: StegoText | str,
    provider: Provider,
    *,
    fixed_pool: Optional[int] = None,
) -> bytes:
    """Replay the generation walk over observed tokens and return the payload."""
    if fixed_pool is not None and fixed_pool < 1:
        raise ValueError("fixed_pool must be >= 1")
    _check_model(key, provider)
    if isinstance(stego, StegoText):
        observed = list(stego.token_ids)
    else:
        observed = provider.tokenize(stego)
    unk = getattr(provider, "unk_token_id", UNK_ID)
    if unk is not None and unk in observed:
        raise StegoTextError(
            "carrier contains words outside the model vocabulary; "
            "wrong model or corrupted text"
        )

    context = _prefix_context(key, provider)
    collected: list[int] = []
    payload_bits: Optional[int] = None

    def done() -> bool:
        return payload_bits is not None and \
            len(collected) - key.header_bits >= payload_bits

    step = 0
    while not done():
        if step >= len(observed):
            raise DesyncError(step, "carrier ended before the payload did")
        token = observed[step]
        in_header = len(collected) < key.header_bits
        phase_remaining = (key.header_bits - len(collected)) if in_header else (
            payload_bits - (len(collected) - key.header_bits)  # type: ignore[operator]
        )
        dist = provider.next_distribution(context)
        pool = _step_pool(dist, key, fixed_pool)
        if pool.pool_size == 1:
            if token != pool.tokens[0]:
                raise DesyncError(
                    step, f"forced step expected token {pool.tokens[0]}, saw {token}"
                )
        else:
            k = _step_bits(pool.pool_size, key, phase_remaining)
            coding = pool.tokens[:1 << k]
            try:
                index = coding.index(token)
            except ValueError:
                raise DesyncError(
                    step, f"token {token} not in the step's coding set"
                ) from None
            collected.extend(int_to_bits(index, k))
            if payload_bits is None and len(collected) >= key.header_bits:
                header = collected[:key.header_bits]
                value = 0
                for b in header:
                    value = (value << 1) | b
                if value % 8 != 0:
                    raise DesyncError(step, f"header names {value} payload bits, "
                                            "not a whole number of bytes")
                payload_bits = value
        context.append(token)
        step += 1

    return bits_to_bytes(collected[key.header_bits:key.header_bits + payload_bits])
