"""Imperceptibility metrics and evaluation harnesses for the codec.

Three simple measurements: self-perplexity of token sequences under the
generating model (fluency), distinct-n (diversity), and the unigram entropy
gap between two corpora (the statistical guard a warden might apply).  On
top of them, two harnesses: a threshold sweep that charts mean candidate
pool size against epsilon, and an evaluation table that embeds payloads at
each bits-per-word cap and reports PPL/distinct for the adaptive codec and
for a fixed-pool ablation that skips confidence truncation entirely.

Everything is deterministic under a caller-supplied seed; per-sample RNGs
are derived by counter so results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import statistics
from collections import Counter
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from adlm.codec import CapacityError, Provider, StegoKey, embed, frame_message
from adlm.entropy import TokenDistribution, truncate

FORMAT_VERSION = 1


# --- point metrics -----------------------------------------------------------

def perplexity(
    tokens: Sequence[int],
    provider: Provider,
    *,
    initial_context: Sequence[int] = (),
) -> float:
    """exp of mean negative log-prob under the full (untruncated) model."""
    if not tokens:
        raise ValueError("perplexity of an empty sequence is undefined")
    context = list(initial_context)
    acc = 0.0
    for token in tokens:
        p = provider.token_prob(context, token)
        if p <= 0.0:
            raise ValueError(f"token {token} has zero probability in context")
        acc += math.log(p)
        context.append(token)
    return math.exp(-acc / len(tokens))


def distinct_n(tokens: Sequence[int], n: int) -> float:
    """Unique n-grams divided by total n-grams."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(tokens) < n:
        raise ValueError(f"sequence of {len(tokens)} tokens has no {n}-grams")
    grams = [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
    return len(set(grams)) / len(grams)


def corpus_distinct(sequences: Sequence[Sequence[int]], n: int) -> float:
    """distinct_n pooled over many sequences; ignores those shorter than n."""
    total = 0
    unique = set()
    for seq in sequences:
        if len(seq) < n:
            continue
        for i in range(len(seq) - n + 1):
            unique.add(tuple(seq[i:i + n]))
            total += 1
    if total == 0:
        raise ValueError("no sequence long enough to form an n-gram")
    return len(unique) / total


def unigram_entropy(tokens: Sequence[int]) -> float:
    """Empirical entropy (nats) of the token frequency histogram."""
    if not tokens:
        raise ValueError("entropy of an empty sequence is undefined")
    counts = Counter(tokens)
    total = len(tokens)
    return -sum((c / total) * math.log(c / total) for c in counts.values())


def entropy_gap(tokens_a: Sequence[int], tokens_b: Sequence[int]) -> float:
    """|H(a) - H(b)| over unigram empirical entropies."""
    return abs(unigram_entropy(tokens_a) - unigram_entropy(tokens_b))


def entropy_gap_ok(tokens_a, tokens_b, limit: float) -> bool:
    return entropy_gap(tokens_a, tokens_b) <= limit


# --- shared sampling ---------------------------------------------------------

def _sample_entry(dist: TokenDistribution, rng: random.Random) -> int:
    """Sample a token from the listed entries, renormalized over their mass."""
    target = rng.random() * dist.listed_mass
    acc = 0.0
    for token_id, p in dist.entries:
        acc += p
        if target < acc:
            return token_id
    return dist.entries[-1][0]


def _sample_rng(seed: int, counter: int) -> random.Random:
    return random.Random(seed * 1_000_003 + counter)


# --- threshold sweep ---------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    mean_pool_size: float
    stddev: float
    samples: int


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    steps_per_sample: int
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        eps = [r.epsilon for r in self.rows]
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly increasing")
        if any(r.mean_pool_size < 1.0 for r in self.rows):
            raise ValueError("mean pool size cannot drop below 1")

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "steps_per_sample": self.steps_per_sample,
            "rows": [
                {"epsilon": r.epsilon, "mean_pool_size": r.mean_pool_size,
                 "stddev": r.stddev, "samples": r.samples}
                for r in self.rows
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["epsilon", "mean_pool_size", "stddev", "samples"])
        for r in self.rows:
            writer.writerow([repr(r.epsilon), f"{r.mean_pool_size:.6f}",
                             f"{r.stddev:.6f}", r.samples])
        return out.getvalue()


def threshold_sweep(
    provider: Provider,
    prefixes: Sequence[str],
    epsilons: Sequence[float],
    samples_per_point: int,
    *,
    steps_per_sample: int = 40,
    seed: int = 0,
    max_pool: int = 512,
    double_norm: bool = False,
) -> SweepReport:
    """Chart mean truncated pool size against epsilon.

    Every sample walks one token path (sampled from the untruncated
    distribution) and measures each epsilon's pool on the same distributions,
    so per-step pool sizes are non-increasing in epsilon by construction.
    """
    if not prefixes:
        raise ValueError("need at least one prefix")
    if samples_per_point < 1 or steps_per_sample < 1:
        raise ValueError("samples and steps must be >= 1")
    eps = list(epsilons)
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly increasing")

    pool_sizes: dict[float, list[int]] = {e: [] for e in eps}
    for i in range(samples_per_point):
        rng = _sample_rng(seed, i)
        context = list(provider.tokenize(prefixes[i % len(prefixes)]))
        if not context:
            raise ValueError("prefix tokenizes to no tokens")
        for _ in range(steps_per_sample):
            dist = provider.next_distribution(context)
            for e in eps:
                pool = truncate(dist, e, max_pool, double_norm=double_norm)
                pool_sizes[e].append(pool.pool_size)
            context.append(_sample_entry(dist, rng))

    rows = tuple(
        SweepRow(
            epsilon=e,
            mean_pool_size=statistics.fmean(pool_sizes[e]),
            stddev=statistics.pstdev(pool_sizes[e]),
            samples=samples_per_point,
        )
        for e in eps
    )
    return SweepReport(rows=rows, steps_per_sample=steps_per_sample)


# --- BPW evaluation table ----------------------------------------------------

@dataclass(frozen=True)
class EvalRow:
    variant: str  # adaptive | fixed_pool
    bpw: int
    ppl: float
    distinct: float  # distinct-2, pooled over the row's texts
    distinct1: float
    samples: int
    capacity_errors: int

    def __post_init__(self) -> None:
        if self.variant not in ("adaptive", "fixed_pool"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.bpw < 1:
            raise ValueError("bpw must be >= 1")
        if self.samples > 0:
            if self.ppl < 1.0:
                raise ValueError("perplexity cannot be below 1")
            if not (0.0 <= self.distinct <= 1.0 and 0.0 <= self.distinct1 <= 1.0):
                raise ValueError("distinct must lie in [0, 1]")


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "rows": [
                {"variant": r.variant, "bpw": r.bpw, "ppl": r.ppl,
                 "distinct": r.distinct, "distinct1": r.distinct1,
                 "samples": r.samples, "capacity_errors": r.capacity_errors}
                for r in self.rows
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def to_csv(self) -> str:
        """Metric x variant rows against BPW columns."""
        bpws = sorted({r.bpw for r in self.rows})
        variants = [v for v in ("adaptive", "fixed_pool")
                    if any(r.variant == v for r in self.rows)]
        cell = {(r.variant, r.bpw): r for r in self.rows}
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["metric", "variant"] + [f"bpw={b}" for b in bpws])
        for metric, attr in (("ppl", "ppl"), ("distinct", "distinct")):
            for variant in variants:
                row = [metric, variant]
                for b in bpws:
                    r = cell.get((variant, b))
                    row.append("" if r is None or r.samples == 0
                               else f"{getattr(r, attr):.4f}")
                writer.writerow(row)
        return out.getvalue()


def _eval_one_variant(
    provider: Provider,
    key: StegoKey,
    payloads: Sequence[bytes],
    variant: str,
    bpw: int,
) -> EvalRow:
    prefix_ctx = provider.tokenize(key.prefix_text)
    fixed_pool = (1 << bpw) if variant == "fixed_pool" else None
    ppls = []
    texts = []
    failures = 0
    for payload in payloads:
        framed = frame_message(payload, key.header_bits)
        try:
            stego = embed(key, framed, provider, fixed_pool=fixed_pool)
        except CapacityError:
            failures += 1
            continue
        texts.append(stego.token_ids)
        ppls.append(perplexity(stego.token_ids, provider,
                               initial_context=prefix_ctx))
    if ppls:
        return EvalRow(
            variant=variant, bpw=bpw,
            ppl=statistics.fmean(ppls),
            distinct=corpus_distinct(texts, 2),
            distinct1=corpus_distinct(texts, 1),
            samples=len(ppls),
            capacity_errors=failures,
        )
    return EvalRow(variant=variant, bpw=bpw, ppl=float("nan"),
                   distinct=float("nan"), distinct1=float("nan"),
                   samples=0, capacity_errors=failures)


def eval_table(
    provider: Provider,
    key_template: StegoKey,
    payloads: Sequence[bytes],
    bpw_list: Sequence[int],
    *,
    include_ablation: bool = True,
) -> EvalReport:
    """Embed every payload at each BPW cap; report PPL/distinct per variant.

    The adaptive variant uses confidence truncation with the per-step bit cap
    set to the BPW value; the ablation variant fixes the pool at the top
    2^bpw candidates, disabling the confidence machinery, per-payload paired.
    """
    if not payloads:
        raise ValueError("need at least one payload")
    if any(not (1 <= b <= 8) for b in bpw_list):
        raise ValueError("bpw values must lie in [1, 8]")
    rows = []
    for bpw in bpw_list:
        key = replace(key_template, max_bits_per_step=bpw)
        rows.append(_eval_one_variant(provider, key, payloads, "adaptive", bpw))
        if include_ablation:
            rows.append(_eval_one_variant(provider, key, payloads,
                                          "fixed_pool", bpw))
    return EvalReport(rows=tuple(rows))


# --- labeled corpus export ---------------------------------------------------

def export_corpus(
    provider: Provider,
    key: StegoKey,
    n_pairs: int,
    *,
    seed: int = 0,
    payload_bytes: int = 16,
) -> list[tuple[str, str, str]]:
    """Paired cover/stego texts as (id, label, text) rows.

    Stego texts embed random payloads under ``key``; each cover text samples
    the model freely for the same number of tokens as its stego partner, so
    a detector sees length-matched classes.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rows: list[tuple[str, str, str]] = []
    for i in range(n_pairs):
        rng = _sample_rng(seed, i)
        payload = rng.randbytes(payload_bytes)
        stego = embed(key, frame_message(payload, key.header_bits), provider)
        rows.append((f"stego-{i:04d}", "stego", stego.rendered))

        context = list(provider.tokenize(key.prefix_text))
        cover: list[int] = []
        for _ in range(len(stego.token_ids)):
            dist = provider.next_distribution(context)
            token = _sample_entry(dist, rng)
            cover.append(token)
            context.append(token)
        rows.append((f"cover-{i:04d}", "cover", provider.detokenize(cover)))
    return rows


def corpus_to_csv(rows: Sequence[tuple[str, str, str]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["id", "label", "text"])
    for row in rows:
        writer.writerow(row)
    return out.getvalue()
