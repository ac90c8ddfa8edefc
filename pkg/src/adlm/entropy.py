"""Entropy and confidence arithmetic for adaptive candidate-pool truncation.

A next-token distribution is handled as two parts: the listed entries (a
probability-descending top-N slice of the vocabulary) and the residual mass,
which is treated as spread uniformly over every unlisted token.  Confidence
is min-max normalized entropy flipped so that 0 means "uniform, anything
goes" and 1 means "a single certain choice":

    confidence = 1 - H / ln(vocab_size)

``partial_confidence`` evaluates that quantity when only the top ``k``
candidates have been admitted into the pool and the rest of the mass is
still smeared uniformly.  ``confidence_gain`` is the one-step increment of
that curve, computed in O(1) from an accumulator, and ``truncate`` grows the
pool greedily until the gain of the next candidate falls below a threshold.

All probabilities are snapped to an integer grid of 2**-48 on ingestion so
that two parties running the same model get bit-identical pool decisions.
Everything here is pure and immutable; natural log throughout.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

# Probability grid step.  Fine enough that quantization never reorders a
# meaningfully distinct pair, coarse enough to absorb float noise from
# different serialization paths.
PROB_QUANTUM = 2.0 ** -48
_GRID = 2.0 ** 48

# Sum of listed probabilities may exceed 1 by at most this (grid rounding of
# up to 4096 entries stays under 1e-11).
MASS_TOLERANCE = 1e-9

# Confidence gains more negative than this are treated as genuine violations
# of the non-negativity property and logged; anything in (-NOISE, 0) is float
# noise and compares as zero in the stop rule.
GAIN_NOISE_FLOOR = -1e-9


def quantize_prob(p: float) -> float:
    """Snap a probability to the 2**-48 grid (round half to even)."""
    return round(p * _GRID) / _GRID


class StopReason(enum.Enum):
    """Why pool growth ended at ``truncate``."""

    THRESHOLD = "threshold"
    MAX_POOL_CAP = "max_pool_cap"
    DISTRIBUTION_EXHAUSTED = "distribution_exhausted"


@dataclass(frozen=True)
class TokenDistribution:
    """One step's next-token distribution, as a sorted top-N view.

    ``entries`` holds ``(token_id, probability)`` pairs sorted by probability
    descending with ties broken by ascending token id.  ``vocab_size`` is the
    full vocabulary size; when ``entries`` is shorter, the missing mass
    ``1 - sum(probs)`` implicitly belongs to the unlisted tokens.
    """

    vocab_size: int
    entries: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if not self.entries:
            raise ValueError("entries must be non-empty")
        if self.vocab_size < len(self.entries):
            raise ValueError("vocab_size smaller than number of entries")
        seen_ids = set()
        mass = 0.0
        prev: Optional[tuple[int, float]] = None
        for token_id, prob in self.entries:
            if not (0 <= token_id < self.vocab_size):
                raise ValueError(f"token id {token_id} outside [0, {self.vocab_size})")
            if token_id in seen_ids:
                raise ValueError(f"duplicate token id {token_id}")
            seen_ids.add(token_id)
            if not (0.0 <= prob <= 1.0):
                raise ValueError(f"probability {prob} outside [0, 1]")
            if prob != quantize_prob(prob):
                raise ValueError(f"probability {prob} is not on the 2**-48 grid")
            if prev is not None:
                prev_prob = prev[1]
                if prob > prev_prob or (prob == prev_prob and token_id <= prev[0]):
                    raise ValueError("entries not strictly sorted by (prob desc, id asc)")
            prev = (token_id, prob)
            mass += prob
        if mass > 1.0 + MASS_TOLERANCE:
            raise ValueError(f"listed probability mass {mass} exceeds 1")
        if len(self.entries) == self.vocab_size and 1.0 - mass > MASS_TOLERANCE:
            raise ValueError("full-vocabulary listing does not sum to 1")

    @classmethod
    def from_probs(
        cls, pairs: Iterable[tuple[int, float]], vocab_size: int
    ) -> "TokenDistribution":
        """Quantize and sort raw ``(token_id, prob)`` pairs into a distribution."""
        quantized = []
        for token_id, prob in pairs:
            if not (-1e-12 <= prob <= 1.0 + 1e-9):
                raise ValueError(f"probability {prob} outside [0, 1]")
            quantized.append((token_id, quantize_prob(min(1.0, max(0.0, prob)))))
        quantized.sort(key=lambda e: (-e[1], e[0]))
        return cls(vocab_size=vocab_size, entries=tuple(quantized))

    @property
    def token_ids(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.entries)

    @property
    def probs(self) -> tuple[float, ...]:
        return tuple(p for _, p in self.entries)

    @property
    def listed_mass(self) -> float:
        return sum(p for _, p in self.entries)

    @property
    def residual(self) -> float:
        """Unlisted probability mass, clamped to [0, 1]."""
        return min(1.0, max(0.0, 1.0 - self.listed_mass))


@dataclass(frozen=True)
class ConfidenceState:
    """Accumulator for the incremental confidence walk.

    ``k`` candidates have been admitted so far; ``cum_prob`` and ``cum_plogp``
    are their running sum of p and p*ln(p); ``conf`` is the confidence of the
    partially admitted pool.  The empty state has confidence exactly 0.
    """

    k: int
    cum_prob: float
    cum_plogp: float
    conf: float

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if not (0.0 <= self.cum_prob <= 1.0 + MASS_TOLERANCE):
            raise ValueError("cum_prob outside [0, 1]")
        if self.cum_plogp > 0.0:
            raise ValueError("cum_plogp must be <= 0")

    @classmethod
    def initial(cls) -> "ConfidenceState":
        return cls(k=0, cum_prob=0.0, cum_plogp=0.0, conf=0.0)


@dataclass(frozen=True)
class EntropyBounds:
    """Target entropy band derived from a confidence band.

    The low and high confidence marks map linearly onto entropy via
    ``h = mark * ln(vocab_size)``, giving the band a generator should stay in
    for text that is neither degenerate nor noise.
    """

    alpha: float
    beta: float
    h_min: float
    h_max: float
    vocab_size: int

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must be in (0, 1)")
        if not (self.alpha < self.beta <= 1.0):
            raise ValueError("beta must be in (alpha, 1]")
        if not (0.0 <= self.h_min < self.h_max <= math.log(self.vocab_size) + 1e-12):
            raise ValueError("entropy bounds outside [0, ln(vocab_size)]")


@dataclass(frozen=True)
class CandidatePool:
    """The truncated, probability-ordered token set for one generation step."""

    tokens: tuple[int, ...]
    probs: tuple[float, ...]
    pool_size: int
    stop_reason: StopReason
    conf: float
    stop_gain: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.pool_size == len(self.tokens) == len(self.probs)):
            raise ValueError("pool_size must match tokens and probs lengths")
        if self.pool_size < 1:
            raise ValueError("pool must hold at least one token")
        for a, b in zip(self.probs, self.probs[1:]):
            if b > a:
                raise ValueError("pool probabilities must be non-increasing")


def _residual_term(residual: float, unlisted: int) -> float:
    # residual mass spread uniformly over `unlisted` tokens; 0*ln(0) = 0
    if residual <= 0.0 or unlisted <= 0:
        return 0.0
    return residual * math.log(residual / unlisted)


def entropy(dist: TokenDistribution) -> float:
    """Shannon entropy of the distribution in nats.

    Residual mass counts as spread uniformly over the ``vocab_size - N``
    unlisted tokens, so a top-N view scores the same as the full distribution
    it was cut from would if its tail were flat.
    """
    acc = 0.0
    for _, p in dist.entries:
        if p > 0.0:
            acc += p * math.log(p)
    acc += _residual_term(dist.residual, dist.vocab_size - len(dist.entries))
    return -acc


def confidence(dist: TokenDistribution) -> float:
    """Normalized-entropy confidence in [0, 1]; 0 = uniform, 1 = degenerate."""
    if dist.vocab_size < 2:
        raise ValueError("confidence needs vocab_size >= 2")
    value = 1.0 - entropy(dist) / math.log(dist.vocab_size)
    return min(1.0, max(0.0, value))


def partial_confidence(dist: TokenDistribution, k: int) -> float:
    """Confidence after admitting the ``k`` most probable listed tokens.

    The admitted tokens contribute their own p*ln(p); everything else is one
    uniform blob over the remaining ``vocab_size - k`` tokens.  ``k = 0`` is
    exactly 0 by construction.
    """
    if dist.vocab_size < 2:
        raise ValueError("partial_confidence needs vocab_size >= 2")
    if not (0 <= k <= min(len(dist.entries), dist.vocab_size)):
        raise ValueError(f"k={k} outside [0, {min(len(dist.entries), dist.vocab_size)}]")
    if k == 0:
        return 0.0
    cum = 0.0
    plogp = 0.0
    for _, p in dist.entries[:k]:
        cum += p
        if p > 0.0:
            plogp += p * math.log(p)
    residual = max(0.0, 1.0 - cum)
    if k == dist.vocab_size and residual > MASS_TOLERANCE:
        raise ValueError("distribution inconsistent: mass left with no tokens to carry it")
    term = _residual_term(residual, dist.vocab_size - k)
    return 1.0 + (plogp + term) / math.log(dist.vocab_size)


def confidence_gain(
    state: ConfidenceState, next_prob: float, dist: TokenDistribution
) -> tuple[float, ConfidenceState]:
    """Admit the next candidate and return (gain, advanced state) in O(1).

    ``state`` must describe the first ``state.k`` entries of ``dist`` and
    ``next_prob`` must be entry ``state.k``'s probability.  The gain is the
    raw confidence difference; callers decide how to treat float noise.
    """
    if dist.vocab_size < 2:
        raise ValueError("confidence_gain needs vocab_size >= 2")
    if state.k >= len(dist.entries):
        raise ValueError("no entries left to admit")
    if not (0.0 <= next_prob <= 1.0):
        raise ValueError(f"next_prob {next_prob} outside [0, 1]")
    if state.k >= 1 and next_prob > dist.entries[state.k - 1][1] + 1e-12:
        raise ValueError("next_prob larger than the previously admitted probability")

    k_new = state.k + 1
    cum = state.cum_prob + next_prob
    plogp = state.cum_plogp
    if next_prob > 0.0:
        plogp += next_prob * math.log(next_prob)
    residual = max(0.0, 1.0 - cum)
    if k_new == dist.vocab_size and residual > MASS_TOLERANCE:
        raise ValueError("distribution inconsistent: mass left with no tokens to carry it")
    term = _residual_term(residual, dist.vocab_size - k_new)
    conf = 1.0 + (plogp + term) / math.log(dist.vocab_size)
    gain = conf - state.conf
    if gain < GAIN_NOISE_FLOOR:
        logger.warning(
            "confidence gain %.3e below tolerance at k=%d (vocab %d)",
            gain, k_new, dist.vocab_size,
        )
    new_state = ConfidenceState(k=k_new, cum_prob=min(cum, 1.0 + MASS_TOLERANCE),
                                cum_plogp=min(plogp, 0.0), conf=conf)
    return gain, new_state


def truncate(
    dist: TokenDistribution,
    epsilon: float,
    max_pool: int,
    *,
    double_norm: bool = False,
) -> CandidatePool:
    """Grow a candidate pool greedily until the confidence gain stalls.

    The most probable token is always admitted.  Before admitting candidate
    ``k`` (k >= 2) its confidence gain is computed; the pool stops (excluding
    that candidate) when the gain drops below ``epsilon``.  A gain exactly
    equal to ``epsilon`` still admits.  Growth also stops at ``max_pool``
    tokens or when the listed entries run out; when the cap and exhaustion
    coincide the cap is reported.  Gains in (-1e-9, 0) compare as zero so an
    ``epsilon`` of 0 consumes every entry; anything below that tolerance is
    logged by ``confidence_gain`` and used as-is.

    ``double_norm`` divides each gain by ln(vocab_size) before the threshold
    comparison, for keys agreed on that alternative scale.
    """
    if not (epsilon >= 0.0 and math.isfinite(epsilon)):
        raise ValueError("epsilon must be finite and >= 0")
    if max_pool < 1:
        raise ValueError("max_pool must be >= 1")
    if dist.vocab_size < 2:
        raise ValueError("truncate needs vocab_size >= 2")

    log_v = math.log(dist.vocab_size)
    gain, state = confidence_gain(ConfidenceState.initial(), dist.entries[0][1], dist)
    size = 1
    stop_reason = None
    stop_gain: Optional[float] = None
    while True:
        if size == max_pool:
            stop_reason = StopReason.MAX_POOL_CAP
            break
        if size == len(dist.entries):
            stop_reason = StopReason.DISTRIBUTION_EXHAUSTED
            break
        gain, next_state = confidence_gain(state, dist.entries[size][1], dist)
        scaled = gain / log_v if double_norm else gain
        if GAIN_NOISE_FLOOR <= scaled < 0.0:
            scaled = 0.0
        if scaled < epsilon:
            stop_reason = StopReason.THRESHOLD
            stop_gain = scaled
            break
        state = next_state
        size += 1

    return CandidatePool(
        tokens=tuple(t for t, _ in dist.entries[:size]),
        probs=tuple(p for _, p in dist.entries[:size]),
        pool_size=size,
        stop_reason=stop_reason,
        conf=state.conf,
        stop_gain=stop_gain,
    )


def entropy_bounds(conf_min: float, conf_max: float, vocab_size: int) -> EntropyBounds:
    """Map a confidence band onto the entropy band it corresponds to."""
    if vocab_size < 2:
        raise ValueError("entropy_bounds needs vocab_size >= 2")
    if not (0.0 < conf_min < conf_max <= 1.0):
        raise ValueError("need 0 < conf_min < conf_max <= 1")
    log_v = math.log(vocab_size)
    return EntropyBounds(
        alpha=conf_min,
        beta=conf_max,
        h_min=conf_min * log_v,
        h_max=conf_max * log_v,
        vocab_size=vocab_size,
    )
