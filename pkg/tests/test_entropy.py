import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adlm.entropy import (
    ConfidenceState,
    StopReason,
    TokenDistribution,
    confidence,
    confidence_gain,
    entropy,
    entropy_bounds,
    partial_confidence,
    quantize_prob,
    truncate,
)
from oracles import mp_confidence, mp_entropy, mp_gain, mp_partial_confidence

# Frozen from tests/oracles.py at 50 digits:
# partial_confidence((0.7,0.1,0.1,0.1), V=4, k=1)
CONF_K1_SKEWED = 0.32161017527648026


def dist(probs, vocab_size=None):
    if vocab_size is None:
        vocab_size = len(probs)
    return TokenDistribution.from_probs(list(enumerate(probs)), vocab_size)


def normalized(weights):
    total = sum(weights)
    return [w / total for w in weights]


# --- quantization -----------------------------------------------------------

def test_quantize_is_idempotent_and_monotone():
    values = [0.0, 1e-20, 0.1, 0.3, 1 / 3, 0.5, 0.999999, 1.0]
    for v in values:
        q = quantize_prob(v)
        assert quantize_prob(q) == q
        assert abs(q - v) <= 2.0 ** -49
    qs = [quantize_prob(v) for v in values]
    assert qs == sorted(qs)


def test_quantize_preserves_powers_of_two():
    for exp in range(0, 48):
        assert quantize_prob(2.0 ** -exp) == 2.0 ** -exp


# --- TokenDistribution validation -------------------------------------------

def test_from_probs_sorts_by_prob_then_id():
    d = TokenDistribution.from_probs([(3, 0.2), (1, 0.5), (2, 0.2), (0, 0.1)], 4)
    assert d.token_ids == (1, 2, 3, 0)


def test_rejects_empty_entries():
    with pytest.raises(ValueError):
        TokenDistribution(vocab_size=4, entries=())


def test_rejects_vocab_smaller_than_entries():
    with pytest.raises(ValueError):
        TokenDistribution.from_probs([(0, 0.5), (1, 0.5)], 1)


def test_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        TokenDistribution.from_probs([(0, 0.5), (0, 0.5)], 4)


def test_rejects_out_of_range_id():
    with pytest.raises(ValueError):
        TokenDistribution.from_probs([(4, 1.0)], 4)


def test_rejects_unsorted_entries():
    q = quantize_prob
    with pytest.raises(ValueError):
        TokenDistribution(vocab_size=4, entries=((0, q(0.1)), (1, q(0.9))))


def test_rejects_off_grid_probability():
    with pytest.raises(ValueError):
        TokenDistribution(vocab_size=4, entries=((0, 1 / 3),))


def test_rejects_mass_above_one():
    with pytest.raises(ValueError):
        TokenDistribution.from_probs([(0, 0.7), (1, 0.7)], 4)


def test_rejects_full_listing_below_one():
    with pytest.raises(ValueError):
        TokenDistribution.from_probs([(0, 0.5), (1, 0.25)], 2)


def test_accepts_zero_probabilities():
    d = dist([1.0, 0.0, 0.0, 0.0])
    assert d.probs == (1.0, 0.0, 0.0, 0.0)
    assert d.residual == 0.0


def test_residual_of_partial_listing():
    d = dist([0.5, 0.25], vocab_size=8)
    assert d.residual == pytest.approx(0.25, abs=1e-12)


# --- entropy ----------------------------------------------------------------

def test_entropy_uniform_four():
    assert entropy(dist([0.25] * 4)) == pytest.approx(math.log(4), abs=1e-12)


def test_entropy_degenerate_is_zero():
    assert entropy(dist([1.0], vocab_size=4)) == 0.0
    assert entropy(dist([1.0, 0.0, 0.0, 0.0])) == 0.0


def test_entropy_two_point_uniform():
    assert entropy(dist([0.5, 0.5])) == pytest.approx(math.log(2), abs=1e-12)


def test_entropy_counts_residual_as_uniform():
    # listing the top entry of a uniform 4-dist scores the same as listing all
    partial = dist([0.25], vocab_size=4)
    assert entropy(partial) == pytest.approx(math.log(4), abs=1e-12)


def test_entropy_matches_oracle():
    probs = normalized([5, 3, 2, 1, 1])
    d = dist(probs, vocab_size=12)
    expected = float(mp_entropy(d.probs, 12))
    assert entropy(d) == pytest.approx(expected, abs=1e-12)


# --- confidence -------------------------------------------------------------

def test_confidence_uniform_is_zero():
    for v in (2, 4, 16, 1024):
        assert confidence(dist([1.0 / v] * v)) == pytest.approx(0.0, abs=1e-12)


def test_confidence_degenerate_is_one():
    for v in (2, 4, 16, 1024):
        probs = [1.0] + [0.0] * (v - 1)
        assert confidence(dist(probs)) == pytest.approx(1.0, abs=1e-12)


def test_confidence_half_half_of_four():
    assert confidence(dist([0.5, 0.5, 0.0, 0.0])) == pytest.approx(0.5, abs=1e-12)


def test_confidence_rejects_tiny_vocab():
    with pytest.raises(ValueError):
        confidence(dist([1.0], vocab_size=1))


# --- partial_confidence -----------------------------------------------------

def test_partial_confidence_k0_is_exactly_zero():
    d = dist([0.7, 0.1, 0.1, 0.1])
    assert partial_confidence(d, 0) == 0.0


def test_partial_confidence_skewed_k1():
    d = dist([0.7, 0.1, 0.1, 0.1])
    assert partial_confidence(d, 1) == pytest.approx(CONF_K1_SKEWED, abs=1e-9)
    # the coarser figure quoted alongside the formula
    assert partial_confidence(d, 1) == pytest.approx(0.3217, abs=5e-4)


def test_partial_confidence_full_listing_reduces_to_confidence():
    d = dist(normalized([4, 2, 1, 1]))
    assert partial_confidence(d, 4) == pytest.approx(confidence(d), abs=1e-12)


def test_partial_confidence_rejects_out_of_range_k():
    d = dist([0.5, 0.5])
    with pytest.raises(ValueError):
        partial_confidence(d, 3)
    with pytest.raises(ValueError):
        partial_confidence(d, -1)


def test_partial_confidence_rejects_inconsistent_full_k():
    # k = vocab_size with leftover mass: no tokens remain to carry the
    # residual.  Construction refuses such listings, so forge one.
    d = object.__new__(TokenDistribution)
    object.__setattr__(d, "vocab_size", 3)
    object.__setattr__(d, "entries", ((0, 0.5), (1, 0.25), (2, 0.125)))
    with pytest.raises(ValueError):
        partial_confidence(d, 3)


def test_partial_confidence_matches_oracle_curve():
    probs = normalized([9, 4, 4, 2, 1])
    d = dist(probs, vocab_size=40)
    for k in range(len(probs) + 1):
        expected = float(mp_partial_confidence(d.probs, 40, k))
        assert partial_confidence(d, k) == pytest.approx(expected, abs=1e-12)


# --- confidence_gain --------------------------------------------------------

def walk(d, steps=None):
    state = ConfidenceState.initial()
    gains = []
    n = len(d.entries) if steps is None else steps
    for i in range(n):
        gain, state = confidence_gain(state, d.entries[i][1], d)
        gains.append(gain)
    return gains, state


def test_gain_first_step_equals_conf_k1():
    d = dist([0.7, 0.1, 0.1, 0.1])
    gains, _ = walk(d, steps=1)
    assert gains[0] == pytest.approx(CONF_K1_SKEWED, abs=1e-9)


def test_gain_uniform_steps_are_zero():
    d = dist([0.25] * 4)
    gains, _ = walk(d)
    for g in gains:
        assert g == pytest.approx(0.0, abs=1e-12)


def test_gain_degenerate_first_step_is_one():
    d = dist([1.0, 0.0, 0.0, 0.0])
    gains, _ = walk(d, steps=1)
    assert gains[0] == pytest.approx(1.0, abs=1e-12)


def test_gain_telescopes_to_partial_confidence():
    probs = normalized([7, 3, 3, 2, 1, 1])
    d = dist(probs, vocab_size=50)
    state = ConfidenceState.initial()
    running = 0.0
    for k in range(1, len(probs) + 1):
        gain, state = confidence_gain(state, d.entries[k - 1][1], d)
        running += gain
        assert running == pytest.approx(partial_confidence(d, k), abs=1e-9)
        assert state.conf == pytest.approx(partial_confidence(d, k), abs=1e-12)


def test_gain_matches_oracle_difference():
    probs = normalized([6, 5, 2, 2, 1])
    d = dist(probs, vocab_size=30)
    gains, _ = walk(d)
    for k, g in enumerate(gains, start=1):
        assert g == pytest.approx(float(mp_gain(d.probs, 30, k)), abs=1e-12)


def test_gain_rejects_ascending_prob():
    d = dist([0.7, 0.1, 0.1, 0.1])
    _, state = walk(d, steps=2)
    with pytest.raises(ValueError):
        confidence_gain(state, 0.7, d)


def test_gain_rejects_walk_past_entries():
    d = dist([0.5, 0.5])
    _, state = walk(d)
    with pytest.raises(ValueError):
        confidence_gain(state, 0.0, d)


# --- truncate ---------------------------------------------------------------

def test_truncate_high_epsilon_keeps_only_top_token():
    pool = truncate(dist([0.7, 0.1, 0.1, 0.1]), epsilon=1.0, max_pool=512)
    assert pool.pool_size == 1
    assert pool.tokens == (0,)
    assert pool.stop_reason is StopReason.THRESHOLD


def test_truncate_epsilon_zero_takes_everything():
    d = dist(normalized([5, 4, 3, 2, 1]), vocab_size=20)
    pool = truncate(d, epsilon=0.0, max_pool=512)
    assert pool.pool_size == 5
    assert pool.stop_reason is StopReason.DISTRIBUTION_EXHAUSTED


def test_truncate_epsilon_zero_respects_cap():
    d = dist(normalized([5, 4, 3, 2, 1]), vocab_size=20)
    pool = truncate(d, epsilon=0.0, max_pool=3)
    assert pool.pool_size == 3
    assert pool.stop_reason is StopReason.MAX_POOL_CAP


def test_truncate_cap_reported_when_cap_and_exhaustion_coincide():
    d = dist(normalized([5, 4, 3]), vocab_size=20)
    pool = truncate(d, epsilon=0.0, max_pool=3)
    assert pool.pool_size == 3
    assert pool.stop_reason is StopReason.MAX_POOL_CAP


def test_truncate_degenerate_stops_at_one():
    pool = truncate(dist([1.0, 0.0, 0.0, 0.0]), epsilon=0.001, max_pool=512)
    assert pool.pool_size == 1
    assert pool.stop_reason is StopReason.THRESHOLD
    assert pool.stop_gain == pytest.approx(0.0, abs=1e-12)


def test_truncate_gain_equal_to_epsilon_still_admits():
    # uniform gains are exactly 0; epsilon 0 admits every entry
    pool = truncate(dist([0.25] * 4), epsilon=0.0, max_pool=512)
    assert pool.pool_size == 4


def test_truncate_pool_matches_greedy_oracle():
    probs = normalized([40, 20, 10, 5, 2, 1, 1, 1])
    d = dist(probs, vocab_size=64)
    epsilon = 0.004
    size = 1
    while size < len(probs):
        g = float(mp_gain(d.probs, 64, size + 1))
        if g < epsilon:
            break
        size += 1
    pool = truncate(d, epsilon=epsilon, max_pool=512)
    assert pool.pool_size == size


def test_truncate_rejects_bad_args():
    d = dist([0.5, 0.5])
    with pytest.raises(ValueError):
        truncate(d, epsilon=-0.1, max_pool=4)
    with pytest.raises(ValueError):
        truncate(d, epsilon=0.1, max_pool=0)


def test_truncate_double_norm_rescales_threshold():
    # gain at k=2 for this dist sits between eps and eps/ln|V|
    d = dist(normalized([8, 2, 1, 1]), vocab_size=16)
    g2 = float(mp_gain(d.probs, 16, 2))
    eps = g2 * 1.5
    plain = truncate(d, epsilon=eps, max_pool=512)
    scaled = truncate(d, epsilon=eps / math.log(16), max_pool=512, double_norm=True)
    assert plain.pool_size == 1
    assert scaled.pool_size == plain.pool_size
    # same eps under double_norm compares gain/ln|V| < eps, so it stops sooner
    harsher = truncate(d, epsilon=eps, max_pool=512, double_norm=True)
    assert harsher.pool_size <= plain.pool_size


# --- entropy_bounds ---------------------------------------------------------

def test_entropy_bounds_maps_linearly():
    b = entropy_bounds(0.2, 0.8, 100)
    assert b.alpha == 0.2
    assert b.beta == 0.8
    assert b.h_min == pytest.approx(0.2 * math.log(100), abs=1e-12)
    assert b.h_max == pytest.approx(0.8 * math.log(100), abs=1e-12)


def test_entropy_bounds_rejects_bad_ordering():
    with pytest.raises(ValueError):
        entropy_bounds(0.8, 0.2, 100)
    with pytest.raises(ValueError):
        entropy_bounds(0.0, 0.5, 100)
    with pytest.raises(ValueError):
        entropy_bounds(0.2, 1.1, 100)
    with pytest.raises(ValueError):
        entropy_bounds(0.2, 0.8, 1)


# --- properties -------------------------------------------------------------

weights_strategy = st.lists(
    st.floats(min_value=1e-6, max_value=1.0, allow_nan=False), min_size=1, max_size=24
)


@settings(max_examples=200, deadline=None)
@given(weights=weights_strategy, extra=st.integers(min_value=0, max_value=40))
def test_property_entropy_and_confidence_in_range(weights, extra):
    probs = normalized(weights)
    vocab = len(probs) + extra
    d = dist(probs, vocab_size=max(vocab, 2) if len(probs) >= 2 else len(probs) + max(extra, 1))
    h = entropy(d)
    assert -1e-9 <= h <= math.log(d.vocab_size) + 1e-9
    c = confidence(d)
    assert 0.0 <= c <= 1.0


@settings(max_examples=200, deadline=None)
@given(weights=st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=24),
       extra=st.integers(min_value=0, max_value=40))
def test_property_gains_telescope(weights, extra):
    probs = normalized(weights)
    d = dist(probs, vocab_size=len(probs) + extra)
    gains, state = walk(d)
    assert sum(gains) == pytest.approx(partial_confidence(d, len(probs)), abs=1e-9)
    assert state.conf == pytest.approx(partial_confidence(d, len(probs)), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(weights=st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=24),
       extra=st.integers(min_value=0, max_value=40))
def test_property_gains_never_meaningfully_negative(weights, extra):
    probs = normalized(weights)
    d = dist(probs, vocab_size=len(probs) + extra)
    gains, _ = walk(d)
    assert min(gains) >= -1e-9


@settings(max_examples=100, deadline=None)
@given(weights=st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=24),
       extra=st.integers(min_value=0, max_value=40),
       eps_lo=st.floats(min_value=0.0, max_value=0.05),
       eps_gap=st.floats(min_value=0.0, max_value=0.05))
def test_property_pool_size_non_increasing_in_epsilon(weights, extra, eps_lo, eps_gap):
    probs = normalized(weights)
    d = dist(probs, vocab_size=len(probs) + extra)
    lo = truncate(d, epsilon=eps_lo, max_pool=512)
    hi = truncate(d, epsilon=eps_lo + eps_gap, max_pool=512)
    assert hi.pool_size <= lo.pool_size
