"""adlm: hide bitstreams in generated text via entropy-driven pool truncation."""

from adlm.entropy import (
    CandidatePool,
    ConfidenceState,
    EntropyBounds,
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

__all__ = [
    "CandidatePool",
    "ConfidenceState",
    "EntropyBounds",
    "StopReason",
    "TokenDistribution",
    "confidence",
    "confidence_gain",
    "entropy",
    "entropy_bounds",
    "partial_confidence",
    "quantize_prob",
    "truncate",
]

__version__ = "0.1.0"
