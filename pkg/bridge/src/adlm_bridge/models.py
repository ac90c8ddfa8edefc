"""Model wrappers the bridge can serve.

Every wrapper exposes the same small surface: ``model_id``, ``vocab_size``,
``tokenize``, ``detokenize`` and ``next_dist(ctx, top_n)`` returning
``(token_id, prob)`` pairs sorted by descending probability (ties broken by
ascending id).  Probabilities are a temperature-1.0 softmax of the final
logits, computed in float64; the bridge never rounds or renormalizes, the
consuming side owns quantization.

Torch and transformers are imported lazily so the protocol layer stays
importable without them.
"""

import hashlib
import json
import os

# word-level conventions shared with the consumer's built-in model
BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
RESERVED_WORDS = ("<bos>", "<eos>", "<unk>")


def _softmax_pairs(logits, top_n, exclude=()):
    """Descending (id, prob) pairs from raw logits, reserved ids left out."""
    import torch

    probs = torch.softmax(logits.double(), dim=-1).tolist()
    pairs = [
        (tid, p)
        for tid, p in enumerate(probs)
        if tid not in exclude and p > 0.0
    ]
    pairs.sort(key=lambda e: (-e[1], e[0]))
    return pairs[:top_n]


def _check_ctx(ctx, vocab_size):
    for tid in ctx:
        if not isinstance(tid, int) or not (0 <= tid < vocab_size):
            raise ValueError(f"token id {tid!r} outside vocab")


class ToyWordModel:
    """A tiny word-level transformer built by ``make-toy``.

    The directory holds a standard transformers checkpoint plus a
    ``vocab.json`` word list whose index is the token id.  Ids 0/1/2 are
    <bos>/<eos>/<unk>; <eos> renders as a newline and <bos>/<unk> are never
    offered in next-token listings, so every listed token survives a trip
    through text.
    """

    def __init__(self, model_dir: str):
        from transformers import GPT2LMHeadModel
        from transformers.utils import logging as hf_logging

        hf_logging.disable_progress_bar()
        vocab_path = os.path.join(model_dir, "vocab.json")
        with open(vocab_path, "r", encoding="utf-8") as fh:
            words = json.load(fh)
        if words[:3] != list(RESERVED_WORDS):
            raise ValueError(f"{vocab_path} must start with {RESERVED_WORDS}")
        self._words = tuple(words)
        self._index = {w: i for i, w in enumerate(words)}
        self._model = GPT2LMHeadModel.from_pretrained(model_dir)
        self._model.eval()
        if self._model.config.vocab_size != len(words):
            raise ValueError("vocab.json length does not match model weights")
        self._window = int(self._model.config.n_positions)
        digest = hashlib.sha256()
        for name in ("vocab.json", "model.safetensors"):
            with open(os.path.join(model_dir, name), "rb") as fh:
                digest.update(fh.read())
        self.model_id = digest.hexdigest()
        self.vocab_size = len(words)

    def tokenize(self, text: str) -> list[int]:
        ids: list[int] = []
        for i, line in enumerate(text.split("\n")):
            if i > 0:
                ids.append(EOS_ID)
            ids.extend(self._index.get(w, UNK_ID) for w in line.split())
        return ids

    def detokenize(self, ids) -> str:
        parts: list[str] = []
        for tid in ids:
            if not (0 <= tid < self.vocab_size):
                raise ValueError(f"token id {tid} outside vocab")
            if tid == EOS_ID:
                parts.append("\n")
            else:
                if parts and not parts[-1].endswith("\n"):
                    parts.append(" ")
                parts.append(self._words[tid])
        return "".join(parts)

    def next_dist(self, ctx, top_n: int):
        import torch

        _check_ctx(ctx, self.vocab_size)
        ids = [BOS_ID] + list(ctx)
        if len(ids) > self._window:
            raise ValueError(
                f"context of {len(ctx)} tokens exceeds the model window"
            )
        with torch.no_grad():
            logits = self._model(torch.tensor([ids])).logits[0, -1]
        return _softmax_pairs(logits, top_n, exclude=(BOS_ID, UNK_ID))


class HFCausalModel:
    """Any hub-published causal LM, served with its own subword tokenizer."""

    def __init__(self, name: str, revision: str = "main"):
        from transformers import AutoModelForCausalLM, AutoTokenizer
        from transformers.utils import logging as hf_logging

        hf_logging.disable_progress_bar()
        self._tokenizer = AutoTokenizer.from_pretrained(name, revision=revision)
        self._model = AutoModelForCausalLM.from_pretrained(name, revision=revision)
        self._model.eval()
        config = self._model.config
        commit = getattr(config, "_commit_hash", None) or revision
        self.model_id = hashlib.sha256(f"{name}@{commit}".encode()).hexdigest()
        self.vocab_size = int(config.vocab_size)
        self._window = int(
            getattr(config, "n_positions", 0)
            or getattr(config, "max_position_embeddings", 0)
            or 1024
        )
        self._start_id = self._tokenizer.eos_token_id or 0

    def tokenize(self, text: str) -> list[int]:
        return self._tokenizer.encode(text, add_special_tokens=False)

    def detokenize(self, ids) -> str:
        _check_ctx(ids, self.vocab_size)
        return self._tokenizer.decode(list(ids))

    def next_dist(self, ctx, top_n: int):
        import torch

        _check_ctx(ctx, self.vocab_size)
        ids = list(ctx) or [self._start_id]
        if len(ids) > self._window:
            raise ValueError(
                f"context of {len(ctx)} tokens exceeds the model window"
            )
        with torch.no_grad():
            logits = self._model(torch.tensor([ids])).logits[0, -1]
        return _softmax_pairs(logits, top_n)


def load_model(spec: str):
    """``toy:<dir>``, ``hf:<name>[@revision]``, or a bare toy directory."""
    if spec.startswith("toy:"):
        return ToyWordModel(spec[len("toy:"):])
    if spec.startswith("hf:"):
        name, _, revision = spec[len("hf:"):].partition("@")
        return HFCausalModel(name, revision or "main")
    if os.path.isdir(spec) and os.path.exists(os.path.join(spec, "vocab.json")):
        return ToyWordModel(spec)
    raise ValueError(f"unrecognized model spec {spec!r}")
