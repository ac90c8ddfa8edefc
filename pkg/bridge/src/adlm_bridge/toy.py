"""Builds a tiny randomly-initialized word-level transformer checkpoint.

The result is a local stand-in for a hub model: same file layout, same
serving path, seconds to build, deterministic under its seed.  Word ids
0/1/2 are <bos>/<eos>/<unk>; "." is a regular word so generated text can
end sentences.
"""

import json
import os

RESERVED_WORDS = ("<bos>", "<eos>", "<unk>")


def build_toy(
    out_dir: str,
    vocab_size: int = 200,
    seed: int = 0,
    n_embd: int = 32,
    n_layer: int = 2,
    n_head: int = 2,
    n_positions: int = 256,
) -> str:
    """Write the checkpoint and word list; returns ``out_dir``."""
    import torch
    from transformers import GPT2Config, GPT2LMHeadModel

    if vocab_size < 5:
        raise ValueError("vocab_size must be >= 5 (3 reserved ids, '.', a word)")
    words = list(RESERVED_WORDS) + ["."] + [
        f"w{i:03d}" for i in range(vocab_size - 4)
    ]
    config = GPT2Config(
        vocab_size=vocab_size,
        n_positions=n_positions,
        n_embd=n_embd,
        n_layer=n_layer,
        n_head=n_head,
        bos_token_id=0,
        eos_token_id=1,
    )
    torch.manual_seed(seed)
    model = GPT2LMHeadModel(config)
    model.eval()
    os.makedirs(out_dir, exist_ok=True)
    model.save_pretrained(out_dir, safe_serialization=True)
    with open(os.path.join(out_dir, "vocab.json"), "w", encoding="utf-8") as fh:
        json.dump(words, fh, ensure_ascii=True)
    return out_dir
