"""Command-line workflows: train models, embed/extract, sweep, evaluate.

Exit codes: 0 success, 1 usage or input problems, 2 codec desync (the
carrier does not decode under the given key/model), 3 bridge transport
failure.  Diagnostics go to stderr; data goes to stdout or ``--out``.

Secrets are read as raw bytes from ``--in`` or stdin, never from argv, so
payloads stay out of shell history.  A ``--config`` JSON file may supply
defaults for any long flag (keys use underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

from adlm.bridge_client import BridgeClient, BridgeProvider, TransportError
from adlm.codec import (
    CodecError,
    DesyncError,
    StegoKey,
    StegoTextError,
    embed,
    extract,
    frame_message,
)
from adlm.metrics import (
    corpus_to_csv,
    entropy_gap,
    eval_table,
    export_corpus,
    threshold_sweep,
)
from adlm.provider import NgramProvider, train_ngram

BRIDGE_ENV_VAR = "ADLM_BRIDGE_ENDPOINT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not exit(2)."""

    def error(self, message):
        raise _UsageError(message)


def _add_provider_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--model", help="path to a trained n-gram model file")
    sub.add_argument("--bridge", help=f"bridge endpoint host:port or "
                                      f"stdio:<cmd>; ${BRIDGE_ENV_VAR} as fallback")
    sub.add_argument("--top-n", type=int, default=512,
                     help="distribution width requested per step")


def _add_key_arg(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--key", help="path to the JSON key file")


def build_parser() -> _Parser:
    parser = _Parser(prog="adlm", allow_abbrev=False, description=__doc__)
    parser.add_argument("--config", help="JSON file of default flag values")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    commands = parser.add_subparsers(dest="command", metavar="command")

    train = commands.add_parser("train-lm", allow_abbrev=False,
                                help="train the built-in n-gram model")
    train.add_argument("--corpus", help="plain-text training corpus")
    train.add_argument("--out", help="where to write the model file")
    train.add_argument("--order", type=int, default=3)
    train.add_argument("--smoothing-k", type=float, default=0.01)

    emb = commands.add_parser("embed", allow_abbrev=False,
                              help="hide payload bytes in generated text")
    _add_key_arg(emb)
    _add_provider_args(emb)
    emb.add_argument("--in", dest="infile",
                     help="payload file (default: stdin bytes)")
    emb.add_argument("--out", help="carrier text file (default: stdout)")
    emb.add_argument("--trace", help="per-step JSON-lines trace file")

    ext = commands.add_parser("extract", allow_abbrev=False,
                              help="recover payload bytes from carrier text")
    _add_key_arg(ext)
    _add_provider_args(ext)
    ext.add_argument("--in", dest="infile",
                     help="carrier text file (default: stdin)")
    ext.add_argument("--out", help="payload file (default: stdout bytes)")

    sweep = commands.add_parser("sweep", allow_abbrev=False,
                                help="mean candidate-pool size per threshold")
    _add_provider_args(sweep)
    sweep.add_argument("--epsilons", help="comma-separated ascending thresholds")
    sweep.add_argument("--samples", type=int, default=200,
                       help="samples per threshold point")
    sweep.add_argument("--steps", type=int, default=40,
                       help="generation steps per sample")
    sweep.add_argument("--prefix", action="append", default=None,
                       help="generation prefix (repeatable)")
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--max-pool", type=int, default=512)
    sweep.add_argument("--double-norm", action="store_true",
                       help="compare gains on the extra 1/ln|V| scale")
    sweep.add_argument("--format", choices=["csv", "json"], default="csv")
    sweep.add_argument("--out", help="report file (default: stdout)")

    ev = commands.add_parser("eval", allow_abbrev=False,
                             help="PPL/distinct table across bits-per-word caps")
    _add_key_arg(ev)
    _add_provider_args(ev)
    ev.add_argument("--bpw", default="1,2,3,4",
                    help="comma-separated bits-per-word caps")
    ev.add_argument("--payloads", type=int, default=20,
                    help="random payloads per table cell")
    ev.add_argument("--payload-bytes", type=int, default=16)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--no-ablation", action="store_true",
                    help="skip the fixed-pool comparison rows")
    ev.add_argument("--reference", help="reference corpus for the entropy gap")
    ev.add_argument("--max-entropy-gap", type=float, default=0.1,
                    help="allowed unigram entropy gap vs the reference")
    ev.add_argument("--entropy-unit", choices=["nats", "bits"], default="nats")
    ev.add_argument("--format", choices=["csv", "json"], default="csv")
    ev.add_argument("--out", help="report file (default: stdout)")

    exp = commands.add_parser("export-corpus", allow_abbrev=False,
                              help="labeled cover/stego CSV for detector studies")
    _add_key_arg(exp)
    _add_provider_args(exp)
    exp.add_argument("--pairs", type=int, default=100,
                     help="cover/stego text pairs to generate")
    exp.add_argument("--payload-bytes", type=int, default=16)
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--out", help="CSV file (default: stdout)")

    return parser


def _apply_config(args: argparse.Namespace, argv: Sequence[str]) -> None:
    if not args.config:
        return
    path = Path(args.config)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise _UsageError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise _UsageError(f"config file {path} must hold a JSON object")
    for dest, value in config.items():
        if not hasattr(args, dest):
            raise _UsageError(f"config key {dest!r} matches no flag")
        flag = "--" + dest.replace("_", "-")
        if flag in argv:
            continue  # explicit flag wins
        setattr(args, dest, value)


def _require(args: argparse.Namespace, dest: str, flag: str):
    value = getattr(args, dest, None)
    if value is None:
        raise _UsageError(f"{flag} is required")
    return value


def _load_key(args: argparse.Namespace) -> StegoKey:
    path = Path(_require(args, "key", "--key"))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise _UsageError(f"cannot read key file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _UsageError(f"key file {path} is not valid JSON: {exc}") from exc
    return StegoKey.from_dict(data)


def _make_provider(args: argparse.Namespace):
    bridge = args.bridge or os.environ.get(BRIDGE_ENV_VAR)
    if args.model and args.bridge:
        raise _UsageError("--model and --bridge are mutually exclusive")
    if args.model:
        path = Path(args.model)
        if not path.exists():
            raise _UsageError(f"model file {path} does not exist")
        return NgramProvider.from_file(path, top_n=args.top_n)
    if bridge:
        return BridgeProvider(BridgeClient(bridge), top_n=args.top_n)
    raise _UsageError(f"need --model or --bridge (or ${BRIDGE_ENV_VAR})")


def _read_payload(args: argparse.Namespace) -> bytes:
    if args.infile:
        return Path(args.infile).read_bytes()
    return sys.stdin.buffer.read()


def _read_text(args: argparse.Namespace) -> str:
    if args.infile:
        return Path(args.infile).read_text(encoding="utf-8")
    return sys.stdin.read()


def _write_text(out: Optional[str], text: str) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _write_bytes(out: Optional[str], data: bytes) -> None:
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise _UsageError(f"{flag} must be a comma-separated number list") from exc


def _parse_int_list(raw: str, flag: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise _UsageError(f"{flag} must be a comma-separated integer list") from exc


def _cmd_train(args) -> int:
    corpus = Path(_require(args, "corpus", "--corpus"))
    out = Path(_require(args, "out", "--out"))
    if not corpus.exists():
        raise _UsageError(f"corpus file {corpus} does not exist")
    model = train_ngram(corpus, order=args.order, smoothing_k=args.smoothing_k)
    model_id = model.save(out)
    print(model_id)
    return 0


def _cmd_embed(args) -> int:
    key = _load_key(args)
    provider = _make_provider(args)
    payload = _read_payload(args)
    framed = frame_message(payload, key.header_bits)
    stego = embed(key, framed, provider, collect_trace=bool(args.trace))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for record in stego.trace:
                fh.write(json.dumps(record.to_dict(), sort_keys=True,
                                    separators=(",", ":")) + "\n")
    _write_text(args.out, stego.rendered)
    return 0


def _cmd_extract(args) -> int:
    key = _load_key(args)
    provider = _make_provider(args)
    carrier = _read_text(args)
    payload = extract(key, carrier, provider)
    _write_bytes(args.out, payload)
    return 0


def _cmd_sweep(args) -> int:
    provider = _make_provider(args)
    epsilons = _parse_float_list(_require(args, "epsilons", "--epsilons"),
                                 "--epsilons")
    prefixes = args.prefix
    if not prefixes:
        raise _UsageError("--prefix is required (repeatable)")
    report = threshold_sweep(
        provider, prefixes, epsilons, args.samples,
        steps_per_sample=args.steps, seed=args.seed,
        max_pool=args.max_pool, double_norm=args.double_norm,
    )
    text = report.to_csv() if args.format == "csv" else report.to_json() + "\n"
    _write_text(args.out, text)
    return 0


def _cmd_eval(args) -> int:
    key = _load_key(args)
    provider = _make_provider(args)
    bpw_list = _parse_int_list(args.bpw, "--bpw")
    if args.payloads < 1 or args.payload_bytes < 0:
        raise _UsageError("--payloads must be >= 1 and --payload-bytes >= 0")
    rng = random.Random(args.seed)
    payloads = [rng.randbytes(args.payload_bytes) for _ in range(args.payloads)]
    report = eval_table(provider, key, payloads, bpw_list,
                        include_ablation=not args.no_ablation)
    text = report.to_csv() if args.format == "csv" else report.to_json() + "\n"
    _write_text(args.out, text)
    if args.reference:
        reference = provider.tokenize(
            Path(args.reference).read_text(encoding="utf-8"))
        stego_tokens: list[int] = []
        for payload in payloads:
            framed = frame_message(payload, key.header_bits)
            stego_tokens.extend(embed(key, framed, provider).token_ids)
        gap = entropy_gap(stego_tokens, reference)
        limit = args.max_entropy_gap
        if args.entropy_unit == "bits":
            gap /= math.log(2)
        verdict = "ok" if gap <= limit else "EXCEEDED"
        print(f"entropy gap {gap:.6f} {args.entropy_unit} "
              f"(limit {limit}): {verdict}", file=sys.stderr)
    return 0


def _cmd_export(args) -> int:
    key = _load_key(args)
    provider = _make_provider(args)
    if args.pairs < 1:
        raise _UsageError("--pairs must be >= 1")
    rows = export_corpus(provider, key, args.pairs, seed=args.seed,
                         payload_bytes=args.payload_bytes)
    _write_text(args.out, corpus_to_csv(rows))
    return 0


_HANDLERS = {
    "train-lm": _cmd_train,
    "embed": _cmd_embed,
    "extract": _cmd_extract,
    "sweep": _cmd_sweep,
    "eval": _cmd_eval,
    "export-corpus": _cmd_export,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        _apply_config(args, argv)
        logging.basicConfig(stream=sys.stderr,
                            level=getattr(logging, args.log_level.upper()))
        if not args.command:
            raise _UsageError("no command given (see --help)")
        return _HANDLERS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DesyncError, StegoTextError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CodecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
