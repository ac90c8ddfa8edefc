"""Command line entry points: serve a model, or build the toy checkpoint."""

import argparse
import logging
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adlm-bridge",
        description="Serve a language model over the adlm wire protocol.",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="answer requests on stdio or TCP",
                           allow_abbrev=False)
    serve.add_argument("--endpoint", default="stdio",
                       help="'stdio' or host:port (default stdio)")
    serve.add_argument("--model", required=True,
                       help="toy:<dir>, hf:<name>[@revision], or a toy dir")

    toy = sub.add_parser("make-toy", help="build a tiny local checkpoint",
                         allow_abbrev=False)
    toy.add_argument("--out", required=True, help="output directory")
    toy.add_argument("--vocab-size", type=int, default=200)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--layers", type=int, default=2)
    toy.add_argument("--heads", type=int, default=2)
    toy.add_argument("--embed", type=int, default=32)
    toy.add_argument("--positions", type=int, default=256)
    return parser


def run(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-toy":
            from adlm_bridge.toy import build_toy

            out = build_toy(
                args.out, vocab_size=args.vocab_size, seed=args.seed,
                n_embd=args.embed, n_layer=args.layers, n_head=args.heads,
                n_positions=args.positions,
            )
            print(out)
            return 0
        from adlm_bridge.models import load_model
        from adlm_bridge.server import serve

        serve(args.endpoint, load_model(args.model))
        return 0
    except KeyboardInterrupt:
        return 0
    except (ValueError, OSError) as exc:
        print(f"adlm-bridge: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
