"""Command line: train the denoiser, or serve it over the plugin protocol."""

from __future__ import annotations

import argparse
import sys

import torch


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="denoiser3d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a scene dataset manifest")
    p.add_argument("--data", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--out", required=True, help="weights output file")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="JSONL epoch log")
    p.add_argument("--threads", type=int, default=0, help="torch threads (0 = default)")

    p = sub.add_parser("serve", help="answer denoising requests")
    p.add_argument("--weights", required=True)
    transport = p.add_mutually_exclusive_group(required=True)
    transport.add_argument("--stdio", action="store_true")
    transport.add_argument("--listen", metavar="HOST:PORT")
    p.add_argument("--threads", type=int, default=0)

    args = parser.parse_args(argv)
    if args.threads:
        torch.set_num_threads(args.threads)

    if args.command == "train":
        from .train import TrainConfig, train

        cfg = TrainConfig(batch_size=args.batch_size, max_epochs=args.epochs,
                          lr=args.lr, seed=args.seed)
        summary = train(args.data, args.out, cfg, log_path=args.log,
                        progress=lambda msg: print(msg, file=sys.stderr, flush=True))
        print(f"best epoch {summary['best_epoch']} "
              f"(val loss {summary['best_val_loss']:.3e}); weights at {args.out}")
        return 0

    from .model import load_weights
    from .serve import serve_stdio, serve_tcp

    model = load_weights(args.weights)
    if args.stdio:
        return serve_stdio(model)
    host, _, port = args.listen.rpartition(":")
    return serve_tcp(model, host or "127.0.0.1", int(port))


if __name__ == "__main__":
    sys.exit(main())
