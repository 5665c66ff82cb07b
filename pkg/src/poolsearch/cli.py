"""Command-line client for the search service.

Every subcommand builds a request, sends it to the service and prints the
JSON response.  By default the service runs in-process (no server needed);
pass --server to talk to a remote instance instead.  File arguments are
always read locally and shipped inline, so the client works against a
remote server without sharing a filesystem.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import httpx

OUTPUT_DIR_ENV = "POOLSEARCH_OUTPUT_DIR"


def make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    from httpx import ASGITransport

    from .service import app

    return httpx.Client(
        transport=ASGITransport(app=app), base_url="http://poolsearch.local", timeout=None
    )


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        sys.exit(f"error ({response.status_code}): {detail}")
    return response.json()


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True, indent=2))


def _experiment_payload(args: argparse.Namespace) -> dict:
    payload: dict = {}
    if args.config:
        payload.update(json.loads(Path(args.config).read_text()))
    overrides = {
        "method": args.method,
        "backend": args.backend,
        "total_blocks": args.blocks,
        "num_poolings": args.poolings,
        "input_size": args.input_size,
        "num_models": args.models,
        "iterations": args.iterations,
        "seed": args.seed,
        "top_k": args.top_k,
        "interference": args.interference,
        "eval_noise": args.eval_noise,
        "output_dir": args.out,
        "benchmark_path": args.table,
    }
    payload.update({k: v for k, v in overrides.items() if v is not None})
    if "output_dir" not in payload and os.environ.get(OUTPUT_DIR_ENV):
        payload["output_dir"] = os.environ[OUTPUT_DIR_ENV]
    return payload


def cmd_enumerate(args) -> None:
    with make_client(args.server) as client:
        doc = _post(
            client,
            "/space/enumerate",
            {
                "total_blocks": args.blocks,
                "num_poolings": args.poolings,
                "input_size": args.input_size,
                "limit": args.limit,
            },
        )
    _emit(doc)


def cmd_search(args) -> None:
    with make_client(args.server) as client:
        doc = _post(client, "/search", _experiment_payload(args))
    _emit(doc)


def cmd_rank(args) -> None:
    run_dir = Path(args.run_dir)
    config = json.loads((run_dir / "config.json").read_text())
    records = []
    for lineno, line in enumerate((run_dir / "records.jsonl").read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            sys.exit(f"error: bad record on line {lineno} of records.jsonl")
    with make_client(args.server) as client:
        doc = _post(
            client,
            "/rank",
            {
                "config": config,
                "records": records,
                "use_bundled_table": args.bundled_table,
                "benchmark_path": args.table,
            },
        )
    _emit(doc)


def cmd_gradcheck(args) -> None:
    with make_client(args.server) as client:
        doc = _post(
            client,
            "/gradcheck",
            {
                "total_blocks": args.blocks,
                "num_poolings": args.poolings,
                "input_size": args.input_size,
                "epsilon": args.epsilon,
                "num_coords": args.coords,
                "seed": args.seed,
            },
        )
    _emit(doc)


def cmd_correlate(args) -> None:
    if args.report:
        report = json.loads(Path(args.report).read_text())
        scatter = report.get("scatter")
        if not scatter:
            sys.exit("error: report has no scatter data (was it a surrogate run?)")
        scores_a = [point["estimated"] for point in scatter]
        scores_b = [point["truth"] for point in scatter]
    else:
        scores_a = json.loads(Path(args.scores_a).read_text())
        scores_b = json.loads(Path(args.scores_b).read_text())
    with make_client(args.server) as client:
        doc = _post(client, "/correlate", {"scores_a": scores_a, "scores_b": scores_b})
    _emit(doc)


def cmd_serve(args) -> None:
    import uvicorn

    uvicorn.run("poolsearch.service:app", host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poolsearch",
        description="search pooling placements; talks to the service in-process unless --server is given",
    )
    parser.add_argument("--server", default=None, help="base URL of a running service")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="list the configurations of a space")
    p.add_argument("--blocks", type=int, required=True)
    p.add_argument("--poolings", type=int, required=True)
    p.add_argument("--input-size", type=int, default=32)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("search", help="run one seeded search")
    p.add_argument("--config", default=None, help="JSON file of experiment fields")
    p.add_argument("--method", default=None,
                   choices=["balanced", "spos", "bse", "mcts", "mcts-warmup", "bruteforce"])
    p.add_argument("--backend", default=None, choices=["surrogate", "cnn"])
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--poolings", type=int, default=None)
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--models", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--interference", type=float, default=None)
    p.add_argument("--eval-noise", type=float, default=None)
    p.add_argument("--table", default=None, help="benchmark table file for the surrogate")
    p.add_argument("--out", default=None,
                   help=f"run directory (default: ${OUTPUT_DIR_ENV} if set)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("rank", help="rebuild a report from a persisted run directory")
    p.add_argument("run_dir")
    p.add_argument("--bundled-table", action="store_true",
                   help="correlate against the packaged ground-truth table")
    p.add_argument("--table", default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("gradcheck", help="finite-difference check of the trainable backend")
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--poolings", type=int, default=1)
    p.add_argument("--input-size", type=int, default=8)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("correlate", help="Kendall tau between two score vectors")
    p.add_argument("--report", default=None, help="report.json with scatter data")
    p.add_argument("--scores-a", default=None, help="JSON list of scores")
    p.add_argument("--scores-b", default=None, help="JSON list of scores")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    if args.command == "correlate" and not args.report and not (args.scores_a and args.scores_b):
        sys.exit("error: pass --report or both --scores-a and --scores-b")
    args.func(args)


if __name__ == "__main__":
    main()
