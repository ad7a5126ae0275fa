"""Command line entry points. Apart from `serve` and `bench`, every
subcommand is a thin HTTP client against a running gateway."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import httpx

from .bench import run_scenarios
from .gateway import PipelineConfig, Pipeline, build_app


def _parse_params(pairs: list[str]) -> dict[str, str]:
    params = {}
    for pair in pairs:
        if "=" not in pair:
            raise SystemExit(f"--param expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        params[key] = value
    return params


def _client(args) -> httpx.Client:
    headers = {}
    if getattr(args, "token", None):
        headers["Authorization"] = f"Bearer {args.token}"
    return httpx.Client(base_url=args.base_url, headers=headers, timeout=30.0)


def _print_response(response: httpx.Response) -> int:
    try:
        body = response.json()
    except ValueError:
        body = response.text
    print(json.dumps(body, indent=2))
    return 0 if response.is_success else 1


def cmd_serve(args) -> int:
    import uvicorn

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig.from_dict({})
    pipeline = Pipeline(config)
    app = build_app(pipeline, console_dir=args.console_dir)
    port = args.port if args.port is not None else config.http_port
    try:
        uvicorn.run(app, host=args.host, port=port, log_level="warning")
    finally:
        pipeline.close()
    return 0


def cmd_submit(args) -> int:
    body = {
        "device_id": args.device,
        "kind": args.kind,
        "issuer": args.issuer,
        "params": _parse_params(args.param),
    }
    if args.tx_id:
        body["tx_id"] = args.tx_id
    with _client(args) as client:
        return _print_response(client.post("/transactions", json=body))


def cmd_mine(args) -> int:
    with _client(args) as client:
        return _print_response(client.post("/mine"))


def cmd_pending(args) -> int:
    with _client(args) as client:
        return _print_response(client.get("/pending"))


def cmd_decide(args) -> int:
    with _client(args) as client:
        return _print_response(
            client.post(f"/pending/{args.pending_id}/decision", json={"decision": args.decision})
        )


def cmd_validate_chain(args) -> int:
    with _client(args) as client:
        response = client.get("/chain/validate")
        code = _print_response(response)
        if code == 0 and not response.json().get("valid", False):
            return 1
        return code


def cmd_bench(args) -> int:
    delays = tuple(int(d) for d in args.delays.split(","))
    results, summary = run_scenarios(
        delays_ms=delays,
        seed=args.seed,
        out_dir=args.out,
        n_transactions=args.transactions,
        n_devices=args.devices,
        difficulty=args.difficulty,
    )
    for result in results:
        print(
            f"delay {result.scenario.delay_ms} ms: {len(result.records)} records, "
            f"injected at index {result.injection_index}, held as {result.pending_id}, "
            f"{result.duration_s:.1f} s"
        )
    for row in summary:
        print(
            f"  {row['scenario_delay_ms']:>4} ms  {row['metric']:<22} "
            f"n={row['count']:<4} mean={row['mean']:.3f} p95={row['p95']:.3f}"
        )
    if args.out:
        print(f"CSV written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="provgate",
        description="Smart-space transaction gateway with provenance screening",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP gateway")
    serve.add_argument("--config", help="path to a JSON config file")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=None, help="overrides the config port")
    serve.add_argument("--console-dir", default=None, help="static console bundle to mount")
    serve.set_defaults(func=cmd_serve)

    def add_base(p, token=False):
        p.add_argument("--base-url", default="http://127.0.0.1:8080")
        if token:
            p.add_argument("--token", required=True, help="trusted principal bearer token")

    submit = sub.add_parser("submit", help="submit a transaction")
    add_base(submit)
    submit.add_argument("--device", required=True)
    submit.add_argument("--kind", required=True)
    submit.add_argument("--issuer", required=True)
    submit.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    submit.add_argument("--tx-id", default=None)
    submit.set_defaults(func=cmd_submit)

    mine = sub.add_parser("mine", help="run one pipeline tick")
    add_base(mine)
    mine.set_defaults(func=cmd_mine)

    pending = sub.add_parser("pending", help="list held transactions")
    add_base(pending, token=True)
    pending.set_defaults(func=cmd_pending)

    decide = sub.add_parser("decide", help="approve or revoke a held transaction")
    add_base(decide, token=True)
    decide.add_argument("--pending-id", required=True)
    decide.add_argument("--decision", required=True, choices=["approve", "revoke"])
    decide.set_defaults(func=cmd_decide)

    validate = sub.add_parser("validate-chain", help="check chain integrity")
    add_base(validate)
    validate.set_defaults(func=cmd_validate_chain)

    bench = sub.add_parser("bench", help="run the benchmark scenarios")
    bench.add_argument("--delays", default="50,100,200", help="comma-separated ms delays")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default=None, help="directory for CSV output")
    bench.add_argument("--transactions", type=int, default=100)
    bench.add_argument("--devices", type=int, default=1)
    bench.add_argument("--difficulty", type=int, default=12)
    bench.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
