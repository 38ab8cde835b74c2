"""Command-line client for the service.

Every verb issues the same HTTP requests the service defines. By default
they go to an in-process copy of the app (no server required, results land
on the local filesystem); pass --server http://host:port to talk to a
running instance instead. `serve` starts that instance.
"""

import argparse
import asyncio
import json
import sys

import httpx


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairlabel",
        description="semi-supervised cross-modal label prediction")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_server(p):
        p.add_argument("--server", default=None,
                       help="base URL of a running service; default runs "
                            "in-process")

    p = sub.add_parser("run", help="run an experiment from a config file")
    p.add_argument("config", help="INI config path")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--out", default=None, help="artifact directory "
                   "(default: run.output_dir from the config)")
    add_server(p)

    p = sub.add_parser("report", help="re-render the summary for a finished "
                                      "run")
    p.add_argument("artifact_dir")
    add_server(p)

    p = sub.add_parser("gen-synth", help="write a synthetic paired dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--d1", type=int, default=16)
    p.add_argument("--d2", type=int, default=24)
    p.add_argument("--per-class-count", type=int, default=200)
    p.add_argument("--per-class-test", type=int, default=50)
    p.add_argument("--separation1", type=float, default=1.0)
    p.add_argument("--separation2", type=float, default=1.0)
    p.add_argument("--noise1", type=float, default=1.0)
    p.add_argument("--noise2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    add_server(p)

    p = sub.add_parser("check", help="run the built-in sanity battery")
    add_server(p)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


async def _request(server, method: str, path: str, payload=None) -> dict:
    if server:
        client = httpx.AsyncClient(base_url=server, timeout=None)
    else:
        from .service import app
        client = httpx.AsyncClient(transport=httpx.ASGITransport(app=app),
                                   base_url="http://pairlabel", timeout=None)
    async with client:
        response = await client.request(method, path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except (ValueError, json.JSONDecodeError):
            detail = response.text
        raise RuntimeError(f"{method} {path} failed "
                           f"({response.status_code}): {detail}")
    return response.json()


def _call(server, method, path, payload=None) -> dict:
    return asyncio.run(_request(server, method, path, payload))


def _cmd_run(args) -> int:
    body = {"config_path": args.config, "overrides": args.overrides,
            "output_dir": args.out}
    result = _call(args.server, "POST", "/run", body)
    print(result["summary"])
    print(f"artifacts written to {result['output_dir']}:")
    for name in result["files"]:
        print(f"  {name}")
    return 0


def _cmd_report(args) -> int:
    result = _call(args.server, "POST", "/report",
                   {"artifact_dir": args.artifact_dir})
    print(result["summary"])
    return 0


def _cmd_gen_synth(args) -> int:
    body = {"output_dir": args.out, "classes": args.classes,
            "d_1": args.d1, "d_2": args.d2,
            "per_class_count": args.per_class_count,
            "per_class_test": args.per_class_test,
            "separation_1": args.separation1,
            "separation_2": args.separation2,
            "noise_1": args.noise1, "noise_2": args.noise2,
            "seed": args.seed}
    result = _call(args.server, "POST", "/synth", body)
    print(f"{result['n_samples']} samples, {result['n_classes']} classes")
    for name, path in result["paths"].items():
        print(f"  {name}: {path}")
    return 0


def _cmd_check(args) -> int:
    result = _call(args.server, "POST", "/check")
    for item in result["checks"]:
        mark = "ok  " if item["passed"] else "FAIL"
        print(f"{mark} {item['name']}: {item['detail']}")
    if not result["passed"]:
        print("some checks failed", file=sys.stderr)
        return 1
    print("all checks passed")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "report": _cmd_report,
    "gen-synth": _cmd_gen_synth,
    "check": _cmd_check,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except (RuntimeError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
