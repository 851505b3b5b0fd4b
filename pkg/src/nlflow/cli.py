"""Command-line client: every subcommand maps 1:1 onto a service endpoint.

With NLFLOW_SERVER (or --server) set, requests go over HTTP; otherwise the
service runs embedded in-process against --data-dir, so the CLI works fully
offline. stdout carries canonical documents, stderr human diagnostics.

Exit codes: 0 ok, 2 usage, 3 validation, 4 unknown id, 5 conflict,
6 pipeline stage error, 7 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any

EXIT_CODES = {
    400: 3,
    404: 4,
    409: 5,
    422: 6,
}


def _exit_code(status: int) -> int:
    if status < 400:
        return 0
    return EXIT_CODES.get(status, 7)


class Client:
    """httpx-compatible facade over a remote server or the embedded app."""

    def __init__(self, server: str | None, data_dir: str, offline: bool):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=60.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from starlette.testclient import TestClient

            from .api import create_app
            from .engine import build_engine

            engine = build_engine(data_dir, offline=offline)
            self._client = TestClient(create_app(engine), raise_server_exceptions=False)

    def request(self, method: str, path: str, **kwargs: Any):
        return self._client.request(method, path, **kwargs)

    def stream(self, method: str, path: str, **kwargs: Any):
        return self._client.stream(method, path, **kwargs)

    def close(self) -> None:
        self._client.close()


def _emit(response) -> int:
    """Print the response body to stdout (errors to stderr); map exit code."""
    body = response.text
    if response.status_code < 400:
        if body:
            sys.stdout.write(body if body.endswith("\n") else body + "\n")
    else:
        sys.stderr.write(body if body.endswith("\n") else body + "\n")
    return _exit_code(response.status_code)


def _follow_events(client: Client, run_id: str) -> int:
    """Stream run events, one canonical document per stdout line."""
    terminal = {"run_completed", "run_failed"}
    failed = False
    with client.stream("GET", f"/runs/{run_id}/events") as response:
        if response.status_code >= 400:
            sys.stderr.write(response.read().decode() + "\n")
            return _exit_code(response.status_code)
        for line in response.iter_lines():
            if isinstance(line, bytes):
                line = line.decode("utf-8")
            if not line.startswith("data: "):
                continue
            doc_line = line[len("data: "):]
            sys.stdout.write(doc_line + "\n")
            sys.stdout.flush()
            kind = json.loads(doc_line).get("kind")
            if kind == "run_failed":
                failed = True
            if kind in terminal:
                break
    return 7 if failed else 0


def _add_global_flags(parser: argparse.ArgumentParser, *, suppress: bool) -> None:
    """Global flags work before or after the subcommand; the subcommand copy
    only overrides when actually given."""

    def dflt(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--server", default=dflt(os.environ.get("NLFLOW_SERVER")),
                        help="service base URL; omit to run embedded")
    parser.add_argument("--data-dir", default=dflt(os.environ.get("NLFLOW_DATA_DIR", ".nlflow-data")),
                        help="data directory for embedded mode")
    parser.add_argument("--offline", action="store_true", default=dflt(True),
                        help="force rule-based providers (default)")
    parser.add_argument("--online", dest="offline", action="store_false",
                        default=argparse.SUPPRESS,
                        help="allow the external model provider if configured")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlflow", description="Build and run workflows from natural language."
    )
    _add_global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=lambda **kw: argparse.ArgumentParser(parents=[common], **kw))

    p = sub.add_parser("suggest", help="turn a prompt into a workflow suggestion")
    p.add_argument("prompt")

    p = sub.add_parser("apply", help="materialize a suggestion into a workflow")
    p.add_argument("suggestion_id")

    p = sub.add_parser("link", help="attach a data source to a capsule")
    p.add_argument("workflow_id")
    p.add_argument("--step", type=int, required=True)
    p.add_argument("--label", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--file")
    group.add_argument("--url")
    group.add_argument("--database")

    p = sub.add_parser("refine", help="apply human feedback to the plan")
    p.add_argument("workflow_id")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--feedback")
    group.add_argument("--approve", action="store_true")

    p = sub.add_parser("run", help="execute a ready workflow")
    p.add_argument("workflow_id")
    p.add_argument("--follow", action="store_true", help="stream events to stdout")

    p = sub.add_parser("schedule", help="set a recurrence schedule")
    p.add_argument("workflow_id")
    p.add_argument("--expr", required=True)
    p.add_argument("--tz", required=True)

    p = sub.add_parser("unschedule", help="remove the schedule")
    p.add_argument("workflow_id")

    p = sub.add_parser("actions", help="inspect or extend the action pool")
    actions_sub = p.add_subparsers(dest="actions_command", required=True)
    actions_sub.add_parser("list")
    add = actions_sub.add_parser("add")
    add.add_argument("manifest")

    p = sub.add_parser("export", help="write a workflow's canonical document")
    p.add_argument("workflow_id")
    p.add_argument("file")

    p = sub.add_parser("import", help="load a workflow document")
    p.add_argument("file")

    p = sub.add_parser("workflows", help="list workflows")

    p = sub.add_parser("events", help="print recorded run events")
    p.add_argument("run_id")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8400)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .api import create_app
        from .engine import build_engine

        engine = build_engine(args.data_dir, offline=args.offline)
        app = create_app(engine)
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        return 0

    client = Client(args.server, args.data_dir, args.offline)
    try:
        return _dispatch(args, client)
    finally:
        client.close()


def _dispatch(args: argparse.Namespace, client: Client) -> int:
    if args.command == "suggest":
        return _emit(client.request("POST", "/suggestions", json={"prompt": args.prompt}))

    if args.command == "apply":
        return _emit(client.request("POST", f"/suggestions/{args.suggestion_id}/apply"))

    if args.command == "link":
        if args.file:
            source = {"kind": "file", "ref": str(Path(args.file).absolute())}
        elif args.url:
            source = {"kind": "url", "ref": args.url}
        else:
            source = {"kind": "database", "ref": args.database}
        return _emit(
            client.request(
                "POST",
                f"/workflows/{args.workflow_id}/data",
                json={"step": args.step, "label": args.label, "source": source},
            )
        )

    if args.command == "refine":
        body = {"approve": True} if args.approve else {"feedback": args.feedback}
        return _emit(client.request("POST", f"/workflows/{args.workflow_id}/refine", json=body))

    if args.command == "run":
        response = client.request("POST", f"/workflows/{args.workflow_id}/run")
        if response.status_code >= 400 or not args.follow:
            return _emit(response)
        run_id = json.loads(response.text)["id"]
        return _follow_events(client, run_id)

    if args.command == "schedule":
        return _emit(
            client.request(
                "POST",
                f"/workflows/{args.workflow_id}/schedule",
                json={"expression": args.expr, "timezone": args.tz},
            )
        )

    if args.command == "unschedule":
        return _emit(client.request("DELETE", f"/workflows/{args.workflow_id}/schedule"))

    if args.command == "actions":
        if args.actions_command == "list":
            return _emit(client.request("GET", "/actions"))
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        return _emit(client.request("POST", "/actions", json=manifest))

    if args.command == "export":
        response = client.request("GET", f"/workflows/{args.workflow_id}")
        if response.status_code >= 400:
            return _emit(response)
        Path(args.file).write_bytes(response.content)
        sys.stderr.write(f"exported {args.workflow_id} to {args.file}\n")
        return 0

    if args.command == "import":
        data = Path(args.file).read_bytes()
        return _emit(client.request("POST", "/workflows", content=data))

    if args.command == "workflows":
        return _emit(client.request("GET", "/workflows"))

    if args.command == "events":
        response = client.request("GET", f"/runs/{args.run_id}")
        if response.status_code >= 400:
            return _emit(response)
        run_id = json.loads(response.text)["id"]
        return _follow_events(client, run_id)

    raise AssertionError(f"unhandled command {args.command}")  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
