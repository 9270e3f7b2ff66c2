"""Command-line entry points: sim (run/validate/report/serve-console),
broker, and controller.

Exit codes follow one convention everywhere: 0 success, 1 configuration
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

from agribot.config import ConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _parse_addr(text: str, what: str) -> tuple[str, int]:
    host, sep, port_s = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"{what} must be host:port, got {text!r}")
    try:
        port = int(port_s)
    except ValueError:
        raise ValueError(f"{what} port must be an integer, got {port_s!r}") from None
    if not 0 <= port <= 65535:
        raise ValueError(f"{what} port out of range: {port}")
    return host, port


def _load_config_file(path: str):
    with open(path, "rb") as fh:
        return load_config(fh.read())


# -- sim -----------------------------------------------------------------------

def sim_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="sim", description="Greenhouse scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and export its log")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--mode", choices=["inproc", "net"], default="inproc")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")

    p_val = sub.add_parser("validate", help="check a scenario config")
    p_val.add_argument("--config", required=True)

    p_rep = sub.add_parser("report", help="run a scenario and render figures + exports")
    p_rep.add_argument("--config", required=True)
    p_rep.add_argument("--mode", choices=["inproc", "net"], default="inproc")
    p_rep.add_argument("--out", required=True, help="output directory")

    p_con = sub.add_parser("serve-console", help="serve the operator console bundle")
    p_con.add_argument("--addr", default="127.0.0.1:8080")

    args = parser.parse_args(argv)

    if args.command == "validate":
        try:
            _load_config_file(args.config)
        except ConfigError as e:
            print(f"invalid: {e}", file=sys.stderr)
            return EXIT_CONFIG
        except OSError as e:
            print(f"cannot read config: {e}", file=sys.stderr)
            return EXIT_CONFIG
        print("ok")
        return EXIT_OK

    if args.command in ("run", "report"):
        try:
            cfg = _load_config_file(args.config)
        except ConfigError as e:
            print(f"invalid config: {e}", file=sys.stderr)
            return EXIT_CONFIG
        except OSError as e:
            print(f"cannot read config: {e}", file=sys.stderr)
            return EXIT_CONFIG
        from agribot.harness import export_log, run_scenario
        try:
            log = run_scenario(cfg, mode=args.mode)
        except Exception as e:
            print(f"run failed: {e}", file=sys.stderr)
            return EXIT_RUNTIME
        if args.command == "run":
            try:
                data = export_log(log, args.format)
                with open(args.out, "wb") as fh:
                    fh.write(data)
            except OSError as e:
                print(f"cannot write output: {e}", file=sys.stderr)
                return EXIT_RUNTIME
            print(f"wrote {args.out} ({len(log.records)} records)")
            return EXIT_OK
        from agribot.report import render_report
        try:
            written = render_report(log, args.out, cfg)
        except OSError as e:
            print(f"cannot write report: {e}", file=sys.stderr)
            return EXIT_RUNTIME
        for name in written:
            print(f"wrote {args.out}/{name}")
        return EXIT_OK

    if args.command == "serve-console":
        return _serve_console(args.addr)

    parser.error(f"unknown command {args.command!r}")  # pragma: no cover
    return EXIT_RUNTIME  # pragma: no cover


def _serve_console(addr: str) -> int:
    import functools
    import http.server
    from importlib import resources

    try:
        host, port = _parse_addr(addr, "--addr")
    except ValueError as e:
        print(e, file=sys.stderr)
        return EXIT_CONFIG
    static = resources.files("agribot") / "console_static"
    if not (static / "index.html").is_file():
        print("console bundle not built; see frontend/README notes", file=sys.stderr)
        return EXIT_RUNTIME
    handler = functools.partial(http.server.SimpleHTTPRequestHandler, directory=str(static))
    with http.server.ThreadingHTTPServer((host, port), handler) as httpd:
        bound = httpd.socket.getsockname()
        print(f"console at http://{bound[0]}:{bound[1]}/", flush=True)
        try:
            httpd.serve_forever()
        except KeyboardInterrupt:
            pass
    return EXIT_OK


# -- broker ----------------------------------------------------------------------

def broker_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="broker", description="Frame router")
    parser.add_argument("--listen", default="127.0.0.1:9042", help="TCP host:port")
    parser.add_argument("--ws", default="127.0.0.1:9043", help="WebSocket host:port")
    parser.add_argument("--tokens", required=True, help="token file, one per line")
    args = parser.parse_args(argv)

    from agribot.broker import load_tokens, run_broker
    try:
        tokens = load_tokens(args.tokens)
        tcp_host, tcp_port = _parse_addr(args.listen, "--listen")
        ws_host, ws_port = _parse_addr(args.ws, "--ws")
    except (OSError, ValueError) as e:
        print(f"invalid broker setup: {e}", file=sys.stderr)
        return EXIT_CONFIG

    def ready(server) -> None:
        print(f"listening tcp={server.tcp_addr[0]}:{server.tcp_addr[1]} "
              f"ws={server.ws_addr[0]}:{server.ws_addr[1]}", flush=True)

    try:
        asyncio.run(run_broker(tokens, tcp_host, tcp_port, ws_host, ws_port, ready))
    except KeyboardInterrupt:
        return EXIT_OK
    except OSError as e:
        print(f"broker failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- controller --------------------------------------------------------------------

def controller_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="controller", description="Rule engine process")
    parser.add_argument("--broker", required=True, help="broker TCP host:port")
    parser.add_argument("--token", required=True)
    parser.add_argument("--config", required=True, help="scenario config file")
    parser.add_argument("--log", required=True, help="JSONL log path")
    args = parser.parse_args(argv)

    try:
        cfg = _load_config_file(args.config)
        host, port = _parse_addr(args.broker, "--broker")
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as e:
        print(f"controller setup failed: {e}", file=sys.stderr)
        return EXIT_CONFIG

    from agribot.controller import run_controller

    def ready(msg: str) -> None:
        print(msg, flush=True)

    try:
        asyncio.run(run_controller(host, port, args.token, cfg.thresholds,
                                   list(cfg.plan.checkpoints), args.log, ready))
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as e:
        print(f"controller failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def dump_default_config() -> str:
    """The fully-defaulted scenario as JSON (handy for bootstrapping a file)."""
    from agribot.config import ScenarioConfig, dump_config
    return json.dumps(dump_config(ScenarioConfig()), indent=2)
