"""Entry point: load one checkpoint and serve the wire protocol.

Configuration comes from a single JSON file (checkpoint, host/port, device,
dtype, revision pin, default sampling), with flags taking precedence:

    hfsidecar --config sidecar.json
    hfsidecar --checkpoint ./tiny-ckpt --port 8723 --device cpu
"""

from __future__ import annotations

import argparse
import json
import threading
import time
from typing import Optional

import uvicorn

from .app import build_app
from .hosting import HostedModel, SamplingDefaults


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def make_app(config: dict):
    model = HostedModel(
        checkpoint=config["checkpoint"],
        device=config.get("device", "cpu"),
        dtype=config.get("dtype", "float32"),
        revision=config.get("revision"),
    )
    defaults = SamplingDefaults(**config.get("sampling", {}))
    return build_app(model, defaults)


class ServerHandle:
    """A running server plus the thread driving it; for embedding the
    sidecar in tests and scripts."""

    def __init__(self, config: dict, host: str = "127.0.0.1", port: int = 0):
        self.server = uvicorn.Server(
            uvicorn.Config(
                make_app(config), host=host, port=port, log_level="warning"
            )
        )
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> "ServerHandle":
        self.thread.start()
        while not self.server.started:
            if not self.thread.is_alive():
                raise RuntimeError("sidecar failed to start")
            time.sleep(0.01)
        return self

    @property
    def endpoint(self) -> str:
        server = self.server.servers[0]
        host, port = server.sockets[0].getsockname()[:2]
        return f"http://{host}:{port}"

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hfsidecar",
        description="Host a causal-LM checkpoint behind the step/teacher "
        "wire protocol.",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--checkpoint", help="checkpoint path or hub id")
    parser.add_argument("--host", default=None)
    parser.add_argument("--port", type=int, default=None)
    parser.add_argument("--device", default=None)
    parser.add_argument("--dtype", default=None)
    parser.add_argument("--revision", default=None)
    args = parser.parse_args(argv)

    config = load_config(args.config)
    for key in ("checkpoint", "device", "dtype", "revision"):
        value = getattr(args, key)
        if value is not None:
            config[key] = value
    if "checkpoint" not in config:
        parser.error("a checkpoint is required (flag or config file)")
    host = args.host or config.get("host", "127.0.0.1")
    port = args.port if args.port is not None else config.get("port", 8723)

    uvicorn.run(make_app(config), host=host, port=port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
