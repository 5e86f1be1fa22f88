"""Checkpoint-hosting sidecar for the step/teacher wire protocol."""

from .app import PROTOCOL_VERSION, build_app
from .hosting import HostedModel, HostingError, SamplingDefaults
from .server import ServerHandle, main, make_app

__version__ = "0.1.0"

__all__ = [
    "PROTOCOL_VERSION",
    "HostedModel",
    "HostingError",
    "SamplingDefaults",
    "ServerHandle",
    "build_app",
    "main",
    "make_app",
]
