"""Dual decomposition QP solver with mean-square analysis of asynchronous updates."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("async-dual-qp")
except PackageNotFoundError:
    __version__ = "0.0.0"
