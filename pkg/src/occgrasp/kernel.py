"""Selects the kernel backend at import time.

The compiled extension is used when it is importable. Setting the environment
variable ``OCCGRASP_PURE_PYTHON=1`` forces the interpreted copy of the same
source, which is also what runs when the extension was never built.
"""
from __future__ import annotations

import importlib
import os
from types import ModuleType


def load(name: str) -> ModuleType:
    """Load a specific backend: ``"compiled"`` or ``"python"``."""
    if name == "compiled":
        return importlib.import_module("occgrasp._core_ext")
    if name == "python":
        return importlib.import_module("occgrasp._core")
    raise ValueError(f"unknown backend {name!r}")


def _select() -> ModuleType:
    if os.environ.get("OCCGRASP_PURE_PYTHON") == "1":
        return load("python")
    try:
        return load("compiled")
    except ImportError:
        return load("python")


core = _select()
BACKEND = "compiled" if core.compiled() else "python"
