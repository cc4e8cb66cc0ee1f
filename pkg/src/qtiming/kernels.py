"""Backend selection for the estimation kernels.

The compiled ``_core`` extension is used when it imports; otherwise, or
when ``QTIMING_PURE_PYTHON`` is set to a non-empty value, the pure-Python
``_core_py`` module is used. Both expose ``probabilities``, ``objective``,
``evaluate_many`` and ``minimize`` with identical signatures.
"""
import importlib
import os

from . import _core_py

FORWARD_EXACT, FORWARD_POLY = 0, 1
LOSS_MULTINOMIAL, LOSS_SEQUENTIAL, LOSS_WLS = 0, 1, 2


def load(name: str):
    """Return the backend module ``'cython'`` or ``'python'``."""
    if name == "python":
        return _core_py
    if name == "cython":
        return importlib.import_module("qtiming._core")
    raise ValueError(f"unknown backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        load("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if os.environ.get("QTIMING_PURE_PYTHON"):
    BACKEND = "python"
else:
    BACKEND = available()[0]

core = load(BACKEND)
