"""Slot-kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
twin.  Both produce bit-identical results.
"""
from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_active = _compiled or _kernels_py


def backend() -> str:
    return "compiled" if _active is _compiled else "python"


def available() -> list[str]:
    return ["python"] + (["compiled"] if _compiled is not None else [])


def use_backend(name: str) -> None:
    global _active
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _compiled
    elif name == "python":
        _active = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")


def rank_pairs(score, ok, out):
    return _active.rank_pairs(score, ok, out)


def resolve_slot(*args):
    return _active.resolve_slot(*args)
