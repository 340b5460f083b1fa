"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the numpy
fallback takes over. Tests and the benchmark can request either explicitly.
"""
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

kernels: ModuleType = _BACKENDS.get("compiled", _pykernels)
name: str = "compiled" if _ckernels is not None else "python"


def available() -> list[str]:
    return sorted(_BACKENDS)


def get(backend: str) -> ModuleType:
    try:
        return _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"kernel backend {backend!r} not available; have {available()}") from None


def use(backend: str) -> None:
    """Switch the process-wide kernel backend."""
    global kernels, name
    kernels = get(backend)
    name = backend
