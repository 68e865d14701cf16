"""Engine selection: compiled replica kernel if built, pure Python otherwise.

Set SUPERBBM_FORCE_ENGINE=python|compiled to override (the benchmark and the
engine-equality tests use this).
"""

from __future__ import annotations

import os

from . import _sim_fallback

_forced = os.environ.get("SUPERBBM_FORCE_ENGINE", "").strip().lower()

if _forced == "python":
    _impl = _sim_fallback
elif _forced == "compiled":
    from . import _sim_kernel as _impl  # raises ImportError loudly if not built
else:
    try:
        from . import _sim_kernel as _impl
    except ImportError:  # pragma: no cover - depends on build environment
        _impl = _sim_fallback

simulate_chunk = _impl.simulate_chunk


def engine_name() -> str:
    return _impl.ENGINE


def get_engine(name: str):
    """Return a specific engine module by name (for benchmarks/tests)."""
    if name == "python":
        return _sim_fallback
    if name == "compiled":
        from . import _sim_kernel
        return _sim_kernel
    raise ValueError(f"unknown engine {name!r}")
