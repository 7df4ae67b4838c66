"""Backend selection for the hot per-step kernels.

The compiled extension is preferred when present; a pure-numpy fallback with
identical operation order is always available.  Selection happens once at
import and can be forced with WAVEMAPLAB_KERNELS=core|fallback|auto.
"""

import os

from . import _fallback

_choice = os.environ.get("WAVEMAPLAB_KERNELS", "auto").lower()

if _choice not in ("auto", "core", "fallback"):
    raise ImportError(
        f"WAVEMAPLAB_KERNELS={_choice!r} not recognized (use auto, core, or fallback)"
    )

if _choice == "fallback":
    _impl = _fallback
    backend_name = "fallback"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        backend_name = "core"
    except ImportError:
        if _choice == "core":
            raise ImportError(
                "WAVEMAPLAB_KERNELS=core but the compiled extension is not built; "
                "reinstall the package or set WAVEMAPLAB_KERNELS=fallback"
            )
        _impl = _fallback
        backend_name = "fallback"

wave_step = _impl.wave_step
wave_step_strat = _impl.wave_step_strat

__all__ = ["wave_step", "wave_step_strat", "backend_name"]
