"""Kernel backend selection.

The hot per-sequence loops (log-probability chains and softmax-gradient
accumulation) exist twice: a compiled Cython extension (`_fast`) and a pure
Python reference (`pure`). Both perform the identical sequence of IEEE-754
double operations, so their results are bit-for-bit equal; the parity test
in the suite enforces this whenever the extension is present.

Set FOCALPO_PURE=1 to force the pure backend (used by the benchmark).
"""

import os

from . import pure

BACKEND = "python"
_impl = pure

if os.environ.get("FOCALPO_PURE", "").strip().lower() not in {"1", "true", "yes"}:
    try:
        from . import _fast

        BACKEND = "compiled"
        _impl = _fast
    except ImportError:
        pass

seq_log_prob = _impl.seq_log_prob
add_scaled_seq_grad = _impl.add_scaled_seq_grad


def available_backends() -> dict:
    """Importable backend modules keyed by name."""
    backends = {"python": pure}
    try:
        from . import _fast

        backends["compiled"] = _fast
    except ImportError:
        pass
    return backends
