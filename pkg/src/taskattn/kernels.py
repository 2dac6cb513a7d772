"""Backend selection for the LSTM recurrence kernels.

The compiled extension ``taskattn._lstm_ext`` is used when it imports; the
numpy implementation in ``taskattn._lstm_py`` is the fallback. Setting
``TASKATTN_BACKEND=python`` forces the fallback.
"""

import os

from taskattn import _lstm_py

_impl = _lstm_py
BACKEND = "python"

if os.environ.get("TASKATTN_BACKEND", "").lower() != "python":
    try:
        from taskattn import _lstm_ext as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

sigmoid = _impl.sigmoid
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward


def available_backends():
    """Map of backend name to implementation module for every importable backend."""
    found = {"python": _lstm_py}
    try:
        from taskattn import _lstm_ext
        found["cython"] = _lstm_ext
    except ImportError:
        pass
    return found
