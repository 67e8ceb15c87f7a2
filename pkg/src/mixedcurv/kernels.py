"""Select the jet kernel backend at import time.

The compiled extension is used when it was built; otherwise the numpy
fallback takes over.  Set MIXEDCURV_BACKEND=python to force the fallback.
"""

import os

from . import _jetcore_py

python_backend = _jetcore_py

try:
    from . import _jetcore as compiled_backend
except ImportError:
    compiled_backend = None

if compiled_backend is not None and os.environ.get("MIXEDCURV_BACKEND", "") != "python":
    backend = compiled_backend
    name = "compiled"
else:
    backend = python_backend
    name = "python"


def use(which: str) -> None:
    """Switch backend ('compiled' or 'python') for the whole process."""
    global backend, name
    if which == "compiled":
        if compiled_backend is None:
            raise ImportError("compiled jet kernels are not built")
        backend, name = compiled_backend, "compiled"
    elif which == "python":
        backend, name = python_backend, "python"
    else:
        raise ValueError(which)
