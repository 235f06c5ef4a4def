"""Kernel backend selection.

The compiled extension is used when it imports; ``NVREG_BACKEND=python``
forces the numpy fallback.
"""

import os

from . import _pykernels

if os.environ.get("NVREG_BACKEND", "").lower() == "python":
    kernels = _pykernels
    NAME = "python"
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        kernels = _pykernels
        NAME = "python"
    else:
        NAME = "cython"
