"""Kernel backend selection.

The compiled extension is preferred when present; set OANAV_PURE_KERNELS=1
to force the numpy fallback. ``active`` is the module providing ``raycast``
and ``astar``; its ``BACKEND`` attribute names which one won.
"""

import os

from . import pure

native = None
if not os.environ.get("OANAV_PURE_KERNELS"):
    try:
        from . import _native as native
    except ImportError:
        native = None

active = native if native is not None else pure

raycast = active.raycast
astar = active.astar
BACKEND = active.BACKEND
