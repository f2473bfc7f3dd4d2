"""Hot integration kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it imports; set ``ANOSOV_LAB_PURE=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""

import os

from . import _pure
from ._pure import (  # noqa: F401
    BLOWUP,
    CHART_EXIT,
    GEOM_CONFORMAL,
    GEOM_WARPED,
    MAX_STEPS,
    MODE_JACOBI,
    MODE_LINEAR,
    MODE_RICCATI,
    OK,
    STEP_UNDERFLOW,
    dopri_integrate,
)

_compiled = None
if os.environ.get("ANOSOV_LAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

if _compiled is not None:
    BACKEND = "compiled"
    geodesic_2d = _compiled.geodesic_2d
    linear_nodes = _compiled.linear_nodes
else:
    BACKEND = "python"
    geodesic_2d = _pure.geodesic_2d
    linear_nodes = _pure.linear_nodes


def backends():
    """Map backend name -> module exposing geodesic_2d / linear_nodes."""
    out = {"python": _pure}
    if _compiled is not None:
        out["compiled"] = _compiled
    else:
        try:
            from . import _ckernels
            out["compiled"] = _ckernels
        except ImportError:
            pass
    return out
