"""Reduction and Hamiltonization of nonholonomic systems with symmetry.

The pipeline: a MechanicalSystem in adapted coordinates is compressed to
Q̄ = Q/G_W (``compression``), reduced by the remaining symmetry H at a
momentum level (``routh``), and tested for a conformal factor that turns the
reduced almost symplectic form into a closed one (``hamiltonization``).
``dynamics`` integrates and monitors the flows, ``zoo`` holds the built-in
models and ``cli`` drives all of it from the shell.
"""

import os as _os

# NONHOLO_NUM_THREADS caps the BLAS pools; it only takes effect when set
# before numpy is first imported.
_cap = _os.environ.get("NONHOLO_NUM_THREADS")
if _cap:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

from .compression import CompressedSystem, compress, compressed_vector_field  # noqa: E402
from .routh import Leaf, RouthData, apply_gauge, is_basic  # noqa: E402
from .system import AdaptedChart, MechanicalSystem, PhaseState, validate  # noqa: E402
from .zoo import ModelBundle, chaplygin_ball, get_model, se2_toy, snakeboard  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "AdaptedChart", "MechanicalSystem", "PhaseState", "validate",
    "CompressedSystem", "compress", "compressed_vector_field",
    "Leaf", "RouthData", "apply_gauge", "is_basic",
    "ModelBundle", "snakeboard", "chaplygin_ball", "se2_toy", "get_model",
]
