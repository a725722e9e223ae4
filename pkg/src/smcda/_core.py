"""Backend selection for the fused likelihood kernel.

The compiled extension is used when it was built; setting the environment
variable ``SMCDA_PURE_PYTHON=1`` forces the numpy implementation.
"""

import os

from . import _fused_py

try:
    from . import _fused as _compiled
except ImportError:
    _compiled = None

python_mlp1_fused = _fused_py.mlp1_fused
compiled_mlp1_fused = None if _compiled is None else _compiled.mlp1_fused

if compiled_mlp1_fused is not None and not os.environ.get("SMCDA_PURE_PYTHON"):
    mlp1_fused = compiled_mlp1_fused
    BACKEND = "compiled"
else:
    mlp1_fused = python_mlp1_fused
    BACKEND = "python"
