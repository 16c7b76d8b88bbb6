"""Hot numeric kernels with a compiled core and a pure-NumPy fallback.

Two interchangeable backends implement the same three functions:

``lstm_seq_forward``   recurrent forward pass over a padded batch of sequences
``lstm_seq_backward``  matching backward pass (gradients w.r.t. inputs/weights)
``hungarian_square``   exact minimum-cost assignment on a square matrix

The compiled backend (``bevtrack.kernels._ckernels``, built from Cython) is
preferred; if the extension is missing, or ``BEVTRACK_PURE_PYTHON=1`` is set,
the NumPy implementation in ``pykernels`` is used instead. Both backends are
bit-compatible up to floating-point associativity and are parity-tested; see
``benchmarks/bench_kernels.py`` for a speed comparison.
"""

import os

from . import pykernels

_backends = {"python": pykernels}
try:
    from . import _ckernels

    _backends["cython"] = _ckernels
except ImportError:
    _ckernels = None

if os.environ.get("BEVTRACK_PURE_PYTHON", "") == "1" or _ckernels is None:
    _active = pykernels
    BACKEND = "python"
else:
    _active = _ckernels
    BACKEND = "cython"

lstm_seq_forward = _active.lstm_seq_forward
lstm_seq_backward = _active.lstm_seq_backward
hungarian_square = _active.hungarian_square


def available_backends():
    """Names of the importable kernel backends."""
    return sorted(_backends)


def get_backend(name):
    """Return the backend module registered under `name`."""
    return _backends[name]
