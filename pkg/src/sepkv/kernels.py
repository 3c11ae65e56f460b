"""Hot-kernel dispatch.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python ``_pykernels`` module is.  Set ``SEPKV_PURE_PYTHON=1`` to force
the fallback (the test-suite runs both).
"""
import os

from . import _pykernels

KIND_PUT = _pykernels.KIND_PUT
KIND_DEL = _pykernels.KIND_DEL
KIND_INDEX = _pykernels.KIND_INDEX
KIND_REF = _pykernels.KIND_REF

_impl = _pykernels
if not os.environ.get("SEPKV_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

IMPLEMENTATION = "cython" if _impl is not _pykernels else "python"

fnv1a64 = _impl.fnv1a64
encode_varint = _impl.encode_varint
decode_varint = _impl.decode_varint
encode_block = _impl.encode_block
decode_block = _impl.decode_block
bloom_build = _impl.bloom_build
bloom_may_contain = _impl.bloom_may_contain
valid_runs = _impl.valid_runs


def available_implementations():
    """Kernel modules importable in this process, keyed by name."""
    impls = {"python": _pykernels}
    try:
        from . import _ckernels
        impls["cython"] = _ckernels
    except ImportError:
        pass
    return impls
