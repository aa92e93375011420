"""Kernel backend selection.

The compiled MPFR kernel is used when it was built; otherwise the gmpy2
implementation. Set ``CWCHAIN_BACKEND=python`` (or ``c``) to force one.
"""

from __future__ import annotations

import os

from ._pykernel import PyKernel

BACKEND_ENV = "CWCHAIN_BACKEND"

try:
    from ._ckernel import CKernel
except ImportError:  # extension not built
    CKernel = None


def available_backends() -> list[str]:
    return ["python"] + (["c"] if CKernel is not None else [])


def kernel_class(name: str | None = None):
    choice = (name or os.environ.get(BACKEND_ENV, "auto")).lower()
    if choice == "python":
        return PyKernel
    if choice == "c":
        if CKernel is None:
            raise ImportError("compiled kernel requested but cwchain._ckernel is not built")
        return CKernel
    if choice != "auto":
        raise ValueError(f"unknown backend {choice!r}")
    return CKernel if CKernel is not None else PyKernel


def default_backend() -> str:
    return kernel_class().backend
