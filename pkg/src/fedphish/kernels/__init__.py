"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension (``_ckernels``, built from Cython) is preferred at
import time. Set ``FEDPHISH_KERNELS=numpy`` to force the fallback. Callers
go through :data:`active`; :func:`use` swaps it temporarily (tests and the
benchmark compare both backends this way).
"""

import contextlib
import logging
import os

from . import _numpy

log = logging.getLogger(__name__)

BACKENDS = {"numpy": _numpy}

try:
    from . import _ckernels
except ImportError as exc:  # extension not built
    log.debug("compiled kernels unavailable: %s", exc)
else:
    BACKENDS["cython"] = _ckernels


def _initial():
    wanted = os.environ.get("FEDPHISH_KERNELS", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            raise ImportError(
                f"FEDPHISH_KERNELS={wanted!r} requested but available backends are {sorted(BACKENDS)}"
            )
        return BACKENDS[wanted]
    return BACKENDS.get("cython", _numpy)


active = _initial()


def available():
    return sorted(BACKENDS)


def backend_name():
    return active.NAME


def select(name):
    global active
    try:
        active = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown kernel backend {name!r}; have {available()}") from None
    return active


@contextlib.contextmanager
def use(name):
    previous = active
    select(name)
    try:
        yield active
    finally:
        globals()["active"] = previous
