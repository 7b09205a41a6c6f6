"""Context-length scaling benchmark for token-mixing operators.

Three interchangeable mixers (softmax self-attention, gated long
convolution, selective state-space scan) run inside ViT and Swin style
backbones over a small reverse-mode tensor core, with synthetic imaging
tasks and a timing/memory harness that sweeps context length through
patch and window size.

Submodules load lazily so that the command line entry point can pin
BLAS thread counts before numpy is first imported.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("tensor", "fourier", "mixers", "backbones", "tasks",
               "trainer", "bench", "selfcheck", "cli")
_TENSOR_NAMES = ("Tensor", "Tape", "backward", "alloc_stats", "reset_alloc_stats")

__all__ = ["__version__", *_TENSOR_NAMES, *_SUBMODULES]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _TENSOR_NAMES:
        return getattr(importlib.import_module(".tensor", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
