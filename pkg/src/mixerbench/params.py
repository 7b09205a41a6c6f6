"""Walking nested parameter containers.

Models are trees of dataclasses whose leaves are grad-tracked tensors.
These helpers flatten such a tree into dotted names for the optimizer and
for checkpoint serialization, and write updated tensors back in place.
"""

from __future__ import annotations

import dataclasses

from .tensor import Tensor

__all__ = ["named_parameters", "set_by_name", "count_parameters"]


def named_parameters(obj, prefix: str = "") -> list:
    """Depth-first list of (dotted_name, tensor) pairs under ``obj``."""
    pairs: list = []
    _walk(obj, prefix, pairs)
    return pairs


def _walk(obj, prefix: str, pairs: list) -> None:
    if isinstance(obj, Tensor):
        pairs.append((prefix, obj))
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for field in dataclasses.fields(obj):
            value = getattr(obj, field.name)
            _walk(value, f"{prefix}.{field.name}" if prefix else field.name, pairs)
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            _walk(value, f"{prefix}.{i}" if prefix else str(i), pairs)
    elif isinstance(obj, dict):
        for key in sorted(obj):
            _walk(obj[key], f"{prefix}.{key}" if prefix else str(key), pairs)


def set_by_name(obj, name: str, tensor: Tensor) -> None:
    """Replace the tensor at a dotted ``name`` produced by named_parameters."""
    parts = name.split(".")
    for part in parts[:-1]:
        obj = obj[int(part)] if part.isdigit() and isinstance(obj, (list, dict)) else _child(obj, part)
    leaf = parts[-1]
    if isinstance(obj, list):
        obj[int(leaf)] = tensor
    elif isinstance(obj, dict):
        obj[leaf] = tensor
    else:
        setattr(obj, leaf, tensor)


def _child(obj, part: str):
    if isinstance(obj, dict):
        return obj[part]
    return getattr(obj, part)


def count_parameters(obj) -> int:
    """Total number of scalar parameters in the tree."""
    return sum(t.size for _, t in named_parameters(obj))
