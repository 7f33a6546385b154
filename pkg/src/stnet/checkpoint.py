"""Model checkpoints.

Format: magic ``STNC``, version u32, tensor count u32, then per tensor:
name length u16 + UTF-8 name, rank u8, extents as u32 each, raw
little-endian float32 values. Loading validates the name/shape set
against the spec and is bit-exact for float32 models.
"""

from __future__ import annotations

import numpy as np

from . import serial
from .model import ModelInstance, RUNNING_STAT_SUFFIXES, parameter_shapes
from .tensor import Tensor

MAGIC = b"STNC"
VERSION = 1


class ParamMismatchError(serial.FormatError):
    """Checkpoint tensors do not match the spec's parameter layout."""


def save_checkpoint(model, path):
    with open(path, "wb") as f:
        f.write(MAGIC)
        serial.write_u32(f, VERSION)
        serial.write_u32(f, len(model.params))
        for name, tensor in model.params.items():
            encoded = name.encode("utf-8")
            serial.write_u16(f, len(encoded))
            f.write(encoded)
            serial.write_u8(f, tensor.ndim)
            for dim in tensor.shape:
                serial.write_u32(f, dim)
            f.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_checkpoint(path, spec):
    """Rebuild a model from ``path``; tensors must exactly match ``spec``.

    Raises :class:`ParamMismatchError` naming the first offending
    parameter when names or shapes disagree, and the usual format errors
    for bad magic/version/truncation. No partial model is returned.
    """
    expected = parameter_shapes(spec)
    loaded = {}
    with open(path, "rb") as f:
        serial.expect_magic(f, MAGIC)
        serial.expect_version(f, VERSION)
        count = serial.read_u32(f, "tensor count")
        for _ in range(count):
            name_len = serial.read_u16(f, "name length")
            name = serial.read_exact(f, name_len, "tensor name").decode("utf-8")
            rank = serial.read_u8(f, f"rank of {name!r}")
            shape = tuple(serial.read_u32(f, f"extent of {name!r}") for _ in range(rank))
            n = int(np.prod(shape)) if shape else 1
            raw = serial.read_exact(f, 4 * n, f"values of {name!r}")
            if name in loaded:
                raise ParamMismatchError(f"duplicate tensor {name!r} in checkpoint")
            if name not in expected:
                raise ParamMismatchError(f"unexpected tensor {name!r} for spec "
                                         f"{spec.name!r}")
            if shape != expected[name]:
                raise ParamMismatchError(
                    f"shape mismatch for {name!r}: checkpoint has {shape}, "
                    f"spec {spec.name!r} expects {expected[name]}")
            loaded[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    missing = sorted(set(expected) - set(loaded))
    if missing:
        raise ParamMismatchError(f"checkpoint is missing tensor {missing[0]!r}")
    params = {name: Tensor(loaded[name],
                           requires_grad=name.rsplit("/", 1)[1] not in RUNNING_STAT_SUFFIXES)
              for name in expected}
    return ModelInstance(spec=spec, params=params)
