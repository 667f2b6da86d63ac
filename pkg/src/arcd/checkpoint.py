"""Model checkpoints.

A checkpoint is the sequence of named parameter records (unsigned 16-bit
little-endian name length, UTF-8 parameter name, ARCT tensor record) in
the model's stable parameter order, followed by one trailing ARCT record
per batch-norm layer holding its running statistics stacked as [2, C]
(mean row, then variance row).  Loading validates names and shapes
against the target model and reports the first mismatch.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .autodiff import arct
from .errors import CheckpointError
from .nn import BatchNorm, Module


def _bn_layers(model: Module) -> list[tuple[str, BatchNorm]]:
    return [(name, m) for name, m in model.named_modules()
            if isinstance(m, BatchNorm)]


def save(model: Module, path) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        for name, p in model.named_parameters():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            arct.write_record(f, p.data)
        for _, bn in _bn_layers(model):
            arct.write_record(f, np.stack([bn.running_mean, bn.running_var]))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load(model: Module, path) -> None:
    """Restore parameters and running statistics in place."""
    path = Path(path)
    with open(path, "rb") as f:
        for expected, p in model.named_parameters():
            raw = f.read(2)
            if len(raw) < 2:
                raise CheckpointError(
                    f"{path}: checkpoint ends before parameter '{expected}'")
            (name_len,) = struct.unpack("<H", raw)
            name = f.read(name_len).decode("utf-8")
            if name != expected:
                raise CheckpointError(
                    f"{path}: first mismatched parameter '{expected}' "
                    f"(file has '{name}')")
            try:
                arr = arct.read_record(f)
            except arct.ArctFormatError as e:
                raise CheckpointError(
                    f"{path}: bad record for parameter '{name}': {e}") from e
            if arr.shape != p.shape:
                raise CheckpointError(
                    f"{path}: first mismatched parameter '{name}': shape "
                    f"{arr.shape} in file, {p.shape} in model")
            p.data = arr.astype(p.data.dtype)
        for name, bn in _bn_layers(model):
            try:
                stats = arct.read_record(f)
            except arct.ArctFormatError as e:
                raise CheckpointError(
                    f"{path}: bad running statistics for '{name}': {e}") from e
            want = (2, bn.running_mean.shape[0])
            if stats.shape != want:
                raise CheckpointError(
                    f"{path}: running statistics for '{name}' have shape "
                    f"{stats.shape}, expected {want}")
            bn.running_mean = stats[0].astype(bn.running_mean.dtype)
            bn.running_var = stats[1].astype(bn.running_var.dtype)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last "
                                  f"running-statistics record")
