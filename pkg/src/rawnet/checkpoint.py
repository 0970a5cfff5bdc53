"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic   b"RWNT"
    version u8 (currently 1)
    three array tables: parameters, buffers, optimizer state

Each array table is ``u32 count`` followed by entries of

    u16 name_len | name utf-8 | u8 dtype_code | u8 ndim | u32 * ndim dims | raw LE values

dtype codes: 0 = float32, 1 = float64, 2 = int64.  Values round-trip
bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"RWNT"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


class CheckpointError(ValueError):
    pass


def _write_table(fh, arrays):
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        code = _DTYPE_CODES.get(le.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for array {name!r}")
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<BB", code, le.ndim))
        fh.write(struct.pack(f"<{le.ndim}I", *le.shape))
        fh.write(le.tobytes())


def _read_table(fh):
    (count,) = struct.unpack("<I", fh.read(4))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", fh.read(2))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        dtype = _CODE_DTYPES[code]
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(fh.read(n * dtype.itemsize), dtype=dtype)
        out[name] = data.reshape(shape).copy()
    return out


def save_checkpoint(path, params, buffers=None, optimizer_state=None):
    """Write parameter/buffer/optimizer arrays; values round-trip bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        _write_table(fh, params)
        _write_table(fh, buffers or {})
        _write_table(fh, optimizer_state or {})


def load_checkpoint(path):
    """Return (params, buffers, optimizer_state) dicts of numpy arrays."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        params = _read_table(fh)
        buffers = _read_table(fh)
        opt = _read_table(fh)
    return params, buffers, opt


def save_model(path, model, optimizer=None, extra_buffers=None):
    """Checkpoint a Module: parameter values, buffers, optional optimizer state."""
    params = {name: p.data for name, p in model.parameters().items()}
    buffers = dict(model.buffers())
    if extra_buffers:
        buffers.update(extra_buffers)
    save_checkpoint(path, params, buffers,
                    optimizer.state_arrays() if optimizer is not None else None)


def load_model(path, model, optimizer=None, strict=True):
    """Restore a Module (and optionally optimizer) from a checkpoint.

    Returns any buffer entries that did not match a model buffer (callers
    stash auxiliary state like class centers there).
    """
    params, buffers, opt = load_checkpoint(path)
    model_params = model.parameters()
    missing = set(model_params) - set(params)
    unexpected = set(params) - set(model_params)
    if strict and (missing or unexpected):
        raise CheckpointError(
            f"{path}: parameter name mismatch; missing={sorted(missing)} "
            f"unexpected={sorted(unexpected)}")
    for name, p in model_params.items():
        if name in params:
            if params[name].shape != p.data.shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {name}: "
                    f"checkpoint {params[name].shape} vs model {p.data.shape}")
            p.tensor.data = params[name].astype(p.data.dtype, copy=True)
    leftovers = {}
    model_buffers = model.buffers()
    for name, arr in buffers.items():
        if name in model_buffers:
            model.set_buffer(name, arr)
        else:
            leftovers[name] = arr
    if optimizer is not None and opt:
        optimizer.load_state_arrays(opt)
    return leftovers
