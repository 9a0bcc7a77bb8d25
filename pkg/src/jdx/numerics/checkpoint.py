"""Named parameter collections and the flat binary checkpoint format.

Checkpoint layout: magic bytes "JDX1", then per parameter
    u32 LE  name byte length
    bytes   UTF-8 name
    u32 LE  rank
    u32 LE  extent, once per rank
    f64 LE  row-major values
Parameters appear in insertion order; the file ends after the last one.
"""

import struct
from collections import OrderedDict

import numpy as np

from .tensor import Tensor

MAGIC = b"JDX1"


class ParameterStore:
    """Ordered mapping of dotted/slashed names to trainable Tensors."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = data if isinstance(data, Tensor) else Tensor(data, requires_grad=True)
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def keys(self):
        return self._params.keys()

    def subset(self, *prefixes):
        """New view mapping (ordered dict) of parameters under any prefix."""
        out = OrderedDict()
        for name, p in self._params.items():
            if any(name.startswith(pre) for pre in prefixes):
                out[name] = p
        return out

    def state_bytes(self, *prefixes):
        """Raw value bytes of a subset, for freezing-contract assertions."""
        sel = self.subset(*prefixes) if prefixes else self._params
        return b"".join(p.data.tobytes() for p in sel.values())

    def load_values(self, arrays):
        for name, arr in arrays.items():
            if name not in self._params:
                raise KeyError(f"checkpoint parameter '{name}' not present in store")
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ValueError(f"checkpoint shape {arr.shape} does not match "
                                 f"'{name}' shape {p.data.shape}")
            p.data[...] = arr


def save_checkpoint(path, params):
    """Write a name->Tensor mapping (or ParameterStore) to `path`."""
    items = params.items()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, p in items:
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(p.data, dtype="<f8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint into an ordered name -> ndarray mapping."""
    out = OrderedDict()
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise ValueError("truncated checkpoint: partial name length")
            (nlen,) = struct.unpack("<I", head)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(8 * count)
            if len(payload) != 8 * count:
                raise ValueError(f"truncated checkpoint: parameter '{name}'")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return out
