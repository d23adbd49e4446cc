"""Named-parameter store and the PFW1 binary weights container.

File layout: 4 magic bytes ``PFW1``, then one block per parameter:
uint32 name length, UTF-8 name, uint32 rank, uint32 dims[rank], and the
row-major float64 values. Everything little-endian. The loader rejects an
unknown magic and any truncated block.
"""

from __future__ import annotations

import struct

import numpy as np

from .autograd import Tensor

MAGIC = b"PFW1"


class WeightsFormatError(ValueError):
    """Raised for a bad magic or a truncated/corrupt weights payload."""


class ParamStore:
    """Flat name -> Tensor mapping for all learnable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __setitem__(self, name: str, value: Tensor):
        self._params[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def pop(self, name: str) -> Tensor:
        return self._params.pop(name)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def group(self, prefix: str) -> list[Tensor]:
        return [t for n, t in self._params.items() if n.startswith(prefix)]

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for n, t in self._params.items():
            out[n] = Tensor(t.data.astype(dtype), requires_grad=False)
        return out


class Initializer:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) parameter factory."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def weight(self, fan_in: int, *shape) -> Tensor:
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        return Tensor(self.rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def linear(self, store: ParamStore, name: str, fan_in: int, fan_out: int):
        store[f"{name}/W"] = self.weight(fan_in, fan_in, fan_out)
        store[f"{name}/b"] = self.weight(fan_in, fan_out)

    def layer_norm(self, store: ParamStore, name: str, width: int):
        store[f"{name}/gamma"] = Tensor(np.ones(width), requires_grad=True)
        store[f"{name}/beta"] = Tensor(np.zeros(width), requires_grad=True)

    def scalar(self, value: float) -> Tensor:
        return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def save_weights(store: ParamStore, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(store.names()):
            arr = np.ascontiguousarray(store[name].data, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise WeightsFormatError(f"truncated weights file while reading {what}")
    return buf


def load_weights(path, requires_grad: bool = True) -> ParamStore:
    store = ParamStore()
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise WeightsFormatError(f"unknown magic {magic!r}, expected {MAGIC!r}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise WeightsFormatError("truncated weights file while reading name length")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"rank of {name}"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"dims of {name}"))
            count = int(np.prod(dims)) if rank else 1
            raw = _read_exact(fh, 8 * count, f"values of {name}")
            values = np.frombuffer(raw, dtype="<f8").reshape(dims)
            store[name] = Tensor(values.astype(np.float64), requires_grad=requires_grad)
    return store
