"""Dense tensors, the gradient tape, and named trainable parameters."""

from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class TapeError(RuntimeError):
    """Raised when a tape is replayed twice or misused."""


class Tensor:
    """A dense array plus an optional gradient buffer.

    Tensors are treated as immutable once produced by an op; only the
    optimizer writes into parameter data.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


_TAPE_STACK: list["Tape"] = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of executed ops for one forward pass.

    Ops append their backward closures during the forward pass; ``backward``
    replays them in reverse. A tape is single-use.
    """

    def __init__(self):
        self._steps = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, step) -> None:
        if self._spent:
            raise TapeError("cannot record on a consumed tape")
        self._steps.append(step)

    def __len__(self) -> int:
        return len(self._steps)

    def backward(self, root: Tensor) -> None:
        if self._spent:
            raise TapeError("tape already consumed by a previous backward pass")
        if not root.requires_grad:
            raise TapeError("backward root does not require gradients")
        root.grad = np.ones_like(root.data)
        for step in reversed(self._steps):
            step()
        self._spent = True


class Parameter:
    """A named, optionally trainable tensor.

    ``trainable`` only gates optimizer updates; gradients always flow
    through frozen parameters so upstream layers keep receiving them.
    """

    __slots__ = ("value", "name", "trainable")

    def __init__(self, value, name: str, trainable: bool = True, dtype=None):
        self.value = Tensor(np.array(value, copy=True), requires_grad=True, dtype=dtype)
        self.name = name
        self.trainable = trainable

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self):
        return self.value.grad

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, trainable={self.trainable})"


class Buffer:
    """Named non-trainable state saved in checkpoints (e.g. running statistics)."""

    __slots__ = ("array", "name")

    def __init__(self, value, name: str, dtype=None):
        self.array = np.array(value, copy=True)
        if dtype is not None:
            self.array = self.array.astype(dtype)
        self.name = name

    def __repr__(self):
        return f"Buffer({self.name!r}, shape={self.array.shape})"
