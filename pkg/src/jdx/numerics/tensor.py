"""Tensor container and the recording tape for reverse-mode differentiation.

Design notes:
  * every Tensor wraps a C-contiguous float64 ndarray;
  * operations (see ops.py) append entries to a thread-local Tape in
    execution order, which is automatically a topological order;
  * backward() sweeps the tape once in reverse and marks it consumed; a
    second sweep without new recorded work raises TapeError;
  * recording pauses inside `with pause_recording():` for inference paths.
"""

import itertools
import threading

import numpy as np


class NumericsError(RuntimeError):
    """A forward or backward computation produced a non-finite value."""


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class TapeError(RuntimeError):
    """Tape misuse: re-traversal without re-recording, or empty traversal."""


class Tensor:
    """Dense float64 array, optionally tracked for differentiation.

    `requires_grad` marks leaves whose gradient should be accumulated into
    `.grad` by backward(); tensors produced by recorded operations carry
    `requires_grad=True` transitively but keep their gradient only while the
    sweep runs.
    """

    __slots__ = ("data", "requires_grad", "_grad", "_uid", "_is_node")

    _uid_counter = itertools.count()  # next() is atomic in CPython

    def __init__(self, data, requires_grad=False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._is_node = False
        self._uid = next(Tensor._uid_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def grad(self):
        if self.requires_grad and self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def zero_grad(self):
        if self._grad is not None:
            self._grad[...] = 0.0

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def copy(self):
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations from one forward pass."""

    def __init__(self):
        self.entries = []
        self.consumed = False

    def record(self, name, out, inputs, vjp):
        if self.consumed:
            # previous pass was differentiated; new work starts a fresh pass
            self.entries.clear()
            self.consumed = False
        self.entries.append((name, out, inputs, vjp))


_state = threading.local()


def active_tape():
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = Tape()
        _state.tape = tape
    return tape


def recording():
    return not getattr(_state, "paused", False)


class pause_recording:
    """Context manager: forward passes inside compute values only."""

    def __enter__(self):
        self._prev = getattr(_state, "paused", False)
        _state.paused = True
        return self

    def __exit__(self, *exc):
        _state.paused = self._prev
        return False


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf on the tape.

    `loss` must be a scalar produced by the current tape.  The tape is
    consumed by the sweep.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = active_tape()
    if tape.consumed:
        raise TapeError("tape already consumed; record a new forward pass first")
    if not tape.entries:
        raise TapeError("backward with no recorded operations")
    if not loss._is_node:
        raise TapeError("loss was not produced on the current tape")

    # uid -> (array, owned); unowned arrays may alias op outputs and are
    # copied before the first in-place accumulation
    grads = {loss._uid: (np.ones_like(loss.data), True)}
    for name, out, inputs, vjp in reversed(tape.entries):
        got = grads.pop(out._uid, None)
        if got is None:
            continue
        gout = got[0]
        in_grads = vjp(gout)
        for tin, gin in zip(inputs, in_grads):
            if gin is None or not tin.requires_grad:
                continue
            if not np.all(np.isfinite(gin)):
                raise NumericsError(f"non-finite gradient out of op '{name}'")
            if tin._is_node:
                prev = grads.get(tin._uid)
                if prev is None:
                    grads[tin._uid] = (gin, False)
                else:
                    arr, owned = prev
                    if not owned:
                        arr = arr.copy()
                    arr += gin
                    grads[tin._uid] = (arr, True)
            else:
                if tin._grad is None:
                    tin._grad = np.zeros_like(tin.data)
                tin._grad += gin.reshape(tin.data.shape)
    tape.consumed = True


def zero_grad(params):
    """Zero the gradient buffers of an iterable or mapping of Tensors."""
    values = params.values() if hasattr(params, "values") else params
    for p in values:
        p.zero_grad()
