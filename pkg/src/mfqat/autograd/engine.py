"""Reverse-mode differentiation over dense float64 arrays.

Ops record a backward closure on a Tape as they execute; Tape.backward walks
the closures in exact reverse recording order, which is a valid reverse
topological order because every consumer records after its producers. Each
closure accumulates into its inputs' ``grad`` buffers, so fan-out (an
activation feeding both a pooling layer and a skip connection) adds up
correctly.

A tape is single-use: re-running backward on a spent tape raises.
"""

from __future__ import annotations

import numpy as np


class TapeReuseError(RuntimeError):
    pass


class DebugOptions:
    """Opt-in invariant checks, off by default for speed."""

    check_finite = False


class Tensor:
    """Dense float64 array plus a gradient buffer filled by backward."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """Trainable tensor. ``data`` is the full-precision master copy.

    Updates touch the master only; quantized images of it are separate
    tensors produced per forward pass. ``quantizer`` holds the attached
    QuantizerState when the parameter is quantized.
    """

    __slots__ = ("name", "quantizer")

    def __init__(self, data, name: str = "", quantizer=None):
        super().__init__(np.array(data, dtype=np.float64))
        self.name = name
        self.quantizer = quantizer

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def accumulate(t: Tensor, g: np.ndarray, copy: bool = False) -> None:
    """Add a gradient contribution to a tensor.

    On first touch the array is adopted as-is unless ``copy`` is set; callers
    pass ``copy=True`` when ``g`` aliases a buffer they keep using.
    """
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64) if copy else g
    else:
        t.grad += g


class Tape:
    """Ordered record of one forward pass."""

    __slots__ = ("_nodes", "_spent")

    def __init__(self):
        self._nodes: list = []
        self._spent = False

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, backward_fn) -> None:
        if self._spent:
            raise TapeReuseError("cannot record on a spent tape")
        self._nodes.append(backward_fn)

    def backward(self, output: Tensor, seed=1.0) -> None:
        """Seed the output gradient and run every recorded closure in reverse."""
        if self._spent:
            raise TapeReuseError("tape already consumed by a backward pass")
        if not self._nodes:
            raise RuntimeError("empty tape: no forward pass was recorded")
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.data.shape:
            seed = np.broadcast_to(seed, output.data.shape)
        accumulate(output, seed, copy=True)
        self._spent = True
        for fn in reversed(self._nodes):
            fn()


def check_finite(arr: np.ndarray, where: str) -> None:
    if DebugOptions.check_finite and not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values produced by {where}")
