"""Dense float tensors and reverse-mode autodiff on an explicit gradient tape.

Layout is row-major and shapes are always explicit: no broadcasting except
a plain Python scalar against a tensor. Training runs in float32; gradient
checking runs in float64.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64
_ALLOWED = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """N-d array plus an optional same-shape gradient buffer.

    Op outputs are never mutated; parameter data is updated in place only
    by the optimizer, under a single-writer contract.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED:
            arr = arr.astype(TRAIN_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad})")


class GradTape:
    """Execution-ordered record of differentiable ops.

    Replaying the records in reverse accumulates into each requires_grad
    tensor exactly once per backward call; a second backward without
    reset() is an error. A tape is confined to one thread.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._on_tape: set[int] = set()
        self._consumed = False

    def record(self, out: Tensor, pullback: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, pullback))
        self._on_tape.add(id(out))

    def reset(self) -> None:
        self._records.clear()
        self._on_tape.clear()
        self._consumed = False

    def __enter__(self) -> "GradTape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise TapeError("a GradTape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> bool:
        global _ACTIVE
        _ACTIVE = None
        return False


_ACTIVE: GradTape | None = None


def active_tape() -> GradTape | None:
    return _ACTIVE


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dTensor into .grad for everything reachable from loss."""
    tape = _ACTIVE
    if tape is None:
        raise TapeError("backward() requires an active GradTape")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._on_tape:
        raise TapeError("loss was not produced on the active tape")
    if tape._consumed:
        raise TapeError("backward already ran on this tape; call reset() first")
    tape._consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, pullback in reversed(tape._records):
        if out.grad is not None:
            pullback(out.grad)


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    # first write copies: pullbacks may hand out views of other grad buffers
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _record(out: Tensor, pullback: Callable[[np.ndarray], None]) -> Tensor:
    if _ACTIVE is not None and out.requires_grad:
        _ACTIVE.record(out, pullback)
    return out


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def add(a: Tensor, b: Tensor | float) -> Tensor:
    if isinstance(b, (int, float)):
        out = Tensor(a.data + b, requires_grad=a.requires_grad)

        def pull(g):
            if a.requires_grad:
                accumulate_grad(a, g)

        return _record(out, pull)
    _check_binary(a, b, "add")
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def pull(g):
        if a.requires_grad:
            accumulate_grad(a, g)
        if b.requires_grad:
            accumulate_grad(b, g)

    return _record(out, pull)


def sub(a: Tensor, b: Tensor | float) -> Tensor:
    if isinstance(b, (int, float)):
        out = Tensor(a.data - b, requires_grad=a.requires_grad)

        def pull(g):
            if a.requires_grad:
                accumulate_grad(a, g)

        return _record(out, pull)
    _check_binary(a, b, "sub")
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)

    def pull(g):
        if a.requires_grad:
            accumulate_grad(a, g)
        if b.requires_grad:
            accumulate_grad(b, -g)

    return _record(out, pull)


def mul(a: Tensor, b: Tensor | float) -> Tensor:
    if isinstance(b, (int, float)):
        out = Tensor(a.data * b, requires_grad=a.requires_grad)

        def pull(g):
            if a.requires_grad:
                accumulate_grad(a, g * b)

        return _record(out, pull)
    _check_binary(a, b, "mul")
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def pull(g):
        if a.requires_grad:
            accumulate_grad(a, g * b.data)
        if b.requires_grad:
            accumulate_grad(b, g * a.data)

    return _record(out, pull)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    val = _stable_sigmoid(a.data)
    out = Tensor(val, requires_grad=a.requires_grad)

    def pull(g):
        if a.requires_grad:
            accumulate_grad(a, g * (val * (1.0 - val)))

    return _record(out, pull)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), requires_grad=a.requires_grad)

    def pull(g):
        if a.requires_grad:
            # subgradient at 0 is 0
            accumulate_grad(a, g * (a.data > 0))

    return _record(out, pull)


def log(a: Tensor) -> Tensor:
    if not np.all(a.data > 0):
        raise ValueError("log requires strictly positive input")
    out = Tensor(np.log(a.data), requires_grad=a.requires_grad)

    def pull(g):
        if a.requires_grad:
            accumulate_grad(a, g / a.data)

    return _record(out, pull)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul,
                "sigmoid": sigmoid, "relu": relu, "log": log}
_BINARY_OPS = frozenset(("add", "sub", "mul"))


def elementwise(op: str, a: Tensor, b: Tensor | float | None = None) -> Tensor:
    """Dispatch by op name; binary ops require b, unary ops forbid it."""
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ValueError(f"unknown elementwise op {op!r}")
    if op in _BINARY_OPS:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"{op} takes a single operand")
    return fn(a)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only where unclipped."""
    out = Tensor(np.clip(a.data, lo, hi), requires_grad=a.requires_grad)

    def pull(g):
        if a.requires_grad:
            accumulate_grad(a, g * ((a.data >= lo) & (a.data <= hi)))

    return _record(out, pull)


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), requires_grad=a.requires_grad)

    def pull(g):
        if a.requires_grad:
            accumulate_grad(a, np.broadcast_to(g, a.shape))

    return _record(out, pull)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean(), requires_grad=a.requires_grad)

    def pull(g):
        if a.requires_grad:
            accumulate_grad(a, np.broadcast_to(g / n, a.shape))

    return _record(out, pull)


def stack_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate any number of tensors along axis 0 (the channel axis)."""
    if not parts:
        raise ShapeError("stack_channels needs at least one tensor")
    first = parts[0]
    for p in parts[1:]:
        if p.shape[1:] != first.shape[1:]:
            raise ShapeError(f"concat: trailing dims differ, {first.shape} vs {p.shape}")
        if p.dtype != first.dtype:
            raise ShapeError(f"concat: dtype mismatch {first.dtype} vs {p.dtype}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0),
                 requires_grad=any(p.requires_grad for p in parts))
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def pull(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                accumulate_grad(p, g[lo:hi])

    return _record(out, pull)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return stack_channels([a, b])


def split_channels(a: Tensor, sizes: list[int]) -> list[Tensor]:
    """Split along axis 0 into consecutive blocks of the given sizes."""
    if sum(sizes) != a.shape[0]:
        raise ShapeError(f"split sizes {sizes} do not cover axis 0 of {a.shape}")
    outs = []
    lo = 0
    for n in sizes:
        hi = lo + n
        piece = Tensor(a.data[lo:hi].copy(), requires_grad=a.requires_grad)

        def pull(g, lo=lo, hi=hi):
            buf = np.zeros_like(a.data)
            buf[lo:hi] = g
            accumulate_grad(a, buf)

        outs.append(_record(piece, pull))
        lo = hi
    return outs


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x: Tensor, eps: float) -> Tensor:
    """Central-difference estimate of d f / d x, one element at a time.

    f must be deterministic. Runs f outside any tape bookkeeping, so it is
    safe on functions built from the ops in this module.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def scalar(v):
        return v.item() if isinstance(v, Tensor) else float(v)

    base = x.data
    grad = np.zeros(base.shape, dtype=base.dtype)
    flat_grad = grad.reshape(-1)
    for i in range(base.size):
        hi = base.copy()
        hi.reshape(-1)[i] += eps
        lo = base.copy()
        lo.reshape(-1)[i] -= eps
        flat_grad[i] = (scalar(f(Tensor(hi))) - scalar(f(Tensor(lo)))) / (2.0 * eps)
    return Tensor(grad)
