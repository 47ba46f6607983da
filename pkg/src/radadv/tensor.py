"""Dense tensors with taped reverse-mode differentiation.

A Tensor wraps a numpy array plus an optional gradient slot.  Operations
from :mod:`radadv.ops` record themselves onto the active Tape (a plain
append-only list, so the record is topologically ordered by construction).
``backward`` walks the tape in reverse and accumulates gradients into
every tensor that requires them, including intermediate activations --
which is what lets attack code read input gradients and interpretability
code read feature-map gradients from the same mechanism.

Tapes are single-flow: one tape must only ever be driven by one thread.
Concurrent forward/backward passes each use their own tape; the active
tape stack is therefore thread-local.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class TapeError(RuntimeError):
    pass


class Tensor:
    """n-dimensional array participating in recorded computations."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detached(self) -> "Tensor":
        """Same storage, no gradient tracking."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class TapeOp:
    """One recorded primitive: inputs, output, and a backward rule.

    ``backward(g, needs)`` receives the gradient w.r.t. the output and a
    per-input boolean tuple saying which input gradients are needed; it
    returns one array (or None) per input.
    """

    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name: str, inputs: Sequence[Tensor], output: Tensor,
                 backward: Callable[[np.ndarray, tuple[bool, ...]], Sequence[np.ndarray | None]]):
        self.name = name
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.ops: list[TapeOp] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape context exited out of order")
        stack.pop()
        return False

    def append(self, op: TapeOp) -> None:
        self.ops.append(op)
        self._produced.add(id(op.output))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced


def record(name: str, inputs: Sequence[Tensor], out_data: np.ndarray,
           backward: Callable) -> Tensor:
    """Create an op output, recording it when gradients are live.

    The output requires a gradient iff some input does and a tape is
    active; with no active tape this is a plain forward computation.
    """
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.append(TapeOp(name, inputs, out, backward))
    return out


def backward(tape: Tape, seed: Tensor) -> None:
    """Accumulate gradients of a scalar tape output into its ancestors.

    Every tensor with ``requires_grad`` that contributed to ``seed`` gets
    its ``grad`` slot filled (summed into, if already present).
    """
    if not isinstance(seed, Tensor) or not tape.produced(seed):
        raise TapeError("backward seed was not produced by this tape")
    if seed.size != 1:
        raise TapeError(f"backward seed must be scalar, got shape {tuple(seed.shape)}")

    grads: dict[int, np.ndarray] = {id(seed): np.ones_like(seed.data)}
    for op in reversed(tape.ops):
        g = grads.get(id(op.output))
        if g is None:
            continue
        needs = tuple(t.requires_grad for t in op.inputs)
        in_grads = op.backward(g, needs)
        for t, ig in zip(op.inputs, in_grads):
            if ig is None or not t.requires_grad:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = ig if acc is None else acc + ig

    # Write accumulated gradients back onto the tensors.  Ancestors are
    # found by scanning the tape once more (ids alone cannot be mapped
    # back to objects safely).
    seen: set[int] = set()
    for op in tape.ops:
        for t in list(op.inputs) + [op.output]:
            if id(t) in seen:
                continue
            seen.add(id(t))
            g = grads.get(id(t))
            if g is None or not t.requires_grad:
                continue
            t.grad = g if t.grad is None else t.grad + g


def grad_check(fn: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-5) -> float:
    """Max relative error between taped gradients and central differences.

    ``fn`` must map a Tensor to a scalar Tensor.  The numeric side
    re-evaluates ``fn`` untaped at ``x +- step * e_i`` per coordinate, so it
    is independent of the backward rules it checks.  Relative error uses a
    unit floor: ``|a - n| / max(1, |a|, |n|)``.
    """
    x = Tensor(np.array(point.data, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        out = fn(x)
    if out.size != 1:
        raise TapeError("grad_check target must be scalar")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite evaluation at the base point")
    backward(tape, out)
    if x.grad is None:
        analytic = np.zeros(x.size, dtype=np.float64)
    else:
        analytic = x.grad.reshape(-1).astype(np.float64)

    flat = x.data.reshape(-1)
    numeric = np.empty_like(analytic)
    probe = Tensor(x.data)  # shares storage; never requires grad
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(probe).item()
        flat[i] = orig - step
        fm = fn(probe).item()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("non-finite evaluation during finite differences")
        numeric[i] = (fp - fm) / (2.0 * step)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
