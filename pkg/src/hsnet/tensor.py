"""Dense rank-4 tensors, seeded initialization, and a reverse-mode gradient tape.

Every value in the framework is a :class:`Tensor4`: a dense array in
(batch, channel, height, width) order with an optional gradient slot.
Operations are plain functions over tensors. While a :class:`Tape` is
active (used as a context manager), every differentiable operation whose
result requires a gradient appends a backward rule to it; :func:`backward`
replays the rules once, in reverse, and accumulates gradients into the
leaf tensors.

Two precision profiles exist. float64 is the audit profile: finite
difference checks and exact-agreement tests are only meaningful there.
float32 is the fast profile used for training. Tensors never broadcast;
all shape coercions are explicit.

Randomness comes from :class:`Rng`, a thin wrapper over the Philox 4x64
counter-based generator. Philox is keyed, not stateful-seeded, which makes
it splittable: child streams derive new 128-bit keys by hashing the parent
key together with a tag, so the same seed produces the same stream on
every platform regardless of the order unrelated streams are consumed in.
"""

from __future__ import annotations

import hashlib
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import CapacityError, GraphError, NumericsError, ShapeError

# Hard ceiling on element count; above this the dims are treated as an
# overflow of the addressable size rather than an allocation request.
MAX_ELEMENTS = 1 << 48

_SUPPORTED_DTYPES = (np.float32, np.float64)

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def _scope_stack() -> list:
    stack = getattr(_state, "scopes", None)
    if stack is None:
        stack = []
        _state.scopes = stack
    return stack


@contextmanager
def op_scope(label: str):
    """Label the operations executed inside, for numerics diagnostics.

    When an op produces NaN/Inf, the raised :class:`NumericsError` names
    the innermost active scope, which network code sets to the layer name.
    """
    stack = _scope_stack()
    stack.append(label)
    try:
        yield
    finally:
        stack.pop()


def current_scope() -> str:
    stack = _scope_stack()
    return "/".join(stack)


def check_finite(arr: np.ndarray, op: str) -> None:
    """Raise NumericsError if arr contains NaN or Inf."""
    if arr.size and not np.all(np.isfinite(arr)):
        scope = current_scope()
        where = f" in layer '{scope}'" if scope else ""
        raise NumericsError(f"non-finite values produced by {op}{where}")


class Tensor4:
    """Dense (N, C, H, W) value with an optional same-shaped gradient.

    Tensors are treated as immutable once produced: ops always allocate
    fresh output arrays, which makes values safe to share across threads.
    Only the ``grad`` slot is written to, and only by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor4 needs 4 dims, got shape {arr.shape}")
        if arr.dtype.type not in _SUPPORTED_DTYPES:
            arr = arr.astype(np.float64)
        if arr.size > MAX_ELEMENTS:
            raise CapacityError(f"{arr.size} elements exceed the {MAX_ELEMENTS} cap")
        check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor4":
        # Fast path for op outputs already known to be 4-d and finite.
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numel(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.dims}")
        return float(self.data.reshape(-1)[0])

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"grad shape {g.shape} != value shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        return f"Tensor4(dims={self.dims}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("inputs", "output", "grad_fn")

    def __init__(self, inputs, output, grad_fn):
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn


class Tape:
    """Ordered record of differentiable operations.

    A tape is single-owner: activate it with ``with tape:`` around the
    forward computation, then hand it to :func:`backward` exactly once.
    Node order is the recording order, so inputs always precede the
    operations that consume them.
    """

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise GraphError("cannot reactivate a consumed tape")
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise GraphError("tape context exited out of order")
        stack.pop()
        return False

    def _record(self, node: _Node) -> None:
        if self.consumed:
            raise GraphError("cannot record on a consumed tape")
        self.nodes.append(node)


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record(
    inputs: Sequence[Tensor4],
    output: Tensor4,
    grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> None:
    """Append a backward rule for ``output`` to the active tape, if any.

    ``grad_fn`` maps the gradient w.r.t. the output to one gradient per
    input (``None`` for inputs that do not need one). Returned arrays must
    be freshly allocated; backward never mutates them in place.
    """
    tape = active_tape()
    if tape is not None and output.requires_grad:
        tape._record(_Node(tuple(inputs), output, grad_fn))


def backward(tape: Tape, loss: Tensor4) -> None:
    """Fill leaf gradients with d(loss)/d(leaf) and consume the tape.

    The loss must be scalar-shaped (1, 1, 1, 1) and must be the output of
    the tape's final node. Every node is visited exactly once, in reverse
    recording order. Gradients accumulate into ``leaf.grad`` (adding to any
    existing value), so backward passes from separate tapes sum naturally.
    """
    if tape.consumed:
        raise GraphError("tape already consumed by a previous backward pass")
    if loss.data.shape != (1, 1, 1, 1):
        raise ShapeError(f"loss must have dims (1,1,1,1), got {loss.dims}")
    if not tape.nodes or tape.nodes[-1].output is not loss:
        raise GraphError("loss is not the final output recorded on this tape")

    produced = {id(node.output) for node in tape.nodes}
    grads: dict[int, np.ndarray] = {
        id(loss): np.ones((1, 1, 1, 1), dtype=loss.data.dtype)
    }

    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue  # output never contributed to the loss
        input_grads = node.grad_fn(g_out)
        for inp, g_in in zip(node.inputs, input_grads):
            if g_in is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in produced:
                if key in grads:
                    grads[key] = grads[key] + g_in
                else:
                    grads[key] = g_in
            else:
                inp.accumulate_grad(g_in)

    tape.consumed = True
    tape.nodes.clear()


# ---------------------------------------------------------------------------
# Seeded randomness


class Rng:
    """Splittable counter-based random stream (Philox 4x64).

    The stream is fully determined by a 128-bit key derived from the seed.
    ``child(tag)`` derives an independent stream whose key is the SHA-256
    hash of the parent key and the tag, so initialization order never
    affects the values any particular consumer sees.
    """

    _MASK = (1 << 128) - 1

    def __init__(self, seed: int):
        self._key = int(seed) & self._MASK
        self._gen = np.random.Generator(np.random.Philox(key=self._key))

    @property
    def key(self) -> int:
        return self._key

    def child(self, tag) -> "Rng":
        digest = hashlib.sha256(f"{self._key:032x}/{tag}".encode()).digest()
        return Rng(int.from_bytes(digest[:16], "little"))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int | None = None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


# ---------------------------------------------------------------------------
# Constructors


def _validated_dims(dims) -> tuple[int, int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4:
        raise ShapeError(f"expected 4 dims, got {dims}")
    if any(d < 0 for d in dims):
        raise ShapeError(f"dims must be non-negative, got {dims}")
    n = 1
    for d in dims:
        n *= d
    if n > MAX_ELEMENTS:
        raise CapacityError(f"{dims} holds {n} elements, above the {MAX_ELEMENTS} cap")
    return dims


def zeros(dims, dtype=np.float64, requires_grad: bool = False) -> Tensor4:
    """All-zero tensor of the given dims."""
    dims = _validated_dims(dims)
    return Tensor4._wrap(np.zeros(dims, dtype=dtype), requires_grad)


def randn(dims, rng: Rng, std: float = 1.0, dtype=np.float64, requires_grad: bool = False) -> Tensor4:
    """I.i.d. Gaussian entries, mean 0 and standard deviation ``std``.

    Reproducible: the same rng key and dims give bit-identical tensors.
    """
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    dims = _validated_dims(dims)
    data = (rng.standard_normal(dims) * std).astype(dtype, copy=False)
    check_finite(data, "randn")
    return Tensor4._wrap(data, requires_grad)


def from_array(data, requires_grad: bool = False, dtype=None) -> Tensor4:
    """Wrap an existing 4-d array (copying if a cast is needed)."""
    return Tensor4(data, requires_grad=requires_grad, dtype=dtype)


# ---------------------------------------------------------------------------
# Elementwise operations (no broadcasting; operand dims must match exactly)


def _check_same(a: Tensor4, b: Tensor4, op: str) -> None:
    if a.dims != b.dims:
        raise ShapeError(f"{op}: dims {a.dims} vs {b.dims}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype {a.data.dtype} vs {b.data.dtype}")


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    _check_same(a, b, "add")
    out_data = a.data + b.data
    check_finite(out_data, "add")
    out = Tensor4._wrap(out_data, a.requires_grad or b.requires_grad)
    record((a, b), out, lambda g: (g, g))
    return out


def sub(a: Tensor4, b: Tensor4) -> Tensor4:
    _check_same(a, b, "sub")
    out_data = a.data - b.data
    check_finite(out_data, "sub")
    out = Tensor4._wrap(out_data, a.requires_grad or b.requires_grad)
    record((a, b), out, lambda g: (g, -g))
    return out


def mul(a: Tensor4, b: Tensor4) -> Tensor4:
    _check_same(a, b, "mul")
    out_data = a.data * b.data
    check_finite(out_data, "mul")
    out = Tensor4._wrap(out_data, a.requires_grad or b.requires_grad)
    a_data, b_data = a.data, b.data
    record((a, b), out, lambda g: (g * b_data, g * a_data))
    return out


def scale(t: Tensor4, a: float) -> Tensor4:
    alpha = float(a)
    if not np.isfinite(alpha):
        raise ValueError(f"scale factor must be finite, got {a}")
    out_data = t.data * alpha
    check_finite(out_data, "scale")
    out = Tensor4._wrap(out_data, t.requires_grad)
    record((t,), out, lambda g: (g * alpha,))
    return out


def tensor_sum(t: Tensor4) -> Tensor4:
    """Sum of all entries as a scalar-shaped (1,1,1,1) tensor."""
    out_data = np.sum(t.data, dtype=t.data.dtype).reshape(1, 1, 1, 1)
    check_finite(out_data, "sum")
    out = Tensor4._wrap(out_data, t.requires_grad)
    shape, dtype = t.data.shape, t.data.dtype
    record((t,), out, lambda g: (np.full(shape, g.reshape(-1)[0], dtype=dtype),))
    return out
