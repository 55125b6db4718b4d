"""Dense float64 tensors with reverse-mode differentiation.

Values are numpy arrays; every operation records its parent tensors and a
closure mapping the output adjoint to parent adjoints. Gradients are computed
by a single reverse sweep over the topologically ordered graph and returned
as a map, so differentiating one graph never mutates shared state. Arrays are
frozen (read-only) once wrapped, which makes the immutability contract cheap
to enforce; parameter updates swap in a fresh array between evaluations.

All arithmetic is 64-bit. Any operation producing a NaN or Inf raises
immediately rather than letting the poison propagate.
"""

from typing import Iterable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class NonFiniteError(FloatingPointError):
    """A tensor value became NaN or Inf."""


class GraphError(ValueError):
    """Differentiation request violates the graph contract (e.g. non-scalar loss)."""


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor {name or '<anon>'}")
        arr.setflags(write=False)
        self.data = arr
        self.parents: tuple["Tensor", ...] = ()
        self.backward_fn = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        nm = f" {self.name!r}" if self.name else ""
        return f"Tensor{nm}(shape={self.shape})"

    # operator sugar; python scalars are treated as constants
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    def __radd__(self, other):
        return shift(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _result(arr: np.ndarray, parents: tuple, backward_fn, name: str | None = None) -> Tensor:
    """Wrap an op result without copying; the array must be freshly allocated."""
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite result in op {name or backward_fn.__qualname__}")
    out = Tensor.__new__(Tensor)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    out.data = arr
    out.parents = parents
    out.backward_fn = backward_fn
    out.name = name
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")

    def bw(g):
        return (g.T,)

    return _result(a.data.T.copy(), (a,), bw, "transpose")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} vs {b.shape}") from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product with broadcasting (covers N x 1 gates against N x C)."""
    _check_broadcast(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


def neg(a: Tensor) -> Tensor:
    def bw(g):
        return (-g,)

    return _result(-a.data, (a,), bw, "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        return (g * c,)

    return _result(a.data * c, (a,), bw, "scale")


def shift(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        return (g,)

    return _result(a.data + c, (a,), bw, "shift")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0.0), (a,), bw, "relu")


def sigmoid(a: Tensor) -> Tensor:
    # both branches stay in exp(-|x|) territory, so no overflow
    out = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                   np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), bw, "sigmoid")


def absolute(a: Tensor) -> Tensor:
    """Elementwise |x|; the subgradient at 0 is taken as 0 (np.sign convention)."""
    sign = np.sign(a.data)

    def bw(g):
        return (g * sign,)

    return _result(np.abs(a.data), (a,), bw, "absolute")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by max subtraction.

    The adjoint uses the exact Jacobian-vector product
    dx = s * (g - sum(g * s, axis=1)), so the max shift (to which softmax is
    algebraically invariant) needs no gradient of its own.
    """
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D tensor, got {a.shape}")
    if a.shape[1] < 1:
        raise ShapeError("softmax_rows needs at least one column")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _result(s, (a,), bw, "softmax_rows")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def bw(g):
        return (np.full(shape, np.asarray(g).reshape(())),)

    return _result(np.asarray(a.data.sum()), (a,), bw, "sum_all")


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.size)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows of nothing")
    if any(p.ndim != 2 for p in parts):
        raise ShapeError("concat_rows needs 2-D tensors")
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows column mismatch: {sorted(cols)}")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return _result(np.vstack([p.data for p in parts]), tuple(parts), bw, "concat_rows")


def take_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("take_rows needs a 2-D tensor")
    if not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"take_rows [{start}:{stop}] out of range for {a.shape}")

    def bw(g):
        full = np.zeros(a.shape)
        full[start:stop] = g
        return (full,)

    return _result(a.data[start:stop].copy(), (a,), bw, "take_rows")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape).copy(), (a,), bw, "reshape")


# ---------------------------------------------------------------------------
# reverse sweep


def _topo_order(root: Tensor) -> list[Tensor]:
    # iterative DFS: forward graphs can exceed the default recursion limit
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar loss.

    Returns adjoints for every tensor reachable from `loss`, keyed by tensor
    identity. Tensors not in the map did not contribute to the loss.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones(loss.shape)}
    for node in reversed(_topo_order(loss)):
        g = grads.get(node)
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg
    return grads


def gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of `loss` for each named parameter; zeros for off-path parameters."""
    gmap = backward(loss)
    out = {}
    for name, p in params.items():
        g = gmap.get(p)
        out[name] = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
    return out


def parameters_from(arrays: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {name: Tensor(arr, name=name) for name, arr in arrays.items()}
