"""Dense float64 tensors with a recorded tape for reverse-mode gradients.

Every op builds a fresh node holding its parents and a closure mapping the
upstream gradient to one gradient per parent. ``backward`` walks the graph in
reverse topological order and accumulates into the ``grad`` slot of leaf
tensors that require gradients. Intermediate nodes never store gradients, so
calling ``backward`` twice on the same graph adds exactly the same amount
twice.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: BackwardFn | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: tuple, backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result; the node is only recorded if some parent needs gradients."""
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dleaf into every reachable leaf that requires gradients."""
    if loss.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# --------------------------------------------------------------------------
# elementwise and linear algebra


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # scalar operand receives the summed gradient
    return np.asarray(g.sum()) if _is_scalar(t) and g.ndim else g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "add")
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "sub")
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "mul")
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)))


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "max")
    take_a = a.data >= b.data
    return make_node(np.where(take_a, a.data, b.data), (a, b),
                     lambda g: (_reduce_to(np.where(take_a, g, 0.0), a),
                                _reduce_to(np.where(take_a, 0.0, g), b)))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "max": maximum}


def elementwise(op: str, a, b) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}")
    return fn(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return make_node(a.data @ b.data, (a, b),
                     lambda g: (g @ b.data.T, a.data.T @ g))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_node(np.asarray(x.data.sum()), (x,),
                     lambda g: (np.full_like(x.data, float(g)),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    return make_node(np.asarray(x.data.mean()), (x,),
                     lambda g: (np.full_like(x.data, float(g) / n),))


def reshape(x: Tensor, shape) -> Tensor:
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ContractError("concat of an empty list")
    ax = axis % xs[0].data.ndim
    for t in xs[1:]:
        if t.data.ndim != xs[0].data.ndim or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, xs[0].shape)) if i != ax):
            raise DimensionError(f"concat: shapes {xs[0].shape} and {t.shape} disagree off axis {ax}")
    bounds = np.cumsum([t.shape[ax] for t in xs])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_node(np.concatenate([t.data for t in xs], axis=ax), tuple(xs), back)


# --------------------------------------------------------------------------
# deterministic initialization


class Rng:
    """Seeded generator; PCG64 streams are identical across platforms."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, lo: float, hi: float, size) -> np.ndarray:
        return self._gen.uniform(lo, hi, size)

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def random(self, size) -> np.ndarray:
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, salt: int) -> "Rng":
        """Independent child stream keyed by ``salt``."""
        return Rng((self.seed * 1_000_003 + salt) % (2 ** 63))


def _check_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise DimensionError(f"shape {shape} has a non-positive extent")
    return shape


def init(scheme: str, shape, rng: Rng | None = None, *, lo: float = -0.05, hi: float = 0.05,
         sigma: float = 0.1, name: str | None = None) -> Tensor:
    """Allocate a trainable tensor with one of: uniform, truncated_normal, zeros, ones.

    Truncated normal redraws samples beyond two standard deviations.
    """
    shape = _check_shape(shape)
    if scheme == "zeros":
        data = np.zeros(shape)
    elif scheme == "ones":
        data = np.ones(shape)
    elif scheme == "uniform":
        if not lo < hi:
            raise ContractError(f"uniform init needs lo < hi, got {lo}, {hi}")
        data = rng.uniform(lo, hi, shape)
    elif scheme == "truncated_normal":
        data = rng.normal(shape)
        bad = np.abs(data) > 2.0
        while bad.any():
            data[bad] = rng.normal(int(bad.sum()))
            bad = np.abs(data) > 2.0
        data = data * sigma
    else:
        raise ContractError(f"unknown init scheme {scheme!r}")
    return Tensor(data, requires_grad=True, name=name)
