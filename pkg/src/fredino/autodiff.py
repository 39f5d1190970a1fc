"""Dense 2-D float64 tensors with an explicit reverse-mode tape.

Every value is a ``rows x cols`` matrix.  Operations on plain tensors are
evaluated eagerly and leave no trace; operations that touch a tensor obtained
from :meth:`Tape.watch` are recorded on that tape, so inference code never pays
for recording.

Broadcasting is limited to ``matrix op row``, ``matrix op column`` and
``matrix op 1x1``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteValue, NotOnTape, ShapeMismatch

_pyslice = slice


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeMismatch(f"tensors are 2-D, got array with shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"{what} produced non-finite values")


class Tensor:
    """A 2-D float64 matrix, optionally attached to a :class:`Tape`."""

    __slots__ = ("data", "tape", "node")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, *, tape: "Tape | None" = None, node: int | None = None, check: bool = True):
        self.data = _as_matrix(data)
        if check:
            _check_finite(self.data, "tensor construction")
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Records operations between :meth:`begin` (construction) and :meth:`end`.

    Use as a context manager or call ``end()`` explicitly.  Backward passes are
    allowed after the tape is closed; recording is not.
    """

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[tuple[Callable[[np.ndarray], np.ndarray], ...]] = []
        self._shapes: list[tuple[int, int]] = []
        self._leaves: list[int] = []
        self._leaf_set: set[int] = set()
        self.open = True
        self.released = False

    def __enter__(self) -> "Tape":
        return self

    def __exit__(self, *exc) -> None:
        self.end()

    def end(self) -> None:
        self.open = False

    def release(self) -> None:
        """Close the tape and drop the recorded closures.

        The closures reference tensors that reference the tape, so without this
        the graph's arrays live until the cyclic garbage collector runs.
        """
        self.open = False
        self._vjps = []
        self._parents = []
        self.released = True

    def __len__(self) -> int:
        return len(self._shapes)

    def watch(self, value) -> Tensor:
        """Register ``value`` as a leaf whose gradient will be reported."""
        if not self.open:
            raise RuntimeError("cannot record on a closed tape")
        data = value.data if isinstance(value, Tensor) else value
        node = len(self._shapes)
        t = Tensor(data, tape=self, node=node)
        self._parents.append(())
        self._vjps.append(())
        self._shapes.append(t.shape)
        self._leaves.append(node)
        self._leaf_set.add(node)
        return t

    def _record(self, value: np.ndarray, links: Sequence[tuple[Tensor, Callable]]) -> Tensor:
        if not self.open:
            raise RuntimeError("cannot record on a closed tape")
        node = len(self._shapes)
        parents, vjps = [], []
        for parent, fn in links:
            if parent.tape is self:
                parents.append(parent.node)
                vjps.append(fn)
        self._parents.append(tuple(parents))
        self._vjps.append(tuple(vjps))
        self._shapes.append(value.shape)
        return Tensor(value, tape=self, node=node, check=False)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse accumulation from a scalar ``loss``.

        Returns ``{leaf node id: d loss / d leaf}``; leaves the loss does not
        depend on get zero gradients.
        """
        if loss.tape is not self:
            raise NotOnTape("loss was not recorded on this tape")
        if self.released:
            raise RuntimeError("the tape's graph has been released")
        if loss.shape != (1, 1):
            raise ShapeMismatch(f"backward needs a 1x1 loss, got {loss.shape}")
        grads: list[np.ndarray | None] = [None] * (loss.node + 1)
        grads[loss.node] = np.ones((1, 1))
        for node in range(loss.node, -1, -1):
            g = grads[node]
            if g is None or not self._parents[node]:
                continue
            for parent, fn in zip(self._parents[node], self._vjps[node]):
                contrib = fn(g)
                if grads[parent] is None:
                    grads[parent] = contrib
                else:
                    grads[parent] = grads[parent] + contrib
            if node not in self._leaf_set:
                grads[node] = None
        out = {}
        for leaf in self._leaves:
            g = grads[leaf] if leaf <= loss.node else None
            out[leaf] = np.zeros(self._shapes[leaf]) if g is None else g
        return out

    def gradient(self, loss: Tensor, wrt: Iterable[Tensor], release: bool = False) -> list[np.ndarray]:
        """Gradients of ``loss`` w.r.t. leaves ``wrt``; ``release`` frees the graph afterwards."""
        grads = self.backward(loss)
        result = []
        for t in wrt:
            if t.tape is not self or t.node not in grads:
                raise NotOnTape("gradient requested for a tensor that is not a leaf of this tape")
            result.append(grads[t.node])
        if release:
            self.release()
        return result


def _result(value: np.ndarray, what: str, links: Sequence[tuple[Tensor, Callable]]) -> Tensor:
    _check_finite(value, what)
    tape = None
    for parent, _ in links:
        if parent.tape is not None:
            if tape is None:
                tape = parent.tape
            elif parent.tape is not tape:
                raise ValueError("operands belong to different tapes")
    if tape is None:
        return Tensor(value, check=False)
    return tape._record(value, links)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(ax for ax in (0, 1) if shape[ax] == 1 and g.shape[ax] != 1)
    return g.sum(axis=axes, keepdims=True)


def _broadcast_shape(a: Tensor, b: Tensor, kind: str) -> tuple[int, int]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    for big, small in ((sa, sb), (sb, sa)):
        if all(s == t or s == 1 for t, s in zip(big, small)):
            return big
    raise ShapeMismatch(f"{kind}: cannot combine shapes {sa} and {sb}")


# -- binary ops -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(a.data + b.data, "add", [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(a.data - b.data, "sub", [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape)),
    ])


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "hadamard")
    return _result(a.data * b.data, "hadamard", [
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    ])


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result(c * a.data, "scale", [(a, lambda g: c * g)])


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, "matmul", [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


# -- pointwise ops ----------------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, "tanh", [(a, lambda g: g * (1.0 - y * y))])


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0  # subgradient 0 at the kink
    return _result(np.where(mask, a.data, 0.0), "relu", [(a, lambda g: g * mask)])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _result(s, "sigmoid", [(a, lambda g: g * s * (1.0 - s))])


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _result(a.data * s, "silu", [(a, lambda g: g * s * (1.0 + a.data * (1.0 - s)))])


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, "exp", [(a, lambda g: g * y)])


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)
    return _result(y, "log", [(a, lambda g: g / a.data)])


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, "square", [(a, lambda g: 2.0 * g * a.data)])


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        y = np.sqrt(a.data)
    return _result(y, "sqrt", [(a, lambda g: 0.5 * g / y)])


POINTWISE = {
    "tanh": tanh,
    "relu": relu,
    "silu": silu,
    "sigmoid": sigmoid,
    "exp": exp,
    "ln": log,
    "square": square,
    "sqrt": sqrt,
}


# -- reductions and structural ops -------------------------------------------

def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    if axis is None:
        value = np.array([[a.data.sum()]])
    elif axis in (0, 1):
        value = a.data.sum(axis=axis, keepdims=True)
    else:
        raise ValueError("axis must be None, 0 or 1")
    return _result(value, "sum", [(a, lambda g: np.broadcast_to(g, a.shape).copy())])


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / count)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.T, "transpose", [(a, lambda g: g.T)])


def concat_cols(tensors: Sequence) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols: row counts differ {sorted(rows)}")
    edges = np.cumsum([0] + [t.shape[1] for t in tensors])
    links = []
    for t, lo, hi in zip(tensors, edges[:-1], edges[1:]):
        links.append((t, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
    return _result(np.concatenate([t.data for t in tensors], axis=1), "concat_cols", links)


def slice(a, rows=_pyslice(None), cols=_pyslice(None)) -> Tensor:  # noqa: A001
    """Basic (non-fancy) slicing; the result keeps two dimensions."""
    a = as_tensor(a)
    if not isinstance(rows, _pyslice) or not isinstance(cols, _pyslice):
        raise TypeError("slice takes python slice objects; use take_rows for gathers")
    value = a.data[rows, cols]

    def vjp(g):
        out = np.zeros(a.shape)
        out[rows, cols] = g
        return out

    return _result(value, "slice", [(a, vjp)])


def take_rows(a, index) -> Tensor:
    """Gather rows by integer index (repeats allowed)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, index, g)
        return out

    return _result(a.data[index], "take_rows", [(a, vjp)])


def reshape(a, shape: tuple[int, int]) -> Tensor:
    """Row-major reshape."""
    a = as_tensor(a)
    if shape[0] * shape[1] != a.data.size:
        raise ShapeMismatch(f"reshape: cannot view {a.shape} as {shape}")
    return _result(a.data.reshape(shape), "reshape", [(a, lambda g: g.reshape(a.shape))])


_BINARY = {"matmul": matmul, "add": add, "sub": sub, "hadamard": hadamard}
_UNARY = {"sum": sum, "mean": mean, "transpose": transpose}


def record_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an operation by name, e.g. ``record_op("pointwise", x, fn="tanh")``."""
    if kind in _BINARY:
        return _BINARY[kind](*inputs)
    if kind in _UNARY:
        return _UNARY[kind](*inputs, **kwargs)
    if kind == "scale":
        return scale(*inputs, **kwargs)
    if kind == "pointwise":
        return POINTWISE[kwargs["fn"]](*inputs)
    if kind == "concat_cols":
        return concat_cols(inputs)
    if kind == "slice":
        return slice(*inputs, **kwargs)
    if kind == "reshape":
        return reshape(*inputs, **kwargs)
    raise ValueError(f"unknown op kind {kind!r}")


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    if loss.tape is None:
        raise NotOnTape("loss is not attached to any tape")
    return loss.tape.backward(loss)


def grad_check(loss_builder: Callable[[list[Tensor]], Tensor], params: Sequence[np.ndarray],
               h: float = 1e-5) -> float:
    """Max over parameter entries of ``|g_ad - g_fd| / max(1, |g_fd|)``.

    ``loss_builder`` receives one tensor per entry of ``params`` and must be
    deterministic.  Central differences perturb ``params`` in place and
    restore them afterwards.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    params = list(params)
    if not params:
        return 0.0
    with Tape() as tape:
        leaves = [tape.watch(p) for p in params]
        loss = loss_builder(leaves)
    grads = tape.gradient(loss, leaves)

    def value() -> float:
        out = loss_builder([Tensor(p) for p in params]).item()
        if not np.isfinite(out):
            raise NonFiniteValue("loss is not finite")
        return out

    worst = 0.0
    for p, g in zip(params, grads):
        g = g.reshape(p.shape)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = value()
            p[idx] = orig - h
            down = value()
            p[idx] = orig
            fd = (up - down) / (2.0 * h)
            worst = max(worst, abs(g[idx] - fd) / max(1.0, abs(fd)))
    return worst
