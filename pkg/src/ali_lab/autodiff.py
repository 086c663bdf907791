"""Define-by-run reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every primitive applied to :class:`Tensor` values.
Calling :func:`backward` on a scalar result walks the tape once in reverse
and returns gradients for every leaf that requires them.

    >>> tape = Tape()
    >>> x = tape.variable([3.0])
    >>> y = (x * x).sum()
    >>> float(backward(tape, y)[x][0])
    6.0

Broadcasting is deliberately limited to ``broadcast_add_bias`` (a row vector
added to every row of a batch); every other binary op requires equal shapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "DomainError",
    "ContractError",
    "Tensor",
    "Tape",
    "forward_op",
    "backward",
    "gradient_check",
    "OPS",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(ValueError):
    """Raised when an op is evaluated outside its mathematical domain."""


class ContractError(ValueError):
    """Raised when a caller violates a documented precondition."""


class Tensor:
    """Immutable value recorded on a tape.

    ``data`` is a read-only float64 array. Arithmetic operators dispatch to the
    owning tape, so ``a + b`` records an ``add`` node.
    """

    __slots__ = ("data", "tape", "index", "requires_grad")

    def __init__(self, data: np.ndarray, tape: "Tape", index: int, requires_grad: bool):
        self.data = data
        self.tape = tape
        self.index = index
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.index})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return self.tape.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return self.tape.subtract(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return self.tape.multiply(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return self.tape.matmul(self, other)

    def __neg__(self) -> "Tensor":
        return self.tape.negate(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return self.tape.sum(self, axis=axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return self.tape.mean(self, axis=axis)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _require_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def _expand_reduced(grad: np.ndarray, shape: tuple[int, ...], axis: int | None) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad, shape)
    return np.broadcast_to(np.expand_dims(grad, axis), shape)


class _Node:
    __slots__ = ("op", "inputs", "value", "vjp")

    def __init__(self, op: str, inputs: tuple[int, ...], value: np.ndarray, vjp):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.vjp = vjp


class Tape:
    """Ordered record of operations; nodes are appended in topological order."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._requires: list[bool] = []
        self._params: dict[int, tuple[np.ndarray, Tensor]] = {}
        self._leaves: list[Tensor] = []

    def __len__(self) -> int:
        return len(self.nodes)

    # -- leaves ---------------------------------------------------------

    def _leaf(self, value, requires_grad: bool) -> Tensor:
        arr = _frozen(np.array(value, dtype=np.float64))
        self.nodes.append(_Node("leaf", (), arr, None))
        self._requires.append(requires_grad)
        leaf = Tensor(arr, self, len(self.nodes) - 1, requires_grad)
        if requires_grad:
            self._leaves.append(leaf)
        return leaf

    def variable(self, value) -> Tensor:
        """Leaf that receives a gradient.

        Its array also counts as a registered parameter, so networks built
        from ``leaf.data`` feed gradients back into this leaf.
        """
        leaf = self._leaf(value, True)
        self._params[id(leaf.data)] = (leaf.data, leaf)
        return leaf

    def constant(self, value) -> Tensor:
        """Leaf excluded from differentiation."""
        return self._leaf(value, False)

    def param(self, array: np.ndarray, trainable: bool = True) -> Tensor:
        """Register a parameter array once per tape.

        Repeated calls with the same array object return the same leaf, so a
        network used in several forward passes accumulates its gradient.
        """
        hit = self._params.get(id(array))
        if hit is not None and hit[0] is array:
            return hit[1]
        leaf = self._leaf(array, trainable)
        self._params[id(array)] = (array, leaf)
        return leaf

    def leaf_for(self, array: np.ndarray) -> Tensor | None:
        hit = self._params.get(id(array))
        if hit is not None and hit[0] is array:
            return hit[1]
        return None

    def _record(self, op: str, inputs: Sequence[Tensor], value: np.ndarray, vjp) -> Tensor:
        req = False
        for t in inputs:
            if t.tape is not self:
                raise ContractError(f"{op}: operand belongs to a different tape")
            req = req or t.requires_grad
        if type(value) is not np.ndarray or value.dtype != np.float64:
            value = np.asarray(value, dtype=np.float64)
        value.flags.writeable = False
        self.nodes.append(_Node(op, tuple(t.index for t in inputs), value, vjp if req else None))
        self._requires.append(req)
        return Tensor(value, self, len(self.nodes) - 1, req)

    # -- elementwise binary ---------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _require_same("add", a, b)
        return self._record("add", (a, b), a.data + b.data, lambda g: (g, g))

    def subtract(self, a: Tensor, b: Tensor) -> Tensor:
        _require_same("subtract", a, b)
        return self._record("subtract", (a, b), a.data - b.data, lambda g: (g, -g))

    def multiply(self, a: Tensor, b: Tensor) -> Tensor:
        _require_same("multiply", a, b)
        av, bv = a.data, b.data
        return self._record("multiply", (a, b), av * bv, lambda g: (g * bv, g * av))

    def broadcast_add_bias(self, x: Tensor, bias: Tensor) -> Tensor:
        """Add a length-``n`` bias to each row of an ``[m, n]`` batch."""
        if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
            raise ShapeError("broadcast_add_bias", x.shape, bias.shape)
        return self._record(
            "broadcast_add_bias", (x, bias), x.data + bias.data, lambda g: (g, g.sum(axis=0))
        )

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        av, bv = a.data, b.data
        return self._record("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))

    def affine(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """``x @ w`` plus a per-column bias, recorded as a single node."""
        if (
            x.data.ndim != 2
            or w.data.ndim != 2
            or b.data.ndim != 1
            or x.shape[1] != w.shape[0]
            or w.shape[1] != b.shape[0]
        ):
            raise ShapeError("affine", x.shape, w.shape, b.shape)
        xv, wv = x.data, w.data
        out = xv @ wv
        out += b.data
        return self._record(
            "affine", (x, w, b), out, lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0))
        )

    def concat_last_axis(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != b.data.ndim or a.shape[:-1] != b.shape[:-1]:
            raise ShapeError("concat_last_axis", a.shape, b.shape)
        k = a.shape[-1]
        return self._record(
            "concat_last_axis",
            (a, b),
            np.concatenate([a.data, b.data], axis=-1),
            lambda g: (g[..., :k], g[..., k:]),
        )

    # -- reductions -----------------------------------------------------

    def sum(self, x: Tensor, axis: int | None = None) -> Tensor:
        shape = x.shape
        return self._record(
            "sum", (x,), x.data.sum(axis=axis), lambda g: (_expand_reduced(g, shape, axis),)
        )

    def mean(self, x: Tensor, axis: int | None = None) -> Tensor:
        shape = x.shape
        n = x.size if axis is None else shape[axis]
        return self._record(
            "mean",
            (x,),
            x.data.mean(axis=axis),
            lambda g: (_expand_reduced(g / n, shape, axis),),
        )

    def logsumexp_last_axis(self, x: Tensor) -> Tensor:
        xv = x.data
        top = xv.max(axis=-1, keepdims=True)
        shifted = np.exp(xv - top)
        total = shifted.sum(axis=-1, keepdims=True)
        out = (np.log(total) + top)[..., 0]
        soft = shifted / total
        return self._record("logsumexp_last_axis", (x,), out, lambda g: (g[..., None] * soft,))

    # -- unary ----------------------------------------------------------

    def negate(self, x: Tensor) -> Tensor:
        return self._record("negate", (x,), -x.data, lambda g: (-g,))

    def scale(self, x: Tensor, factor: float) -> Tensor:
        c = float(factor)
        return self._record("scale", (x,), c * x.data, lambda g: (c * g,))

    def exponential(self, x: Tensor) -> Tensor:
        out = np.exp(x.data)
        return self._record("exponential", (x,), out, lambda g: (g * out,))

    def logarithm(self, x: Tensor) -> Tensor:
        xv = x.data
        if np.any(xv <= 0):
            raise DomainError(f"logarithm: non-positive input (min {xv.min()!r})")
        return self._record("logarithm", (x,), np.log(xv), lambda g: (g / xv,))

    def sigmoid(self, x: Tensor) -> Tensor:
        out = _sigmoid(x.data)
        return self._record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))

    def tanh(self, x: Tensor) -> Tensor:
        out = np.tanh(x.data)
        return self._record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))

    def leaky_relu(self, x: Tensor, slope: float) -> Tensor:
        xv = x.data
        d = (xv > 0).astype(np.float64)
        d *= 1.0 - slope
        d += slope
        return self._record("leaky_relu", (x,), xv * d, lambda g: (g * d,))

    def square(self, x: Tensor) -> Tensor:
        xv = x.data
        return self._record("square", (x,), xv * xv, lambda g: (2.0 * g * xv,))

    def softplus(self, x: Tensor) -> Tensor:
        """``log(1 + exp(x))`` without overflow for large ``|x|``."""
        xv = x.data
        out = np.maximum(xv, 0.0) + np.log1p(np.exp(-np.abs(xv)))
        s = _sigmoid(xv)
        return self._record("softplus", (x,), out, lambda g: (g * s,))

    def clip(self, x: Tensor, lo: float, hi: float) -> Tensor:
        xv = x.data
        inside = ((xv >= lo) & (xv <= hi)).astype(np.float64)
        return self._record("clip", (x,), np.clip(xv, lo, hi), lambda g: (g * inside,))

    def slice_last_axis(self, x: Tensor, start: int, stop: int) -> Tensor:
        width = x.shape[-1]
        if not 0 <= start < stop <= width:
            raise ShapeError("slice_last_axis", x.shape, detail=f"[{start}:{stop}]")
        shape = x.shape

        def vjp(g):
            full = np.zeros(shape)
            full[..., start:stop] = g
            return (full,)

        return self._record("slice_last_axis", (x,), x.data[..., start:stop], vjp)

    def reshape(self, x: Tensor, shape: Sequence[int]) -> Tensor:
        old = x.shape
        try:
            out = x.data.reshape(tuple(shape))
        except ValueError:
            raise ShapeError("reshape", old, tuple(shape)) from None
        return self._record("reshape", (x,), out, lambda g: (g.reshape(old),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * x)


OPS: dict[str, Callable] = {
    "add": Tape.add,
    "subtract": Tape.subtract,
    "multiply": Tape.multiply,
    "matmul": Tape.matmul,
    "affine": Tape.affine,
    "concat_last_axis": Tape.concat_last_axis,
    "sum": Tape.sum,
    "mean": Tape.mean,
    "negate": Tape.negate,
    "exponential": Tape.exponential,
    "logarithm": Tape.logarithm,
    "sigmoid": Tape.sigmoid,
    "tanh": Tape.tanh,
    "leaky_relu": Tape.leaky_relu,
    "square": Tape.square,
    "broadcast_add_bias": Tape.broadcast_add_bias,
    "softplus": Tape.softplus,
    "clip": Tape.clip,
    "scale": Tape.scale,
    "slice_last_axis": Tape.slice_last_axis,
    "logsumexp_last_axis": Tape.logsumexp_last_axis,
    "reshape": Tape.reshape,
}


def forward_op(op: str, *inputs: Tensor, tape: Tape, **params) -> Tensor:
    """Apply primitive ``op`` by name, e.g. ``forward_op("leaky_relu", x, tape=t, slope=0.01)``."""
    try:
        fn = OPS[op]
    except KeyError:
        raise ContractError(f"unknown op {op!r}") from None
    return fn(tape, *inputs, **params)


def backward(tape: Tape, output: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of scalar ``output`` with respect to every differentiable leaf.

    Contributions from fan-out are summed. Leaves that do not influence the
    output get a zero gradient of their own shape.
    """
    if output.tape is not tape:
        raise ContractError("output was not recorded on this tape")
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")

    n = output.index + 1
    grads: list[np.ndarray | None] = [None] * n
    grads[output.index] = np.ones_like(output.data)
    leaves: dict[Tensor, np.ndarray] = {}
    for i in range(n - 1, -1, -1):
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        for j, gj in zip(node.inputs, node.vjp(g)):
            if not tape._requires[j]:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj
        grads[i] = None

    for leaf in tape._leaves:
        if leaf.index < n:
            g = grads[leaf.index]
            leaves[leaf] = np.zeros(leaf.shape) if g is None else np.array(g, dtype=np.float64)
    return leaves


def gradient_check(
    function: Callable[..., Tensor],
    point,
    step: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``function(tape, *leaves)`` must build a scalar on ``tape``. ``point`` is a
    single array or a sequence of arrays, one per leaf. The relative error of
    each coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    single = isinstance(point, (np.ndarray, float, int)) or (
        isinstance(point, (list, tuple)) and point and np.isscalar(point[0])
    )
    arrays = [np.array(point, dtype=np.float64)] if single else [
        np.array(p, dtype=np.float64) for p in point
    ]

    tape = Tape()
    leaves = [tape.variable(a) for a in arrays]
    out = function(tape, *leaves)
    grads = backward(tape, out)
    analytic = [grads[leaf] for leaf in leaves]

    def evaluate(vals: list[np.ndarray]) -> float:
        t = Tape()
        return float(function(t, *[t.variable(v) for v in vals]).data.reshape(-1)[0])

    worst = 0.0
    for k, base in enumerate(arrays):
        flat = base.reshape(-1)
        for idx in range(flat.size):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k].reshape(-1)[idx] += step
            minus[k].reshape(-1)[idx] -= step
            numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * step)
            a = float(analytic[k].reshape(-1)[idx])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
