"""Reverse-mode automatic differentiation on a scalar tape.

Every recorded node holds a scalar *per lane*: its value is either a float or
a 1-D numpy array whose entries are independent evaluations of the same
expression (one per noise draw). Operations are elementwise across lanes, so
the tape stays a scalar tape while a batch of draws is evaluated in one pass.

Functions in this module accept plain floats and numpy arrays as well; when no
argument is a :class:`Var` they simply evaluate with numpy and nothing is
recorded. Model code written against this module therefore runs unchanged on
plain arrays (fast, for quadrature oracles) and on the tape (for gradients).
"""

from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Var",
    "Tape",
    "DifferentiationError",
    "TapeUsageError",
    "record",
    "gradient",
    "value_of",
    "is_var",
    "log",
    "exp",
    "sqrt",
    "square",
    "tanh",
    "sigmoid",
    "log_sigmoid",
    "softplus",
    "lgamma",
    "digamma",
    "xlogx",
    "minimum",
    "dot",
    "total",
    "mean",
    "where",
]


class DifferentiationError(ArithmeticError):
    """A non-finite value or partial derivative was produced on the tape."""

    def __init__(self, op_kind: str, node_id: int, detail: str = ""):
        self.op_kind = op_kind
        self.node_id = node_id
        msg = f"non-finite result in '{op_kind}' at node {node_id}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TapeUsageError(RuntimeError):
    pass


_local = threading.local()


def _active() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of elementary operations.

    Use as a context manager; variables created inside belong to this tape::

        with Tape() as tape:
            x = tape.var(3.0)
            y = x * x
            (dx,) = gradient(y, [x])
    """

    def __init__(self) -> None:
        self.values: list = []
        self.parents: list[tuple[int, ...]] = []
        self.partials: list[tuple] = []
        self.kinds: list[str] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.values)

    def _push(self, kind, parents, value, partials) -> "Var":
        idx = len(self.values)
        self.values.append(value)
        self.parents.append(parents)
        self.partials.append(partials)
        self.kinds.append(kind)
        return Var(value, idx, self)

    def var(self, value) -> "Var":
        """Create an input (leaf) variable."""
        value = _as_value(value)
        if not np.all(np.isfinite(value)):
            raise DifferentiationError("input", len(self.values), "non-finite input")
        return self._push("input", (), value, ())


def _as_value(x):
    if isinstance(x, np.ndarray):
        return x.astype(float, copy=False) if x.ndim else float(x)
    return float(x)


class Var:
    """A scalar (per lane) recorded on a tape."""

    __slots__ = ("value", "node_id", "tape")
    __array_ufunc__ = None

    def __init__(self, value, node_id: int, tape: Tape):
        self.value = value
        self.node_id = node_id
        self.tape = tape

    def __repr__(self) -> str:
        return f"Var({self.value!r}, node={self.node_id})"

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -other if not isinstance(other, Var) else _neg(other))

    def __rsub__(self, other):
        return _add(_neg(self), other)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return _mul(self, _reciprocal(other))
        return _mul(self, 1.0 / other)

    def __rtruediv__(self, other):
        return _mul(_reciprocal(self), other)

    def __neg__(self):
        return _neg(self)

    def __pos__(self):
        return self

    def __pow__(self, k):
        if isinstance(k, Var):
            raise TapeUsageError("variable exponents are not supported")
        if k == 2:
            return square(self)
        v = self.value
        return record("pow", [self], v**k, [k * v ** (k - 1)])


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x):
    """Numeric value of a Var, or the argument itself."""
    return x.value if isinstance(x, Var) else x


def _check(kind, tape, value, partials):
    if not np.all(np.isfinite(value)):
        raise DifferentiationError(kind, len(tape.values), "value")
    for p in partials:
        if not np.all(np.isfinite(p)):
            raise DifferentiationError(kind, len(tape.values), "partial")


def record(op_kind: str, parents: Sequence, value, partials: Sequence):
    """Record an elementary operation.

    ``parents`` may mix Vars and constants; constants (and their partials)
    are dropped. If no parent is a Var the bare value is returned.
    """
    tape = None
    ids = []
    parts = []
    for p, d in zip(parents, partials):
        if isinstance(p, Var):
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise TapeUsageError("operands live on different tapes")
            ids.append(p.node_id)
            parts.append(d)
    if tape is None:
        return value
    if _active() is not tape:
        raise TapeUsageError("operation on a variable whose tape is not active")
    _check(op_kind, tape, value, parts)
    return tape._push(op_kind, tuple(ids), value, tuple(parts))


def _sum_to(g, like):
    if np.ndim(like) == 0 and np.ndim(g) > 0:
        return float(np.sum(g))
    return g


def gradient(output, inputs: Sequence[Var]) -> list:
    """Adjoints d output / d input for each input.

    A lane-batched output is seeded with ones, which yields per-lane
    gradients for batched inputs and lane-summed gradients for scalar inputs.
    """
    if not isinstance(output, Var):
        raise TapeUsageError("output is not a variable on a tape")
    tape = output.tape
    if _active() is not tape:
        raise TapeUsageError("output is not on the active tape")
    for x in inputs:
        if not isinstance(x, Var) or x.tape is not tape:
            raise TapeUsageError("input is not on the output's tape")
    n = output.node_id + 1
    adj: list = [None] * n
    adj[output.node_id] = np.ones_like(output.value) if np.ndim(output.value) else 1.0
    values = tape.values
    parents = tape.parents
    partials = tape.partials
    lo = min((x.node_id for x in inputs), default=0)
    for i in range(n - 1, lo - 1, -1):
        a = adj[i]
        if a is None:
            continue
        for j, d in zip(parents[i], partials[i]):
            c = _sum_to(a * d, values[j])
            if adj[j] is None:
                adj[j] = c
            else:
                adj[j] = adj[j] + c
    out = []
    for x in inputs:
        g = adj[x.node_id] if x.node_id < n else None
        if g is None:
            g = np.zeros_like(x.value) if np.ndim(x.value) else 0.0
        out.append(g)
    return out


# -- elementary operations -------------------------------------------------


def _add(a, b):
    if not isinstance(b, Var):
        return record("add", [a], a.value + b, [1.0])
    return record("add", [a, b], a.value + b.value, [1.0, 1.0])


def _neg(a):
    return record("neg", [a], -a.value, [-1.0])


def _mul(a, b):
    if not isinstance(b, Var):
        return record("mul", [a], a.value * b, [b])
    return record("mul", [a, b], a.value * b.value, [b.value, a.value])


def _reciprocal(a):
    r = 1.0 / a.value
    return record("reciprocal", [a], r, [-r * r])


def log(x):
    v = value_of(x)
    if np.any(np.asarray(v) <= 0):
        if isinstance(x, Var):
            raise DifferentiationError("log", len(x.tape), "argument <= 0")
    return record("log", [x], np.log(v), [1.0 / v])


def exp(x):
    e = np.exp(value_of(x))
    return record("exp", [x], e, [e])


def sqrt(x):
    s = np.sqrt(value_of(x))
    return record("sqrt", [x], s, [0.5 / s])


def square(x):
    v = value_of(x)
    return record("square", [x], v * v, [2.0 * v])


def tanh(x):
    t = np.tanh(value_of(x))
    return record("tanh", [x], t, [1.0 - t * t])


def sigmoid(x):
    s = special.expit(value_of(x))
    return record("sigmoid", [x], s, [s * (1.0 - s)])


def log_sigmoid(x):
    """log(1 / (1 + exp(-x))) without overflow."""
    v = value_of(x)
    return record("log_sigmoid", [x], -np.logaddexp(0.0, -v), [special.expit(-v)])


def softplus(x):
    v = value_of(x)
    return record("softplus", [x], np.logaddexp(0.0, v), [special.expit(v)])


def lgamma(x):
    v = value_of(x)
    return record("lgamma", [x], special.gammaln(v), [special.digamma(v)])


def digamma(x):
    v = value_of(x)
    return record("digamma", [x], special.digamma(v), [special.polygamma(1, v)])


def xlogx(x):
    """x log x with 0 log 0 = 0; the partial at 0 is taken as 0."""
    v = np.asarray(value_of(x), dtype=float)
    pos = v > 0
    safe = np.where(pos, v, 1.0)
    val = np.where(pos, v * np.log(safe), 0.0)
    d = np.where(pos, np.log(safe) + 1.0, 0.0)
    if val.ndim == 0:
        val, d = float(val), float(d)
    return record("xlogx", [x], val, [d])


def minimum(x, c):
    """Elementwise min(x, c) for a constant c; subgradient 0 where x > c."""
    v = value_of(x)
    below = np.asarray(v <= c)
    val = np.where(below, v, c)
    d = below.astype(float)
    if val.ndim == 0:
        val, d = float(val), float(d)
    return record("minimum", [x], val, [d])


def where(cond, a, b):
    """Lane-wise select between two expressions; ``cond`` is a constant mask."""
    cond = np.asarray(cond, dtype=bool)
    va, vb = value_of(a), value_of(b)
    val = np.where(cond, va, vb)
    if val.ndim == 0:
        val = float(val)
    ca = cond.astype(float)
    return record("where", [a, b], val, [ca, 1.0 - ca])


def dot(a: Sequence, b: Sequence):
    """Inner product as a single n-ary node."""
    if len(a) != len(b):
        raise ValueError(f"dot: length mismatch {len(a)} vs {len(b)}")
    parents = []
    partials = []
    val = 0.0
    for x, y in zip(a, b):
        vx, vy = value_of(x), value_of(y)
        val = val + vx * vy
        parents.append(x)
        partials.append(vy)
        parents.append(y)
        partials.append(vx)
    return record("dot", parents, val, partials)


def total(xs: Iterable):
    """Sum of several expressions as a single n-ary node."""
    xs = list(xs)
    val = 0.0
    for x in xs:
        val = val + value_of(x)
    return record("sum", xs, val, [1.0] * len(xs))


def mean(x):
    """Mean over the lanes of a batched scalar."""
    v = value_of(x)
    n = np.size(v)
    return record("lane_mean", [x], float(np.mean(v)), [np.full(np.shape(v), 1.0 / n) if np.ndim(v) else 1.0])
