"""
Reverse-mode automatic differentiation on a scalar tape

Every operation appends one node (op kind, parent indices, local partials,
value) to an append-only Tape, so parents always precede children and the
reverse sweep is a single pass from the root down to index 0. The module
functions (add, mul, sqrt, sigmoid, ...) accept plain floats as well as
Vars: with no Var among the operands they return a float, which lets the
EKF and alignment code run the same arithmetic with or without a tape.

Dense networks do not go through scalar nodes on the hot path. A fused
block registers a batch of output values together with a vector-Jacobian
product closure; backward seeds the closure with the outputs' adjoints and
collects named parameter-array gradients.

A full training graph for one dataset (K=100 steps, up to 5 APs per step,
fused 2x100 ranging network) stays below NODE_BUDGET_PER_DATASET nodes.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import NumericDomainError

NODE_BUDGET_PER_DATASET = 25_000

VectorJacobian = Callable[[np.ndarray], dict[str, np.ndarray]]


@dataclass
class _FusedBlock:
    indices: list[int]
    vjp: VectorJacobian


@dataclass
class Gradients:
    """Result of a reverse sweep.

    leaves maps scalar leaf index to d(root)/d(leaf); params holds the
    gradients of parameter arrays owned by fused blocks.
    """
    leaves: dict[int, float]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, key: Union["Var", int]) -> float:
        index = key.index if isinstance(key, Var) else key
        return self.leaves.get(index, 0.0)


class Tape:
    def __init__(self):
        self._kinds: list[str] = []
        self._values: list[float] = []
        self._parents: list[tuple[int, ...]] = []
        self._partials: list[tuple[float, ...]] = []
        self._leaves: list[int] = []
        self._fused: list[_FusedBlock] = []

    def __len__(self) -> int:
        return len(self._values)

    def _push(self, kind: str, value: float, parents: tuple[int, ...], partials: tuple[float, ...]) -> "Var":
        if not math.isfinite(value):
            raise NumericDomainError(f"{kind} produced non-finite value {value}", node=len(self._values))
        self._kinds.append(kind)
        self._values.append(value)
        self._parents.append(parents)
        self._partials.append(partials)
        return Var(self, len(self._values) - 1)

    def leaf(self, value: float) -> "Var":
        var = self._push("leaf", float(value), (), ())
        self._leaves.append(var.index)
        return var

    def leaves(self, values: Iterable[float]) -> list["Var"]:
        return [self.leaf(v) for v in values]

    def fused(self, values: np.ndarray, vjp: VectorJacobian, kind: str = "fused") -> list["Var"]:
        """Register a block of outputs whose gradient flows through vjp."""
        outputs = [self._push(kind, float(v), (), ()) for v in np.ravel(values)]
        self._fused.append(_FusedBlock([o.index for o in outputs], vjp))
        return outputs

    def kind(self, var: "Var") -> str:
        return self._kinds[var.index]

    def backward(self, root: "Var") -> Gradients:
        if root.tape is not self:
            raise ValueError("Root Var belongs to a different tape")
        n = root.index + 1
        adj = [0.0] * n
        adj[root.index] = 1.0
        parents, partials = self._parents, self._partials
        for i in range(root.index, -1, -1):
            g = adj[i]
            if g == 0.0:
                continue
            for p, d in zip(parents[i], partials[i]):
                adj[p] += g * d

        leaves = {i: (adj[i] if i < n else 0.0) for i in self._leaves}
        params: dict[str, np.ndarray] = {}
        for block in self._fused:
            seeds = np.array([adj[i] if i < n else 0.0 for i in block.indices])
            if not np.any(seeds):
                continue
            for name, grad in block.vjp(seeds).items():
                params[name] = params[name] + grad if name in params else np.array(grad, dtype=float)
        return Gradients(leaves=leaves, params=params)


class Var:
    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape._values[self.index]

    def __repr__(self) -> str:
        return f"Var({self.value!r}, node={self.index})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)


Scalar = Union[float, Var]


def value_of(x: Scalar) -> float:
    return x.value if isinstance(x, Var) else float(x)


def _tape_of(*args: Scalar) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("Cannot combine Vars from different tapes")
    return tape


def _node(tape: Tape, kind: str, value: float, operands: Sequence[tuple[Scalar, float]]) -> Var:
    """Push a node whose parents are the Var operands, with their partials."""
    parents = []
    partials = []
    for operand, partial in operands:
        if isinstance(operand, Var):
            parents.append(operand.index)
            partials.append(partial)
    return tape._push(kind, value, tuple(parents), tuple(partials))


def add(a: Scalar, b: Scalar) -> Scalar:
    tape = _tape_of(a, b)
    if tape is None:
        return a + b
    return _node(tape, "add", value_of(a) + value_of(b), ((a, 1.0), (b, 1.0)))


def sub(a: Scalar, b: Scalar) -> Scalar:
    tape = _tape_of(a, b)
    if tape is None:
        return a - b
    return _node(tape, "sub", value_of(a) - value_of(b), ((a, 1.0), (b, -1.0)))


def mul(a: Scalar, b: Scalar) -> Scalar:
    tape = _tape_of(a, b)
    if tape is None:
        return a * b
    av, bv = value_of(a), value_of(b)
    return _node(tape, "mul", av * bv, ((a, bv), (b, av)))


def div(a: Scalar, b: Scalar) -> Scalar:
    tape = _tape_of(a, b)
    bv = value_of(b)
    if bv == 0.0:
        raise NumericDomainError("division by zero", node=len(tape) if tape else None)
    if tape is None:
        return a / b
    av = value_of(a)
    return _node(tape, "div", av / bv, ((a, 1.0 / bv), (b, -av / (bv * bv))))


def neg(a: Scalar) -> Scalar:
    tape = _tape_of(a)
    if tape is None:
        return -a
    return _node(tape, "neg", -a.value, ((a, -1.0),))


def square(a: Scalar) -> Scalar:
    tape = _tape_of(a)
    av = value_of(a)
    if tape is None:
        return av * av
    return _node(tape, "square", av * av, ((a, 2.0 * av),))


def sqrt(a: Scalar) -> Scalar:
    tape = _tape_of(a)
    av = value_of(a)
    if av < 0.0 or (tape is not None and av == 0.0):
        raise NumericDomainError(f"sqrt of {av}", node=len(tape) if tape else None)
    root = math.sqrt(av)
    if tape is None:
        return root
    return _node(tape, "sqrt", root, ((a, 0.5 / root),))


def sigmoid(a: Scalar) -> Scalar:
    tape = _tape_of(a)
    s = float(expit(value_of(a)))
    if tape is None:
        return s
    return _node(tape, "sigmoid", s, ((a, s * (1.0 - s)),))


def max0(a: Scalar) -> Scalar:
    """max(0, a) with subgradient 0 at the kink."""
    tape = _tape_of(a)
    av = value_of(a)
    if tape is None:
        return max(0.0, av)
    return _node(tape, "max0", max(0.0, av), ((a, 1.0 if av > 0 else 0.0),))


def dot2(a: Sequence[Scalar], b: Sequence[Scalar]) -> Scalar:
    tape = _tape_of(a[0], a[1], b[0], b[1])
    a0, a1, b0, b1 = value_of(a[0]), value_of(a[1]), value_of(b[0]), value_of(b[1])
    if tape is None:
        return a0 * b0 + a1 * b1
    return _node(tape, "dot2", a0 * b0 + a1 * b1, ((a[0], b0), (a[1], b1), (b[0], a0), (b[1], a1)))


def norm2sq(a: Sequence[Scalar]) -> Scalar:
    tape = _tape_of(a[0], a[1])
    a0, a1 = value_of(a[0]), value_of(a[1])
    if tape is None:
        return a0 * a0 + a1 * a1
    return _node(tape, "norm2sq", a0 * a0 + a1 * a1, ((a[0], 2.0 * a0), (a[1], 2.0 * a1)))


def total(items: Iterable[Scalar]) -> Scalar:
    """Left-to-right sum in a single node."""
    items = list(items)
    tape = _tape_of(*items)
    value = 0.0
    for x in items:
        value += value_of(x)
    if tape is None:
        return value
    return _node(tape, "sum", value, [(x, 1.0) for x in items])
