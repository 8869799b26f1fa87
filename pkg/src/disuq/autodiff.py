"""Reverse-mode automatic differentiation on dense float64 arrays.

A ``Tensor`` wraps a numpy array; every primitive records a graph node so
``backward`` can push gradients to the leaves by the chain rule. The
primitive set is exactly what a dense Bayesian regression stack needs:
elementwise arithmetic with broadcasting, matmul, exp/log/sqrt/square,
tanh, SELU, softplus, axis reductions, batch normalization (built from
the primitives), and reparameterized Gaussian sampling with the noise
recorded as a constant.

Graphs are rebuilt per call (define-by-run) and never cached. Everything
is float64; there is no device or precision story by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, ShapeError

SELU_SCALE = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Node:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("values", "requires_grad", "grad", "node")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operators (scalars and ndarrays are lifted to constants)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def square(self):
        return square(self)

    def tanh(self):
        return tanh(self)

    def selu(self):
        return selu(self)

    def softplus(self, beta: float = 1.0):
        return softplus(self, beta)

    def clamp_min(self, floor: float):
        return clamp_min(self, floor)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def broadcast_to(self, shape):
        return broadcast_to(self, shape)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, out_values: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(out_values)
    if _grad_enabled and any(t.requires_grad or t.node is not None for t in inputs):
        out.requires_grad = any(t.requires_grad for t in inputs)
        out.node = Node(op, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _first_bad_index(mask: np.ndarray):
    return tuple(int(i) for i in np.argwhere(mask)[0])


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise("add", a, b)
    out = a.values + b.values

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", out, (a, b), backward)


def subtract(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise("subtract", a, b)
    out = a.values - b.values

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("subtract", out, (a, b), backward)


def multiply(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise("multiply", a, b)
    out = a.values * b.values

    def backward(g):
        return (_unbroadcast(g * b.values, a.shape),
                _unbroadcast(g * a.values, b.shape))

    return _make("multiply", out, (a, b), backward)


def divide(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise("divide", a, b)
    if np.any(b.values == 0.0):
        idx = _first_bad_index(b.values == 0.0)
        raise DomainError(f"divide: zero divisor at index {idx}")
    out = a.values / b.values

    def backward(g):
        return (_unbroadcast(g / b.values, a.shape),
                _unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return _make("divide", out, (a, b), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def exp(a) -> Tensor:
    a = _lift(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.values)
    if not np.all(np.isfinite(out)):
        idx = _first_bad_index(~np.isfinite(out))
        raise DomainError(f"exp: overflow at index {idx} (input {a.values[idx]})")

    def backward(g):
        return (g * out,)

    return _make("exp", out, (a,), backward)


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.values <= 0.0):
        idx = _first_bad_index(a.values <= 0.0)
        raise DomainError(f"log: non-positive input {a.values[idx]} at index {idx}")
    out = np.log(a.values)

    def backward(g):
        return (g / a.values,)

    return _make("log", out, (a,), backward)


def sqrt(a) -> Tensor:
    a = _lift(a)
    if np.any(a.values < 0.0):
        idx = _first_bad_index(a.values < 0.0)
        raise DomainError(f"sqrt: negative input {a.values[idx]} at index {idx}")
    out = np.sqrt(a.values)

    def backward(g):
        return (g * 0.5 / out,)

    return _make("sqrt", out, (a,), backward)


def square(a) -> Tensor:
    a = _lift(a)
    out = a.values * a.values

    def backward(g):
        return (g * 2.0 * a.values,)

    return _make("square", out, (a,), backward)


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.values)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make("tanh", out, (a,), backward)


def _selu_grad(x: np.ndarray) -> np.ndarray:
    """SELU derivative; the value at exactly 0 is the right-hand limit."""
    return np.where(x >= 0.0, SELU_SCALE,
                    SELU_SCALE * SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def selu(a) -> Tensor:
    a = _lift(a)
    x = a.values
    out = np.where(x >= 0.0, SELU_SCALE * x,
                   SELU_SCALE * SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))

    def backward(g):
        return (g * _selu_grad(x),)

    return _make("selu", out, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a, beta: float = 1.0) -> Tensor:
    a = _lift(a)
    beta = float(beta)
    if beta <= 0.0:
        raise DomainError("softplus: beta must be positive")
    out = np.logaddexp(0.0, beta * a.values) / beta

    def backward(g):
        return (g * _sigmoid(beta * a.values),)

    return _make("softplus", out, (a,), backward)


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient is zero where the floor binds."""
    a = _lift(a)
    floor = float(floor)
    out = np.maximum(a.values, floor)
    pass_mask = a.values > floor

    def backward(g):
        return (g * pass_mask,)

    return _make("clamp_min", out, (a,), backward)


# ---------------------------------------------------------------------------
# matmul, reductions, shape ops


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    out = av @ bv

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return g @ bv.T, np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g * bv, g * av  # 1-D dot product, g is scalar

    return _make("matmul", out, (a, b), backward)


def _normalize_axis(axis, ndim: int):
    if axis is None:
        return None
    axis = int(axis)
    if not -ndim <= axis < ndim:
        raise ShapeError(f"reduction axis {axis} out of range for ndim {ndim}")
    return axis % ndim if axis < 0 else axis


def reduce_sum(a, axis=None) -> Tensor:
    a = _lift(a)
    axis = _normalize_axis(axis, a.ndim)
    out = a.values.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make("sum", out, (a,), backward)


def reduce_mean(a, axis=None) -> Tensor:
    a = _lift(a)
    axis = _normalize_axis(axis, a.ndim)
    count = a.size if axis is None else a.shape[axis]
    out = a.values.mean(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy(),)

    return _make("mean", out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None

    def backward(g):
        return (g.reshape(a.shape),)

    return _make("reshape", out, (a,), backward)


def broadcast_to(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(a.values, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None

    def backward(g):
        return (_unbroadcast(g, a.shape),)

    return _make("broadcast_to", out, (a,), backward)


def gaussian_sample(mean, std, eps: np.ndarray) -> Tensor:
    """Reparameterized draw mean + std * eps with eps a recorded constant."""
    eps = np.asarray(eps, dtype=np.float64)
    return add(mean, multiply(std, Tensor(eps)))


# ---------------------------------------------------------------------------
# batch normalization (composed from the primitives above)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Batch-statistics normalization.

    Returns the normalized tensor plus the batch mean and the unbiased
    batch variance as plain arrays for running-statistics updates.
    """
    if x.ndim != 2:
        raise ShapeError(f"batch_norm_train: expected 2-D input, got {x.shape}")
    n = x.shape[0]
    mu = reduce_mean(x, axis=0)
    xc = subtract(x, mu)
    var = reduce_mean(square(xc), axis=0)
    out = add(multiply(divide(xc, sqrt(add(var, eps))), gamma), beta)
    bessel = n / (n - 1) if n > 1 else 1.0
    return out, mu.values.copy(), var.values * bessel


def batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor,
                    running_mean: np.ndarray, running_var: np.ndarray,
                    eps: float = 1e-5) -> Tensor:
    """Affine normalization with frozen running statistics."""
    scale = 1.0 / np.sqrt(running_var + eps)
    return add(multiply(subtract(x, Tensor(running_mean)), multiply(Tensor(scale), gamma)), beta)


# ---------------------------------------------------------------------------
# primitive registry (string-tag dispatch used by self tests)

PRIMITIVES = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "divide": divide,
    "matmul": matmul,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "square": square,
    "tanh": tanh,
    "selu": selu,
    "softplus": softplus,
    "clamp_min": clamp_min,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "reshape": reshape,
    "broadcast_to": broadcast_to,
    "gaussian_sample": gaussian_sample,
}


def apply_primitive(op_tag: str, *inputs, **kwargs) -> Tensor:
    if op_tag not in PRIMITIVES:
        raise ContractError(f"unknown primitive '{op_tag}'")
    return PRIMITIVES[op_tag](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward pass


def topo_order(root: Tensor) -> list[Tensor]:
    """Tensors reachable from root, children before parents, each once."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every requires_grad leaf.

    Repeated calls without zero_grad add gradients. The root must be a
    scalar (a one-element tensor of any shape).
    """
    if root.values.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    order = topo_order(root)
    flowing: dict[int, np.ndarray] = {id(root): np.ones_like(root.values)}
    for t in reversed(order):
        g = flowing.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            if t.grad is None:
                t.grad = g.copy()
            else:
                t.grad = t.grad + g
        if t.node is None:
            continue
        input_grads = t.node.backward_fn(g)
        for parent, pg in zip(t.node.inputs, input_grads):
            if not (parent.requires_grad or parent.node is not None):
                continue
            if id(parent) in flowing:
                flowing[id(parent)] = flowing[id(parent)] + pg
            else:
                flowing[id(parent)] = pg


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    max_abs_err: float


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def __str__(self) -> str:
        lines = [f"gradient check: max rel err {self.max_rel_err:.3e} "
                 f"vs tolerance {self.tolerance:.1e} -> "
                 f"{'PASS' if self.passed else 'FAIL'}"]
        for e in self.entries:
            lines.append(f"  {e.name}: rel {e.max_rel_err:.3e} abs {e.max_abs_err:.3e}")
        return "\n".join(lines)


def gradient_check(build_scalar, params: dict[str, Tensor],
                   tolerance: float = 1e-6, step: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``build_scalar`` must rebuild the same scalar from the current values
    of ``params`` on every call; stochastic graphs must replay a frozen
    noise bank. Non-determinism is detected and rejected.

    The relative error denominator is floored at 0.01 so that
    finite-difference noise on near-zero gradients does not register as
    failure.
    """
    y1 = build_scalar()
    y2 = build_scalar()
    if not np.array_equal(y1.values, y2.values):
        raise ContractError("gradient_check: builder is not deterministic "
                            "(freeze sampling noise before checking)")

    for p in params.values():
        p.zero_grad()
    backward(build_scalar())
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
                for name, p in params.items()}

    report = GradCheckReport(tolerance=tolerance, step=step)
    for name, p in params.items():
        flat = p.values.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = build_scalar().item()
            flat[i] = keep - step
            down = build_scalar().item()
            flat[i] = keep
            fd[i] = (up - down) / (2.0 * step)
        ad = analytic[name].reshape(-1)
        abs_err = np.abs(ad - fd)
        denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), 1e-2)
        rel_err = abs_err / denom
        report.entries.append(GradCheckEntry(
            name=name,
            max_rel_err=float(rel_err.max()) if rel_err.size else 0.0,
            max_abs_err=float(abs_err.max()) if abs_err.size else 0.0,
        ))
    return report
