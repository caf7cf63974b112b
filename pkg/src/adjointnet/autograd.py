"""A small dense-tensor engine with reverse-mode automatic differentiation.

Every operation on :class:`Tensor` records its inputs and a closure that maps
the output gradient to input gradients. :func:`backward` walks that graph in
reverse topological order. Values are always ``float64``.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import ContractError, DimensionError, DomainError, TrainingError

_GRAD_ENABLED = True
_ids = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Dense float64 array that optionally tracks gradients.

    Parameters
    ----------
    data : array_like
        Values; copied and cast to float64. Non-finite values are rejected.
    requires_grad : bool, default=False
        Whether ``backward`` should populate ``grad`` for this tensor.
    name : str, optional
        Label used in diagnostics and checkpoints.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "id", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.size == 0:
            raise DomainError("tensor must have at least one element")
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.id = next(_ids)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @classmethod
    def _result(cls, data, parents, backward, op):
        # Internal constructor for op outputs; skips validation on the hot path.
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.id = next(_ids)
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        out._op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor._result(self.data, (), None, "detach")

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._result(ad * bd, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return Tensor._result(ad @ bd, (a, b), backward, "matmul")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form avoids overflow in exp for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._result(out, (x,), backward, "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor._result(out, (x,), backward, "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, x.data, 0.0), (x,), backward, "relu")


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_BINARY = {"add": add, "mul": mul}


def elementwise(op: str, *inputs) -> Tensor:
    """Apply a named pointwise operation.

    Binary operations (``add``, ``mul``) accept any number of operands and fold
    left; unary ones (``sigmoid``, ``tanh``, ``relu``) take exactly one.
    """
    if op in _UNARY:
        if len(inputs) != 1:
            raise DomainError(f"{op} takes one operand, got {len(inputs)}")
        return _UNARY[op](inputs[0])
    if op in _BINARY:
        if len(inputs) < 2:
            raise DomainError(f"{op} needs at least two operands")
        shapes = {as_tensor(t).shape for t in inputs}
        if len(shapes) > 1:
            raise DimensionError(f"{op}: operand shapes differ: {sorted(shapes)}")
        out = inputs[0]
        for t in inputs[1:]:
            out = _BINARY[op](out, t)
        return out
    raise DomainError(f"unknown elementwise op {op!r}")


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / n)


def transpose(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g.T,)

    return Tensor._result(x.data.T, (x,), backward, "transpose")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(old),)

    return Tensor._result(data, (x,), backward, "reshape")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g) if _is_fancy(index) else _add_basic(full, index, g)
        return (full,)

    return Tensor._result(np.array(x.data[index]), (x,), backward, "getitem")


def _is_fancy(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _add_basic(full, index, g):
    full[index] += g


def concat(tensors: Sequence, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._result(data, ts, backward, "concat")


def rmse_loss(pred, target) -> Tensor:
    """Root mean squared error as a scalar tensor.

    The gradient at ``pred == target`` is defined as zero.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"rmse_loss: pred {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise DomainError("rmse_loss of empty input")
    resid = pred.data - target.data
    n = resid.size
    value = np.sqrt(np.mean(resid * resid))

    def backward(g):
        if value == 0.0:
            z = np.zeros_like(resid)
            return z, z
        d = g * resid / (n * value)
        return d, -d

    return Tensor._result(np.asarray(value), (pred, target), backward, "rmse")


def lstm_cell(gates, c_prev) -> Tensor:
    """Fused LSTM state update.

    ``gates`` holds pre-activations ``[i | f | g | o]`` with shape
    ``(batch, 4*hidden)``. Returns ``concat(h, c)`` with shape
    ``(batch, 2*hidden)``.
    """
    gates, c_prev = as_tensor(gates), as_tensor(c_prev)
    hdim = c_prev.shape[-1]
    if gates.shape[-1] != 4 * hdim or gates.shape[:-1] != c_prev.shape[:-1]:
        raise DimensionError(f"lstm_cell: gates {gates.shape} vs state {c_prev.shape}")
    z = gates.data
    i = 0.5 * (1.0 + np.tanh(0.5 * z[..., :hdim]))
    f = 0.5 * (1.0 + np.tanh(0.5 * z[..., hdim:2 * hdim]))
    gg = np.tanh(z[..., 2 * hdim:3 * hdim])
    o = 0.5 * (1.0 + np.tanh(0.5 * z[..., 3 * hdim:]))
    cp = c_prev.data
    c = f * cp + i * gg
    tc = np.tanh(c)
    h = o * tc

    def backward(grad):
        dh = grad[..., :hdim]
        dc = grad[..., hdim:] + dh * o * (1.0 - tc * tc)
        dgates = np.concatenate(
            [
                dc * gg * i * (1.0 - i),
                dc * cp * f * (1.0 - f),
                dc * i * (1.0 - gg * gg),
                dh * tc * o * (1.0 - o),
            ],
            axis=-1,
        )
        return dgates, dc * f

    return Tensor._result(np.concatenate([h, c], axis=-1), (gates, c_prev), backward, "lstm_cell")


def lstm_sequence(x, W, U, b, h0=None, c0=None) -> Tensor:
    """Run one LSTM layer over a whole batch of sequences as a single primitive.

    ``x`` is ``(batch, T, m)``. Returns ``(batch, T, 2*hidden)`` holding
    ``[h_t | c_t]`` for every step. Backward is hand-written truncation-free
    BPTT, so the graph holds one node per layer instead of one per step.
    """
    x, W, U, b = (as_tensor(t) for t in (x, W, U, b))
    batch, steps, m = x.shape
    hdim = U.shape[0]
    if W.shape != (m, 4 * hdim) or U.shape != (hdim, 4 * hdim) or b.shape != (4 * hdim,):
        raise DimensionError(f"lstm_sequence: x {x.shape}, W {W.shape}, U {U.shape}, b {b.shape}")
    h0 = Tensor._result(np.zeros((batch, hdim)), (), None, "zeros") if h0 is None else as_tensor(h0)
    c0 = Tensor._result(np.zeros((batch, hdim)), (), None, "zeros") if c0 is None else as_tensor(c0)
    if h0.shape != (batch, hdim) or c0.shape != (batch, hdim):
        raise DimensionError(f"lstm_sequence: initial state {h0.shape}/{c0.shape} vs ({batch}, {hdim})")

    xd, Ud = x.data, U.data
    # Time-major buffers keep every per-step slice contiguous.
    proj = (np.ascontiguousarray(xd.transpose(1, 0, 2)).reshape(steps * batch, m) @ W.data)
    proj = proj.reshape(steps, batch, 4 * hdim) + b.data
    # sigmoid(z) = 0.5 + 0.5*tanh(z/2), so one tanh call serves all four gates.
    scale = np.full(4 * hdim, 0.5)
    scale[2 * hdim:3 * hdim] = 1.0
    shift = np.full(4 * hdim, 0.5)
    shift[2 * hdim:3 * hdim] = 0.0
    acts = np.empty((steps, batch, 4 * hdim))
    hs = np.empty((steps + 1, batch, hdim))
    cs = np.empty((steps + 1, batch, hdim))
    tcs = np.empty((steps, batch, hdim))
    hs[0], cs[0] = h0.data, c0.data
    for t in range(steps):
        a = acts[t]
        np.matmul(hs[t], Ud, out=a)
        a += proj[t]
        a *= scale
        np.tanh(a, out=a)
        a *= scale
        a += shift
        np.multiply(a[:, hdim:2 * hdim], cs[t], out=cs[t + 1])
        cs[t + 1] += a[:, :hdim] * a[:, 2 * hdim:3 * hdim]
        np.tanh(cs[t + 1], out=tcs[t])
        np.multiply(a[:, 3 * hdim:], tcs[t], out=hs[t + 1])
    out = np.concatenate([hs[1:], cs[1:]], axis=-1).transpose(1, 0, 2)

    def backward(grad):
        gt = grad.transpose(1, 0, 2)
        # d act / d z: a(1-a) for sigmoid blocks, (1-a)(1+a) for the tanh block
        deriv = (1.0 - acts) * (acts + (1.0 - shift * 2.0))
        dz = np.empty_like(acts)
        dh_next = np.zeros((batch, hdim))
        dc_next = np.zeros((batch, hdim))
        for t in range(steps - 1, -1, -1):
            a = acts[t]
            tc = tcs[t]
            dh = gt[t, :, :hdim] + dh_next
            dc = gt[t, :, hdim:] + dc_next
            dc += dh * a[:, 3 * hdim:] * (1.0 - tc * tc)
            d = dz[t]
            np.multiply(dc, a[:, 2 * hdim:3 * hdim], out=d[:, :hdim])
            np.multiply(dc, cs[t], out=d[:, hdim:2 * hdim])
            np.multiply(dc, a[:, :hdim], out=d[:, 2 * hdim:3 * hdim])
            np.multiply(dh, tc, out=d[:, 3 * hdim:])
            d *= deriv[t]
            dh_next = d @ Ud.T
            dc_next = dc * a[:, hdim:2 * hdim]
        dz2 = dz.reshape(steps * batch, 4 * hdim)
        dx = (dz2 @ W.data.T).reshape(steps, batch, m).transpose(1, 0, 2)
        x2 = np.ascontiguousarray(xd.transpose(1, 0, 2)).reshape(steps * batch, m)
        dW = x2.T @ dz2
        dU = hs[:-1].reshape(steps * batch, hdim).T @ dz2
        db = dz2.sum(axis=0)
        return dx, dW, dU, db, dh_next, dc_next

    return Tensor._result(out, (x, W, U, b, h0, c0), backward, "lstm_sequence")


@dataclass(frozen=True)
class OpRecord:
    """One recorded primitive: operation name, input ids and output id."""

    op: str
    inputs: tuple
    output: int


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def trace(loss: Tensor) -> list:
    """Return the recorded computation feeding ``loss`` in topological order."""
    return [
        OpRecord(n._op, tuple(p.id for p in n._parents), n.id)
        for n in _topological(loss)
    ]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every leaf requiring grad."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    grads = {loss.id: np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg


class Adam:
    """Adaptive-moment gradient descent.

    Gradients are read but never cleared; call :meth:`zero_grad` between steps.
    """

    def __init__(self, params: Iterable[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for k, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"parameter {p.name or k!r} has no gradient")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def optimizer_step(state: Adam, params: Sequence[Tensor] | None = None) -> None:
    """Apply one update of ``state`` to ``params`` (defaults to its own list)."""
    if params is not None and [id(p) for p in params] != [id(p) for p in state.params]:
        raise ContractError("optimizer state was built for a different parameter list")
    state.step()


def count_parameters(params: Iterable[Tensor]) -> int:
    return int(sum(p.data.size for p in params))


def assert_finite(params: Iterable[Tensor], epoch=None) -> None:
    """Raise :class:`TrainingError` if any parameter went non-finite."""
    for p in params:
        if not np.all(np.isfinite(p.data)):
            raise TrainingError(f"parameter {p.name!r} became non-finite", epoch)


def numerical_grad(f: Callable[[], float], x: Tensor, h=1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` w.r.t. ``x.data``."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f()
        flat[k] = orig - h
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2 * h)
    return grad
