"""Network building blocks: LSTM layers, dense layers and dropout."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Tensor, as_tensor, concat, lstm_cell, lstm_sequence, matmul, relu
from .exceptions import DimensionError, DomainError

DROPOUT_MODES = ("train", "mc_inference", "off")


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class LstmLayer:
    """One LSTM layer with fused gate weights.

    Gate blocks are stored side by side in the order input, forget, cell
    candidate, output: ``W`` is ``(input_size, 4*hidden)``, ``U`` is
    ``(hidden, 4*hidden)`` and ``b`` is ``(4*hidden,)``.
    """

    GATES = ("i", "f", "g", "o")

    def __init__(self, input_size, hidden_size, rng=None, name="lstm"):
        if input_size < 1 or hidden_size < 1:
            raise DomainError("LSTM sizes must be positive")
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        rng = np.random.default_rng(0) if rng is None else rng
        h = self.hidden_size
        w = np.concatenate([glorot_uniform(rng, input_size, h) for _ in range(4)], axis=1)
        u = np.concatenate([glorot_uniform(rng, h, h) for _ in range(4)], axis=1)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        self.W = Tensor(w, requires_grad=True, name=f"{name}.W")
        self.U = Tensor(u, requires_grad=True, name=f"{name}.U")
        self.b = Tensor(b, requires_grad=True, name=f"{name}.b")

    def parameters(self):
        return [self.W, self.U, self.b]

    def gate(self, which):
        """Return copies ``(W_x, U_x, b_x)`` of one gate's weights."""
        k = self.GATES.index(which)
        sl = slice(k * self.hidden_size, (k + 1) * self.hidden_size)
        return self.W.data[:, sl].copy(), self.U.data[:, sl].copy(), self.b.data[sl].copy()

    def zero_state(self, batch=None):
        shape = (self.hidden_size,) if batch is None else (batch, self.hidden_size)
        return Tensor(np.zeros(shape)), Tensor(np.zeros(shape))


def lstm_step(layer: LstmLayer, x, h_prev, c_prev):
    """Advance one LSTM cell by a single timestep.

    Accepts unbatched vectors or ``(batch, size)`` matrices and returns
    ``(h, c)`` with the same leading shape.
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    if x.shape[-1] != layer.input_size:
        raise DimensionError(f"lstm_step: input {x.shape} vs input_size {layer.input_size}")
    for name, s in (("h_prev", h_prev), ("c_prev", c_prev)):
        if s.shape[-1] != layer.hidden_size or s.shape[:-1] != x.shape[:-1]:
            raise DimensionError(f"lstm_step: {name} {s.shape} does not match layer/input")
    flat = x.ndim == 1
    if flat:
        x, h_prev, c_prev = (t.reshape(1, -1) for t in (x, h_prev, c_prev))
    gates = matmul(x, layer.W) + matmul(h_prev, layer.U) + layer.b
    hc = lstm_cell(gates, c_prev)
    hdim = layer.hidden_size
    h, c = hc[:, :hdim], hc[:, hdim:]
    if flat:
        h, c = h.reshape(-1), c.reshape(-1)
    return h, c


def lstm_run(stack: Sequence[LstmLayer], sequence, states=None):
    """Run a stacked LSTM over ``sequence`` and return final ``(h, c)`` per layer.

    ``sequence`` is ``(T, m)`` or ``(batch, T, m)``; a plain ndarray input is
    treated as constant data. ``states`` optionally seeds each layer's
    ``(h, c)``; zeros otherwise.
    """
    seq = sequence.data if isinstance(sequence, Tensor) else np.asarray(sequence, dtype=np.float64)
    unbatched = seq.ndim == 2
    if unbatched:
        seq = seq[None]
    if seq.ndim != 3:
        raise DimensionError(f"lstm_run: expected (T, m) or (B, T, m), got {seq.shape}")
    batch, steps, feats = seq.shape
    if steps < 1:
        raise DomainError("lstm_run: empty sequence")
    if not stack:
        raise DomainError("lstm_run: empty layer stack")
    if feats != stack[0].input_size:
        raise DimensionError(f"lstm_run: {feats} features vs input_size {stack[0].input_size}")
    for lower, upper in zip(stack, stack[1:]):
        if upper.input_size != lower.hidden_size:
            raise DimensionError("lstm_run: layer input size must equal the previous hidden size")

    x = sequence if isinstance(sequence, Tensor) else Tensor._result(seq, (), None, "input")
    if unbatched:
        x = x.reshape(1, steps, feats)
    finals = []
    for li, layer in enumerate(stack):
        hdim = layer.hidden_size
        h0 = c0 = None
        if states is not None:
            h0, c0 = (as_tensor(s) for s in states[li])
            if h0.ndim == 1:
                h0, c0 = h0.reshape(1, hdim), c0.reshape(1, hdim)
        out = lstm_sequence(x, layer.W, layer.U, layer.b, h0, c0)
        last = out[:, steps - 1, :]
        h, c = last[:, :hdim], last[:, hdim:]
        if unbatched:
            h, c = h.reshape(hdim), c.reshape(hdim)
        finals.append((h, c))
        if li + 1 < len(stack):
            x = out[:, :, :hdim]
    return finals


def lstm_encode(stack: Sequence[LstmLayer], sequence, states=None) -> Tensor:
    """Encode a sequence into the concatenated final ``h`` and ``c`` of every layer.

    Output order is ``[h_0, c_0, h_1, c_1, ...]`` along the last axis.
    """
    finals = lstm_run(stack, sequence, states)
    return concat([t for hc in finals for t in hc], axis=-1)


@dataclass
class DenseLayer:
    W: Tensor
    b: Tensor
    activation: str = "relu"

    @classmethod
    def init(cls, n_in, n_out, rng, activation="relu", name="dense"):
        if activation not in ("relu", "identity"):
            raise DomainError(f"unknown activation {activation!r}")
        return cls(
            Tensor(glorot_uniform(rng, n_in, n_out), requires_grad=True, name=f"{name}.W"),
            Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.b"),
            activation,
        )

    @property
    def n_in(self):
        return self.W.shape[0]

    @property
    def n_out(self):
        return self.W.shape[1]

    def parameters(self):
        return [self.W, self.b]


@dataclass(frozen=True)
class DropoutSpec:
    """Dropout rate plus the mode that decides whether masks are drawn."""

    rate: float = 0.1
    mode: str = "off"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise DomainError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.mode not in DROPOUT_MODES:
            raise DomainError(f"dropout mode must be one of {DROPOUT_MODES}, got {self.mode!r}")

    @property
    def active(self):
        return self.mode != "off" and self.rate > 0.0


def dropout(x: Tensor, spec: DropoutSpec, rng) -> Tensor:
    """Inverted dropout: zero units with probability ``rate``, rescale survivors."""
    if not spec.active:
        return x
    if rng is None:
        raise DomainError("dropout needs a random generator when active")
    keep = rng.random(x.shape) >= spec.rate
    return x * (keep / (1.0 - spec.rate))


def dense_forward(net: Sequence[DenseLayer], x, dropout_spec: DropoutSpec = DropoutSpec(), rng=None) -> Tensor:
    """Apply a dense stack; dropout follows each hidden layer, never the output."""
    x = as_tensor(x)
    flat = x.ndim == 1
    if flat:
        x = x.reshape(1, -1)
    last = len(net) - 1
    for k, layer in enumerate(net):
        if x.shape[-1] != layer.n_in:
            raise DimensionError(f"dense layer {k}: input width {x.shape[-1]} vs expected {layer.n_in}")
        x = matmul(x, layer.W) + layer.b
        if layer.activation == "relu":
            x = relu(x)
        if k < last:
            x = dropout(x, dropout_spec, rng)
    return x.reshape(-1) if flat else x


def build_dense_stack(n_in, widths, n_out, rng, name):
    """Hidden ReLU layers of the given widths followed by an identity output layer."""
    layers, prev = [], n_in
    for k, w in enumerate(widths):
        layers.append(DenseLayer.init(prev, w, rng, "relu", f"{name}.{k}"))
        prev = w
    layers.append(DenseLayer.init(prev, n_out, rng, "identity", f"{name}.{len(widths)}"))
    return layers
