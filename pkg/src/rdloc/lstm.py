"""Single-layer LSTM with exact backpropagation through time.

Gate pre-activations act on the concatenation ``[h_{t-1}, x_t]``::

    f = sigmoid(w_f [h, x] + b_f)
    i = sigmoid(w_i [h, x] + b_i)
    g = tanh(w_g [h, x] + b_g)
    o = sigmoid(w_o [h, x] + b_o)
    c' = f * c + i * g          (elementwise)
    h' = o * tanh(c')

All functions accept a leading batch axis on states and inputs; a state of
shape ``(hidden,)`` and one of shape ``(batch, hidden)`` go through the same
code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from .errors import EmptyInputError, InvalidArgumentError, ShapeError, TrainingDivergenceError

GATES = ("f", "i", "g", "o")
PARAM_ORDER = ("w_f", "b_f", "w_i", "b_i", "w_g", "b_g", "w_o", "b_o")


def sigmoid(z):
    return expit(z)


@dataclass(frozen=True)
class LstmParams:
    w_f: np.ndarray
    b_f: np.ndarray
    w_i: np.ndarray
    b_i: np.ndarray
    w_g: np.ndarray
    b_g: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float64))
        hidden, width = self.w_f.shape if self.w_f.ndim == 2 else (-1, -1)
        if hidden < 1 or width <= hidden:
            raise ShapeError(f"w_f must be hidden x (hidden + input), got {self.w_f.shape}")
        for g in GATES:
            w, b = getattr(self, f"w_{g}"), getattr(self, f"b_{g}")
            if w.shape != (hidden, width):
                raise ShapeError(f"w_{g} has shape {w.shape}, expected {(hidden, width)}")
            if b.shape != (hidden,):
                raise ShapeError(f"b_{g} has shape {b.shape}, expected {(hidden,)}")

    @property
    def hidden_size(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_f.shape[1] - self.w_f.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    @classmethod
    def from_dict(cls, d):
        return cls(**{name: d[name] for name in PARAM_ORDER})

    @classmethod
    def zeros(cls, input_size, hidden_size):
        w = np.zeros((hidden_size, hidden_size + input_size))
        b = np.zeros(hidden_size)
        return cls(w, b, w.copy(), b.copy(), w.copy(), b.copy(), w.copy(), b.copy())

    @classmethod
    def initialize(cls, input_size, hidden_size, rng: np.random.Generator, forget_bias=1.0):
        """Uniform in +-1/sqrt(hidden + input); forget bias 1, other biases 0."""
        limit = 1.0 / math.sqrt(hidden_size + input_size)
        shape = (hidden_size, hidden_size + input_size)
        d = {}
        for g in GATES:
            d[f"w_{g}"] = rng.uniform(-limit, limit, shape)
            d[f"b_{g}"] = np.full(hidden_size, forget_bias if g == "f" else 0.0)
        return cls.from_dict(d)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.as_dict().values())

    def stacked(self):
        """Gate weights stacked as (4*hidden, hidden+input) in f, i, g, o order."""
        w = np.concatenate([self.w_f, self.w_i, self.w_g, self.w_o], axis=0)
        b = np.concatenate([self.b_f, self.b_i, self.b_g, self.b_o])
        return w, b


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size, batch=None):
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass(frozen=True)
class GateActivations:
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray
    o: np.ndarray


@dataclass(frozen=True)
class Tape:
    """Everything recorded by `sequence_forward` for the backward pass.

    ``h[t]``/``c[t]`` is the state entering step t (``h[0]`` is the zero initial
    state), ``gates[t]`` holds the f, i, g, o activations of step t stacked on
    the last axis, and ``xs[t]`` is the input at step t.
    """
    xs: np.ndarray
    h: np.ndarray
    c: np.ndarray
    gates: np.ndarray
    hidden_size: int
    input_size: int

    def __len__(self):
        return self.xs.shape[0]

    def state(self, t) -> LstmState:
        return LstmState(self.h[t], self.c[t])

    def activations(self, t) -> GateActivations:
        return _split_gates(self.gates[t], self.hidden_size)


def _split_gates(a, hidden):
    return GateActivations(a[..., :hidden], a[..., hidden:2 * hidden],
                           a[..., 2 * hidden:3 * hidden], a[..., 3 * hidden:])


def _check_inputs(params: LstmParams, state: LstmState, x):
    hidden, n_in = params.hidden_size, params.input_size
    if state.h.shape[-1] != hidden or state.c.shape != state.h.shape:
        raise ShapeError(f"state shapes h={state.h.shape}, c={state.c.shape} vs hidden={hidden}")
    if x.shape[-1] != n_in or x.shape[:-1] != state.h.shape[:-1]:
        raise ShapeError(f"input shape {x.shape} incompatible with input_size={n_in}, "
                         f"state {state.h.shape}")


def _activate(z, hidden):
    a = expit(z)
    a[..., 2 * hidden:3 * hidden] = np.tanh(z[..., 2 * hidden:3 * hidden])
    return a


def cell_forward(params: LstmParams, state: LstmState, x) -> tuple[LstmState, GateActivations]:
    x = np.asarray(x, dtype=np.float64)
    _check_inputs(params, state, x)
    hidden = params.hidden_size
    w, b = params.stacked()
    z = np.concatenate([state.h, x], axis=-1) @ w.T + b
    gates = _split_gates(_activate(z, hidden), hidden)
    c = gates.f * state.c + gates.i * gates.g
    h = gates.o * np.tanh(c)
    return LstmState(h, c), gates


def sequence_forward(params: LstmParams, xs) -> tuple[LstmState, Tape]:
    """Fold the cell over ``xs`` (shape ``(T, input)`` or ``(T, batch, input)``) from a zero state."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 0 or xs.shape[0] == 0:
        raise EmptyInputError("input sequence is empty")
    if xs.ndim == 1:
        xs = xs[:, None]
    hidden = params.hidden_size
    batch_shape = xs.shape[1:-1]
    _check_inputs(params, LstmState.zeros(hidden, *batch_shape), xs[0])

    w, b = params.stacked()
    w_h, w_x = w[:, :hidden], w[:, hidden:]
    zx = xs @ w_x.T + b  # input contribution for every step at once
    n = xs.shape[0]
    h = np.zeros((n + 1, *batch_shape, hidden))
    c = np.zeros_like(h)
    gates = np.empty((n, *batch_shape, 4 * hidden))
    w_ht = np.ascontiguousarray(w_h.T)
    g4 = gates.reshape(n, *batch_shape, 4, hidden)
    f_all, i_all, g_all, o_all = (g4[..., k, :] for k in range(4))
    upd = slice(2 * hidden, 3 * hidden)
    for t in range(n):
        z = zx[t] + h[t] @ w_ht
        a = gates[t]
        expit(z, out=a)
        np.tanh(z[..., upd], out=a[..., upd])
        np.multiply(f_all[t], c[t], out=c[t + 1])
        c[t + 1] += i_all[t] * g_all[t]
        np.multiply(o_all[t], np.tanh(c[t + 1]), out=h[t + 1])
    tape = Tape(xs, h, c, gates, hidden, params.input_size)
    return LstmState(h[n], c[n]), tape


def sequence_backward(params: LstmParams, tape: Tape, grad_h_final) -> dict[str, np.ndarray]:
    """Gradients of a loss w.r.t. every parameter, given dL/dh at the last step."""
    hidden = params.hidden_size
    if tape.hidden_size != hidden or tape.input_size != params.input_size:
        raise ShapeError("tape was recorded with different parameter dimensions")
    dh = np.array(grad_h_final, dtype=np.float64)
    if dh.shape != tape.h[-1].shape:
        raise ShapeError(f"grad_h_final shape {dh.shape} != final hidden shape {tape.h[-1].shape}")

    w, _ = params.stacked()
    w_h = w[:, :hidden]
    n = len(tape)
    gates = tape.gates.reshape(n, *dh.shape[:-1], 4, hidden)
    f, i, g, o = (gates[..., k, :] for k in range(4))
    tanh_c = np.tanh(tape.c[1:])
    # local derivatives of every step, evaluated up front
    through_c = o * (1.0 - tanh_c * tanh_c)
    local_fig = np.stack([tape.c[:-1] * f * (1.0 - f), g * i * (1.0 - i), i * (1.0 - g * g)], axis=-2)
    local_o = tanh_c * o * (1.0 - o)

    dz_all = np.empty_like(tape.gates)
    dz4 = dz_all.reshape(gates.shape)
    dc = np.zeros_like(dh)
    for t in range(n - 1, -1, -1):
        dc += dh * through_c[t]
        np.multiply(dc[..., None, :], local_fig[t], out=dz4[t][..., :3, :])
        np.multiply(dh, local_o[t], out=dz4[t][..., 3, :])
        dh = dz_all[t] @ w_h
        dc *= f[t]

    # weight gradients contracted over time (and batch) in one go
    lead = tuple(range(dz_all.ndim - 1))
    dw_h = np.tensordot(dz_all, tape.h[:-1], axes=(lead, lead))
    dw_x = np.tensordot(dz_all, tape.xs, axes=(lead, lead))
    dw = np.concatenate([dw_h, dw_x], axis=1)
    db = dz_all.sum(axis=lead)

    grads = {}
    for k, gname in enumerate(GATES):
        rows = slice(k * hidden, (k + 1) * hidden)
        grads[f"w_{gname}"] = dw[rows].copy()
        grads[f"b_{gname}"] = db[rows].copy()
    return grads


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError(f"learning rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgumentError("moment decay rates must lie in [0, 1)")


@dataclass(frozen=True)
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def zeros_like(cls, params: dict):
        return cls(0, {k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def optimizer_step(params, grads, opt_state: AdamState | None = None, hyper: AdamHyper = AdamHyper()):
    """One bias-corrected adaptive-moment update.

    `params` is an LstmParams or any mapping of name -> array; the same kind is
    returned together with the new optimizer state.
    """
    as_lstm = isinstance(params, LstmParams)
    p = params.as_dict() if as_lstm else dict(params)
    if set(grads) != set(p):
        raise ShapeError(f"gradient keys {sorted(grads)} do not match parameters {sorted(p)}")
    for k, gk in grads.items():
        if np.shape(gk) != np.shape(p[k]):
            raise ShapeError(f"gradient {k} has shape {np.shape(gk)}, expected {np.shape(p[k])}")
        if not np.all(np.isfinite(gk)):
            raise TrainingDivergenceError(f"non-finite gradient in {k}")
    if opt_state is None:
        opt_state = AdamState.zeros_like(p)

    t = opt_state.step + 1
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k in p:
        g = np.asarray(grads[k], dtype=np.float64)
        m = hyper.beta1 * opt_state.m[k] + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * opt_state.v[k] + (1.0 - hyper.beta2) * g * g
        new_p[k] = p[k] - hyper.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + hyper.epsilon)
        new_m[k], new_v[k] = m, v
    state = AdamState(t, new_m, new_v)
    if as_lstm:
        return LstmParams.from_dict(new_p), state
    return new_p, state
