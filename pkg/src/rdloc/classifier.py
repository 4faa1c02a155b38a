"""Curve encoding, softmax localisation head, training loop and prediction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CoverageError, EmptyInputError, InvalidArgumentError, ShapeError,
                     TrainingDivergenceError)
from .lstm import AdamHyper, LstmParams, optimizer_step, sequence_backward, sequence_forward
from .winding import FrequencyResponse

log = logging.getLogger(__name__)

MAGNITUDE_FLOOR = 1e-300
DEFAULT_N_STEPS = 200
SPAN_RTOL = 1e-12
# deviation curves with smaller RMS (decades) count as "no deviation"
FLAT_RMS = 1e-12


@dataclass(frozen=True)
class Normalization:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std) and self.std > 0):
            raise InvalidArgumentError(f"bad normalization constants mean={self.mean}, std={self.std}")

    @classmethod
    def fit(cls, raw_sequences):
        """Constants from training sequences only (pooled over all steps)."""
        values = np.concatenate([np.ravel(s) for s in raw_sequences])
        if values.size == 0:
            raise EmptyInputError("cannot fit normalization on an empty corpus")
        std = float(values.std())
        return cls(float(values.mean()), std if std > 0 else 1.0)


@dataclass(frozen=True)
class EncodedSequence:
    steps: np.ndarray
    floored: bool = False

    def __post_init__(self):
        s = np.array(self.steps, dtype=np.float64).ravel()
        s.setflags(write=False)
        object.__setattr__(self, "steps", s)

    def __len__(self):
        return self.steps.size


def encoding_frequencies(n_steps, f_min, f_max):
    return 10.0 ** np.linspace(math.log10(f_min), math.log10(f_max), n_steps)


def resample_log_magnitude(fr: FrequencyResponse, n_steps=DEFAULT_N_STEPS, span=None):
    """log10|FR| at `n_steps` log-spaced frequencies, linear in log-frequency.

    Returns ``(values, floored)``; `floored` is set when any magnitude had to be
    raised to MAGNITUDE_FLOOR before taking the logarithm.
    """
    if int(n_steps) != n_steps or n_steps < 2:
        raise InvalidArgumentError(f"n_steps must be an integer >= 2, got {n_steps!r}")
    if len(fr.grid) < 2:
        raise EmptyInputError("curve needs at least two points to resample")
    f_min, f_max = span if span is not None else (fr.grid.f_min, fr.grid.f_max)
    if fr.grid.f_min > f_min * (1 + SPAN_RTOL) or fr.grid.f_max < f_max * (1 - SPAN_RTOL):
        raise CoverageError(
            f"curve spans [{fr.grid.f_min:.6g}, {fr.grid.f_max:.6g}] Hz but encoding needs "
            f"[{f_min:.6g}, {f_max:.6g}] Hz")
    mag = fr.magnitude
    floored = bool(np.any(~(mag > MAGNITUDE_FLOOR)))
    if floored:
        log.warning("magnitudes <= %g floored before log", MAGNITUDE_FLOOR)
        mag = np.where(mag > MAGNITUDE_FLOOR, mag, MAGNITUDE_FLOOR)
    logf = np.log10(fr.grid.points)
    target = np.linspace(math.log10(f_min), math.log10(f_max), int(n_steps))
    # clip guards the 1-ulp overshoot a float span can have against the grid ends
    target = np.clip(target, logf[0], logf[-1])
    values = np.interp(target, logf, np.log10(mag))
    return values, floored


def encode_curve(fr: FrequencyResponse, n_steps=DEFAULT_N_STEPS, norm=Normalization(), span=None,
                 reference=None, rescale=False) -> EncodedSequence:
    """Turn a frequency response into a scalar input sequence.

    The curve is resampled to `n_steps` points (log-magnitude against
    log-frequency).  With a `reference` (the healthy curve resampled the same
    way) the deviation from it is encoded instead, and with `rescale` that
    deviation is divided by its own RMS so faults of different severity share
    one scale.  Finally ``(x - mean) / std`` is applied.
    """
    values, floored = resample_log_magnitude(fr, n_steps, span)
    if reference is not None:
        reference = np.asarray(reference, dtype=np.float64)
        if reference.shape != values.shape:
            raise ShapeError(f"reference has {reference.size} steps, encoding has {values.size}")
        values = values - reference
    if rescale:
        values = rescale_deviation(values)
    return EncodedSequence((values - norm.mean) / norm.std, floored)


def rescale_deviation(values):
    rms = math.sqrt(float(np.mean(values * values)))
    if rms <= FLAT_RMS:
        return np.zeros_like(values)
    return values / rms


@dataclass(frozen=True)
class Encoding:
    """Frozen curve-encoding settings shared by training and inference."""
    n_steps: int
    f_min: float
    f_max: float
    norm: Normalization = Normalization()
    reference: np.ndarray | None = field(default=None, compare=False)
    rescale: bool = False

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise InvalidArgumentError(f"n_steps must be an integer >= 2, got {self.n_steps!r}")
        if not 0 < self.f_min < self.f_max:
            raise InvalidArgumentError(f"bad encoding span [{self.f_min}, {self.f_max}]")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "f_min", float(self.f_min))
        object.__setattr__(self, "f_max", float(self.f_max))
        if self.reference is not None:
            ref = np.array(self.reference, dtype=np.float64).ravel()
            if ref.size != self.n_steps:
                raise ShapeError(f"reference has {ref.size} steps, expected {self.n_steps}")
            ref.setflags(write=False)
            object.__setattr__(self, "reference", ref)

    def __eq__(self, other):
        if not isinstance(other, Encoding):
            return NotImplemented
        same_ref = (self.reference is None and other.reference is None) or (
            self.reference is not None and other.reference is not None
            and np.array_equal(self.reference, other.reference))
        return (same_ref and self.n_steps == other.n_steps and self.f_min == other.f_min
                and self.f_max == other.f_max and self.norm == other.norm
                and self.rescale == other.rescale)

    @property
    def span(self):
        return (self.f_min, self.f_max)

    def raw(self, fr: FrequencyResponse):
        """Resampled, referenced and rescaled values before normalization."""
        return encode_curve(fr, self.n_steps, Normalization(), self.span,
                            self.reference, self.rescale).steps

    def with_norm(self, norm: Normalization) -> "Encoding":
        return Encoding(self.n_steps, self.f_min, self.f_max, norm, self.reference, self.rescale)

    def encode(self, fr: FrequencyResponse) -> EncodedSequence:
        return encode_curve(fr, self.n_steps, self.norm, self.span, self.reference, self.rescale)


@dataclass(frozen=True)
class ClassifierHead:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"head weight {w.shape} / bias {b.shape} mismatch")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def initialize(cls, hidden_size, n_classes, rng: np.random.Generator):
        limit = 1.0 / math.sqrt(hidden_size)
        return cls(rng.uniform(-limit, limit, (n_classes, hidden_size)), np.zeros(n_classes))

    def logits(self, h):
        return h @ self.weight.T + self.bias


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _argmax_lowest(p):
    # np.argmax already returns the first maximal index
    return int(np.argmax(p))


@dataclass(frozen=True)
class Model:
    """Trained LSTM + head, with the frozen encoding used at training time."""
    lstm: LstmParams
    head: ClassifierHead
    encoding: Encoding

    def encode(self, fr: FrequencyResponse) -> EncodedSequence:
        return self.encoding.encode(fr)


def predict(params: LstmParams, head: ClassifierHead, seq, n_steps=None):
    """Return (1-based section label, probability vector)."""
    steps = seq.steps if isinstance(seq, EncodedSequence) else np.asarray(seq, dtype=np.float64)
    if n_steps is not None and steps.size != n_steps:
        raise ShapeError(f"sequence has {steps.size} steps, model expects {n_steps}")
    if head.weight.shape[1] != params.hidden_size:
        raise ShapeError("head width does not match LSTM hidden size")
    state, _ = sequence_forward(params, steps[:, None])
    p = softmax(head.logits(state.h))
    return _argmax_lowest(p) + 1, p


def predict_model(model: Model, seq):
    return predict(model.lstm, model.head, seq, model.encoding.n_steps)


@dataclass(frozen=True)
class LabeledItem:
    sequence: EncodedSequence
    label: int
    depth_mm: float


@dataclass(frozen=True)
class LabeledDataset:
    items: tuple[LabeledItem, ...]
    encoding: Encoding
    n_sections: int

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        for it in self.items:
            if len(it.sequence) != self.encoding.n_steps:
                raise ShapeError(f"item of length {len(it.sequence)} in a "
                                 f"{self.encoding.n_steps}-step dataset")
            if not 1 <= it.label <= self.n_sections:
                raise InvalidArgumentError(f"label {it.label} outside 1..{self.n_sections}")

    def __len__(self):
        return len(self.items)

    @property
    def norm(self) -> Normalization:
        return self.encoding.norm

    def inputs(self):
        """(T, batch, 1) array of all sequences."""
        return np.stack([it.sequence.steps for it in self.items], axis=1)[:, :, None]

    def labels(self):
        return np.array([it.label for it in self.items])


@dataclass(frozen=True)
class TrainHyper:
    hidden_size: int = 16
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 5000
    loss_threshold: float = 1e-4
    seed: int = 42

    def adam(self):
        return AdamHyper(self.learning_rate, self.beta1, self.beta2, self.epsilon)


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)
    converged: bool = False
    warning: str | None = None

    def append(self, epoch, loss, acc):
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.accuracies.append(acc)

    def to_csv(self) -> str:
        rows = ["epoch,loss,train_accuracy"]
        rows += [f"{e},{l!r},{a!r}" for e, l, a in zip(self.epochs, self.losses, self.accuracies)]
        return "\n".join(rows) + "\n"


def loss_and_grads(params: LstmParams, head: ClassifierHead, xs, labels):
    """Mean cross-entropy over the batch and its gradients.

    `xs` is (T, batch, input); `labels` are 0-based class indices.
    """
    state, tape = sequence_forward(params, xs)
    logits = head.logits(state.h)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    batch = xs.shape[1]
    rows = np.arange(batch)
    loss = float(-log_p[rows, labels].mean())
    p = np.exp(log_p)
    dlogits = p.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= batch
    grads = sequence_backward(params, tape, dlogits @ head.weight)
    grads["head_w"] = dlogits.T @ state.h
    grads["head_b"] = dlogits.sum(axis=0)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return loss, grads, acc


def train(dataset: LabeledDataset, hyper: TrainHyper = TrainHyper()):
    """Full-batch Adam on mean cross-entropy.

    Stops when the loss drops below ``hyper.loss_threshold`` or after
    ``hyper.max_epochs`` epochs; the latter is recorded as a warning in the log
    rather than raised.  Returns (Model, TrainingLog).
    """
    if len(dataset) == 0:
        raise EmptyInputError("training dataset is empty")
    rng = np.random.default_rng(hyper.seed)
    params = LstmParams.initialize(1, hyper.hidden_size, rng)
    head = ClassifierHead.initialize(hyper.hidden_size, dataset.n_sections, rng)
    xs = dataset.inputs()
    labels = dataset.labels() - 1
    adam = hyper.adam()

    flat = params.as_dict()
    flat["head_w"], flat["head_b"] = head.weight, head.bias
    opt = None
    tlog = TrainingLog()
    for epoch in range(1, hyper.max_epochs + 1):
        lstm_p = LstmParams.from_dict(flat)
        head = ClassifierHead(flat["head_w"], flat["head_b"])
        loss, grads, acc = loss_and_grads(lstm_p, head, xs, labels)
        if not math.isfinite(loss):
            raise TrainingDivergenceError("non-finite loss", epoch=epoch)
        tlog.append(epoch, loss, acc)
        if loss < hyper.loss_threshold:
            tlog.converged = True
            break
        try:
            flat, opt = optimizer_step(flat, grads, opt, adam)
        except TrainingDivergenceError as exc:
            raise TrainingDivergenceError(str(exc), epoch=epoch) from exc
    else:
        # final parameters after the last update
        lstm_p = LstmParams.from_dict(flat)
        head = ClassifierHead(flat["head_w"], flat["head_b"])
        tlog.warning = (f"did not converge: loss {tlog.losses[-1]:.3e} >= "
                        f"{hyper.loss_threshold:g} after {hyper.max_epochs} epochs")
        log.warning(tlog.warning)

    model = Model(lstm_p, head, dataset.encoding)
    return model, tlog
