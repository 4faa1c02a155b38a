"""On-disk formats: curve CSV, model checkpoints, datasets and config files.

Checkpoint layout (little-endian)::

    8s   magic b"RDLSTMCK"
    u32  format version
    u32  input size, hidden size, classes, encoding steps
    u32  flags (bit 0: healthy reference stored, bit 1: per-curve rescale)
    f64  encoding f_min, f_max
    f64  w_f, b_f, w_i, b_i, w_g, b_g, w_o, b_o, head weight, head bias (row-major)
    f64  normalization mean, std
    f64  reference values (only when flag bit 0 is set)
"""

from __future__ import annotations

import configparser
import hashlib
import math
import struct
from pathlib import Path

import numpy as np

from .classifier import (ClassifierHead, EncodedSequence, Encoding, LabeledDataset, LabeledItem,
                         Model, Normalization)
from .errors import CheckpointError, ParseError
from .lstm import PARAM_ORDER, LstmParams
from .winding import FaultSpec, FrequencyGrid, FrequencyResponse, WindingModel

CHECKPOINT_MAGIC = b"RDLSTMCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIII dd")
_FLAG_REFERENCE = 1
_FLAG_RESCALE = 2

CURVE_HEADER = "frequency_hz,magnitude"


def fmt(x) -> str:
    return format(float(x), ".17g")


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# -- curves ------------------------------------------------------------------

def curve_to_csv(fr: FrequencyResponse) -> str:
    lines = [CURVE_HEADER]
    lines += [f"{fmt(f)},{fmt(m)}" for f, m in zip(fr.grid.points, fr.magnitude)]
    return "\n".join(lines) + "\n"


def write_curve(path, fr: FrequencyResponse):
    Path(path).write_text(curve_to_csv(fr))


def parse_curve(text: str) -> FrequencyResponse:
    lines = text.splitlines()
    if not lines or lines[0].strip().replace(" ", "") != CURVE_HEADER:
        raise ParseError(f"expected header {CURVE_HEADER!r}", line=1)
    freqs, mags = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"expected 2 columns, got {len(parts)}", line=lineno)
        try:
            f, m = float(parts[0]), float(parts[1])
        except ValueError:
            raise ParseError(f"not a number: {line.strip()!r}", line=lineno) from None
        if not (math.isfinite(f) and math.isfinite(m)) or f <= 0 or m < 0:
            raise ParseError(f"invalid point ({parts[0].strip()}, {parts[1].strip()})", line=lineno)
        if freqs and f <= freqs[-1]:
            raise ParseError("frequencies must be strictly increasing", line=lineno)
        freqs.append(f)
        mags.append(m)
    if not freqs:
        raise ParseError("no data rows", line=len(lines) + 1)
    return FrequencyResponse(FrequencyGrid(np.array(freqs)), np.array(mags))


def read_curve(path) -> FrequencyResponse:
    return parse_curve(Path(path).read_text())


# -- checkpoints -------------------------------------------------------------

def checkpoint_bytes(model: Model) -> bytes:
    p, head, enc = model.lstm, model.head, model.encoding
    flags = (_FLAG_REFERENCE if enc.reference is not None else 0) | (_FLAG_RESCALE if enc.rescale else 0)
    out = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, p.input_size, p.hidden_size,
                        head.n_classes, enc.n_steps, flags, enc.f_min, enc.f_max)]
    arrays = [getattr(p, name) for name in PARAM_ORDER] + [head.weight, head.bias,
                                                           np.array([enc.norm.mean, enc.norm.std])]
    if enc.reference is not None:
        arrays.append(enc.reference)
    out += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays]
    return b"".join(out)


def checkpoint_from_bytes(data: bytes) -> Model:
    if len(data) < _HEADER.size:
        raise CheckpointError("checkpoint truncated (header)")
    magic, version, n_in, hidden, classes, n_steps, flags, f_min, f_max = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    shapes = []
    for name in PARAM_ORDER:
        shapes.append((hidden, hidden + n_in) if name.startswith("w") else (hidden,))
    shapes += [(classes, hidden), (classes,), (2,)]
    if flags & _FLAG_REFERENCE:
        shapes.append((n_steps,))
    need = _HEADER.size + 8 * sum(math.prod(s) for s in shapes)
    if len(data) != need:
        raise CheckpointError(f"checkpoint has {len(data)} bytes, expected {need}")
    arrays, pos = [], _HEADER.size
    for s in shapes:
        n = math.prod(s)
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(s))
        pos += 8 * n
    lstm = LstmParams(*arrays[:8])
    head = ClassifierHead(arrays[8], arrays[9])
    norm = Normalization(float(arrays[10][0]), float(arrays[10][1]))
    reference = arrays[11] if flags & _FLAG_REFERENCE else None
    enc = Encoding(n_steps, f_min, f_max, norm, reference, bool(flags & _FLAG_RESCALE))
    return Model(lstm, head, enc)


def save_checkpoint(path, model: Model) -> bytes:
    data = checkpoint_bytes(model)
    Path(path).write_bytes(data)
    return data


def load_checkpoint(path) -> Model:
    return checkpoint_from_bytes(Path(path).read_bytes())


# -- datasets ----------------------------------------------------------------

def _encoding_text(enc: Encoding, n_sections: int) -> str:
    lines = [
        f"n_sections={n_sections}",
        f"n_steps={enc.n_steps}",
        f"f_min={fmt(enc.f_min)}",
        f"f_max={fmt(enc.f_max)}",
        f"mean={fmt(enc.norm.mean)}",
        f"std={fmt(enc.norm.std)}",
        f"rescale={'true' if enc.rescale else 'false'}",
        "reference=" + ("none" if enc.reference is None else ",".join(fmt(v) for v in enc.reference)),
    ]
    return "\n".join(lines) + "\n"


def _items_csv(ds: LabeledDataset) -> str:
    head = "label,depth_mm," + ",".join(f"x{k}" for k in range(ds.encoding.n_steps))
    rows = [head] + [f"{it.label},{fmt(it.depth_mm)}," + ",".join(fmt(v) for v in it.sequence.steps)
                     for it in ds.items]
    return "\n".join(rows) + "\n"


def write_dataset(directory, train: LabeledDataset, test: LabeledDataset):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "encoding.txt").write_text(_encoding_text(train.encoding, train.n_sections))
    (d / "train.csv").write_text(_items_csv(train))
    (d / "test.csv").write_text(_items_csv(test))


def _parse_encoding(text: str):
    kv = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", line=lineno)
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    try:
        ref = None if kv["reference"] == "none" else np.array([float(v) for v in kv["reference"].split(",")])
        enc = Encoding(int(kv["n_steps"]), float(kv["f_min"]), float(kv["f_max"]),
                       Normalization(float(kv["mean"]), float(kv["std"])), ref,
                       kv["rescale"] == "true")
        return enc, int(kv["n_sections"])
    except KeyError as exc:
        raise ParseError(f"encoding.txt is missing {exc.args[0]!r}") from None


def _parse_items(text: str, n_steps: int):
    lines = text.splitlines()
    items = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != n_steps + 2:
            raise ParseError(f"expected {n_steps + 2} columns, got {len(parts)}", line=lineno)
        try:
            items.append(LabeledItem(EncodedSequence([float(v) for v in parts[2:]]),
                                     int(parts[0]), float(parts[1])))
        except ValueError:
            raise ParseError("malformed row", line=lineno) from None
    return items


def read_dataset(directory):
    d = Path(directory)
    enc, n_sections = _parse_encoding((d / "encoding.txt").read_text())
    train = LabeledDataset(_parse_items((d / "train.csv").read_text(), enc.n_steps), enc, n_sections)
    test = LabeledDataset(_parse_items((d / "test.csv").read_text(), enc.n_steps), enc, n_sections)
    return train, test


# -- config ------------------------------------------------------------------

def _floats(value: str):
    return [float(v) for v in value.replace(",", " ").split()]


def read_config(path_or_text, is_text=False) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        if is_text:
            cp.read_string(path_or_text)
        else:
            with open(path_or_text) as fh:
                cp.read_file(fh)
    except configparser.Error as exc:
        raise ParseError(f"config: {exc}") from None
    return cp


def model_from_config(cp, base: WindingModel) -> WindingModel:
    """Model from the ``[model]`` section; missing keys keep `base` values.

    Per-section keys take either a single value (applied to every section) or
    one value per section.
    """
    if not cp.has_section("model"):
        return base
    sec = cp["model"]
    try:
        n = int(sec.get("n_sections", base.n_sections))
        fields = {}
        for key in ("series_inductance", "series_resistance", "series_capacitance", "ground_capacitance"):
            if key in sec:
                vals = _floats(sec[key])
            else:
                vals = list(getattr(base, key))
                if len(set(vals)) == 1:
                    vals = vals[:1]
            if len(vals) == 1:
                vals = vals * n
            if len(vals) != n:
                raise ParseError(f"[model] {key}: {len(vals)} values for {n} sections")
            fields[key] = tuple(vals)
        return WindingModel(
            measurement_resistance=float(sec.get("measurement_resistance", base.measurement_resistance)),
            beta_per_mm=float(sec.get("beta_per_mm", base.beta_per_mm)),
            **fields,
        )
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"[model] {exc}") from None


def fault_from_config(cp) -> FaultSpec | None:
    if not cp.has_section("fault"):
        return None
    sec = cp["fault"]
    try:
        return FaultSpec(int(sec.get("section", "1")), float(sec.get("depth_mm", "0")))
    except ValueError as exc:
        raise ParseError(f"[fault] {exc}") from None
