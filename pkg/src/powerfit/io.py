"""On-disk formats.

Model directory: ``model.json`` manifest + ``weights.bin`` (little-endian
float32, tensors concatenated in manifest order; offsets and shapes in
elements). Quantized model directory: ``qmodel.json`` + ``qweights.bin``
(little-endian int8 codes when bits_w <= 8, else int32). Scales, biases and
activation constants live in the JSON as float64 with round-trip exact
formatting. Datasets are CSV with header ``f0,...,f{d-1},label``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .fixtures import Dataset
from .inference import QuantizedModel, QuantLayer
from .model import BatchNorm, Conv2d, Dense, Model
from .quant import QuantizedTensor, Scheme, code_dtype

MODEL_FORMAT = "powerfit-model"
QMODEL_FORMAT = "powerfit-qmodel"
VERSION = 1

F32 = np.dtype("<f4")


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, fixed indentation)."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _read_json(path: Path) -> dict:
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path.name} is not UTF-8", e.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path.name}: {e.msg}", len(text[: e.pos].encode("utf-8"))) from None


def _field(d: dict, key: str, where: str):
    if key not in d:
        raise ValidationError(f"{where}.{key}", "missing field")
    return d[key]


class _Packer:
    def __init__(self, dtype):
        self.dtype = np.dtype(dtype)
        self.chunks = []
        self.offset = 0

    def add(self, arr) -> dict:
        arr = np.ascontiguousarray(arr, dtype=self.dtype)
        entry = {"offset": self.offset, "shape": list(arr.shape)}
        self.chunks.append(arr.ravel().tobytes())
        self.offset += arr.size
        return entry

    def data(self) -> bytes:
        return b"".join(self.chunks)


def _unpack(buf: bytes, dtype, entry: dict, where: str) -> np.ndarray:
    dtype = np.dtype(dtype)
    try:
        offset = int(entry["offset"])
        shape = tuple(int(s) for s in entry["shape"])
    except (KeyError, TypeError, ValueError):
        raise ValidationError(where, "tensor entry needs integer offset and shape") from None
    if offset < 0 or any(s < 0 for s in shape):
        raise ValidationError(where, "negative offset or extent")
    n = math.prod(shape)
    start, end = offset * dtype.itemsize, (offset + n) * dtype.itemsize
    if end > len(buf):
        raise ParseError(f"{where}: binary file too short ({len(buf)} bytes, need {end})", len(buf))
    return np.frombuffer(buf, dtype=dtype, count=n, offset=start).reshape(shape)


def save_model(model: Model, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pack = _Packer(F32)
    layers = []
    for layer in model.layers:
        if isinstance(layer, BatchNorm):
            entry = {
                "kind": "batchnorm",
                "eps": layer.eps,
                "tensors": {n: pack.add(getattr(layer, n)) for n in ("gamma", "beta", "mean", "var")},
            }
        else:
            entry = {"kind": "dense" if isinstance(layer, Dense) else "conv2d",
                     "tensors": {"weight": pack.add(layer.weight), "bias": pack.add(layer.bias)}}
            if isinstance(layer, Conv2d):
                entry.update(stride=layer.stride, padding=layer.padding)
        entry["activation"] = layer.activation
        layers.append(entry)
    manifest = {"format": MODEL_FORMAT, "version": VERSION, "input_shape": list(model.input_shape), "layers": layers}
    (d / "model.json").write_text(dumps(manifest))
    (d / "weights.bin").write_bytes(pack.data())


def load_model(directory) -> Model:
    d = Path(directory)
    manifest = _read_json(d / "model.json")
    if manifest.get("format") != MODEL_FORMAT:
        raise ValidationError("format", f"expected {MODEL_FORMAT!r}")
    buf = (d / "weights.bin").read_bytes()
    layers = []
    for i, entry in enumerate(_field(manifest, "layers", "model")):
        where = f"layers[{i}]"
        tensors = _field(entry, "tensors", where)
        get = lambda name: _unpack(buf, F32, _field(tensors, name, where), f"{where}.{name}").astype(np.float64)
        kind = _field(entry, "kind", where)
        act = entry.get("activation", "identity")
        if kind == "dense":
            layers.append(Dense(get("weight"), get("bias"), act))
        elif kind == "conv2d":
            layers.append(Conv2d(get("weight"), get("bias"), int(entry.get("stride", 1)), entry.get("padding", "valid"), act))
        elif kind == "batchnorm":
            layers.append(BatchNorm(get("gamma"), get("beta"), get("mean"), get("var"), act, float(entry.get("eps", 1e-5))))
        else:
            raise ValidationError(f"{where}.kind", f"unknown layer kind {kind!r}")
    return Model(layers, tuple(_field(manifest, "input_shape", "model")))


def save_qmodel(qm: QuantizedModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pack = _Packer(np.dtype(code_dtype(qm.bits_w)).newbyteorder("<"))
    layers = []
    for layer in qm.layers:
        q = layer.qweights
        layers.append({
            "kind": layer.kind,
            "stride": layer.stride,
            "padding": layer.padding,
            "activation": layer.activation,
            "input_activation": layer.input_activation,
            "input_signed": layer.input_signed,
            "a": layer.a,
            "act_range": layer.act_range,
            "act_scale": layer.act_scale,
            "zero_point": layer.zero_point,
            "scheme": q.scheme.kind,
            "axis": q.axis,
            "scales": [float(s) for s in q.scales],
            "codes": pack.add(q.codes),
            "corrected_bias": [float(b) for b in layer.corrected_bias],
        })
    manifest = {
        "format": QMODEL_FORMAT,
        "version": VERSION,
        "input_shape": list(qm.input_shape),
        "a": qm.a,
        "bits_w": qm.bits_w,
        "bits_a": qm.bits_a,
        "scheme": qm.scheme,
        "granularity": qm.granularity,
        "accumulation": qm.accumulation,
        "code_dtype": pack.dtype.name,
        "layers": layers,
    }
    (d / "qmodel.json").write_text(dumps(manifest))
    (d / "qweights.bin").write_bytes(pack.data())


def load_qmodel(directory) -> QuantizedModel:
    d = Path(directory)
    m = _read_json(d / "qmodel.json")
    if m.get("format") != QMODEL_FORMAT:
        raise ValidationError("format", f"expected {QMODEL_FORMAT!r}")
    bits_w = int(_field(m, "bits_w", "qmodel"))
    dtype = np.dtype(code_dtype(bits_w)).newbyteorder("<")
    buf = (d / "qweights.bin").read_bytes()
    layers = []
    for i, e in enumerate(_field(m, "layers", "qmodel")):
        where = f"layers[{i}]"
        kind = _field(e, "scheme", where)
        a = float(_field(e, "a", where))
        scheme = Scheme.power(a) if kind == "power" else Scheme(kind)
        codes = _unpack(buf, dtype, _field(e, "codes", where), f"{where}.codes").astype(code_dtype(bits_w))
        q = QuantizedTensor(codes, np.array(_field(e, "scales", where), dtype=np.float64), scheme, bits_w, True, e.get("axis"))
        layers.append(QuantLayer(
            q, np.array(_field(e, "corrected_bias", where), dtype=np.float64),
            _field(e, "kind", where), _field(e, "activation", where), _field(e, "input_activation", where),
            bool(_field(e, "input_signed", where)), float(_field(e, "act_range", where)),
            float(_field(e, "act_scale", where)), float(_field(e, "zero_point", where)), a,
            int(e.get("stride", 1)), e.get("padding", "valid"),
        ))
    return QuantizedModel(
        layers, tuple(_field(m, "input_shape", "qmodel")), m.get("a"), bits_w, int(_field(m, "bits_a", "qmodel")),
        m.get("scheme", "power"), m.get("granularity", "per-channel"), m.get("accumulation", "pre"),
    )


def save_dataset(ds: Dataset, path) -> None:
    d = ds.features.shape[1]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{i}" for i in range(d)] + ["label"])
    for row, label in zip(ds.features, ds.labels):
        w.writerow([repr(float(v)) for v in row] + [int(label)])
    Path(path).write_text(buf.getvalue())


def load_dataset(path, class_count=None) -> Dataset:
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    header = lines[0].decode("utf-8", "replace").strip().split(",")
    if len(header) < 2 or header[-1] != "label" or header[:-1] != [f"f{i}" for i in range(len(header) - 1)]:
        raise ParseError("dataset header must be f0,...,fd,label", 0)
    feats, labels = [], []
    offset = len(lines[0]) + 1
    for line in lines[1:]:
        if line.strip():
            cells = line.decode("utf-8", "replace").strip().split(",")
            if len(cells) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(cells)}", offset)
            try:
                feats.append([float(c) for c in cells[:-1]])
                labels.append(int(cells[-1]))
            except ValueError:
                raise ParseError("non-numeric field", offset) from None
        offset += len(line) + 1
    if not feats:
        raise ParseError("dataset has no rows", len(raw))
    labels = np.array(labels, dtype=np.int64)
    k = class_count if class_count is not None else int(labels.max()) + 1
    return Dataset(np.array(feats, dtype=np.float64), labels, k)
