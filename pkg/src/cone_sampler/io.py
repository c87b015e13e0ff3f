"""On-disk formats.

* Embeddings: NPY v1.0, little-endian float32, C order, shape ``(N, d)``.
  The header is space-padded so the payload starts on a 128-byte boundary.
* Labels: one base-10 integer per line, UTF-8, LF terminated.
* Attributes: CSV with a header row of channel names, one row per sample.
* Reports: JSON; floats carry 17 significant digits, undefined metrics null.
* Histograms: CSV ``bin_lo,bin_hi,genuine_count,impostor_count``.
"""
import ast
import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import InputFormatError
from .metrics import AttributeTable
from .pipeline import LabeledEmbeddingSet

NPY_MAGIC = b"\x93NUMPY"
HEADER_ALIGN = 128
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def npy_header(shape, descr="<f4"):
    """Full v1.0 preamble (magic, version, length, padded dict) for ``shape``."""
    body = "{'descr': '%s', 'fortran_order': False, 'shape': %r, }" % (descr, tuple(int(s) for s in shape))
    prefix = len(NPY_MAGIC) + 4
    total = -(-(prefix + len(body) + 1) // HEADER_ALIGN) * HEADER_ALIGN
    body = body.ljust(total - prefix - 1) + "\n"
    if len(body) > 0xFFFF:
        raise ValueError("header too long for NPY v1.0")
    return NPY_MAGIC + b"\x01\x00" + len(body).to_bytes(2, "little") + body.encode("latin1")


def write_array(path, array):
    """Write a 2-D array as float32 NPY with deterministic bytes."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(npy_header(arr.shape))
        fh.write(arr.tobytes())


def read_array(path):
    """Parse a 2-D float NPY v1.0 file, reporting problems with byte offsets."""
    raw = Path(path).read_bytes()
    if raw[:6] != NPY_MAGIC:
        raise InputFormatError("bad-magic", f"{path}: bytes 0-5 are {raw[:6]!r}, expected {NPY_MAGIC!r}")
    if len(raw) < 10:
        raise InputFormatError("truncated-header", f"{path}: file ends at byte {len(raw)} inside the preamble")
    if raw[6:8] != b"\x01\x00":
        raise InputFormatError("unsupported-version", f"{path}: byte 6 holds version {raw[6]}.{raw[7]}, need 1.0")
    hlen = int.from_bytes(raw[8:10], "little")
    start = 10 + hlen
    if len(raw) < start:
        raise InputFormatError("truncated-header", f"{path}: header claims {hlen} bytes from offset 10, file has {len(raw)}")
    try:
        header = ast.literal_eval(raw[10:start].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise InputFormatError("malformed-header", f"{path}: header dict at byte 10 does not parse ({exc})")
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise InputFormatError("malformed-header", f"{path}: header at byte 10 must have descr, fortran_order and shape")
    if header["descr"] not in _DTYPES:
        raise InputFormatError("unsupported-dtype", f"{path}: descr {header['descr']!r}, expected '<f4'")
    if header["fortran_order"]:
        raise InputFormatError("fortran-order", f"{path}: Fortran-ordered arrays are not supported")
    shape = header["shape"]
    if not (isinstance(shape, tuple) and len(shape) == 2 and all(isinstance(s, int) and s >= 0 for s in shape)):
        raise InputFormatError("bad-shape", f"{path}: shape {shape!r} is not a 2-D (N, d) tuple")
    dtype = _DTYPES[header["descr"]]
    expected = shape[0] * shape[1] * dtype.itemsize
    if len(raw) - start != expected:
        raise InputFormatError(
            "payload-size-mismatch",
            f"{path}: payload at byte {start} has {len(raw) - start} bytes, shape {shape} needs {expected}",
        )
    if shape[1] < 2:
        raise InputFormatError("dimension-too-small", f"{path}: d={shape[1]}, need d >= 2")
    arr = np.frombuffer(raw, dtype=dtype, offset=start).reshape(shape)
    finite = np.isfinite(arr)
    if not finite.all():
        flat = int(np.flatnonzero(~finite.ravel())[0])
        raise InputFormatError(
            "non-finite-value",
            f"{path}: non-finite value at row {flat // shape[1]}, byte {start + flat * dtype.itemsize}",
        )
    return arr


def read_labels(path, expected=None):
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    labels = []
    for lineno, line in enumerate(lines, 1):
        try:
            labels.append(int(line.strip()))
        except ValueError:
            raise InputFormatError("bad-label", f"{path}:{lineno}: {line!r} is not an integer")
    if expected is not None and len(labels) != expected:
        raise InputFormatError("label-count-mismatch", f"{path}: {len(labels)} labels for {expected} embeddings")
    return np.array(labels, dtype=np.int64)


def write_labels(path, labels):
    labels = np.asarray(labels, dtype=np.int64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"{int(v)}\n" for v in labels))


def labels_path_for(path):
    return Path(path).with_suffix(".labels")


def read_embeddings(path, labels_path=None):
    """Load embeddings and labels; rows are renormalized to unit length in float64."""
    arr = read_array(path)
    if arr.shape[0] == 0:
        raise InputFormatError("empty-dataset", f"{path}: no embeddings")
    labels_path = labels_path or labels_path_for(path)
    labels = read_labels(labels_path, arr.shape[0])
    if labels.min() < 0:
        raise InputFormatError("negative-label", f"{labels_path}: line {int(np.argmax(labels < 0)) + 1} is negative")
    x = arr.astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise InputFormatError("zero-norm", f"{path}: row {zero[0]} has zero norm")
    return LabeledEmbeddingSet(x / norms[:, None], labels)


def write_embeddings(data, path, labels_path=None):
    if len(data) == 0:
        raise InputFormatError("empty-dataset", "refusing to write an empty dataset")
    write_array(path, data.embeddings)
    write_labels(labels_path or labels_path_for(path), data.labels)


def _parse_column(values):
    try:
        return np.array([float(v) for v in values], dtype=np.float64)
    except ValueError:
        return np.array(values, dtype=object)


def read_attributes(path, expected=None):
    """CSV attribute table; numeric columns become continuous channels."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputFormatError("empty-attributes", f"{path}: no header row")
    names, body = rows[0], rows[1:]
    for lineno, row in enumerate(body, 2):
        if len(row) != len(names):
            raise InputFormatError("ragged-attributes", f"{path}:{lineno}: {len(row)} fields, header has {len(names)}")
    if expected is not None and len(body) != expected:
        raise InputFormatError("attribute-count-mismatch", f"{path}: {len(body)} rows for {expected} samples")
    return AttributeTable({name: _parse_column([r[j] for r in body]) for j, name in enumerate(names)})


_FLOAT_MARK = "\x00f:"


def _mark_floats(obj):
    if isinstance(obj, dict):
        return {k: _mark_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_mark_floats(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            raise ValueError("non-finite numbers are not allowed in reports")
        text = format(x, ".17g")
        if not any(ch in text for ch in ".en"):
            text += ".0"
        return _FLOAT_MARK + text
    return obj


def dumps_report(doc):
    text = json.dumps(_mark_floats(doc), indent=2, sort_keys=True)
    return re.sub(r'"\\u0000f:([^"]+)"', r"\1", text) + "\n"


def write_report(path, doc):
    Path(path).write_text(dumps_report(doc), encoding="utf-8")


def read_report(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_histogram_csv(path, hist):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "genuine_count", "impostor_count"])
        for j in range(hist.genuine.size):
            w.writerow([format(hist.edges[j], ".17g"), format(hist.edges[j + 1], ".17g"),
                        int(hist.genuine[j]), int(hist.impostor[j])])
