# src/utils/storage_service.py
import json
import os
import tempfile

import numpy as np

from utils.exceptions import FormatError

FEATURE_MAGIC = "DCCFEAT"
FEATURE_VERSION = "v1"
CHECKPOINT_MAGIC = "DCCKPT"
CHECKPOINT_VERSION = "v1"
METRICS_HEADER = "step,loss,acc,lr"

_FLOAT = np.dtype("<f8")


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=directory, delete=False, suffix=".tmp") as temp_file:
        temp_file.write(payload)
        temp_path = temp_file.name
    os.replace(temp_path, path)


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except FileNotFoundError:
        raise FormatError(f"file not found: {path}") from None
    except IsADirectoryError:
        raise FormatError(f"expected a file, found a directory: {path}") from None


# --- feature files -----------------------------------------------------------

def write_feature_file(path: str, values: np.ndarray) -> str:
    """Store one C×M×M feature block as a ``DCCFEAT v1 C M M`` line plus little-endian float64s."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[1] != values.shape[2]:
        raise FormatError(f"feature block must be C×M×M, got shape {values.shape}")
    channels, side, _ = values.shape
    header = f"{FEATURE_MAGIC} {FEATURE_VERSION} {channels} {side} {side}\n".encode("ascii")
    _atomic_write(path, header + values.astype(_FLOAT).tobytes(order="C"))
    return path


def read_feature_file(path: str) -> np.ndarray:
    blob = _read_bytes(path)
    if not blob:
        raise FormatError(f"empty feature file: {path}", expected_bytes=None, actual_bytes=0)
    newline = blob.find(b"\n")
    if newline < 0:
        raise FormatError(f"feature file {path} has no manifest line")
    try:
        fields = blob[:newline].decode("ascii").split()
    except UnicodeDecodeError:
        raise FormatError(f"feature file {path} has a non-text manifest line") from None
    if len(fields) != 5 or fields[0] != FEATURE_MAGIC or fields[1] != FEATURE_VERSION:
        raise FormatError(f"feature file {path} does not start with '{FEATURE_MAGIC} {FEATURE_VERSION} C M M'")
    try:
        channels, rows, cols = (int(v) for v in fields[2:])
    except ValueError:
        raise FormatError(f"feature file {path} has non-integer extents {fields[2:]}") from None
    if channels < 1 or rows < 1 or rows != cols:
        raise FormatError(f"feature file {path} declares an invalid grid {channels}×{rows}×{cols}")
    payload = blob[newline + 1:]
    expected = channels * rows * cols * _FLOAT.itemsize
    if len(payload) != expected:
        raise FormatError(f"feature file {path} payload does not match its manifest",
                          expected_bytes=expected, actual_bytes=len(payload))
    return np.frombuffer(payload, dtype=_FLOAT).astype(np.float64).reshape(channels, rows, cols)


# --- checkpoints -------------------------------------------------------------

def write_checkpoint(path: str, tensors: dict[str, np.ndarray], meta: dict) -> str:
    """Versioned text manifest (name, shape, offset, count) followed by a float64 payload."""
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", "meta " + json.dumps(meta, sort_keys=True)]
    chunks = []
    offset = 0
    for name, array in tensors.items():
        if not name or any(ch.isspace() for ch in name):
            raise FormatError(f"checkpoint tensor name {name!r} must be non-empty and contain no whitespace")
        array = np.asarray(array, dtype=np.float64)
        shape = ",".join(str(s) for s in array.shape) or "scalar"
        lines.append(f"tensor {name} {shape} {offset} {array.size}")
        chunks.append(array.astype(_FLOAT).tobytes(order="C"))
        offset += array.size
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    _atomic_write(path, header + b"".join(chunks))
    print(f"   - ✅ Checkpoint written to '{path}' ({len(tensors)} tensors).")
    return path


def read_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    blob = _read_bytes(path)
    if not blob:
        raise FormatError(f"empty checkpoint: {path}", actual_bytes=0)
    marker = b"\nend\n"
    end = blob.find(marker)
    if end < 0:
        raise FormatError(f"checkpoint {path} has no manifest terminator")
    try:
        lines = blob[:end].decode("utf-8").split("\n")
    except UnicodeDecodeError:
        raise FormatError(f"checkpoint {path} manifest is not text") from None
    if lines[0].split() != [CHECKPOINT_MAGIC, CHECKPOINT_VERSION]:
        raise FormatError(f"checkpoint {path} is not a '{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}' file")
    if len(lines) < 2 or not lines[1].startswith("meta "):
        raise FormatError(f"checkpoint {path} lacks its meta line")
    try:
        meta = json.loads(lines[1][len("meta "):])
    except json.JSONDecodeError as e:
        raise FormatError(f"checkpoint {path} meta line is not JSON: {e}") from None

    payload = np.frombuffer(blob[end + len(marker):], dtype=np.uint8)
    total_values = payload.size // _FLOAT.itemsize
    if payload.size % _FLOAT.itemsize:
        raise FormatError(f"checkpoint {path} payload is not a whole number of float64 values")
    values = payload.view(_FLOAT)

    tensors: dict[str, np.ndarray] = {}
    expected_values = 0
    for line in lines[2:]:
        parts = line.split()
        if len(parts) != 5 or parts[0] != "tensor":
            raise FormatError(f"checkpoint {path} has a malformed manifest line: {line!r}")
        _, name, shape_text, offset_text, count_text = parts
        shape = () if shape_text == "scalar" else tuple(int(s) for s in shape_text.split(","))
        offset, count = int(offset_text), int(count_text)
        if int(np.prod(shape, dtype=np.int64)) != count:
            raise FormatError(f"checkpoint {path}: tensor {name} shape {shape} does not hold {count} values")
        if offset + count > total_values:
            raise FormatError(f"checkpoint {path}: tensor {name} runs past the payload",
                              expected_bytes=(offset + count) * _FLOAT.itemsize, actual_bytes=payload.size)
        tensors[name] = values[offset:offset + count].astype(np.float64).reshape(shape)
        expected_values = max(expected_values, offset + count)
    if expected_values != total_values:
        raise FormatError(f"checkpoint {path} payload size disagrees with its manifest",
                          expected_bytes=expected_values * _FLOAT.itemsize, actual_bytes=payload.size)
    return tensors, meta


# --- metrics and JSON artifacts ----------------------------------------------

def append_metrics(path: str, rows) -> None:
    """Append ``step,loss,acc,lr`` rows; the header is written once when the file is new."""
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        if new_file:
            f.write(METRICS_HEADER + "\n")
        for step, loss, acc, lr in rows:
            f.write(f"{int(step)},{float(loss):.17g},{float(acc):.17g},{float(lr):.17g}\n")


def read_metrics(path: str) -> list[tuple[int, float, float, float]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = [line.strip() for line in f if line.strip()]
    except FileNotFoundError:
        raise FormatError(f"metrics log not found: {path}") from None
    if not lines or lines[0] != METRICS_HEADER:
        raise FormatError(f"metrics log {path} does not start with '{METRICS_HEADER}'")
    rows = []
    for line in lines[1:]:
        step, loss, acc, lr = line.split(",")
        rows.append((int(step), float(loss), float(acc), float(lr)))
    return rows


def save_json(file_path: str, data) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2)
    return file_path


def load_json(file_path: str):
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise FormatError(f"file not found: {file_path}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"could not parse JSON from {file_path}: {e}") from None
