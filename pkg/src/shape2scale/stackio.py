"""Binary stack and raster files with JSON sidecars.

A stack is stored as little-endian complex64 (interleaved float32 real and
imaginary parts), acquisition-major: all pixels of acquisition 0 in row-major
order, then acquisition 1, and so on.  ``name.bin`` holds the payload and
``name.json`` the header.  Rasters use the same layout with a float32,
int32 or uint8 payload and a leading band axis.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, UnsupportedByteOrderError

STACK_FORMAT = "s2s-stack"
RASTER_FORMAT = "s2s-raster"
RASTER_DTYPES = {"float32": "<f4", "int32": "<i4", "uint8": "u1"}


@dataclass
class SLCStack:
    data: np.ndarray  # complex, (N, rows, cols)
    provenance: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise FormatError(f"stack data must be (N, rows, cols), got shape {self.data.shape}")

    @property
    def n_acquisitions(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape[1:]


def _paths(path):
    p = Path(path)
    if p.suffix in (".bin", ".json"):
        p = p.with_suffix("")
    return p.with_suffix(".bin"), p.with_suffix(".json")


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_header(path, kind):
    try:
        with open(path) as fh:
            head = json.load(fh)
    except FileNotFoundError as exc:
        raise FormatError(f"missing header {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"header {path} is not valid JSON: {exc}") from exc
    if head.get("format") != kind:
        raise FormatError(f"{path}: expected format {kind!r}, found {head.get('format')!r}")
    order = head.get("byte_order", "little")
    if order != "little":
        raise UnsupportedByteOrderError(f"{path}: byte order {order!r} is not supported (little only)")
    return head


def _check_payload(bin_path, expected):
    try:
        actual = os.path.getsize(bin_path)
    except FileNotFoundError as exc:
        raise FormatError(f"missing payload {bin_path}") from exc
    if actual != expected:
        raise FormatError(f"{bin_path}: expected {expected} bytes from header, found {actual}")


def write_stack(stack, path):
    """Write ``stack`` to ``path`` (``.bin`` and ``.json`` are added)."""
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(stack.data, dtype="<c8")
    n, rows, cols = data.shape
    bin_path.write_bytes(data.tobytes())
    _dump_json(
        {
            "format": STACK_FORMAT,
            "version": 1,
            "n_acquisitions": n,
            "rows": rows,
            "cols": cols,
            "dtype": "complex64",
            "byte_order": "little",
            "provenance": stack.provenance,
        },
        json_path,
    )
    return bin_path


def read_stack(path, mmap=False):
    """Read a stack written by :func:`write_stack`."""
    bin_path, json_path = _paths(path)
    head = _load_header(json_path, STACK_FORMAT)
    try:
        n, rows, cols = int(head["n_acquisitions"]), int(head["rows"]), int(head["cols"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{json_path}: incomplete header ({exc})") from exc
    if head.get("dtype") != "complex64":
        raise FormatError(f"{json_path}: unsupported dtype {head.get('dtype')!r}")
    _check_payload(bin_path, n * rows * cols * 8)
    if mmap:
        data = np.memmap(bin_path, dtype="<c8", mode="r", shape=(n, rows, cols))
    else:
        data = np.fromfile(bin_path, dtype="<c8").reshape(n, rows, cols)
    return SLCStack(data, head.get("provenance", ""))


def write_raster(array, path, dtype="float32", meta=None):
    """Write a (rows, cols) or (bands, rows, cols) raster."""
    if dtype not in RASTER_DTYPES:
        raise FormatError(f"unsupported raster dtype {dtype!r}")
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise FormatError(f"raster must be 2-D or 3-D, got shape {arr.shape}")
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(np.ascontiguousarray(arr, dtype=RASTER_DTYPES[dtype]).tobytes())
    head = {
        "format": RASTER_FORMAT,
        "version": 1,
        "bands": arr.shape[0],
        "rows": arr.shape[1],
        "cols": arr.shape[2],
        "dtype": dtype,
        "byte_order": "little",
    }
    if meta:
        head["meta"] = meta
    _dump_json(head, json_path)
    return bin_path


def read_raster(path, squeeze=True):
    bin_path, json_path = _paths(path)
    head = _load_header(json_path, RASTER_FORMAT)
    dtype = head.get("dtype")
    if dtype not in RASTER_DTYPES:
        raise FormatError(f"{json_path}: unsupported dtype {dtype!r}")
    shape = (int(head["bands"]), int(head["rows"]), int(head["cols"]))
    _check_payload(bin_path, int(np.prod(shape)) * np.dtype(RASTER_DTYPES[dtype]).itemsize)
    arr = np.fromfile(bin_path, dtype=RASTER_DTYPES[dtype]).reshape(shape)
    return arr[0] if squeeze and shape[0] == 1 else arr


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return int(v)
    return v


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
