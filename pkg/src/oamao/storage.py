"""Binary container and CSV output with atomic writes.

Container layout::

    8 bytes   magic  b"OAMAO\\x00\\x01\\n"
    8 bytes   little-endian uint64 length of the JSON header
    n bytes   UTF-8 JSON header
    payload   raw little-endian arrays, concatenated in header order

The header records format version, kind, parameters, label lists, the
array table (name, dtype, shape, offset, nbytes) and a SHA-256 of the payload.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .channel import ChannelParams, ChoiMatrix, KrausSet, SuperoperatorMatrix
from .kernel import DimensionlessGeometry
from .oam import OamLabel

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "atomic_write",
    "sha256_file",
    "write_container",
    "read_container",
    "save_superoperator",
    "load_superoperator",
    "save_choi",
    "save_kraus",
    "load_kraus",
    "write_csv",
    "format_value",
    "params_to_dict",
    "params_from_dict",
]

MAGIC = b"OAMAO\x00\x01\n"
FORMAT_VERSION = 1


def atomic_write(path, data: bytes) -> Path:
    """Write bytes to a temporary file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _labels(labels) -> list[list[int]]:
    return [[lab.l, lab.p] for lab in labels]


def params_to_dict(params: ChannelParams | None) -> dict | None:
    if params is None:
        return None
    return {
        "geom": asdict(params.geom),
        "J": params.J,
        "n_max": params.n_max,
        "L_in": params.L_in,
        "P_in": params.P_in,
        "L_out": params.L_out,
        "P_out": params.P_out,
    }


def params_from_dict(d: dict | None) -> ChannelParams | None:
    if d is None:
        return None
    fields = dict(d)
    fields["geom"] = DimensionlessGeometry(**fields["geom"])
    return ChannelParams(**fields)


def write_container(path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> Path:
    table = []
    payload = io.BytesIO()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        start = payload.tell()
        payload.write(arr.tobytes())
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": start, "nbytes": arr.nbytes})
    body = payload.getvalue()
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "arrays": table,
        "sha256": hashlib.sha256(body).hexdigest(),
        **meta,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    return atomic_write(path, MAGIC + struct.pack("<Q", len(raw)) + raw + body)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not an oamao container")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(data[start: start + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    body = data[start + hlen:]
    if hashlib.sha256(body).hexdigest() != header["sha256"]:
        raise ValueError(f"{path}: payload checksum mismatch")
    arrays = {}
    for entry in header["arrays"]:
        chunk = body[entry["offset"]: entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return header, arrays


def save_superoperator(path, A: SuperoperatorMatrix, extra: dict | None = None) -> Path:
    meta = {"in_labels": _labels(A.in_labels), "out_labels": _labels(A.out_labels),
            "params": params_to_dict(A.params), **(extra or {})}
    return write_container(path, "superoperator", {"A": A.data}, meta)


def load_superoperator(path) -> SuperoperatorMatrix:
    header, arrays = read_container(path)
    if header["kind"] != "superoperator":
        raise ValueError(f"{path}: expected a superoperator, found {header['kind']}")
    return SuperoperatorMatrix(
        arrays["A"],
        [OamLabel(*x) for x in header["in_labels"]],
        [OamLabel(*x) for x in header["out_labels"]],
        params_from_dict(header.get("params")),
    )


def save_choi(path, ch: ChoiMatrix, extra: dict | None = None) -> Path:
    meta = {"in_labels": _labels(ch.in_labels), "out_labels": _labels(ch.out_labels), **(extra or {})}
    return write_container(path, "choi", {"choi": ch.matrix, "eigenvalues": ch.eigenvalues}, meta)


def save_kraus(path, ks: KrausSet, extra: dict | None = None) -> Path:
    meta = {"in_labels": _labels(ks.in_labels), "out_labels": _labels(ks.out_labels),
            "clipped_mass": ks.clipped_mass,
            "delta_l": [None if d is None else int(d) for d in ks.delta_l], **(extra or {})}
    return write_container(path, "kraus", {"weights": ks.weights, "operators": ks.operators}, meta)


def load_kraus(path) -> KrausSet:
    header, arrays = read_container(path)
    if header["kind"] != "kraus":
        raise ValueError(f"{path}: expected a Kraus set, found {header['kind']}")
    return KrausSet(arrays["weights"], arrays["operators"],
                    [OamLabel(*x) for x in header["in_labels"]],
                    [OamLabel(*x) for x in header["out_labels"]],
                    header["clipped_mass"], header["delta_l"])


def format_value(x) -> str:
    """Six significant digits for reals; integers and strings unchanged."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    if isinstance(x, (complex, np.complexfloating)):
        return f"{x.real:.6g}{x.imag:+.6g}j"
    return str(x)


def write_csv(path, columns: list[tuple[str, str]], rows) -> Path:
    """CSV with a header of ``name [unit]`` entries; written atomically."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"{name} [{unit}]" for name, unit in columns])
    for row in rows:
        writer.writerow([format_value(x) for x in row])
    return atomic_write(path, buf.getvalue().encode())
