"""On-disk formats: CSTN tensor dumps, dataset / model / unified-domain directories, CSV reports.

A CSTN file holds one float32 tensor::

    b"CSTN" | u8 version (=1) | u32 rank | u32 dims[rank] | float32 payload (row-major)

All integers are little-endian. Everything written here reloads to the exact
same float32 values, so re-saving a loaded object reproduces the file byte
for byte.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .datagen import DomainSpec, SyntheticDataset
from .desknet import DeskNet
from .errors import FormatError, MissingArtifactError
from .style_stats import GaussianStyle
from .unified import UnifiedDomain

MAGIC = b"CSTN"
VERSION = 1
_HEADER = struct.Struct("<4sBI")

DATASET_FILES = ("inputs.cstn", "manifest.csv", "meta.json")
MODEL_FILES = ("model_arch.cstn", "model_params.cstn", "model.json")


def encode_tensor(arr) -> bytes:
    a = np.asarray(arr, dtype="<f4")  # keeps rank 0, unlike ascontiguousarray
    dims = struct.pack(f"<{a.ndim}I", *a.shape)
    return _HEADER.pack(MAGIC, VERSION, a.ndim) + dims + a.tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated CSTN header")
    magic, version, rank = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported CSTN version {version}")
    pos = _HEADER.size + 4 * rank
    if len(buf) < pos:
        raise FormatError("truncated CSTN dims")
    dims = struct.unpack_from(f"<{rank}I", buf, _HEADER.size)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) != pos + 4 * count:
        raise FormatError(f"payload size {len(buf) - pos} does not match dims {dims}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)


def payload_offset(shape: Sequence[int]) -> int:
    """Byte offset of the first payload element in a CSTN file of ``shape``."""
    return _HEADER.size + 4 * len(shape)


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(f"missing tensor file {p}")
    return decode_tensor(p.read_bytes())


def _require(directory: Path, names: Iterable[str], what: str) -> None:
    if not directory.is_dir():
        raise MissingArtifactError(f"{what} directory {directory} does not exist")
    missing = [n for n in names if not (directory / n).is_file()]
    if missing:
        raise MissingArtifactError(f"{what} at {directory} is missing {', '.join(missing)}")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def format_value(v) -> str:
    """Shortest round-tripping text; booleans as 0/1."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# datasets

def save_dataset(directory, data: SyntheticDataset) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_tensor(d / "inputs.cstn", data.inputs)
    start = payload_offset(data.inputs.shape)
    stride = 4 * int(np.prod(data.inputs.shape[1:]))
    write_csv(d / "manifest.csv", ("sample_id", "class_label", "domain_id", "file_offset"),
              ((i, data.labels[i], data.domains[i], start + i * stride) for i in range(len(data))))
    meta = {"n_classes": data.n_classes, "seed": data.seed, "n_samples": len(data),
            "input_shape": list(data.inputs.shape[1:]), "domains": [s.to_dict() for s in data.specs]}
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def load_dataset(directory) -> SyntheticDataset:
    d = Path(directory)
    _require(d, DATASET_FILES, "dataset")
    inputs = read_tensor(d / "inputs.cstn")
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    rows = read_csv(d / "manifest.csv")
    if len(rows) != inputs.shape[0]:
        raise FormatError("manifest row count does not match inputs.cstn")
    labels = np.array([int(r["class_label"]) for r in rows], dtype=np.int64)
    domains = np.array([int(r["domain_id"]) for r in rows], dtype=np.int64)
    specs = tuple(DomainSpec.from_dict(s) for s in meta.get("domains", []))
    return SyntheticDataset(inputs, labels, domains, int(meta["n_classes"]), int(meta.get("seed", 0)), specs)


# models and unified domains

def quantize(params) -> np.ndarray:
    """Round to the float32 grid the dump format stores, returned as float64."""
    return np.asarray(params, dtype=np.float32).astype(np.float64)


def save_model(directory, net: DeskNet, info: dict, unified: Optional[UnifiedDomain] = None,
               initial_style_params: Optional[np.ndarray] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_tensor(d / "model_arch.cstn", np.array(net.architecture(), dtype=np.float32))
    write_tensor(d / "model_params.cstn", net.params)
    if initial_style_params is not None:
        write_tensor(d / "style_params_initial.cstn", initial_style_params)
    (d / "model.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if unified is not None:
        save_unified(d, unified)


def load_model(directory) -> tuple[DeskNet, dict, Optional[UnifiedDomain], Optional[np.ndarray]]:
    d = Path(directory)
    _require(d, MODEL_FILES, "model")
    arch = read_tensor(d / "model_arch.cstn")
    params = read_tensor(d / "model_params.cstn")
    net = DeskNet.from_architecture(arch, params.astype(np.float64))
    info = json.loads((d / "model.json").read_text(encoding="utf-8"))
    unified = load_unified(d) if (d / "unified.json").is_file() else None
    initial = None
    if (d / "style_params_initial.cstn").is_file():
        initial = read_tensor(d / "style_params_initial.cstn").astype(np.float64)
    return net, info, unified, initial


def save_unified(directory, unified: UnifiedDomain) -> None:
    d = Path(directory)
    write_tensor(d / "unified_mean.cstn", unified.mean)
    write_tensor(d / "unified_cov.cstn", unified.cov)
    meta = {"method": unified.method, "iterations": unified.iterations,
            "residual": unified.residual, "converged": unified.converged}
    (d / "unified.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def load_unified(directory) -> UnifiedDomain:
    d = Path(directory)
    _require(d, ("unified_mean.cstn", "unified_cov.cstn", "unified.json"), "unified domain")
    meta = json.loads((d / "unified.json").read_text(encoding="utf-8"))
    style = GaussianStyle(read_tensor(d / "unified_mean.cstn").astype(np.float64),
                          read_tensor(d / "unified_cov.cstn").astype(np.float64))
    return UnifiedDomain(style, meta["method"], int(meta["iterations"]), float(meta["residual"]),
                         bool(meta["converged"]))

