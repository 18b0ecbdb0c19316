"""Binary model container shared by the float and quantized paths.

Layout (all little-endian):

    magic "TFMC" | u32 version | u64 header_len | header JSON (utf-8)
    | zero padding to a 64-byte boundary | tensor blobs, each 64-byte aligned

The header carries the graph, precision, metadata, the ordered tensor table
(name, dtype, shape, offset relative to the blob base, byte count) and, for
int8 models, every quantization parameter. The header JSON is serialized with
sorted keys and compact separators, so save -> load -> save reproduces the
file byte for byte.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Union

import numpy as np

from . import graph as g
from .errors import ContainerError
from .quantize import QuantParams, QuantizedModel
from .runtime import FloatModel

MAGIC = b"TFMC"
CONTAINER_VERSION = 1
ALIGN = 64

_DTYPES = {"float32": "<f4", "int8": "<i1", "int32": "<i4"}


def _align(offset: int) -> int:
    return -(-offset // ALIGN) * ALIGN


def _check_metadata(metadata: dict) -> dict:
    try:
        return json.loads(json.dumps(metadata, sort_keys=True))
    except (TypeError, ValueError) as exc:
        raise ContainerError(f"model metadata is not JSON-serializable: {exc}") from exc


def _tensor_table(named_arrays: list[tuple[str, np.ndarray, str]]):
    table = []
    offset = 0
    for name, array, dtype_name in named_arrays:
        nbytes = array.size * np.dtype(_DTYPES[dtype_name]).itemsize
        table.append(
            {
                "name": name,
                "dtype": dtype_name,
                "shape": list(array.shape),
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset = _align(offset + nbytes)
    return table


def _ordered_tensors(model: Union[FloatModel, QuantizedModel]) -> list[tuple[str, np.ndarray, str]]:
    """Deterministic tensor order: graph node order, storage tensor order."""
    out = []
    shapes = g.param_shapes(model.graph)
    source = model.params if isinstance(model, FloatModel) else model.weights
    for node_name, tensors in shapes.items():
        for tname in tensors:
            array = source[node_name][tname]
            if isinstance(model, FloatModel):
                dtype_name = "float32"
            else:
                dtype_name = "int32" if tname in g._BIAS_NAMES else "int8"
            out.append((f"{node_name}/{tname}", array, dtype_name))
    return out


def save_model(model: Union[FloatModel, QuantizedModel], path) -> None:
    named = _ordered_tensors(model)
    header = {
        "precision": "float32" if isinstance(model, FloatModel) else "int8",
        "graph": model.graph.to_dict(),
        "metadata": _check_metadata(model.metadata),
        "tensors": _tensor_table(named),
    }
    if isinstance(model, QuantizedModel):
        header["quant"] = {
            "edge_qparams": {e: qp.to_dict() for e, qp in model.edge_qparams.items()},
            "weight_qparams": {
                node: {t: qp.to_dict() for t, qp in tensors.items()}
                for node, tensors in model.weight_qparams.items()
            },
            "requant": {
                node: {stage: list(mn) for stage, mn in stages.items()}
                for node, stages in model.requant.items()
            },
        }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    prefix = MAGIC + struct.pack("<I", CONTAINER_VERSION) + struct.pack("<Q", len(header_bytes))
    base = _align(len(prefix) + len(header_bytes))

    with open(path, "wb") as fh:
        fh.write(prefix)
        fh.write(header_bytes)
        fh.write(b"\x00" * (base - len(prefix) - len(header_bytes)))
        pos = 0
        for (name, array, dtype_name), entry in zip(named, header["tensors"]):
            if entry["offset"] > pos:
                fh.write(b"\x00" * (entry["offset"] - pos))
                pos = entry["offset"]
            payload = np.ascontiguousarray(array.astype(_DTYPES[dtype_name], copy=False)).tobytes()
            fh.write(payload)
            pos += len(payload)


def read_header(path) -> tuple[dict, int]:
    """(header dict, blob base offset); validates magic/version/lengths."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise ContainerError(f"{path}: not a tinyfuse model container (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CONTAINER_VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    if 16 + header_len > len(data):
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(data[16 : 16 + header_len].decode())
    except ValueError as exc:
        raise ContainerError(f"{path}: corrupt header JSON: {exc}") from exc
    return header, _align(16 + header_len)


def load_model(path) -> Union[FloatModel, QuantizedModel]:
    """Reload a container; precision is dispatched from the header."""
    data = Path(path).read_bytes()
    header, base = read_header(path)

    graph = g.GraphIR.from_dict(header["graph"])
    arrays: dict[str, dict[str, np.ndarray]] = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        expected = math.prod(entry["shape"]) * np.dtype(_DTYPES[entry["dtype"]]).itemsize
        if entry["nbytes"] != expected or end > len(data):
            raise ContainerError(
                f"{path}: blob length mismatch for {entry['name']} "
                f"(declared {entry['nbytes']}, expected {expected}, file has {len(data) - start})"
            )
        array = np.frombuffer(data[start:end], dtype=_DTYPES[entry["dtype"]])
        array = array.reshape(entry["shape"]).copy()
        node, tname = entry["name"].rsplit("/", 1)
        arrays.setdefault(node, {})[tname] = array

    if header["precision"] == "float32":
        model = FloatModel(graph, arrays, header.get("metadata", {}))
        model.validate()
        return model
    if header["precision"] != "int8":
        raise ContainerError(f"{path}: unknown precision {header['precision']!r}")
    quant = header.get("quant")
    if quant is None:
        raise ContainerError(f"{path}: int8 container missing quantization header")
    return QuantizedModel(
        graph=graph,
        weights=arrays,
        weight_qparams={
            node: {t: QuantParams.from_dict(d) for t, d in tensors.items()}
            for node, tensors in quant["weight_qparams"].items()
        },
        edge_qparams={e: QuantParams.from_dict(d) for e, d in quant["edge_qparams"].items()},
        requant={
            node: {stage: (int(mn[0]), int(mn[1])) for stage, mn in stages.items()}
            for node, stages in quant["requant"].items()
        },
        metadata=header.get("metadata", {}),
    )


def container_size_bytes(path) -> int:
    return Path(path).stat().st_size
