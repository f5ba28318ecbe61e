"""EPW1 weight files and flat key=value config/provenance records.

EPW1 layout::

    b"EPW1"
    uint32 header_length, then header_length bytes of UTF-8 JSON
        {"model": <ModelSpec dict>, "params": [{"layer": i, "weight": dims, "bias": dims}, ...]}
    float32 little-endian parameters in layer order, kernel (row major) then bias
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .engine import ModelSpec, Weights, expected_param_shapes
from .errors import FormatError

MAGIC = b"EPW1"


def save_weights(path, spec: ModelSpec, weights: Weights) -> None:
    weights.validate(spec)
    header = {
        "model": spec.to_dict(),
        "params": [
            {"layer": i, "weight": list(w.shape), "bias": list(b.shape)}
            for i, (w, b) in sorted(weights.params.items())
        ],
    }
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        for arr in weights.arrays():
            fh.write(arr.astype("<f4").tobytes(order="C"))


def load_weights(path, expected: ModelSpec | None = None) -> tuple[ModelSpec, Weights]:
    """Read a weight file; if ``expected`` is given the stored model must match it."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not an EPW1 file")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
        spec = ModelSpec.from_dict(header["model"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from exc
    if expected is not None and expected != spec:
        raise FormatError(f"{path}: stored model differs from the expected one")
    shapes = expected_param_shapes(spec)
    listed = {p["layer"]: (tuple(p["weight"]), tuple(p["bias"])) for p in header["params"]}
    if listed != shapes:
        raise FormatError(f"{path}: parameter table disagrees with the model layers")
    off = 8 + hlen
    params = {}
    for i in sorted(shapes):
        arrs = []
        for shp in shapes[i]:
            count = int(np.prod(shp))
            if off + 4 * count > len(raw):
                raise FormatError(f"{path}: truncated parameters at layer {i}")
            arrs.append(
                np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float64).reshape(shp)
            )
            off += 4 * count
        params[i] = tuple(arrs)
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return spec, Weights(params)


def write_keyvalue(path, values: dict) -> None:
    lines = [f"{k}={_fmt(v)}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalue(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return ""
    return str(v)
