"""Canonical JSON serialization shared by every file this package writes.

All floats are rendered with 17 significant digits so that values round-trip
exactly and output files are byte-identical across runs. Key order is
insertion order, which writers keep fixed, so serializing the same data twice
yields the same bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def fmt_float(x: float) -> str:
    """Render a float with 17 significant digits; exact on re-parse."""
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"non-finite float {x!r} cannot be serialized")
    if x == 0.0:
        x = 0.0  # normalize -0.0 so reload/resave is byte-stable
    return format(x, ".17g")


def canonical_json(obj) -> str:
    parts: list[str] = []
    _encode(obj, parts)
    return "".join(parts)


def _encode(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(fmt_float(obj))
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), out)
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be str, got {type(k)}")
            if i:
                out.append(",")
            out.append(json.dumps(k))
            out.append(":")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _encode(v, out)
        out.append("]")
    elif isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    else:
        raise TypeError(f"cannot serialize {type(obj)}")


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_json(rec))
            fh.write("\n")


def read_jsonl(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_config_file(path) -> dict:
    """Load a declarative config file; .toml or .json by extension."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    if path.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ImportError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    if path.suffix == ".json":
        return read_json(path)
    raise ValueError(f"unsupported config extension {path.suffix!r} (use .toml or .json)")
