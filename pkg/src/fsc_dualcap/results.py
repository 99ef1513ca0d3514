"""Result records and their JSON form."""

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError

METHODS = ("rvi", "closed-form", "finite-horizon", "certificate")


def digest(obj):
    """Short content hash of anything with ``to_dict`` (or plain JSON data)."""
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    blob = json.dumps(to_jsonable(data), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON types.

    Floats are left as Python floats; ``json`` writes their shortest
    round-tripping repr, so reloading gives bit-identical values.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps(obj, indent=2):
    return json.dumps(to_jsonable(obj), indent=indent, sort_keys=False)


def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class BoundResult:
    value: float
    method: str
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    # in-memory solver objects (value tables, policies); never serialised
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        self.value = float(self.value)
        if not math.isfinite(self.value):
            raise ValueError("bound value must be finite")

    def to_dict(self):
        return to_jsonable({
            "value": self.value,
            "method": self.method,
            "diagnostics": self.diagnostics,
            "provenance": self.provenance,
        })

    @classmethod
    def from_dict(cls, d, path="result"):
        if not isinstance(d, dict):
            raise SchemaError(path, "expected an object")
        for key in ("value", "method"):
            if key not in d:
                raise SchemaError(f"{path}.{key}", "missing")
        try:
            return cls(float(d["value"]), d["method"], dict(d.get("diagnostics", {})),
                       dict(d.get("provenance", {})))
        except (TypeError, ValueError) as exc:
            raise SchemaError(path, str(exc)) from None

    def to_json(self):
        return dumps(self.to_dict())
