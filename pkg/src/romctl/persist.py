"""Binary array persistence: a JSON manifest plus raw float64 files.

Every artifact written by this package (datasets, model checkpoints, state
histories) is a directory containing ``manifest.json`` and one raw
little-endian float64 binary per named array. The manifest records shapes
and sha256 checksums so a corrupted or edited artifact fails loudly on
load, and round trips are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
DTYPE_TAG = "float64-little-endian"


class ArtifactError(RuntimeError):
    """Raised on malformed manifests, shape mismatches, or checksum failures."""


def _checksum(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named float64 arrays plus metadata to a directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        raw = arr.tobytes()
        (path / f"{name}.bin").write_bytes(raw)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": DTYPE_TAG,
            "sha256": _checksum(raw),
        })
    manifest = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "arrays": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_arrays(path):
    """Load a directory written by :func:`save_arrays`.

    Returns ``(arrays, meta)``. Raises :class:`ArtifactError` naming the
    offending array on any validation failure.
    """
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise ArtifactError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"malformed manifest {manifest_path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"unsupported format version in {manifest_path}")

    arrays = {}
    for entry in manifest["arrays"]:
        name = entry["name"]
        if entry.get("dtype") != DTYPE_TAG:
            raise ArtifactError(f"array '{name}': unsupported dtype {entry.get('dtype')}")
        bin_path = path / f"{name}.bin"
        if not bin_path.exists():
            raise ArtifactError(f"array '{name}': missing file {bin_path}")
        raw = bin_path.read_bytes()
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape)) * 8
        if len(raw) != expected:
            raise ArtifactError(
                f"array '{name}': file has {len(raw)} bytes, expected {expected} "
                f"for shape {shape}"
            )
        if _checksum(raw) != entry["sha256"]:
            raise ArtifactError(f"array '{name}': checksum mismatch")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return arrays, manifest.get("meta", {})
