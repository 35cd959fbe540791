"""Binary container: magic line, JSON manifest line, little-endian float64 payload.

The manifest lists every array with its shape and byte offset plus a SHA-256
of the payload, so truncation and corruption are detected on load.
"""
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import IoFailure, MalformedModel, VersionMismatch


def write_container(path, magic: bytes, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    manifest = dict(manifest, arrays=entries, payload_bytes=len(payload),
                    payload_sha256=hashlib.sha256(payload).hexdigest())
    line = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(magic + line + b"\n" + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_container(path, magic: bytes, version: int | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not raw.startswith(magic):
        raise MalformedModel(f"{path}: wrong magic, not a {magic.strip().decode()} file")
    end = raw.find(b"\n", len(magic))
    try:
        manifest = json.loads(raw[len(magic):end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedModel(f"{path}: manifest is not valid JSON") from exc
    if end < 0 or not isinstance(manifest, dict):
        raise MalformedModel(f"{path}: manifest missing")
    if version is not None and manifest.get("format_version") != version:
        raise VersionMismatch(
            f"{path}: format version {manifest.get('format_version')!r}, expected {version}")
    payload = raw[end + 1:]
    if len(payload) != manifest.get("payload_bytes"):
        raise MalformedModel(f"{path}: payload is {len(payload)} bytes, manifest says "
                             f"{manifest.get('payload_bytes')}")
    if hashlib.sha256(payload).hexdigest() != manifest.get("payload_sha256"):
        raise MalformedModel(f"{path}: payload checksum mismatch")
    arrays = {}
    try:
        for entry in manifest["arrays"]:
            count = int(np.prod(entry["shape"], dtype=int))
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
            arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModel(f"{path}: bad array table ({exc})") from exc
    return manifest, arrays
