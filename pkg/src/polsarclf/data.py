"""PolSAR data model, PLSR1 raster I/O, coherency estimation and scene synthesis.

Scattering data are kept as ``complex64`` arrays of shape ``(bands, H, W, 3)``
with the last axis ordered ``(s_hh, s_hv, s_vv)``; ``s_vh`` is never stored.
Coherency matrices are full ``(..., 3, 3)`` complex128 Hermitian arrays in the
Pauli basis.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyImage,
    FormatError,
    IoFailure,
    MalformedHeader,
    MissingClassModel,
    NonFiniteValue,
)

MAGIC = b"PLSR1\n"
MAX_FILE_BANDS = 3
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i32": np.dtype("<i4")}


@dataclass(frozen=True)
class ScatteringMatrix:
    """Single-pixel reciprocal scattering matrix (``s_vh == s_hv``)."""

    s_hh: complex
    s_hv: complex
    s_vv: complex

    def __post_init__(self):
        if not all(np.isfinite(complex(v)) for v in (self.s_hh, self.s_hv, self.s_vv)):
            raise NonFiniteValue("scattering matrix entries must be finite")

    @property
    def s_vh(self) -> complex:
        return self.s_hv

    def as_array(self) -> np.ndarray:
        return np.array([self.s_hh, self.s_hv, self.s_vv], dtype=np.complex128)

    @property
    def span(self) -> float:
        return abs(self.s_hh) ** 2 + abs(self.s_vv) ** 2 + 2 * abs(self.s_hv) ** 2


@dataclass(frozen=True)
class CoherencyMatrix:
    """Upper triangle of a 3x3 Hermitian coherency matrix."""

    t11: float
    t22: float
    t33: float
    t12: complex = 0j
    t13: complex = 0j
    t23: complex = 0j

    @classmethod
    def from_matrix(cls, t) -> "CoherencyMatrix":
        t = np.asarray(t)
        return cls(float(t[0, 0].real), float(t[1, 1].real), float(t[2, 2].real),
                   complex(t[0, 1]), complex(t[0, 2]), complex(t[1, 2]))

    def matrix(self) -> np.ndarray:
        t = np.array(
            [[self.t11, self.t12, self.t13],
             [0, self.t22, self.t23],
             [0, 0, self.t33]],
            dtype=np.complex128,
        )
        t[1, 0] = np.conj(self.t12)
        t[2, 0] = np.conj(self.t13)
        t[2, 1] = np.conj(self.t23)
        return t

    @property
    def span(self) -> float:
        return self.t11 + self.t22 + self.t33


@dataclass(eq=False)
class MultiBandImage:
    bands: list[str]
    data: np.ndarray  # (B, H, W, 3) complex64: s_hh, s_hv, s_vv

    def __post_init__(self):
        self.bands = list(self.bands)
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or self.data.shape[-1] != 3:
            raise DimensionMismatch(f"expected (bands, H, W, 3) array, got {self.data.shape}")
        if self.data.shape[0] != len(self.bands):
            raise DimensionMismatch("band list does not match data")
        if len(set(self.bands)) != len(self.bands):
            raise ValueError(f"duplicate band names in {self.bands}")
        if not np.iscomplexobj(self.data):
            raise TypeError("scattering data must be complex")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def band(self, name: str) -> np.ndarray:
        return self.data[self.bands.index(name)]

    def select_bands(self, names: Sequence[str]) -> "MultiBandImage":
        missing = [n for n in names if n not in self.bands]
        if missing:
            raise KeyError(f"bands not in image: {missing}")
        idx = [self.bands.index(n) for n in names]
        return MultiBandImage(list(names), self.data[idx])

    def pixel(self, band: str, row: int, col: int) -> ScatteringMatrix:
        hh, hv, vv = (complex(v) for v in self.band(band)[row, col])
        return ScatteringMatrix(hh, hv, vv)

    def __eq__(self, other):
        if not isinstance(other, MultiBandImage):
            return NotImplemented
        return (
            self.bands == other.bands
            and self.data.shape == other.data.shape
            and self.data.dtype == other.data.dtype
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(eq=False)
class LabelMap:
    """Class-id raster: 0 is unlabeled, 1..C index ``class_names``."""

    grid: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.int32)
        self.class_names = list(self.class_names)
        if self.grid.ndim != 2:
            raise DimensionMismatch("label grid must be 2-D")
        if self.grid.size and (self.grid.min() < 0 or self.grid.max() > self.n_classes):
            raise ValueError(
                f"label ids must lie in 0..{self.n_classes}, got {self.grid.min()}..{self.grid.max()}"
            )

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def counts(self) -> np.ndarray:
        """Pixel count per class id 1..C (index 0 of the result is class 1)."""
        return np.bincount(self.grid.ravel(), minlength=self.n_classes + 1)[1:]

    def present_classes(self) -> list[int]:
        return [c + 1 for c, n in enumerate(self.counts()) if n > 0]

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.class_names == other.class_names and np.array_equal(self.grid, other.grid)


@dataclass
class ClassModel:
    """Per-band Pauli-basis covariance of one synthetic land-cover class."""

    name: str
    covariances: dict[str, np.ndarray]

    def __post_init__(self):
        for band, sigma in list(self.covariances.items()):
            sigma = np.asarray(sigma, dtype=np.complex128)
            if sigma.shape != (3, 3):
                raise ValueError(f"{self.name}/{band}: covariance must be 3x3")
            if not np.allclose(sigma, sigma.conj().T, atol=1e-12):
                raise ValueError(f"{self.name}/{band}: covariance is not Hermitian")
            span = float(np.trace(sigma).real)
            if span <= 0:
                raise ValueError(f"{self.name}/{band}: span must be positive")
            if np.linalg.eigvalsh(sigma).min() < -1e-9 * span:
                raise ValueError(f"{self.name}/{band}: covariance is not PSD")
            self.covariances[band] = sigma


# --------------------------------------------------------------------------
# PLSR1 envelope


def write_envelope(path, header: dict, payload: bytes) -> None:
    """Write ``MAGIC``, a one-line JSON header, then the raw payload."""
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(line + b"\n")
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_envelope(path) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not raw.startswith(MAGIC):
        raise MalformedHeader(f"{path}: missing PLSR1 magic")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise MalformedHeader(f"{path}: unterminated header line")
    try:
        header = json.loads(raw[len(MAGIC):end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"{path}: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise MalformedHeader(f"{path}: header must be a JSON object")
    return header, raw[end + 1:]


def _header_dims(header: dict, path) -> tuple[int, int, np.dtype]:
    try:
        width, height = header["width"], header["height"]
        dtype = _DTYPES[header["dtype"]]
    except (KeyError, TypeError) as exc:
        raise MalformedHeader(f"{path}: bad or missing header key {exc}") from exc
    if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in (width, height)):
        raise MalformedHeader(f"{path}: width/height must be non-negative integers")
    return width, height, dtype


def _payload_array(payload: bytes, dtype: np.dtype, count: int, path) -> np.ndarray:
    expected = count * dtype.itemsize
    if len(payload) != expected:
        raise DimensionMismatch(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype, count=count)


def save_image(image: MultiBandImage, path) -> None:
    if len(image.bands) > MAX_FILE_BANDS:
        raise FormatError(f"PLSR1 v1 stores at most {MAX_FILE_BANDS} bands")
    if not image.bands:
        raise FormatError("image has no bands")
    header = {"width": image.width, "height": image.height, "bands": image.bands, "dtype": "f32"}
    data = np.ascontiguousarray(image.data, dtype=np.complex64)
    write_envelope(path, header, data.view("<f4").tobytes())


def load_image(path) -> MultiBandImage:
    header, payload = read_envelope(path)
    width, height, dtype = _header_dims(header, path)
    bands = header.get("bands")
    if (not isinstance(bands, list) or not bands or len(bands) > MAX_FILE_BANDS
            or not all(isinstance(b, str) for b in bands) or len(set(bands)) != len(bands)):
        raise MalformedHeader(f"{path}: 'bands' must list 1..{MAX_FILE_BANDS} distinct names")
    if header.get("kind", "image") != "image" or dtype != _DTYPES["f32"]:
        raise MalformedHeader(f"{path}: not a f32 scattering image")
    flat = _payload_array(payload, dtype, len(bands) * height * width * 6, path)
    if not np.isfinite(flat).all():
        raise NonFiniteValue(f"{path}: payload contains NaN or Inf")
    data = flat.astype(np.float32).view(np.complex64).reshape(len(bands), height, width, 3)
    return MultiBandImage(bands, data)


def save_raster(path, array: np.ndarray, kind: str, dtype: str = "f32", **extra) -> None:
    """Store an ``(H, W[, dims])`` real raster in the PLSR1 envelope."""
    arr = np.asarray(array)
    height, width = arr.shape[:2]
    dims = int(np.prod(arr.shape[2:], dtype=int))
    header = {"width": width, "height": height, "dtype": dtype, "kind": kind, "dims": dims, **extra}
    write_envelope(path, header, np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())


def load_raster(path, kind: str | None = None) -> tuple[np.ndarray, dict]:
    header, payload = read_envelope(path)
    width, height, dtype = _header_dims(header, path)
    if kind is not None and header.get("kind") != kind:
        raise MalformedHeader(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    dims = header.get("dims", 1)
    if not isinstance(dims, int) or dims < 1:
        raise MalformedHeader(f"{path}: bad 'dims'")
    arr = _payload_array(payload, dtype, height * width * dims, path)
    shape = (height, width) if dims == 1 and kind == "segments" else (height, width, dims)
    return arr.reshape(shape).copy(), header


# --------------------------------------------------------------------------
# Label maps (PGM P5 + JSON class-name sidecar)


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def save_labels(labels: LabelMap, path) -> None:
    maxval = max(labels.n_classes, 1)
    if maxval > 65535:
        raise FormatError("too many classes for PGM")
    h, w = labels.shape
    dtype = ">u1" if maxval < 256 else ">u2"
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
            fh.write(labels.grid.astype(dtype).tobytes())
        _sidecar(path).write_text(json.dumps(labels.class_names) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_labels(path) -> LabelMap:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    fields, pos = [], 0
    # header: magic, width, height, maxval separated by whitespace, '#' comments allowed
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.find(b"\n", pos) + 1
            if pos == 0:
                break
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            break
        fields.append(raw[start:pos])
    if len(fields) < 4 or fields[0] != b"P5":
        raise MalformedHeader(f"{path}: not a binary PGM (P5)")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise MalformedHeader(f"{path}: bad PGM header") from exc
    if not 0 < maxval < 65536:
        raise MalformedHeader(f"{path}: bad PGM maxval {maxval}")
    dtype = np.dtype(">u1" if maxval < 256 else ">u2")
    body = raw[pos + 1:]
    if len(body) != w * h * dtype.itemsize:
        raise DimensionMismatch(f"{path}: PGM payload size does not match {w}x{h}")
    grid = np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.int32)
    side = _sidecar(path)
    if side.exists():
        try:
            names = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MalformedHeader(f"{side}: invalid JSON") from exc
    else:
        names = [f"class{c}" for c in range(1, maxval + 1)]
    return LabelMap(grid, names)


# --------------------------------------------------------------------------
# Pauli vector and coherency


def pauli_vector(s) -> np.ndarray:
    """Pauli scattering vector ``(s_hh+s_vv, s_hh-s_vv, 2 s_hv) / sqrt(2)``.

    Accepts a :class:`ScatteringMatrix` or any array whose last axis holds
    ``(s_hh, s_hv, s_vv)``.
    """
    if isinstance(s, ScatteringMatrix):
        s = s.as_array()
    s = np.asarray(s, dtype=np.complex128)
    hh, hv, vv = s[..., 0], s[..., 1], s[..., 2]
    return np.stack([hh + vv, hh - vv, 2.0 * hv], axis=-1) / math.sqrt(2.0)


def scattering_from_pauli(k) -> np.ndarray:
    k = np.asarray(k)
    r2 = math.sqrt(2.0)
    return np.stack([(k[..., 0] + k[..., 1]) / r2, k[..., 2] / r2, (k[..., 0] - k[..., 1]) / r2], axis=-1)


def outer(k: np.ndarray) -> np.ndarray:
    return k[..., :, None] * np.conj(k[..., None, :])


def _box_mean(arr: np.ndarray, window: int) -> np.ndarray:
    """Mean over a ``window``x``window`` neighbourhood of axes 0 and 1, edges replicated."""
    r = window // 2
    if r == 0:
        return arr.copy()
    pad = [(r, r), (r, r)] + [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(arr, pad, mode="edge")
    h, w = arr.shape[:2]
    rows = np.zeros((h,) + padded.shape[1:], dtype=arr.dtype)
    for dy in range(window):
        rows += padded[dy:dy + h]
    out = np.zeros_like(arr)
    for dx in range(window):
        out += rows[:, dx:dx + w]
    return out / (window * window)


def multilook_coherency(image: MultiBandImage, band: str, window: int = 3) -> np.ndarray:
    """Boxcar-averaged coherency ``T = <k k^H>`` for every pixel of ``band``.

    Returns an ``(H, W, 3, 3)`` complex128 array. Windows are clamped at the
    image border by replicating edge pixels, so output size equals input size.
    """
    if not isinstance(window, (int, np.integer)) or window < 1 or window % 2 == 0:
        raise ValueError(f"multilook window must be a positive odd integer, got {window!r}")
    if image.height == 0 or image.width == 0:
        raise EmptyImage("image has no pixels")
    k = pauli_vector(image.band(band))
    t = _box_mean(outer(k), int(window))
    # exact Hermitian symmetry and real diagonal
    t = 0.5 * (t + np.conj(np.swapaxes(t, -1, -2)))
    return t


def span(t: np.ndarray) -> np.ndarray:
    return np.real(np.trace(t, axis1=-2, axis2=-1))


# --------------------------------------------------------------------------
# Synthetic scenes


def _psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sigma)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))[None, :]


def synth_scene(class_models, layout: LabelMap, looks: int = 9, seed: int = 0, *,
                bands: Sequence[str] | None = None, return_coherency: bool = False):
    """Draw a speckled single-look scene from per-class covariance models.

    Every pixel of class ``c`` gets ``looks`` i.i.d. circular complex Gaussian
    Pauli vectors ``k ~ CN(0, Sigma_c)``; the first look is stored as the
    pixel's scattering matrix. With ``return_coherency=True`` the per-pixel
    ``looks``-look sample coherency is returned as a third element.

    ``class_models`` maps class id to :class:`ClassModel`, or is a sequence
    whose i-th entry is class ``i + 1``. Random streams are keyed by
    ``(seed, band, row)`` so the output does not depend on evaluation order.
    """
    if isinstance(class_models, Mapping):
        models = dict(class_models)
    else:
        models = {i + 1: m for i, m in enumerate(class_models)}
    if looks < 1:
        raise ValueError("looks must be >= 1")
    ids = np.unique(layout.grid)
    missing = [int(c) for c in ids if int(c) not in models]
    if missing:
        raise MissingClassModel(f"no class model for ids {missing}")
    if bands is None:
        bands = list(models[int(ids[0])].covariances)
    for c in ids:
        absent = [b for b in bands if b not in models[int(c)].covariances]
        if absent:
            raise MissingClassModel(f"class {int(c)} has no covariance for bands {absent}")

    h, w = layout.shape
    data = np.empty((len(bands), h, w, 3), dtype=np.complex64)
    coh = np.empty((len(bands), h, w, 3, 3), dtype=np.complex128) if return_coherency else None
    for b, band in enumerate(bands):
        roots = {int(c): _psd_sqrt(models[int(c)].covariances[band]) for c in ids}
        for row in range(h):
            rng = np.random.default_rng(np.random.SeedSequence([seed, b, row]))
            z = (rng.standard_normal((w, looks, 3)) + 1j * rng.standard_normal((w, looks, 3))) / math.sqrt(2.0)
            k = np.empty_like(z)
            for c, root in roots.items():
                sel = layout.grid[row] == c
                if sel.any():
                    k[sel] = z[sel] @ root.T
            data[b, row] = scattering_from_pauli(k[:, 0]).astype(np.complex64)
            if coh is not None:
                coh[b, row] = outer(k).mean(axis=1)
    image = MultiBandImage(list(bands), data)
    if return_coherency:
        return image, layout, coh
    return image, layout


def env_threads() -> int:
    """Thread cap from ``POLSAR_THREADS`` (0 or unset means automatic)."""
    try:
        n = int(os.environ.get("POLSAR_THREADS", "0"))
    except ValueError:
        n = 0
    return max(n, 0)
