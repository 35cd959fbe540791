"""Canonical scattering covariances, field layouts and ready-made synthetic fixtures."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ClassModel, LabelMap, synth_scene
from .errors import IoFailure, MissingClassModel

# Pauli-basis coherency matrices of unit span
CANONICAL: dict[str, np.ndarray] = {
    "surface": np.diag([0.92, 0.05, 0.03]).astype(np.complex128),
    "dihedral": np.diag([0.05, 0.92, 0.03]).astype(np.complex128),
    # random cloud of thin dipoles
    "volume": np.diag([0.5, 0.25, 0.25]).astype(np.complex128),
    "helix": np.array([[0.04, 0, 0], [0, 0.48, 0.46j], [0, -0.46j, 0.48]], dtype=np.complex128),
}


def canonical(name: str, power: float = 1.0) -> np.ndarray:
    try:
        return power * CANONICAL[name]
    except KeyError:
        raise KeyError(f"unknown canonical scatterer {name!r}; choose from {sorted(CANONICAL)}") from None


def patchwork_layout(height: int, width: int, n_classes: int, seed: int = 0,
                     field_size: tuple[int, int] = (12, 28), names: Sequence[str] | None = None) -> LabelMap:
    """Agricultural-style layout: horizontal strips cut into rectangular fields.

    Field ids are dealt round-robin over the classes and then shuffled, so
    every class appears whenever there are at least ``n_classes`` fields.
    """
    rng = np.random.default_rng(seed)
    lo, hi = field_size
    grid = np.zeros((height, width), dtype=np.int32)
    boxes = []
    y = 0
    while y < height:
        dh = int(rng.integers(lo, hi + 1))
        if height - (y + dh) < lo:
            dh = height - y
        x = 0
        while x < width:
            dw = int(rng.integers(lo, hi + 1))
            if width - (x + dw) < lo:
                dw = width - x
            boxes.append((y, x, dh, dw))
            x += dw
        y += dh
    ids = rng.permutation(np.arange(len(boxes)) % n_classes + 1)
    for (y, x, dh, dw), c in zip(boxes, ids):
        grid[y:y + dh, x:x + dw] = c
    names = list(names) if names is not None else [f"class{c}" for c in range(1, n_classes + 1)]
    return LabelMap(grid, names)


def models_from_codes(codes: dict[str, Sequence[str]], bands: Sequence[str],
                      powers: dict[str, float] | None = None) -> list[ClassModel]:
    """Build class models from per-band canonical scatterer names."""
    powers = powers or {}
    return [
        ClassModel(name, {b: canonical(mech, powers.get(b, 1.0)) for b, mech in zip(bands, mechs)})
        for name, mechs in codes.items()
    ]


BANDS3 = ("L", "P", "C")
BAND_POWER = {"L": 1.0, "P": 1.6, "C": 0.6}

# Each band on its own leaves two pairs of classes indistinguishable; all
# three bands together separate all five.
FIVE_CLASS_CODES = {
    "surface": ("surface", "surface", "surface"),
    "mixed_sdd": ("surface", "dihedral", "dihedral"),
    "mixed_dsd": ("dihedral", "surface", "dihedral"),
    "mixed_dds": ("dihedral", "dihedral", "surface"),
    "forest": ("volume", "volume", "volume"),
}

# "target" matches "base" everywhere except the second band
BAND2_CODES = {
    "base": ("surface", "surface", "surface"),
    "target": ("surface", "dihedral", "surface"),
    "forest": ("volume", "volume", "volume"),
}


def five_class_fixture(size: int = 64, seed: int = 0, looks: int = 9):
    models = models_from_codes(FIVE_CLASS_CODES, BANDS3, BAND_POWER)
    layout = patchwork_layout(size, size, len(models), seed=seed, names=list(FIVE_CLASS_CODES))
    return synth_scene(models, layout, looks=looks, seed=seed, bands=list(BANDS3))


def two_class_fixture(size: int = 48, seed: int = 0, looks: int = 9, bands: Sequence[str] = ("L",)):
    codes = {"surface": ("surface",) * len(bands), "dihedral": ("dihedral",) * len(bands)}
    models = models_from_codes(codes, bands)
    layout = patchwork_layout(size, size, 2, seed=seed, names=list(codes))
    return synth_scene(models, layout, looks=looks, seed=seed, bands=list(bands))


def band2_fixture(size: int = 64, seed: int = 0, looks: int = 9):
    models = models_from_codes(BAND2_CODES, BANDS3, BAND_POWER)
    layout = patchwork_layout(size, size, len(models), seed=seed, names=list(BAND2_CODES))
    return synth_scene(models, layout, looks=looks, seed=seed, bands=list(BANDS3))


def _parse_covariance(spec, where: str) -> np.ndarray:
    if isinstance(spec, str):
        return canonical(spec)
    if isinstance(spec, dict) and "canonical" in spec:
        return canonical(spec["canonical"], float(spec.get("power", 1.0)))
    if isinstance(spec, dict) and "real" in spec:
        re = np.asarray(spec["real"], dtype=np.float64)
        im = np.asarray(spec.get("imag", np.zeros_like(re)), dtype=np.float64)
        return re + 1j * im
    raise ValueError(f"{where}: covariance must be a canonical name, "
                     "{'canonical', 'power'} or {'real', 'imag'}")


def load_class_models(path) -> tuple[list[str], list[ClassModel]]:
    """Read a class-model JSON file.

    Layout::

        {"bands": ["L", "C"],
         "classes": [{"name": "water", "covariance": {"L": "surface",
                      "C": {"canonical": "surface", "power": 0.5}}},
                     {"name": "crop", "covariance": {"L": {"real": [[...]], "imag": [[...]]}, ...}}]}
    """
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read class models {path}: {exc}") from exc
    bands = list(cfg["bands"])
    models = []
    for i, cls in enumerate(cfg["classes"]):
        name = cls.get("name", f"class{i + 1}")
        cov = cls["covariance"]
        missing = [b for b in bands if b not in cov]
        if missing:
            raise MissingClassModel(f"class {name!r} lacks bands {missing}")
        models.append(ClassModel(name, {b: _parse_covariance(cov[b], f"{name}/{b}") for b in bands}))
    return bands, models


def write_class_models(path, bands: Sequence[str], models: Sequence[ClassModel]) -> None:
    out = {"bands": list(bands), "classes": [
        {"name": m.name, "covariance": {
            b: {"real": m.covariances[b].real.tolist(), "imag": m.covariances[b].imag.tolist()}
            for b in bands}}
        for m in models]}
    Path(path).write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
