"""Scoring, band/feature ablation harnesses and map rendering."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import LabelMap, MultiBandImage, multilook_coherency
from .decompositions import FAMILY_ORDER
from .errors import DimensionMismatch, IoFailure, PaletteTooSmall
from .pipeline import PipelineConfig, fit, predict
from .superpixels import SuperpixelMap

# Fixed 16-entry palette; index 0 (unlabelled) is black.
PALETTE = np.array([
    (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25),
    (0, 130, 200), (245, 130, 48), (145, 30, 180), (70, 240, 240),
    (240, 50, 230), (210, 245, 60), (250, 190, 212), (0, 128, 128),
    (220, 190, 255), (170, 110, 40), (128, 0, 0), (255, 255, 255),
], dtype=np.uint8)

BOUNDARY_COLOR = (255, 255, 0)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: truth, columns: prediction
    class_names: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class Score:
    confusion: ConfusionMatrix
    recall: np.ndarray     # per class, nan where the class has no truth pixels
    precision: np.ndarray  # per class, nan where nothing was predicted as the class
    oa: float              # trace / total
    oa_precision: float    # macro precision over non-empty prediction columns

    def as_row(self) -> dict:
        row = {"oa": self.oa, "oa_macro_precision": self.oa_precision, "n": self.confusion.total}
        for name, r, p in zip(self.confusion.class_names, self.recall, self.precision):
            row[f"recall:{name}"] = r
            row[f"precision:{name}"] = p
        return row


def _grid(pred) -> np.ndarray:
    if isinstance(pred, LabelMap):
        return pred.grid
    if hasattr(pred, "classes"):
        return pred.classes
    return np.asarray(pred)


def score(pred, truth: LabelMap) -> Score:
    """Confusion matrix and accuracies over the labelled pixels of ``truth``."""
    grid = _grid(pred)
    if grid.shape != truth.grid.shape:
        raise DimensionMismatch(f"prediction {grid.shape} vs truth {truth.grid.shape}")
    c = truth.n_classes
    sel = truth.grid > 0
    t = truth.grid[sel].astype(np.int64) - 1
    p = grid[sel].astype(np.int64) - 1
    if p.size and (p.min() < 0 or p.max() >= c):
        raise ValueError(f"predicted class ids must lie in 1..{c}")
    counts = np.bincount(t * c + p, minlength=c * c).reshape(c, c)
    diag = np.diag(counts).astype(np.float64)
    rows, cols = counts.sum(axis=1), counts.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(rows > 0, diag / rows, np.nan)
        precision = np.where(cols > 0, diag / cols, np.nan)
    total = counts.sum()
    oa = float(diag.sum() / total) if total else float("nan")
    oa_p = float(np.mean(precision[cols > 0])) if np.any(cols > 0) else float("nan")
    return Score(ConfusionMatrix(counts, list(truth.class_names)), recall, precision, oa, oa_p)


@dataclass(frozen=True)
class AblationSpec:
    band_subsets: tuple[tuple[str, ...], ...] = ()
    families: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        for group in (*self.band_subsets, *self.families):
            if not group:
                raise ValueError("ablation subsets must be non-empty")


def all_band_subsets(bands: Sequence[str]) -> list[tuple[str, ...]]:
    """Non-empty subsets ordered by size, then by band order (L, P, C, LP, LC, PC, LPC)."""
    return [c for k in range(1, len(bands) + 1) for c in itertools.combinations(bands, k)]


def subset_name(subset: Sequence[str]) -> str:
    return "".join(subset) if all(len(b) == 1 for b in subset) else "+".join(subset)


@dataclass
class AblationResult:
    kind: str                     # "bands" or "features"
    names: list[str]
    scores: list[Score]
    class_names: list[str]
    details: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [{"subset": n, **s.as_row()} for n, s in zip(self.names, self.scores)]


def _run_one(image, labels, config):
    result = fit(image, labels, config)
    pred = predict(result.model, image)
    return score(pred, result.test_labels)


def run_band_ablation(image: MultiBandImage, labels: LabelMap, spec: AblationSpec | None = None,
                      config: PipelineConfig | None = None) -> AblationResult:
    """One fit/predict/score cycle per band subset; the split depends only on the seed."""
    config = config or PipelineConfig()
    subsets = (spec.band_subsets if spec and spec.band_subsets else all_band_subsets(image.bands))
    for sub in subsets:
        unknown = [b for b in sub if b not in image.bands]
        if unknown:
            raise ValueError(f"bands {unknown} not in image {image.bands}")
    scores = [_run_one(image.select_bands(list(sub)), labels, config) for sub in subsets]
    return AblationResult("bands", [subset_name(s) for s in subsets], scores, list(labels.class_names))


def run_feature_ablation(image: MultiBandImage, labels: LabelMap, spec: AblationSpec | None = None,
                         config: PipelineConfig | None = None) -> AblationResult:
    """One cycle per decomposition family, extraction restricted to that family."""
    config = config or PipelineConfig()
    groups = spec.families if spec and spec.families else tuple((f,) for f in FAMILY_ORDER)
    scores = [_run_one(image, labels, replace(config, families=tuple(g))) for g in groups]
    return AblationResult("features", ["+".join(g) for g in groups], scores, list(labels.class_names))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if np.isnan(v) else repr(v)


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_score_csv(s: Score, path) -> None:
    """Long format: one row per class plus the two overall rows."""
    rows = [[name, _fmt(r), _fmt(p), _fmt(int(s.confusion.counts[i].sum()))]
            for i, (name, r, p) in enumerate(zip(s.confusion.class_names, s.recall, s.precision))]
    rows.append(["OA", _fmt(s.oa), "", _fmt(s.confusion.total)])
    rows.append(["OA_macro_precision", "", _fmt(s.oa_precision), _fmt(s.confusion.total)])
    _write_csv(path, ["class", "recall", "precision", "n_truth"], rows)


def write_confusion_csv(s: Score, path) -> None:
    names = s.confusion.class_names
    rows = [[name, *map(_fmt, s.confusion.counts[i])] for i, name in enumerate(names)]
    _write_csv(path, ["truth\\pred", *names], rows)


def write_ablation_csv(result: AblationResult, path) -> None:
    """One row per subset: overall scores followed by per-class recall and precision."""
    rows = result.rows()
    header = list(rows[0])
    _write_csv(path, header, [[r[k] if k == "subset" else _fmt(r[k]) for k in header] for r in rows])


def write_ablation_table(result: AblationResult, path) -> None:
    """Wide layout: classes down the rows, one column per subset, OA rows at the bottom."""
    header = ["class", *result.names]
    rows = [[name, *(_fmt(s.recall[i]) for s in result.scores)]
            for i, name in enumerate(result.class_names)]
    rows.append(["OA", *(_fmt(s.oa) for s in result.scores)])
    rows.append(["OA_macro_precision", *(_fmt(s.oa_precision) for s in result.scores)])
    _write_csv(path, header, rows)


# --------------------------------------------------------------------------
# rendering


def colorize(grid: np.ndarray, palette: np.ndarray = PALETTE) -> np.ndarray:
    grid = np.asarray(grid)
    palette = np.asarray(palette, dtype=np.uint8)
    if grid.size and int(grid.max()) >= len(palette):
        raise PaletteTooSmall(f"class id {int(grid.max())} needs a palette of {int(grid.max()) + 1} colours, "
                              f"have {len(palette)}")
    if grid.size and int(grid.min()) < 0:
        raise ValueError("class ids must be >= 0")
    return palette[grid]


def write_rgb(rgb: np.ndarray, path) -> None:
    """PPM (P6) for ``.ppm``, otherwise whatever Pillow infers from the suffix."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    try:
        if Path(path).suffix.lower() == ".ppm":
            with open(path, "wb") as fh:
                fh.write(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())
        else:
            from PIL import Image
            Image.fromarray(rgb, "RGB").save(path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def render_map(pred, path, palette: np.ndarray = PALETTE) -> np.ndarray:
    rgb = colorize(_grid(pred), palette)
    write_rgb(rgb, path)
    return rgb


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """True where a 4-neighbour belongs to another segment."""
    labels = np.asarray(labels)
    mask = np.zeros(labels.shape, dtype=bool)
    dv = labels[1:, :] != labels[:-1, :]
    dh = labels[:, 1:] != labels[:, :-1]
    mask[1:, :] |= dv
    mask[:-1, :] |= dv
    mask[:, 1:] |= dh
    mask[:, :-1] |= dh
    return mask


def pauli_rgb(image: MultiBandImage, band: str | None = None, window: int = 1,
              clip_percentile: float = 99.0) -> np.ndarray:
    """Pauli composite: R = |hh-vv|, G = |2hv|, B = |hh+vv| (amplitudes, common scale)."""
    t = multilook_coherency(image, band if band is not None else image.bands[0], window)
    amp = np.sqrt(np.maximum(np.stack([t[..., 1, 1].real, t[..., 2, 2].real, t[..., 0, 0].real], -1), 0))
    top = np.percentile(amp, clip_percentile) if amp.size else 0.0
    if top <= 0:
        return np.zeros(amp.shape, dtype=np.uint8)
    return np.round(np.clip(amp / top, 0, 1) * 255).astype(np.uint8)


def render_boundaries(sp: SuperpixelMap | np.ndarray, image: MultiBandImage, path,
                      band: str | None = None) -> np.ndarray:
    labels = sp.labels if isinstance(sp, SuperpixelMap) else np.asarray(sp)
    if labels.shape != image.shape:
        raise DimensionMismatch(f"segments {labels.shape} vs image {image.shape}")
    rgb = pauli_rgb(image, band)
    rgb[boundary_mask(labels)] = BOUNDARY_COLOR
    write_rgb(rgb, path)
    return rgb
