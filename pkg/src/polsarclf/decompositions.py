"""Polarimetric decomposition features (33 per band) and feature cubes.

All decomposition functions are vectorised: they take coherency arrays of
shape ``(..., 3, 3)`` (or a single :class:`~polsarclf.data.CoherencyMatrix`)
and return ``(..., n)`` real arrays. Powers are in the linear units of the
input; angles are in radians.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .data import (
    CoherencyMatrix,
    LabelMap,
    MultiBandImage,
    ScatteringMatrix,
    env_threads,
    load_raster,
    multilook_coherency,
    save_raster,
)
from .errors import ConvergenceFailure, DecompositionError, IoFailure, TooFewSamples

FAMILIES: dict[str, tuple[str, ...]] = {
    "coherency": ("T13_corr", "T23_corr", "T22_norm", "T33_norm", "span_db", "T12_corr"),
    "freeman": ("F_odd", "F_dbl", "F_vol"),
    "krogager": ("K_s", "K_d", "K_h", "K_t"),
    "yamaguchi": ("P_odd", "P_dbl", "P_vol", "P_hlx"),
    "huynen": ("A", "B0", "B", "C", "D", "E", "F", "G", "H"),
    "cloude": ("alpha", "beta", "delta", "gamma", "lambda", "entropy", "anisotropy"),
}
FAMILY_ORDER = tuple(FAMILIES)
FEATURES_PER_BAND = sum(len(v) for v in FAMILIES.values())

_REL_EPS = 1e-12
_ANGLE_TOL = 1e-9


def _as_coherency(t) -> np.ndarray:
    if isinstance(t, CoherencyMatrix):
        return t.matrix()
    t = np.asarray(t, dtype=np.complex128)
    if t.shape[-2:] != (3, 3):
        raise ValueError(f"coherency arrays must end in (3, 3), got {t.shape}")
    return t


def _span(t):
    return t[..., 0, 0].real + t[..., 1, 1].real + t[..., 2, 2].real


def _safe_div(num, den, ok):
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def coherency_features(t) -> np.ndarray:
    """Correlation ratios and normalised powers taken straight from ``T``.

    Order: ``|T13|/sqrt(T11 T33)``, ``|T23|/sqrt(T22 T33)``, ``T22/S``,
    ``T33/S``, ``10 log10 S``, ``|T12|/sqrt(T11 T22)``. A ratio whose
    diagonal channel is below ``1e-12 * S`` is defined as 0.
    """
    t = _as_coherency(t)
    s = _span(t)
    t11, t22, t33 = t[..., 0, 0].real, t[..., 1, 1].real, t[..., 2, 2].real
    eps = _REL_EPS * s

    def corr(tij, tii, tjj):
        ok = (tii > eps) & (tjj > eps)
        return np.minimum(_safe_div(np.abs(tij), np.sqrt(np.abs(tii * tjj)), ok), 1.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.stack([
            corr(t[..., 0, 2], t11, t33),
            corr(t[..., 1, 2], t22, t33),
            _safe_div(t22, s, s > 0),
            _safe_div(t33, s, s > 0),
            10.0 * np.log10(s),
            corr(t[..., 0, 1], t11, t22),
        ], axis=-1)
    return out


def _lexicographic_terms(t):
    """``<|S_hh|^2>``, ``<|S_vv|^2>``, ``<S_hh S_vv*>``, ``<2|S_hv|^2>`` from ``T``."""
    t11, t22, t33 = t[..., 0, 0].real, t[..., 1, 1].real, t[..., 2, 2].real
    t12 = t[..., 0, 1]
    c11 = 0.5 * (t11 + t22) + t12.real
    c33 = 0.5 * (t11 + t22) - t12.real
    c13 = 0.5 * (t11 - t22) - 1j * t12.imag
    return c11, c33, c13, t33


def freeman(t) -> np.ndarray:
    """Freeman-Durden three-component powers ``(F_odd, F_dbl, F_vol)``.

    Volume power comes from the cross-polar channel (random dipole cloud).
    When the volume model consumes all co-polar power the pixel is pure
    volume. Non-realisable residual correlations are scaled back onto the
    Cauchy-Schwarz bound. Realisable pixels satisfy
    ``F_odd + F_dbl + F_vol == span``.
    """
    t = _as_coherency(t)
    c11, c33, c13, c22 = _lexicographic_terms(t)
    span = _span(t)
    eps = _REL_EPS * np.abs(span)

    fv = 1.5 * c22
    r11 = c11 - fv
    r33 = c33 - fv
    r13 = c13 - fv / 3.0
    vol_only = (r11 <= eps) | (r33 <= eps)

    p13 = np.abs(r13) ** 2
    prod = np.where(vol_only, 0.0, r11 * r33)
    over = ~vol_only & (p13 > prod)
    scale = np.sqrt(_safe_div(prod, p13, over))
    r13 = np.where(over, r13 * scale, r13)
    p13 = np.abs(r13) ** 2
    det = np.maximum(prod - p13, 0.0)

    odd_dom = r13.real >= 0
    # surface dominant: double-bounce model fixed at alpha = -1
    den_s = r11 + r33 + 2.0 * r13.real
    fd_s = _safe_div(det, den_s, den_s > eps)
    fs_s = r33 - fd_s
    ps_s = fs_s + _safe_div(np.abs(fd_s + r13) ** 2, fs_s, fs_s > eps)
    pd_s = 2.0 * fd_s
    # double-bounce dominant: surface model fixed at beta = 1
    den_d = r11 + r33 - 2.0 * r13.real
    fs_d = _safe_div(det, den_d, den_d > eps)
    fd_d = r33 - fs_d
    pd_d = fd_d + _safe_div(np.abs(r13 - fs_d) ** 2, fd_d, fd_d > eps)
    ps_d = 2.0 * fs_d

    p_odd = np.where(vol_only, 0.0, np.where(odd_dom, ps_s, ps_d))
    p_dbl = np.where(vol_only, 0.0, np.where(odd_dom, pd_s, pd_d))
    p_vol = np.where(vol_only, span, 4.0 * c22)
    return np.maximum(np.stack([p_odd, p_dbl, p_vol], axis=-1), 0.0)


def _circular(s):
    hh, hv, vv = s[..., 0], s[..., 1], s[..., 2]
    s_rr = 1j * hv + 0.5 * (hh - vv)
    s_ll = 1j * hv - 0.5 * (hh - vv)
    s_rl = 0.5j * (hh + vv)
    return s_rr, s_ll, s_rl


def _diplane_angle(phase_diff):
    return np.mod((phase_diff + math.pi) / 4.0, math.pi / 2.0)


def krogager(s) -> np.ndarray:
    """Sphere-diplane-helix parameters ``(K_s, K_d, K_h, K_t)`` of one or more ``S``.

    ``K_t`` is the diplane orientation ``(arg S_RR - arg S_LL + pi) / 4``
    wrapped to ``[0, pi/2)``, and 0 when ``S_RR S_LL*`` vanishes (no
    diplane to orient); the other three are magnitudes.
    """
    if isinstance(s, ScatteringMatrix):
        s = s.as_array()
    s = np.asarray(s, dtype=np.complex128)
    s_rr, s_ll, s_rl = _circular(s)
    a_rr, a_ll = np.abs(s_rr), np.abs(s_ll)
    k_t = _diplane_angle(np.angle(s_rr) - np.angle(s_ll))
    span = np.abs(s[..., 0]) ** 2 + np.abs(s[..., 2]) ** 2 + 2.0 * np.abs(s[..., 1]) ** 2
    k_t = np.where(a_rr * a_ll > _REL_EPS * span, k_t, 0.0)
    return np.stack([np.abs(s_rl), np.minimum(a_rr, a_ll), np.abs(a_rr - a_ll), k_t], axis=-1)


def krogager_incoherent(t) -> np.ndarray:
    """Krogager parameters from window-averaged circular-basis powers.

    Uses ``<|S_RL|^2> = T11/2``, ``<|S_RR|^2>, <|S_LL|^2> = (T22+T33)/2 +- Im T23``
    and ``<S_RR S_LL*> = (T33 - T22)/2 - j Re T23``. For a single-look ``T``
    this reproduces :func:`krogager` on the underlying scattering matrix.
    """
    t = _as_coherency(t)
    t11, t22, t33 = t[..., 0, 0].real, t[..., 1, 1].real, t[..., 2, 2].real
    im23, re23 = t[..., 1, 2].imag, t[..., 1, 2].real
    a_rr = np.sqrt(np.maximum(0.5 * (t22 + t33) + im23, 0.0))
    a_ll = np.sqrt(np.maximum(0.5 * (t22 + t33) - im23, 0.0))
    a_rl = np.sqrt(np.maximum(0.5 * t11, 0.0))
    cross = 0.5 * (t33 - t22) - 1j * re23
    k_t = np.where(np.abs(cross) > _REL_EPS * _span(t), _diplane_angle(np.angle(cross)), 0.0)
    return np.stack([a_rl, np.minimum(a_rr, a_ll), np.abs(a_rr - a_ll), k_t], axis=-1)


def yamaguchi4(t) -> np.ndarray:
    """Four-component powers ``(P_odd, P_dbl, P_vol, P_hlx)``.

    Helix power is ``2 |Im T23|``; the volume model switches on the co-polar
    power ratio. Pixels whose volume power comes out negative fall back to
    :func:`freeman` with zero helix power. Negative branch results are
    reassigned so the four powers always total the span.
    """
    t = _as_coherency(t)
    span = _span(t)
    eps = _REL_EPS * np.abs(span)
    t11, t22, t33 = t[..., 0, 0].real, t[..., 1, 1].real, t[..., 2, 2].real
    t12, t13, t23 = t[..., 0, 1], t[..., 0, 2], t[..., 1, 2]

    p_hlx = 2.0 * np.abs(t23.imag)
    vv = t11 + t22 - 2.0 * t12.real
    hh = t11 + t22 + 2.0 * t12.real
    tiny = np.maximum(eps, np.finfo(float).tiny)
    with np.errstate(divide="ignore"):
        ratio = 10.0 * np.log10(np.maximum(vv, tiny) / np.maximum(hh, tiny))
    mid = (ratio > -2.0) & (ratio <= 2.0)
    p_vol = np.where(mid, 2.0, 15.0 / 8.0) * (2.0 * t33 - p_hlx)
    fallback = p_vol < 0

    surf = t11 - p_vol / 2.0
    dbl = span - p_vol - p_hlx - surf
    c = t12 + t13
    c = np.where(ratio <= -2.0, c - p_vol / 6.0, c)
    c = np.where(ratio > 2.0, c + p_vol / 6.0, c)
    c2 = np.abs(c) ** 2

    saturated = p_vol + p_hlx > span
    c0 = 2.0 * t11 + p_hlx - span > 0
    by_s = _safe_div(c2, surf, surf > eps)
    by_d = _safe_div(c2, dbl, dbl > eps)
    p_odd = np.where(c0, surf + by_s, surf - by_d)
    p_dbl = np.where(c0, dbl - by_s, dbl + by_d)
    p_vol = np.where(saturated, span - p_hlx, p_vol)
    p_odd = np.where(saturated, 0.0, p_odd)
    p_dbl = np.where(saturated, 0.0, p_dbl)

    rest = span - p_vol - p_hlx
    both = (p_odd < 0) & (p_dbl < 0)
    p_vol = np.where(both, span - p_hlx, p_vol)
    only_odd = (p_odd < 0) & ~both
    only_dbl = (p_dbl < 0) & ~both
    p_odd, p_dbl = (
        np.where(both | only_odd, 0.0, np.where(only_dbl, rest, p_odd)),
        np.where(both | only_dbl, 0.0, np.where(only_odd, rest, p_dbl)),
    )

    out = np.stack([p_odd, p_dbl, p_vol, p_hlx], axis=-1)
    if np.any(fallback):
        fr = freeman(t)
        alt = np.concatenate([fr, np.zeros(fr.shape[:-1] + (1,))], axis=-1)
        out = np.where(fallback[..., None], alt, out)
    return np.maximum(out, 0.0)


def huynen(t) -> np.ndarray:
    """Huynen parameters ``(A, B0, B, C, D, E, F, G, H)`` as a linear map of ``T``.

    Convention: ``2A = T11``, ``B0 +- B = T22, T33``, ``T12 = C - jD``,
    ``T23 = E + jF``, ``T13 = G + jH``.
    """
    t = _as_coherency(t)
    t11, t22, t33 = t[..., 0, 0].real, t[..., 1, 1].real, t[..., 2, 2].real
    t12, t13, t23 = t[..., 0, 1], t[..., 0, 2], t[..., 1, 2]
    return np.stack([
        0.5 * t11, 0.5 * (t22 + t33), 0.5 * (t22 - t33),
        t12.real, -t12.imag, t23.real, t23.imag, t13.real, t13.imag,
    ], axis=-1)


def huynen_to_coherency(params) -> np.ndarray:
    p = np.asarray(params, dtype=np.float64)
    a, b0, b, c, d, e, f, g, h = np.moveaxis(p, -1, 0)
    t = np.zeros(p.shape[:-1] + (3, 3), dtype=np.complex128)
    t[..., 0, 0] = 2.0 * a
    t[..., 1, 1] = b0 + b
    t[..., 2, 2] = b0 - b
    t[..., 0, 1] = c - 1j * d
    t[..., 0, 2] = g + 1j * h
    t[..., 1, 2] = e + 1j * f
    t[..., 1, 0] = np.conj(t[..., 0, 1])
    t[..., 2, 0] = np.conj(t[..., 0, 2])
    t[..., 2, 1] = np.conj(t[..., 1, 2])
    return t


@dataclass(frozen=True)
class EigenDecomp3:
    values: np.ndarray   # (3,) descending
    vectors: np.ndarray  # (3, 3) complex, column i pairs with values[i]


def eigh3_batch(t) -> tuple[np.ndarray, np.ndarray]:
    """Sorted eigen-decomposition of a stack of Hermitian 3x3 matrices.

    Eigenvalues come back descending; values in ``[-1e-9 * scale, 0)`` with
    ``scale = sum |lambda|`` are clamped to zero. Eigenvectors are the
    columns of the second output.
    """
    t = _as_coherency(t)
    lead = t.shape[:-2]
    flat = np.ascontiguousarray(t.reshape(-1, 3, 3))
    vals, vecs, sweeps = _kernels.jacobi_eigh3(flat, env_threads())
    if np.any(sweeps < 0):
        bad = int(np.flatnonzero(sweeps < 0)[0])
        raise ConvergenceFailure(f"Jacobi iteration cap hit for matrix {bad}")
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    scale = np.abs(vals).sum(axis=1, keepdims=True)
    vals = np.where((vals < 0) & (vals >= -1e-9 * scale), 0.0, vals)
    return vals.reshape(lead + (3,)), vecs.reshape(lead + (3, 3))


def eigh3(t) -> EigenDecomp3:
    vals, vecs = eigh3_batch(_as_coherency(t)[None])
    return EigenDecomp3(vals[0], vecs[0])


def cloude(t, eig=None) -> np.ndarray:
    """Eigenvector-based parameters ``(alpha, beta, delta, gamma, lambda, H, A)``.

    Each eigenvector is written ``e^{j phi} (cos a, sin a cos b e^{j d},
    sin a sin b e^{j g})`` with the phase chosen so its first non-negligible
    component is real and non-negative; the reported angles and ``lambda`` are
    the eigenvalue-probability-weighted means. Entropy uses base-3 logs.
    """
    t = _as_coherency(t)
    vals, vecs = eig if eig is not None else eigh3_batch(t)
    vals = np.maximum(vals, 0.0)
    total = vals.sum(axis=-1, keepdims=True)
    p = _safe_div(vals, total, total > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    entropy = np.clip(-plogp.sum(axis=-1) / math.log(3.0), 0.0, 1.0) + 0.0

    l2, l3 = vals[..., 1], vals[..., 2]
    eps = _REL_EPS * total[..., 0]
    aniso = np.clip(_safe_div(l2 - l3, l2 + l3, (l2 + l3) > eps), 0.0, 1.0)

    mags = np.abs(vecs)  # (..., component, eigvec)
    ref = np.where(mags[..., 0, :] > _ANGLE_TOL, 0, np.where(mags[..., 1, :] > _ANGLE_TOL, 1, 2))
    ref_val = np.take_along_axis(vecs, ref[..., None, :], axis=-2)[..., 0, :]
    gauge = np.exp(-1j * np.angle(ref_val))
    u = vecs * gauge[..., None, :]

    alpha_i = np.arccos(np.clip(mags[..., 0, :], 0.0, 1.0))
    beta_i = np.where((mags[..., 1, :] > _ANGLE_TOL) | (mags[..., 2, :] > _ANGLE_TOL),
                      np.arctan2(mags[..., 2, :], mags[..., 1, :]), 0.0)
    delta_i = np.where(mags[..., 1, :] > _ANGLE_TOL, np.angle(u[..., 1, :]), 0.0)
    gamma_i = np.where(mags[..., 2, :] > _ANGLE_TOL, np.angle(u[..., 2, :]), 0.0)

    def mean(x):
        return (p * x).sum(axis=-1)

    return np.stack([mean(alpha_i), mean(beta_i), mean(delta_i), mean(gamma_i),
                     mean(vals), entropy, aniso], axis=-1)


_FAMILY_FUNCS = {
    "coherency": coherency_features,
    "freeman": freeman,
    "krogager": krogager_incoherent,
    "yamaguchi": yamaguchi4,
    "huynen": huynen,
    "cloude": cloude,
}


def band_features(t, families: Sequence[str] = FAMILY_ORDER) -> np.ndarray:
    """Concatenate the requested families (in canonical order) for coherency stack ``t``."""
    t = _as_coherency(t)
    return np.concatenate([_FAMILY_FUNCS[f](t) for f in FAMILY_ORDER if f in families], axis=-1)


def _check_families(families) -> tuple[str, ...]:
    families = tuple(FAMILY_ORDER if families is None else families)
    unknown = [f for f in families if f not in FAMILIES]
    if unknown or not families:
        raise ValueError(f"unknown or empty feature families: {unknown or families}")
    return tuple(f for f in FAMILY_ORDER if f in families)


def feature_names(bands: Sequence[str], families=None) -> list[str]:
    families = _check_families(families)
    return [f"{b}:{f}:{n}" for b in bands for f in families for n in FAMILIES[f]]


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj) -> "NormStats":
        return cls(np.asarray(obj["mean"], dtype=np.float64), np.asarray(obj["std"], dtype=np.float64))


@dataclass(eq=False)
class FeatureCube:
    features: np.ndarray  # (H, W, dims) float64
    bands: list[str]
    families: tuple[str, ...] = FAMILY_ORDER
    stats: NormStats | None = None
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.names:
            self.names = feature_names(self.bands, self.families)
        if self.features.shape[-1] != len(self.names):
            raise ValueError("feature dimension does not match names")

    @property
    def dims(self) -> int:
        return self.features.shape[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.features.shape[:2]


def extract_features(image: MultiBandImage, window: int = 3, families=None) -> FeatureCube:
    """Per-pixel feature vectors: every band's families concatenated in band order."""
    families = _check_families(families)
    blocks = []
    for band in image.bands:
        t = multilook_coherency(image, band, window)
        s = _span(t)
        bad = ~(s > 0)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DecompositionError("coherency span must be positive", int(r), int(c), band)
        try:
            feats = band_features(t, families)
        except ConvergenceFailure as exc:
            raise DecompositionError(str(exc), band=band) from exc
        nonfinite = ~np.isfinite(feats).all(axis=-1)
        if nonfinite.any():
            r, c = np.argwhere(nonfinite)[0]
            raise DecompositionError("non-finite feature value", int(r), int(c), band)
        blocks.append(feats)
    return FeatureCube(np.concatenate(blocks, axis=-1), list(image.bands), families)


def _selection(cube: FeatureCube, mask) -> np.ndarray:
    if mask is None:
        return np.ones(cube.shape, dtype=bool)
    if isinstance(mask, LabelMap):
        return mask.grid > 0
    return np.asarray(mask, dtype=bool)


def fit_normalizer(cube: FeatureCube, mask=None) -> NormStats:
    """Per-feature mean and population std over the pixels selected by ``mask``."""
    sel = _selection(cube, mask)
    x = cube.features[sel]
    if x.shape[0] < 2:
        raise TooFewSamples(f"normalizer needs >= 2 pixels, mask selects {x.shape[0]}")
    return NormStats(x.mean(axis=0), x.std(axis=0))


def normalize(cube: FeatureCube, stats: NormStats) -> FeatureCube:
    if stats.mean.shape != (cube.dims,):
        raise ValueError("normalizer was fitted on a different feature layout")
    live = stats.std >= 1e-12
    z = np.where(live, (cube.features - stats.mean) / np.where(live, stats.std, 1.0), 0.0)
    return FeatureCube(z, cube.bands, cube.families, stats, list(cube.names))


def save_features(cube: FeatureCube, path) -> None:
    save_raster(path, cube.features, kind="features", bands=cube.bands,
                families=list(cube.families))
    if cube.stats is not None:
        side = Path(str(path) + ".norm.json")
        try:
            side.write_text(json.dumps(cube.stats.to_json()) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write {side}: {exc}") from exc


def load_features(path) -> FeatureCube:
    arr, header = load_raster(path, kind="features")
    side = Path(str(path) + ".norm.json")
    stats = NormStats.from_json(json.loads(side.read_text(encoding="utf-8"))) if side.exists() else None
    return FeatureCube(arr.astype(np.float64), header.get("bands", []),
                       tuple(header.get("families", FAMILY_ORDER)), stats)
