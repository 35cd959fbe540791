"""End-to-end classifier: features -> autoencoder 1 -> superpixels -> robust
features -> autoencoder 2 -> softmax."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from . import neural
from .container import read_container, write_container
from .data import LabelMap, MultiBandImage
from .decompositions import (
    FAMILY_ORDER,
    NormStats,
    _check_families,
    extract_features,
    fit_normalizer,
    normalize,
)
from .errors import (
    BandMismatch,
    ClassTooSmall,
    DimensionMismatch,
    MalformedModel,
    PolsarError,
    StageError,
    TooFewClasses,
)
from .neural import AEWeights, Encoder, SoftmaxClassifier, SparseAutoencoder, TrainConfig
from .superpixels import SlicParams, SuperpixelMap, slic_segment

log = logging.getLogger(__name__)

MODEL_MAGIC = b"PLSRMODEL1\n"
MODEL_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline, flat so it maps 1:1 onto CLI flags."""

    window: int = 3
    families: tuple[str, ...] = FAMILY_ORDER
    ae1_hidden: tuple[int, ...] = (32,)
    u1: int = 5
    u2: int = 10
    # first autoencoder objective
    alpha: float = 1.0
    beta: float = 1e-4
    gamma: float = 0.1
    rho: float = 0.15
    # second autoencoder objective
    lambda2: float = 1.0
    beta2: float = 1e-4
    alpha2: float = 0.1
    rho2: float = 0.15
    softmax_l2: float = 1e-4
    # optimiser (shared by both autoencoders)
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 200
    softmax_lr: float = 0.5
    softmax_epochs: int = 300
    init_scale: float | None = None
    # superpixels; slic_k=None means ceil(H*W/256)
    slic_k: int | None = None
    slic_m: float = 10.0
    slic_iters: int = 10
    min_segment_frac: float = 0.25
    train_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "families", _check_families(self.families))
        object.__setattr__(self, "ae1_hidden", tuple(int(v) for v in self.ae1_hidden))
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        if self.u1 < 1 or self.u2 < 1 or any(v < 1 for v in self.ae1_hidden):
            raise ValueError("layer sizes must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.slic_k is not None and self.slic_k < 1:
            raise ValueError("slic_k must be >= 1")
        # delegate the remaining checks to the owning modules
        self.ae1_weights(), self.ae2_weights(), self.train_config("ae1")
        self.train_config("softmax"), self.slic_params(16, 16)

    def ae1_weights(self) -> AEWeights:
        return neural.j1_weights(self.alpha, self.beta, self.gamma, self.rho)

    def ae2_weights(self) -> AEWeights:
        return neural.j2_weights(self.lambda2, self.beta2, self.alpha2, self.rho2)

    def stage_seed(self, stage: str) -> int:
        index = ("split", "ae1", "ae2", "softmax").index(stage)
        return int(np.random.SeedSequence([self.seed, index]).generate_state(1)[0])

    def train_config(self, stage: str) -> TrainConfig:
        if stage == "softmax":
            return TrainConfig(self.softmax_lr, self.batch_size, self.softmax_epochs,
                               self.stage_seed(stage), self.init_scale)
        return TrainConfig(self.lr, self.batch_size, self.epochs, self.stage_seed(stage), self.init_scale)

    def slic_params(self, height: int, width: int) -> SlicParams:
        k = self.slic_k if self.slic_k is not None else max(1, math.ceil(height * width / 256))
        return SlicParams(k, self.slic_m, self.slic_iters, self.min_segment_frac)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["families"] = list(self.families)
        d["ae1_hidden"] = list(self.ae1_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("families", "ae1_hidden"):
            if key in d and isinstance(d[key], str):
                d[key] = [v for v in d[key].split(",") if v]
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


def split(labels: LabelMap, spec: SplitSpec) -> tuple[LabelMap, LabelMap]:
    """Per-class random train/test split; both halves keep every present class."""
    train = np.zeros_like(labels.grid)
    test = np.zeros_like(labels.grid)
    flat = labels.grid.ravel()
    for c in range(1, labels.n_classes + 1):
        idx = np.flatnonzero(flat == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise ClassTooSmall(f"class {c} ({labels.class_names[c - 1]}) has a single pixel")
        n_train = int(math.floor(spec.train_fraction * idx.size + 0.5))
        n_train = min(max(n_train, 1), idx.size - 1)
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, c]))
        perm = rng.permutation(idx.size)
        train.ravel()[idx[perm[:n_train]]] = c
        test.ravel()[idx[perm[n_train:]]] = c
    return LabelMap(train, labels.class_names), LabelMap(test, labels.class_names)


def build_robust_features(hidden: np.ndarray, sp: SuperpixelMap) -> np.ndarray:
    """Stack every pixel's hidden vector with its superpixel's feature centroid."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.shape[:2] != sp.labels.shape or hidden.shape[2] != sp.features.shape[1]:
        raise DimensionMismatch(f"hidden field {hidden.shape} does not match superpixels "
                                f"{sp.labels.shape} x {sp.features.shape[1]}")
    return np.concatenate([hidden, sp.features[sp.labels]], axis=-1)


@dataclass(eq=False)
class PipelineModel:
    bands: list[str]
    class_names: list[str]
    config: PipelineConfig
    norm: NormStats
    encoder1: Encoder
    encoder2: Encoder
    classifier: SoftmaxClassifier
    format_version: int = MODEL_VERSION

    @property
    def dims(self) -> list[int]:
        """Stage widths: input features, U1, 2*U1, U2, classes."""
        return [self.encoder1.n_in, self.encoder1.n_out, self.encoder2.n_in,
                self.encoder2.n_out, self.classifier.n_classes]


@dataclass
class Prediction:
    classes: np.ndarray        # (H, W) int32, 1..C
    probabilities: np.ndarray  # (H, W, C)
    superpixels: SuperpixelMap | None = None


@dataclass
class FitResult:
    model: PipelineModel
    histories: dict[str, list[dict]]
    train_labels: LabelMap
    test_labels: LabelMap
    intermediates: dict[str, Any] = field(default_factory=dict)


def _stage(name):
    class _Ctx:
        def __enter__(self):
            log.info("stage %s", name)

        def __exit__(self, et, exc, tb):
            if exc is not None and isinstance(exc, (PolsarError, ValueError, FloatingPointError)) \
                    and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False
    return _Ctx()


def _encode_field(encoder: Encoder, x: np.ndarray) -> np.ndarray:
    h, w, d = x.shape
    return encoder(x.reshape(-1, d)).reshape(h, w, encoder.n_out)


def fit(image: MultiBandImage, labels: LabelMap, config: PipelineConfig | None = None) -> FitResult:
    """Train every stage on a per-class split of ``labels``; deterministic in ``config.seed``."""
    config = config or PipelineConfig()
    if labels.shape != image.shape:
        raise DimensionMismatch(f"labels {labels.shape} vs image {image.shape}")
    present = labels.present_classes()
    if len(present) < 2:
        raise TooFewClasses(f"need >= 2 labelled classes, found {len(present)}")

    with _stage("split"):
        train, test = split(labels, SplitSpec(config.train_fraction, config.stage_seed("split")))
    sel = train.grid > 0
    with _stage("features"):
        cube = extract_features(image, config.window, config.families)
    with _stage("normalize"):
        stats = fit_normalizer(cube, sel)
        x = normalize(cube, stats).features
    with _stage("autoencoder1"):
        ae1 = SparseAutoencoder.build([cube.dims, *config.ae1_hidden, config.u1], config.ae1_weights(),
                                      seed=config.stage_seed("ae1"), init_scale=config.init_scale)
        ae1, hist1 = neural.train(ae1, x[sel], config.train_config("ae1"))
        enc1 = ae1.encoder_only()
        hidden = _encode_field(enc1, x)
    with _stage("superpixels"):
        sp = slic_segment(hidden, config.slic_params(*image.shape))
    with _stage("robust-features"):
        robust = build_robust_features(hidden, sp)
    with _stage("autoencoder2"):
        ae2 = SparseAutoencoder.build([robust.shape[-1], config.u2], config.ae2_weights(),
                                      seed=config.stage_seed("ae2"), init_scale=config.init_scale)
        ae2, hist2 = neural.train(ae2, robust[sel], config.train_config("ae2"))
        enc2 = ae2.encoder_only()
        r = _encode_field(enc2, robust)
    with _stage("softmax"):
        clf = SoftmaxClassifier.build(config.u2, labels.n_classes, seed=config.stage_seed("softmax"),
                                      l2_weight=config.softmax_l2, init_scale=config.init_scale)
        clf, hist3 = neural.softmax_train(clf, r[sel], train.grid[sel], config.train_config("softmax"))

    model = PipelineModel(list(image.bands), list(labels.class_names), config, stats, enc1, enc2, clf)
    return FitResult(model, {"ae1": hist1, "ae2": hist2, "softmax": hist3}, train, test,
                     {"features": cube, "hidden": hidden, "superpixels": sp, "robust": robust,
                      "code": r})


def predict(model: PipelineModel, image: MultiBandImage) -> Prediction:
    """Class map and probabilities for every pixel; superpixels are recomputed on ``image``."""
    if list(image.bands) != list(model.bands):
        raise BandMismatch(f"model expects bands {model.bands}, image has {image.bands}")
    cfg = model.config
    cube = extract_features(image, cfg.window, cfg.families)
    x = normalize(cube, model.norm).features
    hidden = _encode_field(model.encoder1, x)
    sp = slic_segment(hidden, cfg.slic_params(*image.shape))
    r = _encode_field(model.encoder2, build_robust_features(hidden, sp))
    h, w, _ = r.shape
    proba = neural.softmax_predict(model.classifier, r.reshape(h * w, -1)).reshape(h, w, -1)
    classes = (np.argmax(proba, axis=-1) + 1).astype(np.int32)
    return Prediction(classes, proba, sp)


def save_model(model: PipelineModel, path) -> None:
    enc1_spec, arrays = neural.network_arrays("encoder1", model.encoder1.layers)
    enc2_spec, a2 = neural.network_arrays("encoder2", model.encoder2.layers)
    clf_spec, a3 = neural.network_arrays("softmax", [model.classifier.layer])
    arrays.update(a2)
    arrays.update(a3)
    arrays["norm.mean"] = model.norm.mean
    arrays["norm.std"] = model.norm.std
    manifest = {
        "format_version": model.format_version,
        "stages": ["features", "normalize", "encoder1", "superpixels", "robust", "encoder2", "softmax"],
        "bands": model.bands,
        "class_names": model.class_names,
        "config": model.config.to_dict(),
        "dims": model.dims,
        "encoder1": enc1_spec,
        "encoder2": enc2_spec,
        "softmax": clf_spec,
        "softmax_l2": model.classifier.l2_weight,
        "seeds": {s: model.config.stage_seed(s) for s in ("split", "ae1", "ae2", "softmax")},
    }
    write_container(path, MODEL_MAGIC, manifest, arrays)


def load_model(path) -> PipelineModel:
    manifest, arrays = read_container(path, MODEL_MAGIC, MODEL_VERSION)
    try:
        config = PipelineConfig.from_dict(manifest["config"])
        enc1 = Encoder(neural.network_from_arrays("encoder1", manifest["encoder1"], arrays))
        enc2 = Encoder(neural.network_from_arrays("encoder2", manifest["encoder2"], arrays))
        (layer,) = neural.network_from_arrays("softmax", manifest["softmax"], arrays)
        model = PipelineModel(list(manifest["bands"]), list(manifest["class_names"]), config,
                              NormStats(arrays["norm.mean"], arrays["norm.std"]), enc1, enc2,
                              SoftmaxClassifier(layer, manifest["softmax_l2"]),
                              manifest["format_version"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModel(f"{path}: {exc}") from exc
    if model.dims != manifest.get("dims"):
        raise MalformedModel(f"{path}: stage dimensions do not chain as recorded")
    if model.encoder2.n_in != 2 * model.encoder1.n_out or model.classifier.n_in != model.encoder2.n_out:
        raise MalformedModel(f"{path}: stage dimensions do not chain")
    return model


def with_bands(config: PipelineConfig, **changes) -> PipelineConfig:
    return replace(config, **changes)
