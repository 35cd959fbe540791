"""Dense tanh networks, sparse-autoencoder losses with backprop, softmax head.

Weights are stored ``(out, in)`` and a layer computes
``act(x @ W.T + b)`` on row-major batches. Everything runs in float64.

The two autoencoder objectives share one form::

    l2_weight * sum ||W||_F^2
      + recon_weight * mean_i ||x_i - x'_i||^2
      + kl_weight * sum_t KL(rho || rho_t)

where ``rho_t`` is the batch mean of ``(h_t + 1) / 2`` for hidden unit ``t``
(tanh output remapped to [0, 1]) clamped to ``[1e-6, 1 - 1e-6]``.
"""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .container import read_container, write_container
from .errors import DivergenceDetected, MalformedModel, ShapeMismatch

log = logging.getLogger(__name__)

RHO_CLAMP = 1e-6
NET_MAGIC = b"PLSRNET1\n"
NET_VERSION = 1


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(f"layer weights {self.weights.shape} vs bias {self.bias.shape}")
        if self.activation not in ("tanh", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"layer expects {self.n_in} inputs, got {x.shape[-1]}")
        z = x @ self.weights.T + self.bias
        return np.tanh(z) if self.activation == "tanh" else z

    @classmethod
    def init(cls, n_in, n_out, rng, scale=None, activation="tanh"):
        scale = 1.0 / np.sqrt(n_in) if scale is None else scale
        return cls(rng.uniform(-scale, scale, size=(n_out, n_in)), np.zeros(n_out), activation)


@dataclass(frozen=True)
class AEWeights:
    """Loss-term coefficients of a sparse autoencoder objective."""

    recon_weight: float = 1.0
    l2_weight: float = 1e-4
    kl_weight: float = 0.1
    rho: float = 0.15

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if min(self.recon_weight, self.l2_weight, self.kl_weight) < 0:
            raise ValueError("loss weights must be non-negative")


def j1_weights(alpha=1.0, beta=1e-4, gamma=0.1, rho=0.15) -> AEWeights:
    """First-module objective: ``alpha`` reconstruction, ``beta`` L2, ``gamma`` KL."""
    return AEWeights(recon_weight=alpha, l2_weight=beta, kl_weight=gamma, rho=rho)


def j2_weights(lam=1.0, beta=1e-4, alpha=0.1, rho=0.15) -> AEWeights:
    """Second-module objective: ``lam`` reconstruction, ``beta`` L2, ``alpha`` KL."""
    return AEWeights(recon_weight=lam, l2_weight=beta, kl_weight=alpha, rho=rho)


@dataclass
class Encoder:
    """Encoder half of a trained autoencoder, decoder disconnected."""

    layers: list[DenseLayer]

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            x = layer.forward(x)
        return x


@dataclass
class SparseAutoencoder:
    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    weights: AEWeights = field(default_factory=AEWeights)

    def __post_init__(self):
        layers = self.encoder + self.decoder
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeMismatch(f"layer chain broken: {a.n_out} -> {b.n_in}")
        if self.decoder[-1].n_out != self.encoder[0].n_in:
            raise ShapeMismatch("decoder output must match encoder input")

    @classmethod
    def build(cls, sizes: Sequence[int], weights: AEWeights | None = None, seed=0, init_scale=None):
        """Encoder through ``sizes`` (e.g. ``[99, 32, 5]``) with a mirrored decoder."""
        rng = np.random.default_rng(seed)
        sizes = list(sizes)
        enc = [DenseLayer.init(a, b, rng, init_scale) for a, b in zip(sizes, sizes[1:])]
        back = sizes[::-1]
        dec = [DenseLayer.init(a, b, rng, init_scale) for a, b in zip(back, back[1:])]
        return cls(enc, dec, weights or AEWeights())

    @property
    def layers(self) -> list[DenseLayer]:
        return self.encoder + self.decoder

    @property
    def n_in(self):
        return self.encoder[0].n_in

    @property
    def n_hidden(self):
        return self.encoder[-1].n_out

    def encode(self, x):
        return self.encoder_only()(x)

    def decode(self, h):
        h = np.asarray(h, dtype=np.float64)
        if h.shape[-1] != self.n_hidden:
            raise ShapeMismatch(f"decoder expects {self.n_hidden} inputs, got {h.shape[-1]}")
        for layer in self.decoder:
            h = layer.forward(h)
        return h

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def encoder_only(self) -> Encoder:
        return Encoder(self.encoder)

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out


@dataclass
class SoftmaxClassifier:
    layer: DenseLayer
    l2_weight: float = 1e-4

    @classmethod
    def build(cls, n_in, n_classes, seed=0, l2_weight=1e-4, init_scale=None):
        rng = np.random.default_rng(seed)
        return cls(DenseLayer.init(n_in, n_classes, rng, init_scale, activation="linear"), l2_weight)

    @property
    def n_classes(self):
        return self.layer.n_out

    @property
    def n_in(self):
        return self.layer.n_in

    def logits(self, x):
        return self.layer.forward(np.asarray(x, dtype=np.float64))

    def params(self):
        return [self.layer.weights, self.layer.bias]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    init_scale: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


# --------------------------------------------------------------------------
# losses


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def kl_sparsity(rho, rho_t):
    """Bernoulli KL divergence ``KL(rho || rho_t)``; ``rho_t`` clamped away from 0 and 1."""
    rho_t = np.clip(rho_t, RHO_CLAMP, 1.0 - RHO_CLAMP)
    return rho * np.log(rho / rho_t) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_t))


def mean_activation(h: np.ndarray) -> np.ndarray:
    """Per-unit batch mean of tanh outputs remapped to [0, 1] (unclamped)."""
    return np.mean((np.asarray(h) + 1.0) / 2.0, axis=0)


def _l2(layers):
    return sum(float(np.sum(layer.weights ** 2)) for layer in layers)


def ae_loss_terms(ae: SparseAutoencoder, batch) -> dict[str, float]:
    """Total loss and its weighted parts (``l2``, ``recon``, ``kl``)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatch("batch must be a non-empty 2-D array")
    w = ae.weights
    h = ae.encode(x)
    xr = ae.decode(h)
    l2 = w.l2_weight * _l2(ae.layers)
    recon = w.recon_weight * float(np.mean(np.sum((x - xr) ** 2, axis=1)))
    kl = w.kl_weight * float(np.sum(kl_sparsity(w.rho, mean_activation(h))))
    return {"loss": l2 + recon + kl, "l2": l2, "recon": recon, "kl": kl}


def loss_j1(ae: SparseAutoencoder, batch) -> float:
    return ae_loss_terms(ae, batch)["loss"]


def loss_j2(ae: SparseAutoencoder, batch) -> float:
    if len(ae.encoder) != 1 or len(ae.decoder) != 1:
        raise ShapeMismatch("second-module autoencoder has exactly one encoder and one decoder layer")
    return ae_loss_terms(ae, batch)["loss"]


def softmax_loss_terms(clf: SoftmaxClassifier, x, labels) -> dict[str, float]:
    x = np.asarray(x, dtype=np.float64)
    idx = _label_index(clf, labels, len(x))
    z = clf.logits(x)
    zmax = z.max(axis=1, keepdims=True)
    logp = z - zmax - np.log(np.sum(np.exp(z - zmax), axis=1, keepdims=True))
    ce = -float(np.mean(logp[np.arange(len(x)), idx]))
    l2 = clf.l2_weight * float(np.sum(clf.layer.weights ** 2))
    return {"loss": ce + l2, "l2": l2, "ce": ce}


def _label_index(clf, labels, n):
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeMismatch("one label per sample required")
    if y.size and (y.min() < 1 or y.max() > clf.n_classes):
        raise ValueError(f"labels must lie in 1..{clf.n_classes}")
    return y.astype(np.int64) - 1


# --------------------------------------------------------------------------
# gradients


def ae_gradients(ae: SparseAutoencoder, batch) -> list[np.ndarray]:
    """Analytic gradient of the autoencoder objective, ordered like ``ae.params()``."""
    x = np.asarray(batch, dtype=np.float64)
    n = x.shape[0]
    if x.ndim != 2 or x.shape[1] != ae.n_in:
        raise ShapeMismatch(f"batch must be (N, {ae.n_in})")
    w = ae.weights
    acts = [x]
    for layer in ae.layers:
        acts.append(layer.forward(acts[-1]))
    n_enc = len(ae.encoder)

    grad_a = w.recon_weight * 2.0 / n * (acts[-1] - x)
    grads: list[np.ndarray] = []
    for i in range(len(ae.layers) - 1, -1, -1):
        layer = ae.layers[i]
        if i + 1 == n_enc:
            rho_t = mean_activation(acts[i + 1])
            inside = (rho_t > RHO_CLAMP) & (rho_t < 1.0 - RHO_CLAMP)
            dkl = np.where(inside, -w.rho / rho_t + (1.0 - w.rho) / (1.0 - rho_t), 0.0)
            grad_a = grad_a + w.kl_weight * dkl / (2.0 * n)
        delta = grad_a * (1.0 - acts[i + 1] ** 2) if layer.activation == "tanh" else grad_a
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ acts[i] + 2.0 * w.l2_weight * layer.weights)
        grad_a = delta @ layer.weights
    return grads[::-1]


def softmax_gradients(clf: SoftmaxClassifier, x, labels) -> list[np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    idx = _label_index(clf, labels, n)
    dz = softmax(clf.logits(x))
    dz[np.arange(n), idx] -= 1.0
    dz /= n
    return [dz.T @ x + 2.0 * clf.l2_weight * clf.layer.weights, dz.sum(axis=0)]


def gradients(model, batch, labels=None) -> list[np.ndarray]:
    """Parameter gradients of the model's training loss on ``batch``."""
    if isinstance(model, SoftmaxClassifier):
        return softmax_gradients(model, batch, labels)
    return ae_gradients(model, batch)


def loss_terms(model, batch, labels=None) -> dict[str, float]:
    if isinstance(model, SoftmaxClassifier):
        return softmax_loss_terms(model, batch, labels)
    return ae_loss_terms(model, batch)


# --------------------------------------------------------------------------
# training


def train(model, data, config: TrainConfig, labels=None):
    """Mini-batch gradient descent with a constant step.

    Returns a trained copy of ``model`` and the per-epoch history of the
    full-data loss terms. Batch order comes from ``config.seed`` only, so equal
    inputs give bit-identical parameters.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    y = None if labels is None else np.asarray(labels)
    model = copy.deepcopy(model)
    params = model.params()
    rng = np.random.default_rng(config.seed)
    history = []
    n = x.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            grads = gradients(model, x[sel], None if y is None else y[sel])
            for p, g in zip(params, grads):
                p -= config.learning_rate * g
        terms = loss_terms(model, x, y)
        if not all(np.isfinite(v) for v in terms.values()) or not all(
                np.isfinite(p).all() for p in params):
            raise DivergenceDetected(f"loss became non-finite at epoch {epoch}")
        history.append({"epoch": epoch, **terms})
        if epoch == 1 or epoch % 50 == 0 or epoch == config.epochs:
            log.debug("epoch %d loss %.6g", epoch, terms["loss"])
    return model, history


def softmax_predict(clf: SoftmaxClassifier, x) -> np.ndarray:
    return softmax(clf.logits(x))


def softmax_train(clf: SoftmaxClassifier, features, labels, config: TrainConfig):
    """Minimise cross-entropy plus ``l2_weight * ||W||^2``; labels are 1..C."""
    return train(clf, features, config, labels=labels)


def write_history_csv(history, path) -> None:
    if not history:
        raise ValueError("empty loss history")
    keys = list(history[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(float(v)) if k != "epoch" else v) for k, v in row.items()})


# --------------------------------------------------------------------------
# persistence


def network_arrays(prefix: str, layers: Sequence[DenseLayer]) -> tuple[list[dict], dict]:
    spec, arrays = [], {}
    for i, layer in enumerate(layers):
        spec.append({"in": layer.n_in, "out": layer.n_out, "activation": layer.activation})
        arrays[f"{prefix}.{i}.weights"] = layer.weights
        arrays[f"{prefix}.{i}.bias"] = layer.bias
    return spec, arrays


def network_from_arrays(prefix: str, spec, arrays) -> list[DenseLayer]:
    try:
        layers = [DenseLayer(arrays[f"{prefix}.{i}.weights"], arrays[f"{prefix}.{i}.bias"],
                             s["activation"]) for i, s in enumerate(spec)]
    except (KeyError, TypeError, ShapeMismatch, ValueError) as exc:
        raise MalformedModel(f"cannot rebuild network '{prefix}': {exc}") from exc
    for layer, s in zip(layers, spec):
        if (layer.n_in, layer.n_out) != (s["in"], s["out"]):
            raise MalformedModel(f"network '{prefix}': shape disagrees with manifest")
    return layers


def save_network(model, path, seed=None) -> None:
    """Checkpoint an autoencoder or softmax classifier."""
    if isinstance(model, SoftmaxClassifier):
        spec, arrays = network_arrays("layer", [model.layer])
        manifest = {"type": "softmax", "layers": spec, "l2_weight": model.l2_weight}
    else:
        enc_spec, arrays = network_arrays("encoder", model.encoder)
        dec_spec, dec_arrays = network_arrays("decoder", model.decoder)
        arrays.update(dec_arrays)
        manifest = {"type": "autoencoder", "encoder": enc_spec, "decoder": dec_spec,
                    "weights": vars(model.weights)}
    manifest.update(format_version=NET_VERSION, seed=seed)
    write_container(path, NET_MAGIC, manifest, arrays)


def load_network(path):
    manifest, arrays = read_container(path, NET_MAGIC, NET_VERSION)
    try:
        if manifest["type"] == "softmax":
            (layer,) = network_from_arrays("layer", manifest["layers"], arrays)
            return SoftmaxClassifier(layer, manifest["l2_weight"])
        return SparseAutoencoder(network_from_arrays("encoder", manifest["encoder"], arrays),
                                 network_from_arrays("decoder", manifest["decoder"], arrays),
                                 AEWeights(**manifest["weights"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModel(f"{path}: {exc}") from exc
