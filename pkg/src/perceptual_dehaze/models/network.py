"""K-estimation network: five convolutions with concatenation skips.

Feature maps are H x W x C float64 arrays. Every convolution is a "same"
zero-padded cross-correlation, realized with an im2col-style sliding window
view and a tensordot, followed by ReLU:

    h1 = relu(conv1(I))                 1x1, 3 -> 3
    h2 = relu(conv2(h1))                3x3, 3 -> 3
    h3 = relu(conv3([h1, h2]))          5x5, 6 -> 3
    h4 = relu(conv4([h2, h3]))          7x7, 6 -> 3
    K  = relu(conv5([h1, h2, h3, h4]))  3x3, 12 -> 3
    J  = K * I - K + b
"""

import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .schemas import CheckpointMeta

CHECKPOINT_VERSION = 1

# (kernel_size, in_channels, out_channels) per layer
ARCHITECTURE: tuple[tuple[int, int, int], ...] = (
    (1, 3, 3),
    (3, 3, 3),
    (5, 6, 3),
    (7, 6, 3),
    (3, 12, 3),
)

# Which earlier activations (h1..h4, 0-based) feed each layer after the first
SKIPS: tuple[tuple[int, ...], ...] = ((0,), (0, 1), (1, 2), (0, 1, 2, 3))


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or does not match the architecture."""


@dataclass
class ConvLayer:
    weights: np.ndarray  # [out, in, k, k]
    biases: np.ndarray  # [out]

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ValueError(f"Conv weights must be [out, in, k, k], got {self.weights.shape}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"Kernel size must be odd, got {self.kernel_size}")
        if self.biases.shape != (self.out_channels,):
            raise ValueError(f"Bias shape {self.biases.shape} does not match {self.out_channels} outputs")

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "ConvLayer":
        return ConvLayer(self.weights.copy(), self.biases.copy())


@dataclass
class NetworkParams:
    """Weights and biases of the five layers plus the fixed output bias b."""

    layers: list[ConvLayer]
    b: float = 1.0

    def __post_init__(self):
        shapes = tuple((l.kernel_size, l.in_channels, l.out_channels) for l in self.layers)
        if shapes != ARCHITECTURE:
            raise ValueError(f"Layer shapes {shapes} do not match the architecture {ARCHITECTURE}")

    @property
    def weights(self) -> list[np.ndarray]:
        return [layer.weights for layer in self.layers]

    @property
    def biases(self) -> list[np.ndarray]:
        return [layer.biases for layer in self.layers]

    def copy(self) -> "NetworkParams":
        return NetworkParams([layer.copy() for layer in self.layers], self.b)


@dataclass
class ParamGrads:
    """Gradients shaped like NetworkParams' weights and biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "ParamGrads":
        return cls(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
        )

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def scaled(self, factor: float) -> "ParamGrads":
        return ParamGrads([w * factor for w in self.weights], [b * factor for b in self.biases])

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    @staticmethod
    def mean(items: list["ParamGrads"]) -> "ParamGrads":
        """Average in list order, so the result does not depend on worker timing."""
        if not items:
            raise ValueError("Cannot average an empty list of gradients")
        total = ParamGrads([w.copy() for w in items[0].weights], [b.copy() for b in items[0].biases])
        for g in items[1:]:
            for acc, w in zip(total.weights, g.weights):
                acc += w
            for acc, b in zip(total.biases, g.biases):
                acc += b
        return total.scaled(1.0 / len(items))


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, kept for backward."""

    image: np.ndarray
    inputs: list[np.ndarray] = field(default_factory=list)  # conv input per layer (concatenated)
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation per layer
    post: list[np.ndarray] = field(default_factory=list)  # post-ReLU per layer, post[4] is K
    J: np.ndarray | None = None

    @property
    def K(self) -> np.ndarray:
        return self.post[-1]


def init_params(seed: int = 0, std: float = 0.01) -> NetworkParams:
    """Gaussian weights N(0, std^2), zero biases, b = 1."""
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    rng = np.random.default_rng(seed)
    layers = [
        ConvLayer(
            weights=rng.normal(0.0, std, size=(c_out, c_in, k, k)),
            biases=np.zeros(c_out),
        )
        for k, c_in, c_out in ARCHITECTURE
    ]
    return NetworkParams(layers, b=1.0)


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    """H x W x C x k x k view of a zero-padded map."""
    r = k // 2
    padded = np.pad(x, ((r, r), (r, r), (0, 0)))
    return sliding_window_view(padded, (k, k), axis=(0, 1))


def conv_forward(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    """Same-size zero-padded cross-correlation plus bias, no activation."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != layer.in_channels:
        raise ValueError(f"Layer expects {layer.in_channels} input channels, got shape {x.shape}")
    out = np.tensordot(_windows(x, layer.kernel_size), layer.weights, axes=([2, 3, 4], [1, 2, 3]))
    return out + layer.biases


def conv_backward(layer: ConvLayer, x: np.ndarray, dout: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a conv layer: (d_input, d_weights, d_biases)."""
    k = layer.kernel_size
    d_biases = dout.sum(axis=(0, 1))
    d_weights = np.tensordot(dout, _windows(x, k), axes=([0, 1], [0, 1]))
    flipped = layer.weights[:, :, ::-1, ::-1]
    d_input = np.tensordot(_windows(dout, k), flipped, axes=([2, 3, 4], [0, 2, 3]))
    return d_input, d_weights, d_biases


def forward(params: NetworkParams, image) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Estimate K for a hazy image and generate J = K * I - K + b."""
    I = np.asarray(image, dtype=np.float64)
    if I.ndim != 3 or I.shape[2] != 3:
        raise ValueError(f"Network input must be HxWx3, got shape {I.shape}")

    cache = ForwardCache(image=I)
    for index, layer in enumerate(params.layers):
        if index == 0:
            x = I
        else:
            x = np.concatenate([cache.post[j] for j in SKIPS[index - 1]], axis=2)
        z = conv_forward(layer, x)
        cache.inputs.append(x)
        cache.pre.append(z)
        cache.post.append(np.maximum(z, 0.0))

    K = cache.K
    J = K * I - K + params.b
    cache.J = J
    return J, K, cache


def backward(params: NetworkParams, cache: ForwardCache, dJ: np.ndarray) -> ParamGrads:
    """Back-propagate dLoss/dJ through the network to every weight and bias."""
    if len(cache.pre) != len(params.layers):
        raise ValueError("Forward cache does not belong to this network")
    dJ = np.asarray(dJ, dtype=np.float64)
    if dJ.shape != cache.image.shape:
        raise ValueError(f"dJ shape {dJ.shape} does not match image shape {cache.image.shape}")
    for layer, x in zip(params.layers, cache.inputs):
        if x.shape[2] != layer.in_channels:
            raise ValueError("Forward cache does not belong to this network")

    grads = ParamGrads.zeros_like(params)
    # d_post[i] accumulates dLoss/dh_i from every consumer
    d_post = [np.zeros_like(p) for p in cache.post]
    d_post[-1] = dJ * (cache.image - 1.0)

    for index in reversed(range(len(params.layers))):
        layer = params.layers[index]
        dz = d_post[index] * (cache.pre[index] > 0)
        d_input, grads.weights[index], grads.biases[index] = conv_backward(layer, cache.inputs[index], dz)
        if index == 0:
            break
        sources = SKIPS[index - 1]
        parts = np.split(d_input, len(sources), axis=2)
        for source, part in zip(sources, parts):
            d_post[source] += part

    return grads


def save_checkpoint(params: NetworkParams, path: Path, meta: CheckpointMeta | None = None) -> Path:
    """Write weights, architecture and metadata to an .npz container."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "architecture": np.array(ARCHITECTURE, dtype=np.int64),
        "b": np.array(params.b),
        "meta": np.array((meta or CheckpointMeta()).model_dump_json()),
    }
    for i, layer in enumerate(params.layers, start=1):
        arrays[f"conv{i}.weights"] = layer.weights
        arrays[f"conv{i}.biases"] = layer.biases
    # np.savez appends .npz to bare names; write through a handle to keep the path
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_checkpoint(path: Path) -> tuple[NetworkParams, CheckpointMeta]:
    """Read a checkpoint and validate it against the architecture."""
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"Unsupported checkpoint version {version} in {path}")
            architecture = tuple(tuple(int(v) for v in row) for row in data["architecture"])
            if architecture != ARCHITECTURE:
                raise CheckpointError(f"Checkpoint architecture {architecture} does not match {ARCHITECTURE}")

            layers = []
            for i, (k, c_in, c_out) in enumerate(ARCHITECTURE, start=1):
                weights = np.asarray(data[f"conv{i}.weights"], dtype=np.float64)
                biases = np.asarray(data[f"conv{i}.biases"], dtype=np.float64)
                if weights.shape != (c_out, c_in, k, k) or biases.shape != (c_out,):
                    raise CheckpointError(
                        f"conv{i} has shapes {weights.shape}/{biases.shape}, "
                        f"expected {(c_out, c_in, k, k)}/{(c_out,)}"
                    )
                if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
                    raise CheckpointError(f"conv{i} holds non-finite values")
                layers.append(ConvLayer(weights, biases))

            meta = CheckpointMeta.model_validate(json.loads(str(data["meta"])))
            b = float(data["b"])
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError, TypeError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    return NetworkParams(layers, b=b), meta
