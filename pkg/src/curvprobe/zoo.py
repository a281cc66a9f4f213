"""Desk-scale classifiers exposing logits and the penultimate feature ``z``.

Every model maps images in [0, 1] of shape (N, C, H, W) to ``(logits, z)``
where ``logits = head(z)`` for a single linear ``head``. Per-channel input
normalization is part of the model.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor, no_grad

ARCHS = ("cnn", "vit", "linear")


@dataclass
class ArchConfig:
    arch: str = "cnn"
    in_channels: int = 3
    image_size: int = 32
    num_classes: int = 10
    mean: tuple[float, ...] = (0.5, 0.5, 0.5)
    std: tuple[float, ...] = (0.25, 0.25, 0.25)
    # cnn
    widths: tuple[int, ...] = (16, 32, 64)
    blocks: tuple[int, ...] = (1, 1, 1)
    # vit
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 2.0
    # linear
    feature_dim: int = 64
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mean = tuple(float(m) for m in self.mean)
        self.std = tuple(float(s) for s in self.std)
        self.widths = tuple(int(w) for w in self.widths)
        self.blocks = tuple(int(b) for b in self.blocks)
        self.validate()

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if len(self.mean) != self.in_channels or len(self.std) != self.in_channels:
            raise ValueError("mean/std must have one entry per input channel")
        if any(s <= 0 for s in self.std):
            raise ValueError("std entries must be positive")
        if self.arch == "cnn":
            if len(self.widths) != len(self.blocks) or not self.widths:
                raise ValueError("widths and blocks must be non-empty and the same length")
            if any(w <= 0 for w in self.widths) or any(b <= 0 for b in self.blocks):
                raise ValueError("channel widths and block counts must be positive")
        if self.arch == "vit":
            if self.image_size % self.patch_size:
                raise ValueError(f"image size {self.image_size} not divisible by patch size {self.patch_size}")
            if self.embed_dim % self.heads:
                raise ValueError(f"embed dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.image_size, self.image_size)

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def z_dim(self) -> int:
        if self.arch == "cnn":
            return self.widths[-1]
        if self.arch == "vit":
            return self.embed_dim
        return self.feature_dim

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("mean", "std", "widths", "blocks"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def for_dataset(cls, arch: str, in_channels: int, image_size: int, num_classes: int = 10, **kw) -> "ArchConfig":
        if in_channels == 1:
            kw.setdefault("mean", (0.1307,))
            kw.setdefault("std", (0.3081,))
        elif in_channels == 3:
            kw.setdefault("mean", (0.4914, 0.4822, 0.4465))
            kw.setdefault("std", (0.2470, 0.2435, 0.2616))
        else:
            kw.setdefault("mean", (0.5,) * in_channels)
            kw.setdefault("std", (0.25,) * in_channels)
        return cls(arch=arch, in_channels=in_channels, image_size=image_size, num_classes=num_classes, **kw)


class Classifier(nn.Module):
    """Base class: subclasses implement ``features``; ``head`` is linear."""

    config: ArchConfig

    def __init__(self, config: ArchConfig):
        super().__init__()
        self.config = config
        c = config.in_channels
        self._mu = np.asarray(config.mean, dtype=np.float32).reshape(1, c, 1, 1)
        self._inv_sd = (1.0 / np.asarray(config.std, dtype=np.float32)).reshape(1, c, 1, 1)

    @property
    def arch(self) -> str:
        return self.config.arch

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def feature_dim(self) -> int:
        return self.config.z_dim

    def _check_input(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.config.input_shape:
            raise ShapeError(f"{self.arch} model expects input (N, {self.config.input_shape}), got {x.shape}")
        return x

    def normalize(self, x: Tensor) -> Tensor:
        return T.mul(T.sub(x, self._mu.astype(x.dtype)), self._inv_sd.astype(x.dtype))

    def features(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, x) -> tuple[Tensor, Tensor]:
        x = self._check_input(x)
        z = self.features(self.normalize(x))
        return self.head(z), z


class _BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, rng, stride=stride, padding=1)
        self.bn1 = nn.BatchNorm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, rng, stride=1, padding=1)
        self.bn2 = nn.BatchNorm(cout)
        if stride != 1 or cin != cout:
            self.short = nn.Conv2d(cin, cout, 1, rng, stride=stride)
            self.short_bn = nn.BatchNorm(cout)
        else:
            self.short = None

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        s = self.short_bn(self.short(x)) if self.short is not None else x
        return T.relu(T.add(h, s))


class ResNetClassifier(Classifier):
    """Small residual CNN; z is the global-average-pooled last stage."""

    def __init__(self, config: ArchConfig, seed: int = 0):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        w0 = config.widths[0]
        self.stem = nn.Conv2d(config.in_channels, w0, 3, rng, padding=1)
        self.stem_bn = nn.BatchNorm(w0)
        blocks = []
        cin = w0
        for stage, (width, count) in enumerate(zip(config.widths, config.blocks)):
            for b in range(count):
                stride = 2 if (stage > 0 and b == 0) else 1
                blocks.append(_BasicBlock(cin, width, stride, rng))
                cin = width
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(cin, config.num_classes, rng)

    def features(self, x: Tensor) -> Tensor:
        h = T.transpose(x, (0, 2, 3, 1))  # convolutions run channels-last
        h = T.relu(self.stem_bn(self.stem(h)))
        for block in self.blocks:
            h = block(h)
        return T.mean(h, axis=(1, 2))


class _EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        super().__init__()
        hidden = int(round(dim * mlp_ratio))
        self.ln1 = nn.LayerNorm(dim)
        self.attn = nn.MultiHeadAttention(dim, heads, rng)
        self.ln2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden, rng)
        self.fc2 = nn.Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = T.add(x, self.attn(self.ln1(x)))
        return T.add(x, self.fc2(T.gelu(self.fc1(self.ln2(x)))))


class ViTClassifier(Classifier):
    """Plain-attention vision transformer with mean-pooled tokens as z."""

    def __init__(self, config: ArchConfig, seed: int = 0):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        p, d = config.patch_size, config.embed_dim
        self.grid = config.image_size // p
        self.patch = nn.Linear(config.in_channels * p * p, d, rng)
        self.pos = Tensor(rng.normal(0.0, 0.02, size=(1, self.grid * self.grid, d)).astype(np.float32),
                          requires_grad=True)
        self.layers = nn.ModuleList([_EncoderBlock(d, config.heads, config.mlp_ratio, rng)
                                     for _ in range(config.depth)])
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.num_classes, rng)

    def features(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        p, g = self.config.patch_size, self.grid
        tokens = x.reshape(n, c, g, p, g, p).transpose(0, 2, 4, 1, 3, 5).reshape(n, g * g, c * p * p)
        h = T.add(self.patch(tokens), self.pos)
        for layer in self.layers:
            h = layer(h)
        return T.mean(self.norm(h), axis=1)


class AffineClassifier(Classifier):
    """z = W x_flat + b followed by a linear head.

    Used as the zero-curvature reference model: its feature map is affine,
    so equispaced collinear inputs map to equispaced collinear features.
    With ``identity=True`` the feature map is the flattened input itself.
    """

    def __init__(self, config: ArchConfig, seed: int = 0, identity: bool = False):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        dim = config.input_dim
        if identity:
            config.feature_dim = dim
            w = np.eye(dim)
        else:
            w = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(config.feature_dim, dim))
        self.proj = Tensor(w.astype(np.float32), requires_grad=True)
        self.shift = Tensor(np.zeros(config.feature_dim, dtype=np.float32), requires_grad=True)
        self.head = nn.Linear(config.feature_dim, config.num_classes, rng)

    def features(self, x: Tensor) -> Tensor:
        flat = x.reshape(x.shape[0], -1)
        return T.linear(flat, self.proj, self.shift)


def build_model(config: ArchConfig, seed: int = 0) -> Classifier:
    if config.arch == "cnn":
        return ResNetClassifier(config, seed)
    if config.arch == "vit":
        return ViTClassifier(config, seed)
    return AffineClassifier(config, seed, identity=bool(config.extra.get("identity", False)))


def outputs(model: Classifier, x: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode logits and features as numpy arrays."""
    x = np.asarray(x, dtype=np.float32)
    was_training = model.training
    model.eval()
    logits, feats = [], []
    try:
        with no_grad():
            for start in range(0, x.shape[0], batch_size):
                lo, z = model(x[start:start + batch_size])
                logits.append(lo.data)
                feats.append(z.data)
    finally:
        model.train(was_training)
    if not logits:
        return (np.zeros((0, model.num_classes), np.float32), np.zeros((0, model.feature_dim), np.float32))
    return np.concatenate(logits), np.concatenate(feats)


def features(model: Classifier, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    return outputs(model, x, batch_size)[1]


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def label_confidence(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """argmax label (lowest index wins ties) and max softmax probability."""
    logits = np.atleast_2d(logits)
    probs = softmax_np(logits)
    labels = np.argmax(logits, axis=-1)
    return labels, probs[np.arange(len(labels)), labels]


def predict(model: Classifier, x: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    logits, _ = outputs(model, x, batch_size)
    return label_confidence(logits)
