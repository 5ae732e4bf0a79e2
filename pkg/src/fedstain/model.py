"""Small encoder + classifier model and its flat-parameter plumbing.

The trainable model is a compact conv stack (3 conv blocks, global
average pooling into a d-dimensional embedding) feeding a linear
classifier.  Federated aggregation, checkpointing and the optimizer all
operate on a single flat float64 parameter vector; torch is used only
as the forward/backward engine, with every random draw coming from
numpy streams so runs stay reproducible end to end.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError, ShapeMismatchError

CHECKPOINT_MAGIC = b"FSTN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelLayout:
    """Architecture descriptor; the embedding dim equals the last conv width.

    ``input_center``/``input_scale`` are fixed affine constants applied to
    every input (the usual dataset-wide normalize step).  They are part
    of the architecture, not per-sample statistics, so cross-domain
    intensity shifts pass through to the network untouched.
    """

    in_channels: int = 3
    input_hw: int = 32
    conv_channels: tuple = (16, 32, 64)
    num_classes: int = 2
    input_center: float = 0.5
    input_scale: float = 0.25
    input_squash: str = "tanh"  # "tanh" bounds style-perturbed inputs; "none" is raw affine

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if len(self.conv_channels) < 1:
            raise ValueError("need at least one conv block")
        if self.input_scale <= 0:
            raise ValueError("input_scale must be positive")
        if self.input_squash not in ("tanh", "none"):
            raise ValueError("input_squash must be 'tanh' or 'none'")

    @property
    def embed_dim(self) -> int:
        return self.conv_channels[-1]

    def param_shapes(self):
        """Ordered (name, shape) descriptors; encoder first, classifier last."""
        shapes = []
        prev = self.in_channels
        for i, ch in enumerate(self.conv_channels):
            shapes.append((f"conv{i}.weight", (ch, prev, 3, 3)))
            shapes.append((f"conv{i}.bias", (ch,)))
            prev = ch
        shapes.append(("classifier.weight", (self.num_classes, self.embed_dim)))
        shapes.append(("classifier.bias", (self.num_classes,)))
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())

    def encoder_param_count(self) -> int:
        return self.param_count() - self.embed_dim * self.num_classes - self.num_classes

    def layout_hash(self) -> bytes:
        text = repr(
            (
                self.in_channels,
                self.input_hw,
                self.conv_channels,
                self.num_classes,
                self.input_center,
                self.input_scale,
                self.input_squash,
            )
        )
        return hashlib.sha256(text.encode()).digest()[:16]


@dataclass(frozen=True)
class ModelParams:
    """Flat float64 parameter vector plus the layout that interprets it."""

    vector: np.ndarray
    layout: ModelLayout

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        object.__setattr__(self, "vector", vec)
        if vec.shape != (self.layout.param_count(),):
            raise ShapeMismatchError(
                f"vector length {vec.shape} does not match layout ({self.layout.param_count()})"
            )
        if not np.all(np.isfinite(vec)):
            raise ValueError("parameter vector contains non-finite values")

    @property
    def encoder_vector(self) -> np.ndarray:
        return self.vector[: self.layout.encoder_param_count()]

    @property
    def classifier_vector(self) -> np.ndarray:
        return self.vector[self.layout.encoder_param_count() :]

    def replace_vector(self, vector) -> "ModelParams":
        return ModelParams(vector=vector, layout=self.layout)


def init_params(layout: ModelLayout, rng: np.random.Generator) -> ModelParams:
    """He-initialized conv stack, zero biases, zero classifier."""
    chunks = []
    for name, shape in layout.param_shapes():
        size = int(np.prod(shape))
        if name.endswith("bias") or name.startswith("classifier"):
            chunks.append(np.zeros(size))
        else:
            fan_in = int(np.prod(shape[1:]))
            chunks.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=size))
    return ModelParams(vector=np.concatenate(chunks), layout=layout)


class SmallConvNet(nn.Module):
    """conv3x3 -> relu -> pool2 per block, GAP embedding, linear classifier."""

    def __init__(self, layout: ModelLayout, dtype=torch.float32):
        super().__init__()
        self.layout = layout
        convs = []
        prev = layout.in_channels
        for ch in layout.conv_channels:
            convs.append(nn.Conv2d(prev, ch, kernel_size=3, padding=1))
            prev = ch
        self.convs = nn.ModuleList(convs)
        self.classifier = nn.Linear(layout.embed_dim, layout.num_classes)
        self.to(dtype)

    def forward(self, x, feature_mixer=None):
        """Returns (embeddings, logits).

        ``feature_mixer``, when given, is applied to the first block's
        activations (the feature-level style-mixing hook).
        """
        if x.shape[1] != self.layout.in_channels:
            raise ShapeMismatchError(f"expected {self.layout.in_channels} channels, got {x.shape[1]}")
        x = (x - self.layout.input_center) / self.layout.input_scale
        if self.layout.input_squash == "tanh":
            # bounded response keeps strongly style-perturbed views from
            # dominating the gradient budget while staying near-linear for
            # in-gamut images; the operating point still shifts with stain
            x = torch.tanh(x)
        n_blocks = len(self.convs)
        for i, conv in enumerate(self.convs):
            x = F.relu(conv(x))
            if i == 0 and feature_mixer is not None:
                x = feature_mixer(x)
            if i < n_blocks - 1:
                x = F.avg_pool2d(x, 2)
        emb = x.mean(dim=(2, 3))
        logits = self.classifier(emb)
        return emb, logits


def load_params(model: SmallConvNet, params: ModelParams):
    """Copy the flat vector into the torch module (cast to module dtype)."""
    if params.layout != model.layout:
        raise ShapeMismatchError("parameter layout does not match model layout")
    dtype = model.classifier.weight.dtype
    offset = 0
    with torch.no_grad():
        for (name, shape), tensor in zip(params.layout.param_shapes(), _param_tensors(model)):
            size = int(np.prod(shape))
            chunk = params.vector[offset : offset + size].reshape(shape)
            tensor.copy_(torch.from_numpy(chunk).to(dtype))
            offset += size
    return model


def flatten_params(model: SmallConvNet) -> ModelParams:
    chunks = [t.detach().cpu().numpy().astype(np.float64).ravel() for t in _param_tensors(model)]
    return ModelParams(vector=np.concatenate(chunks), layout=model.layout)


def flatten_grads(model: SmallConvNet) -> np.ndarray:
    chunks = []
    for t in _param_tensors(model):
        if t.grad is None:
            chunks.append(np.zeros(t.numel()))
        else:
            chunks.append(t.grad.detach().cpu().numpy().astype(np.float64).ravel())
    return np.concatenate(chunks)


def _param_tensors(model: SmallConvNet):
    for conv in model.convs:
        yield conv.weight
        yield conv.bias
    yield model.classifier.weight
    yield model.classifier.bias


def build_model(params: ModelParams, dtype=torch.float32) -> SmallConvNet:
    model = SmallConvNet(params.layout, dtype=dtype)
    load_params(model, params)
    return model


def softmax_probs(logits: torch.Tensor) -> torch.Tensor:
    return F.softmax(logits, dim=1)


def forward_numpy(params: ModelParams, images: np.ndarray, dtype=torch.float32):
    """Inference helper: numpy batch in, (embeddings, probs) numpy out."""
    model = build_model(params, dtype=dtype)
    model.eval()
    if images.shape[2] != params.layout.input_hw or images.shape[3] != params.layout.input_hw:
        raise ShapeMismatchError(
            f"expected {params.layout.input_hw}x{params.layout.input_hw} input, "
            f"got {images.shape[2]}x{images.shape[3]}"
        )
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(images)).to(dtype)
        emb, logits = model(x)
        probs = softmax_probs(logits)
    return emb.numpy().astype(np.float64), probs.numpy().astype(np.float64)


def feature_mixstyle(feats: torch.Tensor, partner_index, lam) -> torch.Tensor:
    """Feature-level style mixing at the first encoder block.

    Standardizes each sample's feature channels and re-affines them with
    a Beta-mixed (skewness, kurtosis) pair taken from an in-batch partner
    (the pool carries image-channel statistics, which do not map onto
    feature channels, so partners supply the foreign style here).
    Partner indices and lambda draws come precomputed from numpy streams.
    """
    n, c = feats.shape[0], feats.shape[1]
    flat = feats.reshape(n, c, -1)
    mean = flat.mean(dim=2, keepdim=True)
    centered = flat - mean
    var = centered.pow(2).mean(dim=2, keepdim=True)
    std = var.clamp_min(1e-12).sqrt()
    zscore = centered / std
    skew = zscore.pow(3).mean(dim=2, keepdim=True)
    kurt = zscore.pow(4).mean(dim=2, keepdim=True)
    idx = torch.as_tensor(np.asarray(partner_index), dtype=torch.long)
    lam_t = torch.as_tensor(np.asarray(lam), dtype=feats.dtype).reshape(n, 1, 1)
    shift = lam_t * skew[idx].detach() + (1 - lam_t) * skew
    scale = lam_t * kurt[idx].detach() + (1 - lam_t) * kurt
    return (scale * zscore + shift).reshape(feats.shape)


# --- checkpoint io -----------------------------------------------------------


def save_checkpoint(path, params: ModelParams):
    """Versioned binary blob: header (magic, version, layout hash, count)
    then the little-endian float64 payload."""
    payload = params.vector.astype("<f8").tobytes()
    header = CHECKPOINT_MAGIC + struct.pack(
        "<II16sQ", CHECKPOINT_VERSION, 16, params.layout.layout_hash(), params.vector.size
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path, layout: ModelLayout) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic")
    version, hash_len, layout_hash, count = struct.unpack("<II16sQ", blob[4 : 4 + 32])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    if layout_hash != layout.layout_hash():
        raise CheckpointError("checkpoint layout does not match model layout")
    vector = np.frombuffer(blob[36:], dtype="<f8").copy()
    if vector.size != count or count != layout.param_count():
        raise CheckpointError("payload size mismatch")
    return ModelParams(vector=vector, layout=layout)
