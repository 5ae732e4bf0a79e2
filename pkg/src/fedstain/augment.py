"""Three-stage stain-aware augmentation.

Stage 1 reconstructs an image's channels toward pool-sampled (mean, std)
targets; stage 2a runs multi-chain morphological perturbation blended
with the original; stage 2b re-affines the standardized image with a
Beta-mixed (shift, scale) pair drawn from the cross-client pool —
skewness and kurtosis by default.  Together they produce the three
augmented views each training step consumes.

All stages are pure functions of (inputs, rng) and only ever read
channel summaries from the pool, never pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyPoolError
from .geometry import DEFAULT_OP_SET, apply_chain, sample_op
from .pool import PoolView, StatRecord
from .stats import StatKind, compute_channel_stats, compute_stats_pair


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for the augmentation stack.

    ``mixstyle_beta_alpha`` is the Beta shape for the style-mixing
    coefficient and is unrelated to the loss weights named alpha/beta.
    """

    randstain_prob: float = 0.9
    mixstyle_beta_alpha: float = 0.1
    augmix_chains: int = 3
    augmix_depth_min: int = 1
    augmix_depth_max: int = 3
    augmix_op_set: tuple = DEFAULT_OP_SET
    literal_reconstruction: bool = False
    mixstyle_level: str = "pixel"  # "pixel" or "feature"

    def __post_init__(self):
        if not 0.0 <= self.randstain_prob <= 1.0:
            raise ValueError("randstain_prob must be in [0, 1]")
        if self.mixstyle_beta_alpha <= 0:
            raise ValueError("mixstyle_beta_alpha must be positive")
        if self.augmix_chains < 1:
            raise ValueError("augmix_chains must be positive")
        if not 1 <= self.augmix_depth_min <= self.augmix_depth_max:
            raise ValueError("invalid augmix depth range")
        if not self.augmix_op_set:
            raise ValueError("augmix_op_set must be nonempty")
        if self.mixstyle_level not in ("pixel", "feature"):
            raise ValueError("mixstyle_level must be 'pixel' or 'feature'")


@dataclass(frozen=True)
class AugmentedViews:
    """The stain view plus two independently perturbed views."""

    stain: np.ndarray
    view1: np.ndarray
    view2: np.ndarray


def _own_stats(image):
    return compute_channel_stats(image, on_constant="substitute")


def randstain(
    image: np.ndarray,
    view: PoolView,
    rng: np.random.Generator,
    cfg: AugmentConfig = AugmentConfig(),
) -> np.ndarray:
    """Reconstruct channels toward a pool-sampled (mean, std) target.

    With probability ``randstain_prob``: draw one whole record (all
    channels jointly, preserving inter-channel coherence) and map each
    channel x to ((x - mean)/std) * std' + mean', so the output channel
    hits the target moments exactly.  ``literal_reconstruction`` switches
    to the unnormalized (x - mean) * std' + mean' variant.  Otherwise the
    image passes through unchanged.
    """
    image = np.asarray(image, dtype=np.float64)
    if rng.random() >= cfg.randstain_prob:
        return image.copy()
    if view.is_empty():
        raise EmptyPoolError("randstain needs a nonempty pool view")
    record = view.draw(rng)
    own = _own_stats(image)
    mu = own.mean[:, None, None]
    target_mu = record.mean[:, None, None]
    target_sigma = record.std[:, None, None]
    centered = image - mu
    if not cfg.literal_reconstruction:
        centered = centered / own.std[:, None, None]
    return centered * target_sigma + target_mu


def augmix(
    image: np.ndarray,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    *,
    chains=None,
    weights=None,
    blend=None,
) -> np.ndarray:
    """Multi-chain morphological perturbation.

    Samples ``augmix_chains`` chains of composed ops, mixes the chain
    outputs with flat-Dirichlet weights, then blends with the original
    via a Beta(1, 1) coefficient: out = m * mix + (1 - m) * x.

    ``chains``, ``weights`` and ``blend`` override the sampled values so
    tests can force specific paths.
    """
    image = np.asarray(image, dtype=np.float64)
    if chains is None:
        chains = []
        for _ in range(cfg.augmix_chains):
            depth = int(rng.integers(cfg.augmix_depth_min, cfg.augmix_depth_max + 1))
            names = rng.choice(len(cfg.augmix_op_set), size=depth)
            chains.append([sample_op(cfg.augmix_op_set[i], image.shape, rng) for i in names])
    if weights is None:
        weights = rng.dirichlet(np.ones(len(chains)))
    weights = np.asarray(weights, dtype=np.float64)
    if blend is None:
        blend = float(rng.beta(1.0, 1.0))

    mixed = np.zeros_like(image)
    for w, ops in zip(weights, chains):
        mixed += w * apply_chain(image, ops)
    return blend * mixed + (1.0 - blend) * image


def mixstyle(
    batch,
    view: PoolView,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    *,
    kind: StatKind = StatKind.SKEWNESS_KURTOSIS,
    lam=None,
    pair_window: int = 8,
) -> list[np.ndarray]:
    """Re-affine standardized images with pool-mixed (shift, scale) pairs.

    Per sample and channel: standardize x to zero mean / unit std, draw a
    pool record's (shift', scale'), draw lam ~ Beta(alpha, alpha), and set

        shift_mix = lam * shift' + (1 - lam) * shift(x)
        scale_mix = lam * scale' + (1 - lam) * scale(x)
        out = scale_mix * standardized + shift_mix

    so the output channel mean is shift_mix and its std is |scale_mix|.
    The default pair is (skewness, kurtosis); other kinds serve the
    ablation harness.  ``lam`` overrides the Beta draw for tests.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    if view.is_empty():
        raise EmptyPoolError("mixstyle needs a nonempty pool view")
    out = []
    for image in batch:
        image = np.asarray(image, dtype=np.float64)
        own = _own_stats(image)
        if kind is StatKind.SKEWNESS_KURTOSIS:
            own_shift, own_scale = own.skewness, own.kurtosis
        else:
            pair = compute_stats_pair(image, kind, window=pair_window, on_constant="substitute")
            own_shift, own_scale = pair.shift, pair.scale
        record: StatRecord = view.draw(rng)
        lam_i = float(rng.beta(cfg.mixstyle_beta_alpha, cfg.mixstyle_beta_alpha)) if lam is None else float(lam)
        shift_mix = lam_i * record.shift + (1.0 - lam_i) * own_shift
        scale_mix = lam_i * record.scale + (1.0 - lam_i) * own_scale
        standardized = (image - own.mean[:, None, None]) / own.std[:, None, None]
        out.append(scale_mix[:, None, None] * standardized + shift_mix[:, None, None])
    return out


def make_views(
    image: np.ndarray,
    view: PoolView,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    *,
    kind: StatKind = StatKind.SKEWNESS_KURTOSIS,
) -> AugmentedViews:
    """Build the view triple for one image.

    view1 and view2 are independent draws of mixstyle(augmix(x)); the
    stain view is the stage-1 reconstruction.  Independence comes from
    distinct child rng streams, so the triple is reproducible under a
    fixed master stream regardless of evaluation order.
    """
    r_stain, r_aug1, r_mix1, r_aug2, r_mix2 = rng.spawn(5)
    stain = randstain(image, view, r_stain, cfg)
    view1 = mixstyle([augmix(image, cfg, r_aug1)], view, cfg, r_mix1, kind=kind)[0]
    view2 = mixstyle([augmix(image, cfg, r_aug2)], view, cfg, r_mix2, kind=kind)[0]
    return AugmentedViews(stain=stain, view1=view1, view2=view2)
