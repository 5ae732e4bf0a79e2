"""Scikit-learn style estimator and transformer surfaces.

These wrappers let the federated trainer and the augmentation stack
compose with the wider ecosystem: the classifier follows the
fit/predict/score contract (fit runs the whole multi-domain federated
protocol internally), and the augmenters/statistic extractor follow
fit/transform.  Heavy lifting stays in the functional modules; these
classes only adapt the surfaces and validate inputs.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import rng as rngmod
from .augment import AugmentConfig, augmix, mixstyle, randstain
from .federation import FedConfig, run_federation
from .lodo import build_clients, evaluate_accuracy
from .losses import LossWeights
from .model import ModelLayout, forward_numpy
from .optim import ScheduleSpec
from .pool import PoolView, fallback_view, record_from_image
from .stats import StatKind, compute_channel_stats
from .validation import check_image_batch, check_labels


class FedStainClassifier(BaseEstimator, ClassifierMixin):
    """Federated domain-generalization classifier.

    ``fit(X, y, domains=...)`` treats each domain as a federated site:
    domains are partitioned into clients, statistic exchange and local
    training run for ``n_rounds``, and the aggregated global model is
    kept for inference.  With ``mode='fedavg_baseline'`` the same
    protocol runs without augmentation views (plain federated averaging),
    which serves as the control arm.
    """

    def __init__(
        self,
        n_rounds=3,
        n_epochs=3,
        batch_size=32,
        stat_ratio=0.1,
        dirichlet_alpha=0.5,
        clients_per_domain=2,
        mode="fedstain",
        stat_kind="skewness_kurtosis",
        color_space="RGB",
        lr_start=1e-4,
        lr_end=2.5e-6,
        lr_schedule="linear",
        loss_alpha=1.0,
        loss_beta=1.0,
        tau=0.1,
        randstain_prob=0.9,
        mixstyle_beta_alpha=0.1,
        augmix_chains=3,
        conv_channels=(16, 32, 64),
        input_hw=32,
        num_classes=2,
        seed=0,
    ):
        self.n_rounds = n_rounds
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.stat_ratio = stat_ratio
        self.dirichlet_alpha = dirichlet_alpha
        self.clients_per_domain = clients_per_domain
        self.mode = mode
        self.stat_kind = stat_kind
        self.color_space = color_space
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.lr_schedule = lr_schedule
        self.loss_alpha = loss_alpha
        self.loss_beta = loss_beta
        self.tau = tau
        self.randstain_prob = randstain_prob
        self.mixstyle_beta_alpha = mixstyle_beta_alpha
        self.augmix_chains = augmix_chains
        self.conv_channels = conv_channels
        self.input_hw = input_hw
        self.num_classes = num_classes
        self.seed = seed

    def _configs(self):
        fed = FedConfig(
            n_rounds=self.n_rounds,
            n_epochs=self.n_epochs,
            batch_size=self.batch_size,
            stat_ratio=self.stat_ratio,
            dirichlet_alpha=self.dirichlet_alpha,
            clients_per_domain=self.clients_per_domain,
            mode=self.mode,
            master_seed=self.seed,
            stat_kind=StatKind(self.stat_kind),
            color_space=self.color_space,
            schedule=ScheduleSpec(self.lr_schedule, self.lr_start, self.lr_end),
        )
        aug = AugmentConfig(
            randstain_prob=self.randstain_prob,
            mixstyle_beta_alpha=self.mixstyle_beta_alpha,
            augmix_chains=self.augmix_chains,
        )
        weights = LossWeights(alpha=self.loss_alpha, beta=self.loss_beta, tau=self.tau)
        layout = ModelLayout(
            in_channels=3,
            input_hw=self.input_hw,
            conv_channels=tuple(self.conv_channels),
            num_classes=self.num_classes,
        )
        return fed, aug, weights, layout

    def fit(self, X, y, domains=None):
        """Train the global model on multi-domain data.

        ``domains`` assigns each sample to a federated site (defaults to
        one site holding everything).
        """
        X = check_image_batch(X)
        y = check_labels(y, X.shape[0], self.num_classes)
        if domains is None:
            domains = np.zeros(X.shape[0], dtype=np.int64)
        domains = np.asarray(domains)
        fed, aug, weights, layout = self._configs()
        domain_map = {
            str(name): (X[domains == name], y[domains == name])
            for name in np.unique(domains)
        }
        clients = build_clients(domain_map, fed, fed.master_seed)
        self.params_ = run_federation(clients, fed, aug, weights, layout)
        self.classes_ = np.arange(self.num_classes)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before predict/transform")

    def predict_proba(self, X):
        self._check_fitted()
        X = check_image_batch(X)
        probs = []
        for start in range(0, X.shape[0], 256):
            _, p = forward_numpy(self.params_, X[start : start + 256])
            probs.append(p)
        return np.concatenate(probs)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def transform(self, X):
        """Embeddings of the fitted encoder (one row per sample)."""
        self._check_fitted()
        X = check_image_batch(X)
        embs = []
        for start in range(0, X.shape[0], 256):
            e, _ = forward_numpy(self.params_, X[start : start + 256])
            embs.append(e)
        return np.concatenate(embs)

    def score(self, X, y):
        self._check_fitted()
        X = check_image_batch(X)
        y = check_labels(y, X.shape[0])
        return evaluate_accuracy(self.params_, X, y)


class StainStatsExtractor(BaseEstimator, TransformerMixin):
    """Images -> per-image channel-statistic features (N, 4*C).

    Columns are the per-channel mean, std, skewness, and kurtosis; useful
    for probing how much label signal leaks into stain statistics.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = check_image_batch(X)
        rows = []
        for image in X:
            cs = compute_channel_stats(image, on_constant="substitute")
            rows.append(np.concatenate([cs.mean, cs.std, cs.skewness, cs.kurtosis]))
        return np.stack(rows)


class _PoolBackedAugmenter(BaseEstimator, TransformerMixin):
    """Shared plumbing: fit() learns a statistic pool from images."""

    def __init__(self, seed=0):
        self.seed = seed

    def fit(self, X, y=None):
        X = check_image_batch(X)
        records = [
            record_from_image(img, client_id="fit", sample_id=str(i), color_space="RGB")
            for i, img in enumerate(X)
        ]
        self.view_ = fallback_view(records)
        return self

    def _view(self) -> PoolView:
        if not hasattr(self, "view_"):
            raise NotFittedError("call fit before transform")
        return self.view_


class RandStainAugmenter(_PoolBackedAugmenter):
    """Channel reconstruction toward (mean, std) targets sampled from the
    statistics learned in fit()."""

    def __init__(self, probability=0.9, seed=0):
        super().__init__(seed=seed)
        self.probability = probability

    def transform(self, X):
        X = check_image_batch(X)
        cfg = AugmentConfig(randstain_prob=self.probability)
        stream = rngmod.stream(self.seed, "randstain-transform")
        return np.stack([randstain(img, self._view(), stream, cfg) for img in X])


class MixStyleAugmenter(_PoolBackedAugmenter):
    """Higher-order style mixing against the statistics learned in fit()."""

    def __init__(self, beta_alpha=0.1, stat_kind="skewness_kurtosis", seed=0):
        super().__init__(seed=seed)
        self.beta_alpha = beta_alpha
        self.stat_kind = stat_kind

    def transform(self, X):
        X = check_image_batch(X)
        cfg = AugmentConfig(mixstyle_beta_alpha=self.beta_alpha)
        stream = rngmod.stream(self.seed, "mixstyle-transform")
        return np.stack(
            mixstyle(list(X), self._view(), cfg, stream, kind=StatKind(self.stat_kind))
        )


class AugMixAugmenter(BaseEstimator, TransformerMixin):
    """Multi-chain morphological perturbation; stateless, fit is a no-op."""

    def __init__(self, chains=3, depth_min=1, depth_max=3, seed=0):
        self.chains = chains
        self.depth_min = depth_min
        self.depth_max = depth_max
        self.seed = seed

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = check_image_batch(X)
        cfg = AugmentConfig(
            augmix_chains=self.chains,
            augmix_depth_min=self.depth_min,
            augmix_depth_max=self.depth_max,
        )
        stream = rngmod.stream(self.seed, "augmix-transform")
        return np.stack([augmix(img, cfg, stream) for img in X])
