"""Training objectives: classification, representation alignment via a
supervised contrastive term, and prediction alignment via the mean KL of
each view's predictions to their mixture.

The total is cls + alpha * ra + beta * js.  All terms are batch means,
so every value is invariant to sample order, and everything is written
against torch tensors so gradients flow to the encoder and classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import NonFiniteLossError, NoPositivesError


CLS_CROSS_ENTROPY = "cross_entropy"
CLS_SUPCON_SELF = "supcon_self"


@dataclass(frozen=True)
class LossWeights:
    """alpha weighs the representation term, beta the prediction term,
    tau is the contrastive temperature.  ``cls_loss`` selects the
    classification term: plain cross-entropy on the original view, or the
    self-contrastive value."""

    alpha: float = 1.0
    beta: float = 1.0
    tau: float = 0.1
    cls_loss: str = CLS_CROSS_ENTROPY

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.cls_loss not in (CLS_CROSS_ENTROPY, CLS_SUPCON_SELF):
            raise ValueError(f"unknown cls_loss {self.cls_loss!r}")


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    ra: float
    js: float
    total: float


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log probability of the true class."""
    log_probs = F.log_softmax(logits, dim=1)
    return -log_probs.gather(1, labels.view(-1, 1)).mean()


def supcon(
    anchors: torch.Tensor,
    bank: torch.Tensor,
    labels: torch.Tensor,
    tau: float,
) -> torch.Tensor:
    """Supervised contrastive loss of anchors against an aligned bank.

    For anchor i the candidate set is every bank entry except index i,
    positives are the same-label candidates, and similarity is cosine
    scaled by 1/tau.  Anchors without positives are skipped; the result
    averages over contributing anchors.  ``supcon(z, z, ...)`` recovers
    the in-batch self-contrastive form.
    """
    n = anchors.shape[0]
    if bank.shape[0] != n or labels.shape[0] != n:
        raise ValueError("anchors, bank and labels must share batch size")
    if n < 2:
        raise ValueError("need at least 2 samples")
    a = F.normalize(anchors, dim=1, eps=1e-12)
    b = F.normalize(bank, dim=1, eps=1e-12)
    sim = (a @ b.T) / tau

    eye = torch.eye(n, dtype=torch.bool, device=sim.device)
    same = labels.view(-1, 1) == labels.view(1, -1)
    pos_mask = same & ~eye

    contributing = pos_mask.any(dim=1)
    if not bool(contributing.any()):
        raise NoPositivesError("every anchor has an empty positive set")

    sim_candidates = sim.masked_fill(eye, float("-inf"))
    log_denom = torch.logsumexp(sim_candidates, dim=1, keepdim=True)
    log_prob = sim - log_denom
    pos_counts = pos_mask.sum(dim=1).clamp_min(1)
    per_anchor = -(log_prob * pos_mask).sum(dim=1) / pos_counts
    return per_anchor[contributing].mean()


def representation_alignment(
    embeddings: torch.Tensor,
    stain: torch.Tensor,
    view1: torch.Tensor,
    view2: torch.Tensor,
    labels: torch.Tensor,
    tau: float,
) -> torch.Tensor:
    """Mean supervised contrastive loss of the original embeddings against
    each augmented-view bank."""
    terms = [supcon(embeddings, bank, labels, tau) for bank in (stain, view1, view2)]
    return torch.stack(terms).mean()


def js_alignment(prob_sets) -> torch.Tensor:
    """Mean KL of each view's prediction distribution to their mixture.

    Symmetric in the views, bounded by ln(M), zero iff all views agree;
    0 * log 0 is taken as 0 so hard one-hot inputs are legal.
    """
    if len(prob_sets) < 2:
        raise ValueError("need at least 2 prediction sets")
    stack = torch.stack(list(prob_sets))  # (M, N, K)
    mixture = stack.mean(dim=0, keepdim=True)
    kl_terms = torch.special.xlogy(stack, stack) - torch.special.xlogy(stack, mixture)
    return kl_terms.sum(dim=2).mean()


def total_loss(cls_term, ra_term, js_term, weights: LossWeights):
    """Weighted fusion; returns (scalar tensor, float breakdown).

    Raises :class:`NonFiniteLossError` naming the first offending term.
    """
    values = {}
    for name, term in (("cls", cls_term), ("ra", ra_term), ("js", js_term)):
        value = float(term.detach()) if isinstance(term, torch.Tensor) else float(term)
        if not (value == value and abs(value) != float("inf")):
            raise NonFiniteLossError(name, value)
        values[name] = value
    total = cls_term + weights.alpha * ra_term + weights.beta * js_term
    breakdown = LossBreakdown(
        cls=values["cls"],
        ra=values["ra"],
        js=values["js"],
        total=values["cls"] + weights.alpha * values["ra"] + weights.beta * values["js"],
    )
    return total, breakdown
