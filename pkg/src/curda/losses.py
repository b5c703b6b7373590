"""Training objectives: cross-entropy, pairwise contrastive losses, the
source-anchored cross-domain contrastive loss, domain-adversarial losses,
the KL consistency regularizer, and their weighted totals.

Every function here is pure: it maps tensors to a scalar tensor and keeps
gradients intact for whichever inputs require them. Pairwise terms use
squared distances directly for same-class pairs and a numerically guarded
sqrt for margin terms, so gradients stay finite when features coincide.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractError
from .models import DomainDiscriminator

logger = logging.getLogger(__name__)

_PROB_CLAMP = 1e-7   # discriminator probabilities before log
_KL_SMOOTH = 1e-12   # probability rows before log in the KL regularizer
_DIST_EPS = 1e-12    # inside sqrt of pairwise distances

# Batches whose SAA loss was skipped for lack of accepted pseudo-labels.
saa_skipped_batches = 0


@dataclass(frozen=True)
class LossWeights:
    lambda_con: float = 0.01
    lambda_saa: float = 0.01
    margin_source: float = 10.0
    margin_target: float = 10.0

    def __post_init__(self):
        if self.lambda_con < 0 or self.lambda_saa < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.margin_source <= 0 or self.margin_target <= 0:
            raise ConfigError("margins must be > 0")


@dataclass
class PairSet:
    """Unordered index pairs from one batch with same-class flags."""

    i: torch.Tensor
    j: torch.Tensor
    same_class: torch.Tensor

    def __post_init__(self):
        if not (len(self.i) == len(self.j) == len(self.same_class)):
            raise ConfigError("pair set field lengths differ")

    def __len__(self) -> int:
        return len(self.i)

    def validate(self) -> None:
        if bool((self.i == self.j).any()):
            raise ConfigError("pair set contains self-pairs")
        keys = {(min(a, b), max(a, b)) for a, b in zip(self.i.tolist(), self.j.tolist())}
        if len(keys) != len(self.i):
            raise ConfigError("pair set contains duplicate unordered pairs")

    @classmethod
    def from_pairs(cls, pairs: list[tuple[int, int, bool]]) -> "PairSet":
        i = torch.tensor([p[0] for p in pairs], dtype=torch.long)
        j = torch.tensor([p[1] for p in pairs], dtype=torch.long)
        same = torch.tensor([p[2] for p in pairs], dtype=torch.bool)
        out = cls(i, j, same)
        out.validate()
        return out

    @classmethod
    def from_labels(cls, labels: torch.Tensor) -> "PairSet":
        """All unordered pairs within the batch."""
        n = len(labels)
        i, j = torch.triu_indices(n, n, offset=1)
        return cls(i, j, labels[i] == labels[j])

    @classmethod
    def sampled(
        cls, labels: torch.Tensor, max_pairs: int, generator: torch.Generator | None = None
    ) -> "PairSet":
        """Random subsample of all unordered pairs (for very large batches)."""
        full = cls.from_labels(labels)
        if len(full) <= max_pairs:
            return full
        keep = torch.randperm(len(full), generator=generator)[:max_pairs]
        return cls(full.i[keep], full.j[keep], full.same_class[keep])


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Batch-averaged -log softmax probability of the true class."""
    m = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= m):
        raise ContractError(f"labels outside 0..{m - 1}")
    return F.cross_entropy(logits, labels)


def _pair_loss(dsq: torch.Tensor, same: torch.Tensor, margin: float) -> torch.Tensor:
    """Per-pair value: 0.5*D^2 if same class else 0.5*max(0, margin - D)^2."""
    dist = torch.sqrt(dsq + _DIST_EPS)
    hinge = F.relu(margin - dist)
    return torch.where(same, 0.5 * dsq, 0.5 * hinge * hinge)


def contrastive_loss(
    features: torch.Tensor,
    labels: torch.Tensor,
    margin: float,
    pairs: PairSet | None = None,
) -> torch.Tensor:
    """Mean pairwise contrastive loss over the given (default: all) pairs."""
    if pairs is None:
        pairs = PairSet.from_labels(labels)
    if len(pairs) == 0:
        logger.warning("contrastive_loss: empty pair set, returning 0")
        return features.sum() * 0.0
    diff = features[pairs.i] - features[pairs.j]
    dsq = (diff * diff).sum(dim=1)
    return _pair_loss(dsq, pairs.same_class.to(features.device), margin).mean()


def _cross_dsq(anchors: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distances between all (anchor, feat) pairs: (S, T)."""
    diff = anchors[:, None, :] - feats[None, :, :]
    return (diff * diff).sum(dim=2)


def saa_terms(
    source_features: torch.Tensor,
    source_labels: torch.Tensor,
    target_clean_features: torch.Tensor,
    target_adv_features: torch.Tensor,
    pseudo_labels: torch.Tensor,
    margin: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Clean-pair and adversarial-pair means of the source-anchored loss.

    Pairs are all (source sample, accepted target sample) combinations;
    there are no source-source or target-target terms, and in particular the
    clean term never touches the adversarial features.
    """
    if source_features.shape[0] != source_labels.shape[0]:
        raise ContractError("source features/labels length mismatch")
    if target_clean_features.shape[0] != pseudo_labels.shape[0]:
        raise ContractError("target features/pseudo-labels length mismatch")
    if target_clean_features.shape[0] != target_adv_features.shape[0]:
        raise ContractError("target clean/adversarial counts differ")
    same = source_labels[:, None] == pseudo_labels[None, :]
    clean = _pair_loss(_cross_dsq(source_features, target_clean_features), same, margin).mean()
    adv = _pair_loss(_cross_dsq(source_features, target_adv_features), same, margin).mean()
    return clean, adv


def saa_contrastive_loss(
    source_features: torch.Tensor,
    source_labels: torch.Tensor,
    target_clean_features: torch.Tensor,
    target_adv_features: torch.Tensor,
    pseudo_labels: torch.Tensor,
    margin: float,
) -> torch.Tensor:
    """Source-anchored adversarial contrastive loss.

    Source features act as fixed anchors (caller freezes/detaches them);
    both the clean and adversarial target features are pulled toward
    same-class anchors and pushed from different-class anchors. Returns 0
    and counts a skip when no accepted pseudo-labels are present.
    """
    global saa_skipped_batches
    if pseudo_labels.numel() == 0:
        saa_skipped_batches += 1
        return target_clean_features.sum() * 0.0 + target_adv_features.sum() * 0.0
    clean, adv = saa_terms(
        source_features, source_labels, target_clean_features, target_adv_features,
        pseudo_labels, margin,
    )
    return clean + adv


def discriminator_loss(
    discriminator: DomainDiscriminator,
    source_features: torch.Tensor,
    target_features: torch.Tensor,
) -> torch.Tensor:
    """Domain discrimination: source toward 1, target toward 0."""
    p_source = discriminator(source_features).clamp(_PROB_CLAMP, 1.0 - _PROB_CLAMP)
    p_target = discriminator(target_features).clamp(_PROB_CLAMP, 1.0 - _PROB_CLAMP)
    return -torch.log(p_source).mean() - torch.log(1.0 - p_target).mean()


def encoder_adversarial_loss(
    discriminator: DomainDiscriminator, target_features: torch.Tensor
) -> torch.Tensor:
    """Target encoder objective: make the discriminator read target as source."""
    p_target = discriminator(target_features).clamp(_PROB_CLAMP, 1.0 - _PROB_CLAMP)
    return -torch.log(p_target).mean()


def trade_kl_loss(probs_clean: torch.Tensor, probs_adv: torch.Tensor) -> torch.Tensor:
    """Batch-mean KL(p_clean || p_adv) with smoothed logs."""
    for name, p in (("clean", probs_clean), ("adv", probs_adv)):
        if p.min() < -1e-9:
            raise ContractError(f"{name} probabilities contain negative entries")
        if not torch.allclose(p.sum(dim=1), torch.ones_like(p.sum(dim=1)), atol=1e-4):
            raise ContractError(f"{name} probability rows do not sum to 1")
    log_p = torch.log(probs_clean + _KL_SMOOTH)
    log_q = torch.log(probs_adv + _KL_SMOOTH)
    return (probs_clean * (log_p - log_q)).sum(dim=1).mean()


def cortrain_total(ce_loss, con_loss, lambda_con: float):
    """Source-stage objective: cross-entropy plus weighted contrastive term."""
    return ce_loss + lambda_con * con_loss


def curda_total(saa_loss, dis_loss, trade_loss, lambda_saa: float):
    """Adaptation objective: weighted anchored loss + adversarial + consistency."""
    return lambda_saa * saa_loss + dis_loss + trade_loss
