"""Confidence-thresholded pseudo-labels for unlabeled target batches.

For the first tau iterations the frozen source pipeline C(E_s(.)) predicts;
afterwards the live target pipeline C(E_t(.)) takes over (unless encoder
switching is disabled). Generation never participates in autograd.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch

from .errors import ConfigError, ContractError
from .models import ClassifierHead, LeNetEncoder


class GeneratorModel(str, Enum):
    SOURCE = "source_model"
    TARGET = "target_model"


@dataclass(frozen=True)
class LabelerSchedule:
    tau: int = 20
    p_pseudo: float = 0.90
    unit: str = "steps"  # "steps" or "epochs"; which counter tau compares against

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigError(f"tau must be a positive integer, got {self.tau}")
        if not 0.0 < self.p_pseudo < 1.0:
            raise ConfigError(f"p_pseudo must lie in (0,1), got {self.p_pseudo}")
        if self.unit not in ("steps", "epochs"):
            raise ConfigError(f"labeler unit must be 'steps' or 'epochs', got {self.unit!r}")


@dataclass(frozen=True)
class PseudoLabel:
    sample_index: int
    predicted_class: int
    confidence: float
    accepted: bool
    generator: GeneratorModel


@dataclass(frozen=True)
class PseudoLabelStats:
    coverage: float
    accuracy_on_accepted: float | None  # None marks "undefined", never 0


def generate_pseudo_labels(
    pixels: torch.Tensor,
    sample_indices: list[int],
    iteration: int,
    schedule: LabelerSchedule,
    source_encoder: LeNetEncoder,
    target_encoder: LeNetEncoder,
    classifier: ClassifierHead,
    switch_encoders: bool = True,
) -> list[PseudoLabel]:
    """Predict classes for one target batch; accept when max softmax >= threshold.

    Argmax ties break toward the lowest class index. Gradient flow through
    the generating model is severed (everything runs under no_grad).
    """
    if pixels.shape[0] != len(sample_indices):
        raise ContractError("pixels/sample_indices length mismatch")
    use_target = switch_encoders and iteration >= schedule.tau
    generator = GeneratorModel.TARGET if use_target else GeneratorModel.SOURCE
    encoder = target_encoder if use_target else source_encoder
    with torch.no_grad():
        probs = torch.softmax(classifier(encoder(pixels)), dim=1)
        confidence, predicted = probs.max(dim=1)  # first maximum: lowest index on ties
    return [
        PseudoLabel(
            sample_index=int(idx),
            predicted_class=int(predicted[row]),
            confidence=float(confidence[row]),
            accepted=bool(confidence[row] >= schedule.p_pseudo),
            generator=generator,
        )
        for row, idx in enumerate(sample_indices)
    ]


def pseudo_label_stats(labels: list[PseudoLabel], ground_truth) -> PseudoLabelStats:
    """Coverage and accuracy over accepted labels; evaluation-only.

    ground_truth is indexed by each label's sample_index.
    """
    if not labels:
        return PseudoLabelStats(coverage=0.0, accuracy_on_accepted=None)
    accepted = [p for p in labels if p.accepted]
    coverage = len(accepted) / len(labels)
    if not accepted:
        return PseudoLabelStats(coverage=coverage, accuracy_on_accepted=None)
    correct = sum(1 for p in accepted if int(ground_truth[p.sample_index]) == p.predicted_class)
    return PseudoLabelStats(coverage=coverage, accuracy_on_accepted=correct / len(accepted))
