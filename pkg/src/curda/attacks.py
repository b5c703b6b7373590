"""Adversarial example generation under an l_inf budget.

Two generators share one projected sign-gradient loop: supervised PGD
maximizing cross-entropy (source robust training and all robustness
evaluation), and a label-free variant maximizing the KL divergence between
the model's predictions on the clean input and on the perturbed one
(target-domain adaptation).

Conventions: sign(0) = 0, so zero-gradient inputs are fixed points;
epsilon = 0 is a legal degenerate budget returning the input unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractError, NumericalError
from .models import ClassifierHead, LeNetEncoder


@dataclass(frozen=True)
class AttackBudget:
    norm: str = "linf"
    epsilon: float = 0.3
    step_size: float = 0.01
    num_steps: int = 20
    random_start: bool = False

    def __post_init__(self):
        if self.norm != "linf":
            raise ConfigError(f"unsupported attack norm {self.norm!r}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0 <= self.step_size <= max(self.epsilon, 0.0):
            raise ConfigError(
                f"step_size must satisfy 0 <= step_size <= epsilon, "
                f"got step_size={self.step_size}, epsilon={self.epsilon}"
            )
        if self.num_steps < 1:
            raise ConfigError(f"num_steps must be >= 1, got {self.num_steps}")


def project_linf(x: torch.Tensor, origin: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Project onto the l_inf ball around origin intersected with [0,1]^d."""
    return torch.clamp(torch.clamp(x, origin - epsilon, origin + epsilon), 0.0, 1.0)


def _start_point(
    origin: torch.Tensor, budget: AttackBudget, generator: torch.Generator | None
) -> torch.Tensor:
    if not budget.random_start or budget.epsilon == 0:
        return origin.clone()
    noise = torch.empty_like(origin).uniform_(-budget.epsilon, budget.epsilon, generator=generator)
    return project_linf(origin + noise, origin, budget.epsilon)


def _ascend(origin, budget, generator, loss_fn, trace=None):
    """Shared projected sign-gradient ascent loop on loss_fn(x)."""
    x = _start_point(origin, budget, generator)
    if budget.epsilon == 0:
        if trace is not None:
            with torch.no_grad():
                value = loss_fn(x)
            trace.extend([float(value)] * (budget.num_steps + 1))
        return x
    for step in range(budget.num_steps):
        with torch.enable_grad():
            x = x.detach().requires_grad_(True)
            loss = loss_fn(x)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite attack loss at step {step}: {float(loss)}")
            (grad,) = torch.autograd.grad(loss, x)
        if not torch.isfinite(grad).all():
            raise NumericalError(
                f"non-finite attack gradient at step {step} "
                f"(finite fraction {torch.isfinite(grad).float().mean():.3f})"
            )
        if trace is not None:
            trace.append(float(loss))
        x = project_linf(x.detach() + budget.step_size * torch.sign(grad), origin, budget.epsilon)
    if trace is not None:
        with torch.no_grad():
            trace.append(float(loss_fn(x)))
    return x


def pgd_attack(
    encoder: LeNetEncoder,
    classifier: ClassifierHead,
    pixels: torch.Tensor,
    labels: torch.Tensor,
    budget: AttackBudget,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Supervised PGD: maximize cross-entropy of the true labels."""
    if labels is None:
        raise ContractError("pgd_attack requires labels")
    labels = labels.detach()
    num_classes = classifier.num_classes
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError(f"labels outside 0..{num_classes - 1}")
    origin = pixels.detach()

    def loss_fn(x):
        return F.cross_entropy(classifier(encoder(x)), labels)

    return _ascend(origin, budget, generator, loss_fn).detach()


def label_free_attack(
    encoder: LeNetEncoder,
    classifier: ClassifierHead,
    pixels: torch.Tensor,
    budget: AttackBudget,
    generator: torch.Generator | None = None,
    return_kl_trace: bool = False,
):
    """Label-free generator: maximize KL(p(x) || p(x')) over the budget ball.

    The clean prediction is frozen; only the perturbed branch is ascended.
    Note the clean input is a stationary point of this objective, so a
    random start (or a non-clean initialization) is required for the attack
    to move at all.
    """
    origin = pixels.detach()
    with torch.no_grad():
        p_clean = torch.softmax(classifier(encoder(origin)), dim=1)
    log_p_clean = torch.log(p_clean.clamp_min(1e-12))

    def loss_fn(x):
        log_q = F.log_softmax(classifier(encoder(x)), dim=1)
        return (p_clean * (log_p_clean - log_q)).sum(dim=1).mean()

    trace: list[float] | None = [] if return_kl_trace else None
    adv = _ascend(origin, budget, generator, loss_fn, trace=trace).detach()
    if return_kl_trace:
        return adv, trace
    return adv
