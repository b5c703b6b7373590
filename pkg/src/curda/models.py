"""Encoder, classifier head, and domain discriminator.

All modules are plain feed-forward (no dropout/batch-norm), so forward
passes are deterministic given parameters. Weight init uses torch's
fan-in-scaled uniform default; seed it by calling ``torch.manual_seed``
before construction.
"""

from __future__ import annotations

import copy
import hashlib
from pathlib import Path
from typing import Any

import torch
import torch.nn as nn

from .errors import ConfigError, NumericalError, StructuralError

CHECKPOINT_FORMAT_VERSION = 1


class LeNetEncoder(nn.Module):
    """Two conv layers with max-pooling, then one fully connected layer."""

    def __init__(
        self,
        channels: int = 1,
        conv_channels: tuple[int, int] = (20, 50),
        feature_dim: int = 500,
        image_size: int = 28,
    ):
        super().__init__()
        c1, c2 = conv_channels
        side = image_size
        for _ in range(2):
            side = (side - 4) // 2  # 5x5 conv (valid) then 2x2 max-pool
        if side < 1:
            raise ConfigError(f"image_size {image_size} too small for two conv/pool blocks")
        self.channels = int(channels)
        self.conv_channels = (int(c1), int(c2))
        self.feature_dim = int(feature_dim)
        self.image_size = int(image_size)
        self.conv1 = nn.Conv2d(channels, c1, kernel_size=5)
        self.conv2 = nn.Conv2d(c1, c2, kernel_size=5)
        self.pool = nn.MaxPool2d(2)
        self.fc = nn.Linear(c2 * side * side, feature_dim)
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.channels or x.shape[2:] != (self.image_size, self.image_size):
            raise StructuralError(
                f"encoder expects (B,{self.channels},{self.image_size},{self.image_size}), "
                f"got {tuple(x.shape)}"
            )
        x = self.act(self.pool(self.conv1(x)))
        x = self.act(self.pool(self.conv2(x)))
        return self.act(self.fc(x.flatten(1)))

    def arch(self) -> dict[str, Any]:
        return {
            "kind": "lenet-small",
            "channels": self.channels,
            "conv_channels": list(self.conv_channels),
            "feature_dim": self.feature_dim,
            "image_size": self.image_size,
        }


class ClassifierHead(nn.Module):
    """Feature vector -> class logits; optionally with one hidden layer."""

    def __init__(self, feature_dim: int, num_classes: int, hidden: int | None = None):
        super().__init__()
        self.feature_dim = int(feature_dim)
        self.num_classes = int(num_classes)
        self.hidden = int(hidden) if hidden else None
        if self.hidden:
            self.fc1 = nn.Linear(feature_dim, self.hidden)
            self.act = nn.ReLU()
            self.out = nn.Linear(self.hidden, num_classes)
        else:
            self.out = nn.Linear(feature_dim, num_classes)

    def penultimate(self, features: torch.Tensor) -> torch.Tensor:
        """Activations feeding the final linear layer."""
        self._check(features)
        if self.hidden:
            return self.act(self.fc1(features))
        return features

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.out(self.penultimate(features))

    def _check(self, features: torch.Tensor) -> None:
        if features.dim() != 2 or features.shape[1] != self.feature_dim:
            raise StructuralError(
                f"classifier expects (B,{self.feature_dim}), got {tuple(features.shape)}"
            )

    def arch(self) -> dict[str, Any]:
        return {
            "kind": "classifier-head",
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "hidden": self.hidden,
        }


class DomainDiscriminator(nn.Module):
    """Three fully connected layers with two hidden layers; sigmoid output."""

    def __init__(self, feature_dim: int, hidden: int = 500):
        super().__init__()
        self.feature_dim = int(feature_dim)
        self.hidden_dim = int(hidden)
        self.net = nn.Sequential(
            nn.Linear(feature_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 1),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.dim() != 2 or features.shape[1] != self.feature_dim:
            raise StructuralError(
                f"discriminator expects (B,{self.feature_dim}), got {tuple(features.shape)}"
            )
        return torch.sigmoid(self.net(features).squeeze(1))

    def arch(self) -> dict[str, Any]:
        return {
            "kind": "mlp-discriminator",
            "feature_dim": self.feature_dim,
            "hidden": self.hidden_dim,
        }


def build_model(arch: dict[str, Any]) -> nn.Module:
    """Reconstruct a model from its architecture descriptor."""
    kind = arch.get("kind")
    if kind == "lenet-small":
        return LeNetEncoder(
            channels=arch["channels"],
            conv_channels=tuple(arch["conv_channels"]),
            feature_dim=arch["feature_dim"],
            image_size=arch["image_size"],
        )
    if kind == "classifier-head":
        return ClassifierHead(arch["feature_dim"], arch["num_classes"], arch.get("hidden"))
    if kind == "mlp-discriminator":
        return DomainDiscriminator(arch["feature_dim"], arch["hidden"])
    raise ConfigError(f"unknown architecture kind {kind!r}")


# ---------------------------------------------------------------------------
# Forward ops with contract checks

def encoder_forward(encoder: LeNetEncoder, pixels: torch.Tensor) -> torch.Tensor:
    features = encoder(pixels)
    if not torch.isfinite(features).all():
        raise NumericalError("non-finite encoder features")
    return features


def classifier_forward(classifier: ClassifierHead, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    logits = classifier(features)
    return logits, torch.softmax(logits, dim=1)


def discriminator_forward(discriminator: DomainDiscriminator, features: torch.Tensor) -> torch.Tensor:
    return discriminator(features)


# ---------------------------------------------------------------------------
# Parameter management

def clone_encoder(encoder: LeNetEncoder) -> LeNetEncoder:
    """Independent copy: updates to either side never affect the other."""
    return copy.deepcopy(encoder)


def set_frozen(module: nn.Module, frozen: bool = True) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(not frozen)
    module.eval() if frozen else module.train()
    return module


def state_hash(module: nn.Module) -> str:
    """Bit-level digest of all parameters and buffers, for freeze audits."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    module: nn.Module,
    role: str,
    *,
    seed: int | None = None,
    fingerprint: str | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    if not hasattr(module, "arch"):
        raise ConfigError(f"module {type(module).__name__} has no architecture descriptor")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "role": role,
        "arch": module.arch(),
        "state_dict": module.state_dict(),
        "seed": seed,
        "fingerprint": fingerprint,
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict[str, Any]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r} in {path}")
    module = build_model(payload["arch"])
    module.load_state_dict(payload["state_dict"])
    return module, payload
