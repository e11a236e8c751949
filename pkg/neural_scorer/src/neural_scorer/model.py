"""Residual classifiers with a replaceable class head, plus checkpoint I/O.

``build_model`` accepts the torchvision residual family (with an attempted
pretrained-weight load and a clean random-init fallback when the weights
cannot be fetched) and a small from-scratch residual network for
environments where a full backbone is too slow. The classification head is
always a fresh ``fc`` layer initialized to zero, so an untrained model
scores every class with exactly equal probability.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
RESNET_ARCHS = ("resnet18", "resnet34", "resnet50")


class _ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or c_in != c_out:
            self.skip = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False),
                nn.BatchNorm2d(c_out),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.skip(x))


class TinyResidualNet(nn.Module):
    """Three-stage residual network small enough for CPU training.

    Mirrors the torchvision layout (``fc`` head after global pooling) so the
    same head-replacement and serving code paths cover both families.
    """

    def __init__(self, n_outputs: int = 1000):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, 16, 7, stride=4, padding=3, bias=False),
            nn.BatchNorm2d(16),
            nn.ReLU(inplace=True),
        )
        self.layer1 = _ResidualBlock(16, 32, stride=2)
        self.layer2 = _ResidualBlock(32, 64, stride=2)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(64, n_outputs)

    def forward(self, x):
        x = self.stem(x)
        x = self.layer1(x)
        x = self.layer2(x)
        x = self.pool(x).flatten(1)
        return self.fc(x)


def build_model(
    arch: str, n_outputs: int, pretrained: bool = True
) -> tuple[nn.Module, bool, str]:
    """Backbone with a zero-initialized ``n_outputs``-wide head.

    Returns ``(model, pretrained_loaded, note)``; ``note`` explains a
    fallback to random initialization so callers can record it.
    """
    if n_outputs < 2:
        raise ValueError(f"need at least 2 output classes, got {n_outputs}")
    pretrained_loaded = False
    note = ""
    if arch in RESNET_ARCHS:
        import torchvision.models

        builder = getattr(torchvision.models, arch)
        model = None
        if pretrained:
            try:
                model = builder(weights="IMAGENET1K_V1")
                pretrained_loaded = True
            except Exception as e:  # no network, no cache, bad checksum, ...
                note = f"pretrained weights unavailable ({e}); using random init"
        if model is None:
            model = builder(weights=None)
    elif arch == "tiny":
        model = TinyResidualNet()
        if pretrained:
            note = "arch 'tiny' has no pretrained weights; using random init"
    else:
        raise ValueError(f"unknown arch {arch!r}, expected {RESNET_ARCHS + ('tiny',)}")

    head = nn.Linear(model.fc.in_features, n_outputs)
    nn.init.zeros_(head.weight)
    nn.init.zeros_(head.bias)
    model.fc = head
    return model, pretrained_loaded, note


def preprocess_batch(images: np.ndarray, input_size: int) -> torch.Tensor:
    """uint8 NHWC batch -> normalized float NCHW at the model's input size.

    Test-time processing is resize-only: bilinear to ``input_size`` square,
    scale to [0, 1], then the fixed channel normalization.
    """
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[3] != 3 or images.dtype != np.uint8:
        raise ValueError(f"expected uint8 NHWC RGB batch, got {images.shape} {images.dtype}")
    x = torch.from_numpy(np.ascontiguousarray(images)).permute(0, 3, 1, 2).float() / 255.0
    if x.shape[2] != input_size or x.shape[3] != input_size:
        x = torch.nn.functional.interpolate(
            x, size=(input_size, input_size), mode="bilinear", align_corners=False
        )
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (x - mean) / std


def predict_probs(
    model: nn.Module, images: np.ndarray, input_size: int
) -> np.ndarray:
    """Softmax probabilities, renormalized onto the simplex in float64."""
    model.eval()
    with torch.no_grad():
        logits = model(preprocess_batch(images, input_size))
        probs = torch.softmax(logits, dim=1).double().numpy()
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum(axis=1, keepdims=True)


def save_model(
    path: Path,
    model: nn.Module,
    arch: str,
    class_names: tuple[str, ...],
    input_size: int,
    pretrained_loaded: bool,
):
    torch.save(
        {
            "format": "neural-context-scorer-v1",
            "arch": arch,
            "class_names": list(class_names),
            "input_size": int(input_size),
            "pretrained_loaded": bool(pretrained_loaded),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_model(path: Path) -> tuple[nn.Module, dict]:
    """Rebuild the checkpointed model in eval mode; returns (model, meta)."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != "neural-context-scorer-v1":
        raise ValueError(f"{path}: not a neural context scorer checkpoint")
    class_names = tuple(payload["class_names"])
    model, _, _ = build_model(payload["arch"], len(class_names), pretrained=False)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    meta = {
        "arch": payload["arch"],
        "class_names": class_names,
        "input_size": payload["input_size"],
        "pretrained_loaded": payload["pretrained_loaded"],
    }
    return model, meta
