"""InfoNCE on mean-pooled token sets, the contrastive baseline."""
from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .errors import BatchError, DimensionError, ParameterError


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07
    symmetric: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")


def infonce_loss(audio_means, image_means, cfg: ContrastiveConfig | None = None) -> ad.Node:
    """Cross-entropy of cosine-similarity logits against the diagonal.

    Rows of both inputs are L2-normalised first. With ``symmetric`` the
    audio->image and image->audio directions are averaged.
    """
    cfg = cfg or ContrastiveConfig()
    a, b = ad.as_node(audio_means), ad.as_node(image_means)
    if a.shape != b.shape:
        raise DimensionError(f"batch shapes differ: {a.shape} vs {b.shape}")
    B = a.shape[0]
    if B < 2:
        raise BatchError(f"InfoNCE needs a batch of at least 2, got {B}")
    logits = ad.scale(ad.matmul(ad.normalize_rows(a), ad.transpose(ad.normalize_rows(b))),
                      1.0 / cfg.temperature)
    forward = ad.scale(ad.reduce_sum(ad.diag(ad.log_softmax_rows(logits))), -1.0 / B)
    if not cfg.symmetric:
        return forward
    backward = ad.scale(ad.reduce_sum(ad.diag(ad.log_softmax_rows(ad.transpose(logits)))), -1.0 / B)
    return ad.scale(forward + backward, 0.5)
