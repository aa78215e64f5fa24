"""Attentive optimal transport: OT marginals produced by cross-attention.

Each side's token weights come from attending to the other modality: the
attention output is averaged over the feature dimension and pushed through a
temperature softmax. The loss is the exact EMD under those weights minus an
entropy bonus that keeps the weights from collapsing onto the closest token.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError, ParameterError
from .ot import emd_node

PARAM_NAMES = ("wa_q", "wa_k", "wa_v", "wi_q", "wi_k", "wi_v")
DEFAULT_TAU = 20.0


@dataclass
class CrossAttentionParams:
    """Six d x d projections (audio side ``wa_*``, image side ``wi_*``) and the outer temperature.

    Entries may be arrays or graph nodes; training passes nodes.
    """

    wa_q: object
    wa_k: object
    wa_v: object
    wi_q: object
    wi_k: object
    wi_v: object
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        shapes = {ad.as_node(getattr(self, k)).shape for k in PARAM_NAMES}
        if len(shapes) != 1:
            raise DimensionError(f"projection shapes differ: {sorted(shapes)}")
        (shape,) = shapes
        if shape[0] != shape[1]:
            raise DimensionError(f"projections must be square, got {shape}")

    @property
    def d(self) -> int:
        return ad.as_node(self.wa_q).shape[0]

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, tau: float = DEFAULT_TAU) -> "CrossAttentionParams":
        mats = {k: rng.uniform(-1.0, 1.0, size=(d, d)) / math.sqrt(d) for k in PARAM_NAMES}
        return cls(**mats, tau=tau)

    @classmethod
    def identity(cls, d: int, tau: float = DEFAULT_TAU) -> "CrossAttentionParams":
        return cls(**{k: np.eye(d) for k in PARAM_NAMES}, tau=tau)

    def matrices(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}


@dataclass
class AttentiveLossConfig:
    lam_start: float = 500.0
    lam_end: float = 100.0
    ramp_epochs: int = 5
    uniform_first_epoch: bool = True
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not (self.lam_start >= self.lam_end >= 0):
            raise ParameterError("lambda schedule needs start >= end >= 0")
        if self.ramp_epochs < 1:
            raise ParameterError("ramp_epochs must be >= 1")
        if not self.tau > 0:
            raise ParameterError("tau must be positive")


class LambdaSetting(NamedTuple):
    value: float
    uniform: bool


def lambda_at(epoch: int, schedule: AttentiveLossConfig | None = None) -> LambdaSetting:
    """Entropy weight for a 0-based epoch index.

    Epoch 0 runs with uniform transport weights (``uniform=True``; the value is
    then unused). Epochs 1..ramp_epochs interpolate linearly from ``lam_start``
    to ``lam_end``; later epochs use ``lam_end``.
    """
    s = schedule or AttentiveLossConfig()
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    if epoch == 0 and s.uniform_first_epoch:
        return LambdaSetting(s.lam_start, True)
    if epoch >= s.ramp_epochs or s.ramp_epochs == 1:
        return LambdaSetting(s.lam_end, False)
    frac = (max(epoch, 1) - 1) / (s.ramp_epochs - 1)
    return LambdaSetting(s.lam_start + (s.lam_end - s.lam_start) * frac, False)


def _attend(q_tokens, kv_tokens, wq, wk, wv, tau):
    d = q_tokens.shape[1]
    q = ad.matmul(q_tokens, ad.transpose(wq))
    k = ad.matmul(kv_tokens, ad.transpose(wk))
    v = ad.matmul(kv_tokens, ad.transpose(wv))
    scores = ad.softmax_temp(ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d)), 1.0)
    attended = ad.matmul(scores, v)
    pooled = ad.transpose(ad.mean_axis(attended, axis=1))
    return ad.softmax_temp(pooled, tau)


def attention_weights(A, I, params: CrossAttentionParams):
    """Return ``(alpha, beta)``: 1 x n_a and 1 x n_i probability rows."""
    A, I = ad.as_node(A), ad.as_node(I)
    if A.shape[1] != I.shape[1]:
        raise DimensionError(f"token dimensions differ: {A.shape[1]} vs {I.shape[1]}")
    if A.shape[1] != params.d:
        raise DimensionError(f"tokens have dimension {A.shape[1]}, projections {params.d}")
    p = {k: ad.as_node(v) for k, v in params.matrices().items()}
    alpha = _attend(A, I, p["wa_q"], p["wi_k"], p["wi_v"], params.tau)
    beta = _attend(I, A, p["wi_q"], p["wa_k"], p["wa_v"], params.tau)
    return alpha, beta


def shannon_entropy(w) -> ad.Node:
    """-sum w ln w in nats, 0 ln 0 := 0."""
    w = ad.as_node(w)
    v = w.value
    if np.any(v < 0):
        raise ContractError("entropy: negative weight")
    if abs(v.sum() - 1.0) > 1e-9:
        raise ContractError(f"entropy: weights sum to {v.sum():.12g}")
    return ad.neg(ad.reduce_sum(ad.xlogx(w)))


@dataclass
class AttentiveTerms:
    loss: ad.Node
    transport: ad.Node
    alpha: ad.Node
    beta: ad.Node


def attentive_ot_terms(A, I, params: CrossAttentionParams | None, lam: float, uniform: bool = False) -> AttentiveTerms:
    """Loss pieces; ``uniform=True`` bypasses attention (warm-up epoch)."""
    if lam < 0:
        raise ParameterError(f"lambda must be nonnegative, got {lam}")
    A, I = ad.as_node(A), ad.as_node(I)
    if uniform:
        alpha = ad.Node(np.full((1, A.shape[0]), 1.0 / A.shape[0]))
        beta = ad.Node(np.full((1, I.shape[0]), 1.0 / I.shape[0]))
    else:
        alpha, beta = attention_weights(A, I, params)
    transport = emd_node(A, I, alpha, beta)
    if lam == 0 or uniform:
        loss = transport
    else:
        ent = shannon_entropy(alpha) + shannon_entropy(beta)
        loss = transport - ad.scale(ent, lam)
    return AttentiveTerms(loss, transport, alpha, beta)


def attentive_ot_loss(A, I, params: CrossAttentionParams | None, lam: float, uniform: bool = False) -> ad.Node:
    """EMD(A, I; alpha_att, beta_att) - lam * (H(alpha_att) + H(beta_att))."""
    return attentive_ot_terms(A, I, params, lam, uniform).loss
