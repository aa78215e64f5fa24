"""Token-wise MLP encoders, the Adam optimiser, and checkpoint I/O."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attentive import PARAM_NAMES, CrossAttentionParams
from .errors import DimensionError, FormatError
from .serialization import load_tensors, save_tensors

MLP_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class EncoderParams:
    """Two-layer per-token MLP ``relu(x W1^T + b1) W2^T + b2``.

    ``w1``: h x d_in, ``b1``: 1 x h, ``w2``: d x h, ``b2``: 1 x d. The
    optional cross-attention heads ride along only while training OT_ATT.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    attention: CrossAttentionParams | None = field(default=None)

    def __post_init__(self):
        self.w1 = np.atleast_2d(np.asarray(self.w1, dtype=np.float64))
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(1, -1)
        self.w2 = np.atleast_2d(np.asarray(self.w2, dtype=np.float64))
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(1, -1)
        h = self.w1.shape[0]
        if self.b1.shape[1] != h or self.w2.shape[1] != h or self.b2.shape[1] != self.w2.shape[0]:
            raise DimensionError("inconsistent MLP parameter shapes")
        for name in MLP_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise FormatError(f"non-finite values in '{name}'")

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def init(cls, d_in: int, hidden: int, d_out: int, rng: np.random.Generator, scale: float = 1.0):
        """Uniform fan-in initialisation; ``scale`` multiplies the bound."""
        b1 = scale / math.sqrt(d_in)
        b2 = scale / math.sqrt(hidden)
        return cls(
            w1=rng.uniform(-b1, b1, size=(hidden, d_in)),
            b1=rng.uniform(-b1, b1, size=(1, hidden)),
            w2=rng.uniform(-b2, b2, size=(d_out, hidden)),
            b2=rng.uniform(-b2, b2, size=(1, d_out)),
        )

    def arrays(self, include_attention: bool = True) -> dict[str, np.ndarray]:
        out = {name: getattr(self, name) for name in MLP_NAMES}
        if include_attention and self.attention is not None:
            for name in PARAM_NAMES:
                out[f"attn.{name}"] = np.asarray(getattr(self.attention, name))
            out["attn.tau"] = np.array([[self.attention.tau]])
        return out

    def copy(self) -> "EncoderParams":
        att = None
        if self.attention is not None:
            att = CrossAttentionParams(**{k: np.array(getattr(self.attention, k)) for k in PARAM_NAMES},
                                       tau=self.attention.tau)
        return EncoderParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), att)


def encode_node(params: dict, raw) -> ad.Node:
    """Graph version of :func:`encode`; ``params`` maps MLP names to nodes."""
    raw = ad.as_node(raw)
    if raw.shape[1] != params["w1"].shape[1]:
        raise DimensionError(f"input has {raw.shape[1]} features, encoder expects {params['w1'].shape[1]}")
    hidden = ad.relu(ad.add(ad.matmul(raw, ad.transpose(params["w1"])), params["b1"]))
    return ad.add(ad.matmul(hidden, ad.transpose(params["w2"])), params["b2"])


def encode(params: EncoderParams, raw) -> np.ndarray:
    """Apply the MLP to every row of ``raw`` (n x d_in) -> n x d."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if raw.shape[1] != params.d_in:
        raise DimensionError(f"input has {raw.shape[1]} features, encoder expects {params.d_in}")
    hidden = np.maximum(raw @ params.w1.T + params.b1, 0.0)
    return hidden @ params.w2.T + params.b2


class Adam:
    """Adam over a dict of named arrays, updated in place, in sorted-name order."""

    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float,
             lr_scale: dict[str, float] | None = None) -> None:
        """``lr_scale`` optionally multiplies the step size per parameter name."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            step = lr * (lr_scale.get(k, 1.0) if lr_scale else 1.0)
            params[k] -= step * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def save_checkpoint(path, params: EncoderParams, include_attention: bool = False) -> None:
    """Cross-attention heads are training-only and are dropped unless asked for."""
    save_tensors(path, params.arrays(include_attention=include_attention))


def load_checkpoint(path) -> EncoderParams:
    t = load_tensors(path)
    missing = [n for n in MLP_NAMES if n not in t]
    if missing:
        raise FormatError(f"checkpoint lacks tensors {missing}")
    att = None
    if all(f"attn.{n}" in t for n in PARAM_NAMES):
        tau = float(t["attn.tau"][0, 0]) if "attn.tau" in t else 20.0
        att = CrossAttentionParams(**{n: t[f"attn.{n}"] for n in PARAM_NAMES}, tau=tau)
    return EncoderParams(t["w1"], t["b1"], t["w2"], t["b2"], att)
