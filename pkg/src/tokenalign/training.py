"""Stage 1-b alignment: train the per-token encoder against frozen reference tokens."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .attentive import PARAM_NAMES, AttentiveLossConfig, CrossAttentionParams, attentive_ot_terms, lambda_at
from .contrastive import ContrastiveConfig, infonce_loss
from .data import PairedDataset
from .encoders import MLP_NAMES, Adam, EncoderParams, encode, encode_node
from .errors import NonFiniteError, ParameterError, TrainingError
from .gap import mean_pool, normalized_centroid_distance, overlap_fraction
from .mmd import DEFAULT_K, bandwidths_from_data, mmd_squared
from .ot import emd_node

METHODS = ("MMD", "OT", "OT_ATT", "CONTRASTIVE")
HISTORY_VERSION = 1

# Step sizes that make 30 epochs on the synthetic dataset meaningful; the
# TrainConfig default (2e-4) barely moves a freshly initialised toy encoder.
DESK_LR = 1e-2
DESK_ATTENTION_LR = 5e-2


def desk_config(method: str, **overrides) -> "TrainConfig":
    """TrainConfig used for the toy-scale gap experiments."""
    kw = {"lr": DESK_LR, "attention_lr": DESK_ATTENTION_LR if method == "OT_ATT" else None}
    kw.update(overrides)
    return TrainConfig(method=method, **kw)


@dataclass
class TrainConfig:
    method: str = "MMD"
    epochs: int = 30
    batch_size: int = 16
    lr: float = 2e-4
    # step size for the cross-attention heads (OT_ATT); None = same as lr
    attention_lr: float | None = None
    cosine_decay: bool = True
    seed: int = 0
    K: int = DEFAULT_K
    hidden: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    overlap_k: int = 5
    attentive: AttentiveLossConfig = field(default_factory=AttentiveLossConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method '{self.method}', expected one of {METHODS}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr > 0:
            raise ParameterError("lr must be positive")
        if self.attention_lr is not None and not self.attention_lr > 0:
            raise ParameterError("attention_lr must be positive")
        if self.K < 1:
            raise ParameterError("K must be >= 1")
        if isinstance(self.attentive, dict):
            self.attentive = AttentiveLossConfig(**self.attentive)
        if isinstance(self.contrastive, dict):
            self.contrastive = ContrastiveConfig(**self.contrastive)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    batch_losses: list[float]
    lam: float | None
    uniform_weights: bool
    normalized_centroid_distance: float
    overlap_fraction: float
    wall_time: float = 0.0

    def to_dict(self, include_time: bool = False) -> dict:
        d = asdict(self)
        if not include_time:
            d.pop("wall_time")
        return d


@dataclass
class TrainHistory:
    method: str
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def mean_losses(self) -> list[float]:
        return [r.mean_loss for r in self.records]

    def to_dict(self, include_time: bool = False) -> dict:
        return {
            "version": HISTORY_VERSION,
            "method": self.method,
            "epochs": [r.to_dict(include_time) for r in self.records],
        }


def init_params(dataset: PairedDataset, cfg: TrainConfig) -> EncoderParams:
    rng = np.random.default_rng(cfg.seed)
    c = dataset.config
    params = EncoderParams.init(c.d_in, cfg.hidden, c.d, rng)
    if cfg.method == "OT_ATT":
        params.attention = CrossAttentionParams.init(c.d, rng, tau=cfg.attentive.tau)
    return params


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled minibatch indices for one epoch, reproducible from (seed, epoch)."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _flat_arrays(params: EncoderParams) -> dict[str, np.ndarray]:
    out = {k: getattr(params, k) for k in MLP_NAMES}
    if params.attention is not None:
        out.update({f"attn.{k}": getattr(params.attention, k) for k in PARAM_NAMES})
    return out


def batch_loss(params: EncoderParams, dataset: PairedDataset, idx, cfg: TrainConfig, epoch: int):
    """Build the loss graph for one minibatch.

    Returns ``(loss_node, leaves)`` where ``leaves`` maps parameter names to the
    graph leaves that receive gradients.
    """
    leaves = {k: ad.param(v) for k, v in _flat_arrays(params).items()}
    mlp = {k: leaves[k] for k in MLP_NAMES}
    audio = [encode_node(mlp, dataset.raw_a[i]) for i in idx]
    image = [ad.Node(dataset.tokens_b[i]) for i in idx]
    B = len(idx)

    if cfg.method == "CONTRASTIVE":
        if B < 2:
            return None, leaves
        a_means = ad.stack_rows([ad.mean_axis(t, axis=0) for t in audio])
        i_means = ad.Node(np.vstack([dataset.tokens_b[i].mean(axis=0) for i in idx]))
        return infonce_loss(a_means, i_means, cfg.contrastive), leaves

    terms = []
    if cfg.method == "MMD":
        pooled_a = np.vstack([t.value for t in audio])
        pooled_b = np.vstack([t.value for t in image])
        spec = bandwidths_from_data(pooled_a, pooled_b, cfg.K)
        terms = [mmd_squared(a, b, spec).node for a, b in zip(audio, image)]
    elif cfg.method == "OT":
        terms = [emd_node(a, b) for a, b in zip(audio, image)]
    else:
        setting = lambda_at(epoch, cfg.attentive)
        att = None
        if params.attention is not None:
            att = CrossAttentionParams(**{k: leaves[f"attn.{k}"] for k in PARAM_NAMES},
                                       tau=params.attention.tau)
        terms = [attentive_ot_terms(a, b, att, setting.value, uniform=setting.uniform).loss
                 for a, b in zip(audio, image)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return ad.scale(total, 1.0 / B), leaves


def attention_weights_for(params: EncoderParams, dataset: PairedDataset, i: int):
    """Final (alpha, beta) attention weights of sample ``i`` as 1-D arrays."""
    from .attentive import attention_weights
    if params.attention is None:
        raise ParameterError("encoder has no attention heads")
    A = encode(params, dataset.raw_a[i])
    alpha, beta = attention_weights(A, dataset.tokens_b[i], params.attention)
    return alpha.value.ravel(), beta.value.ravel()


def encoded_populations(params: EncoderParams, dataset: PairedDataset):
    """Mean-pooled per-sample embeddings of both sides (S x d each)."""
    a = np.vstack([mean_pool(encode(params, r)) for r in dataset.raw_a])
    b = np.vstack([mean_pool(t) for t in dataset.tokens_b])
    return a, b


def _lr_at(cfg: TrainConfig, step: int, total: int) -> float:
    if not cfg.cosine_decay or total <= 1:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


def train_alignment(dataset: PairedDataset, cfg: TrainConfig, params: EncoderParams | None = None,
                    snapshots: list | None = None):
    """Minibatch Adam on the selected objective.

    ``snapshots``, when given, receives a copy of the parameters at the end of
    every epoch. Returns ``(params, history)``.
    """
    if len(dataset) == 0:
        raise ParameterError("empty dataset")
    params = init_params(dataset, cfg) if params is None else params.copy()
    history = TrainHistory(cfg.method)
    if cfg.epochs == 0:
        return params, history

    arrays = _flat_arrays(params)
    opt = Adam(arrays, cfg.beta1, cfg.beta2, cfg.eps)
    n_batches = len(epoch_batches(len(dataset), cfg.batch_size, cfg.seed, 0))
    total_steps = cfg.epochs * n_batches
    lr_scale = None
    if cfg.attention_lr is not None:
        lr_scale = {f"attn.{k}": cfg.attention_lr / cfg.lr for k in PARAM_NAMES}
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses, sizes = [], []
        for b, idx in enumerate(epoch_batches(len(dataset), cfg.batch_size, cfg.seed, epoch)):
            try:
                loss, leaves = batch_loss(params, dataset, idx, cfg, epoch)
                if loss is None:
                    continue
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteError("loss is not finite")
                loss.backward()
                grads = {k: leaf.grad for k, leaf in leaves.items() if leaf.grad is not None}
                if any(not np.all(np.isfinite(g)) for g in grads.values()):
                    raise NonFiniteError("gradient is not finite")
            except NonFiniteError as exc:
                raise TrainingError(f"training diverged at epoch {epoch}, batch {b}: {exc}",
                                    epoch=epoch, batch=b) from exc
            opt.step(arrays, grads, _lr_at(cfg, step, total_steps), lr_scale)
            step += 1
            losses.append(value)
            sizes.append(len(idx))
        setting = lambda_at(epoch, cfg.attentive) if cfg.method == "OT_ATT" else None
        a_pop, b_pop = encoded_populations(params, dataset)
        k = min(cfg.overlap_k, 2 * len(dataset) - 1)
        history.records.append(EpochRecord(
            epoch=epoch,
            mean_loss=float(np.average(losses, weights=sizes)) if losses else float("nan"),
            batch_losses=losses,
            lam=None if setting is None or setting.uniform else setting.value,
            uniform_weights=bool(setting.uniform) if setting is not None else False,
            normalized_centroid_distance=normalized_centroid_distance(a_pop, b_pop),
            overlap_fraction=overlap_fraction(a_pop, b_pop, k),
            wall_time=time.perf_counter() - t0,
        ))
        if snapshots is not None:
            snapshots.append(params.copy())
    return params, history
