"""Synthetic paired-modality data and embedding-distance pair filtering."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import EncoderParams, encode
from .errors import DimensionError, FormatError, ParameterError
from .serialization import MAGIC, load_tensors, save_tensors


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 96
    n_a: int = 8
    n_i: int = 8
    d_latent: int = 4
    d_in: int = 8
    d: int = 8
    mismatch_rho: float = 0.3
    noise_sigma: float = 0.15
    # distance of the unmatched-latent prior's centre from the origin, in latent units
    mismatch_shift: float = 3.5
    frozen_hidden: int = 32
    # output gain of the frozen encoder; sets the squared-distance scale of the costs
    token_scale: float = 8.0
    map_gain: float = 1.5

    def __post_init__(self):
        for name in ("n_samples", "n_a", "n_i", "d_latent", "d_in", "d", "frozen_hidden"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be positive")
        if not 0.0 <= self.mismatch_rho <= 1.0:
            raise ParameterError(f"mismatch_rho must lie in [0, 1], got {self.mismatch_rho}")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be nonnegative")
        if not (self.token_scale > 0 and self.map_gain > 0):
            raise ParameterError("token_scale and map_gain must be positive")

    _FIELDS = ("n_samples", "n_a", "n_i", "d_latent", "d_in", "d", "mismatch_rho",
               "noise_sigma", "mismatch_shift", "frozen_hidden",
               "token_scale", "map_gain")
    _INTS = frozenset({"n_samples", "n_a", "n_i", "d_latent", "d_in", "d", "frozen_hidden"})

    def to_vector(self) -> np.ndarray:
        return np.array([[float(getattr(self, f)) for f in self._FIELDS]])

    @classmethod
    def from_vector(cls, vec) -> "SynthConfig":
        vals = dict(zip(cls._FIELDS, np.ravel(vec)))
        return cls(**{k: int(v) if k in cls._INTS else float(v) for k, v in vals.items()})


@dataclass
class PairedDataset:
    """Per sample: trainable-side inputs, frozen-side tokens and the mismatch mask.

    Arrays are stacked over samples: ``raw_a`` is S x n_a x d_in,
    ``raw_b`` S x n_i x d_in, ``tokens_b`` S x n_i x d, ``mismatch`` S x n_i
    (True = reference token drawn from an independent latent).
    """

    config: SynthConfig
    seed: int
    raw_a: np.ndarray
    raw_b: np.ndarray
    tokens_b: np.ndarray
    mismatch: np.ndarray
    latent_id: np.ndarray
    frozen: EncoderParams = field(repr=False)

    def __len__(self) -> int:
        return self.raw_a.shape[0]

    def save(self, path) -> None:
        S = len(self)
        c = self.config
        tensors = {
            "meta.config": c.to_vector(),
            # u64 seed as two exact 32-bit halves
            "meta.seed": np.array([[float(self.seed >> 32), float(self.seed & 0xFFFFFFFF)]]),
            "raw_a": self.raw_a.reshape(S * c.n_a, c.d_in),
            "raw_b": self.raw_b.reshape(S * c.n_i, c.d_in),
            "tokens_b": self.tokens_b.reshape(S * c.n_i, c.d),
            "mismatch": self.mismatch.astype(np.float64),
            "latent_id": self.latent_id.reshape(S, 1).astype(np.float64),
        }
        tensors.update({f"frozen.{k}": v for k, v in self.frozen.arrays(include_attention=False).items()})
        save_tensors(path, tensors)

    @classmethod
    def load(cls, path) -> "PairedDataset":
        t = load_tensors(path)
        try:
            c = SynthConfig.from_vector(t["meta.config"])
            S = c.n_samples
            frozen = EncoderParams(*(t[f"frozen.{k}"] for k in ("w1", "b1", "w2", "b2")))
            return cls(
                config=c,
                seed=(int(t["meta.seed"][0, 0]) << 32) | int(t["meta.seed"][0, 1]),
                raw_a=t["raw_a"].reshape(S, c.n_a, c.d_in),
                raw_b=t["raw_b"].reshape(S, c.n_i, c.d_in),
                tokens_b=t["tokens_b"].reshape(S, c.n_i, c.d),
                mismatch=t["mismatch"].astype(bool).reshape(S, c.n_i),
                latent_id=t["latent_id"].ravel().astype(np.int64),
                frozen=frozen,
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"not a dataset file: {exc}") from exc


def _feature_map(rng, d_latent, d_in, gain):
    W = rng.normal(size=(d_in, d_latent)) / math.sqrt(d_latent)
    c = rng.normal(size=d_in) * 0.5
    return lambda z: np.tanh(z @ W.T * gain + c)


def _unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def synth_generate(cfg: SynthConfig | None = None, seed: int = 0) -> PairedDataset:
    """Draw a paired dataset; fully determined by ``(cfg, seed)``.

    Each sample has a latent z shared by its matched tokens. A token's latent
    is z plus isotropic noise of scale ``noise_sigma``; unmatched reference
    tokens swap z for an independent draw from a unit Gaussian centred
    ``mismatch_shift`` away from the origin. Both sides share one fixed
    nonlinear feature map of the latent; reference tokens then pass through a
    seeded random MLP, the frozen encoder, whose output gain is ``token_scale``.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    feature_map = _feature_map(rng, cfg.d_latent, cfg.d_in, cfg.map_gain)
    frozen = EncoderParams.init(cfg.d_in, cfg.frozen_hidden, cfg.d, rng, scale=2.0)
    frozen.w2 *= cfg.token_scale
    frozen.b2 *= cfg.token_scale
    shift_b = cfg.mismatch_shift * _unit(rng, cfg.d_latent)

    S, sigma, L = cfg.n_samples, cfg.noise_sigma, cfg.d_latent
    z = rng.normal(size=(S, L))
    mismatch = rng.random((S, cfg.n_i)) < cfg.mismatch_rho
    other_b = rng.normal(size=(S, cfg.n_i, L)) + shift_b
    noise_b = rng.normal(size=(S, cfg.n_i, L)) * sigma
    noise_a = rng.normal(size=(S, cfg.n_a, L)) * sigma

    lat_a = z[:, None, :] + noise_a
    lat_b = np.where(mismatch[:, :, None], other_b, z[:, None, :]) + noise_b
    raw_a = feature_map(lat_a)
    raw_b = feature_map(lat_b)
    tokens_b = encode(frozen, raw_b.reshape(-1, cfg.d_in)).reshape(S, cfg.n_i, cfg.d)
    return PairedDataset(cfg, int(seed), raw_a, raw_b, tokens_b, mismatch,
                         np.arange(S, dtype=np.int64), frozen)


# ---------------------------------------------------------------------------
# pair filtering


@dataclass
class EmbeddingItem:
    id: str
    frames: np.ndarray      # f x d
    companion: np.ndarray   # d


@dataclass
class EmbeddingTable:
    items: list[EmbeddingItem]

    def __post_init__(self):
        dims = {it.frames.shape[1] for it in self.items} | {it.companion.shape[0] for it in self.items}
        if len(dims) > 1:
            raise DimensionError(f"inconsistent embedding dimensions {sorted(dims)}")
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise FormatError("duplicate item ids")

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def from_dict(cls, mapping: dict) -> "EmbeddingTable":
        """``{id: (frames, companion)}``."""
        items = [EmbeddingItem(k, np.atleast_2d(np.asarray(f, dtype=np.float64)),
                               np.asarray(c, dtype=np.float64).reshape(-1))
                 for k, (f, c) in mapping.items()]
        return cls(items)

    def save(self, path) -> None:
        Path(path).write_bytes(encode_table(self))

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        path = Path(path)
        if path.suffix.lower() == ".csv":
            return read_table_csv(path)
        return decode_table(path.read_bytes())


def encode_table(table: EmbeddingTable) -> bytes:
    parts = [MAGIC]
    for it in table.items:
        raw = it.id.encode("utf-8")
        f, d = it.frames.shape
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<II", f, d),
                  np.ascontiguousarray(it.frames, dtype="<f8").tobytes(),
                  np.ascontiguousarray(it.companion, dtype="<f8").tobytes()]
    return b"".join(parts)


def decode_table(blob: bytes) -> EmbeddingTable:
    if blob[:4] != MAGIC:
        raise FormatError("bad magic; not a DALI embedding table")
    pos, items = 4, []
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            item_id = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            f, d = struct.unpack_from("<II", blob, pos)
            pos += 8
            need = (f * d + d) * 8
            if pos + need > len(blob):
                raise FormatError(f"record '{item_id}' truncated")
            frames = np.frombuffer(blob, "<f8", f * d, pos).reshape(f, d).astype(np.float64)
            pos += f * d * 8
            companion = np.frombuffer(blob, "<f8", d, pos).astype(np.float64)
            pos += d * 8
            items.append(EmbeddingItem(item_id, frames, companion))
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt embedding table: {exc}") from exc
    return EmbeddingTable(items)


def read_table_csv(path) -> EmbeddingTable:
    """CSV rows ``id,frame_index,v0..v{d-1}``; the companion row has frame_index -1."""
    frames: dict[str, list[tuple[int, list[float]]]] = {}
    companions: dict[str, list[float]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, 1):
            if not row or (lineno == 1 and row[0].strip().lower() == "id"):
                continue
            try:
                item_id, idx, values = row[0], int(row[1]), [float(v) for v in row[2:]]
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if item_id not in frames:
                frames[item_id] = []
                order.append(item_id)
            if idx == -1:
                companions[item_id] = values
            else:
                frames[item_id].append((idx, values))
    items = []
    for item_id in order:
        if item_id not in companions:
            raise FormatError(f"item '{item_id}' has no companion row (frame_index -1)")
        if not frames[item_id]:
            raise FormatError(f"item '{item_id}' has no frames")
        rows = [v for _, v in sorted(frames[item_id], key=lambda t: t[0])]
        try:
            arr = np.array(rows, dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"item '{item_id}': ragged frames") from exc
        items.append(EmbeddingItem(item_id, arr, np.array(companions[item_id], dtype=np.float64)))
    return EmbeddingTable(items)


@dataclass
class RankedItem:
    id: str
    distance: float
    error: str | None = None


def _item_distance(item: EmbeddingItem, metric: str) -> float:
    if metric == "cosine":
        cn = np.linalg.norm(item.companion)
        fn = np.linalg.norm(item.frames, axis=1)
        if cn == 0 or np.any(fn == 0):
            raise ZeroDivisionError("zero-norm vector")
        cos = item.frames @ item.companion / (fn * cn)
        return float(np.mean(1.0 - cos))
    if metric == "l2":
        return float(np.mean(np.linalg.norm(item.frames - item.companion, axis=1)))
    raise ParameterError(f"unknown metric '{metric}'")


def rank_pairs(table: EmbeddingTable, metric: str = "cosine") -> list[RankedItem]:
    """Every item ordered by mean frame-to-companion distance, ascending.

    Ties break on id. Items whose distance cannot be computed are placed last
    (by id) with ``error`` set.
    """
    good, bad = [], []
    for it in table.items:
        try:
            good.append(RankedItem(it.id, _item_distance(it, metric)))
        except ZeroDivisionError as exc:
            bad.append(RankedItem(it.id, math.inf, str(exc)))
    good.sort(key=lambda r: (r.distance, r.id))
    bad.sort(key=lambda r: r.id)
    return good + bad


def filter_pairs(table: EmbeddingTable, keep_n: int, metric: str = "cosine") -> list[str]:
    """Ids of the ``keep_n`` closest items."""
    if not 0 <= keep_n <= len(table):
        raise ParameterError(f"keep_n must lie in [0, {len(table)}], got {keep_n}")
    return [r.id for r in rank_pairs(table, metric)[:keep_n]]


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
