"""Maximum Mean Discrepancy with a mixture of Gaussian RBF kernels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DegenerateDataError, DimensionError, ParameterError

DEFAULT_K = 5


@dataclass(frozen=True)
class KernelMixtureSpec:
    """Bandwidths in squared-distance units: k(a, b) = exp(-||a - b||^2 / gamma)."""

    bandwidths: tuple[float, ...]

    def __post_init__(self):
        bw = tuple(float(g) for g in self.bandwidths)
        if not bw:
            raise ParameterError("kernel mixture needs at least one bandwidth")
        if any(not (g > 0 and np.isfinite(g)) for g in bw):
            raise ParameterError(f"bandwidths must be positive and finite, got {bw}")
        object.__setattr__(self, "bandwidths", bw)

    @property
    def K(self) -> int:
        return len(self.bandwidths)


@dataclass
class MmdResult:
    mmd_squared: float
    contributions: list[float]
    node: ad.Node = field(repr=False)


def _values(t) -> np.ndarray:
    return t.value if isinstance(t, ad.Node) else np.atleast_2d(np.asarray(t, dtype=np.float64))


def mean_pairwise_sq_distance(z: np.ndarray) -> float:
    """Mean of ||z_i - z_j||^2 over ordered pairs with i != j."""
    n = z.shape[0]
    if n < 2:
        return 0.0
    centered = z - z.mean(axis=0)
    # sum_{i,j} ||z_i - z_j||^2 = 2 n sum_i ||z_i - mean||^2
    total = 2.0 * n * float(np.sum(centered * centered))
    return total / (n * (n - 1))


def bandwidths_from_data(x, y, K: int = DEFAULT_K) -> KernelMixtureSpec:
    """Bandwidths k * m for k = 1..K, m the mean pairwise squared distance of the pooled sample."""
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    xv, yv = _values(x), _values(y)
    if xv.shape[0] == 0 or yv.shape[0] == 0:
        raise ParameterError("empty token set")
    if xv.shape[1] != yv.shape[1]:
        raise DimensionError(f"feature dimensions differ: {xv.shape[1]} vs {yv.shape[1]}")
    m = mean_pairwise_sq_distance(np.vstack([xv, yv]))
    if not m > 0:
        raise DegenerateDataError("pooled samples are all identical; bandwidth heuristic undefined")
    return KernelMixtureSpec(tuple(k * m for k in range(1, K + 1)))


def mmd_squared(x, y, spec: KernelMixtureSpec) -> MmdResult:
    """Biased (V-statistic) MMD^2 summed over the kernels of ``spec``.

    ``x`` and ``y`` may be arrays or graph nodes; ``result.node`` carries the
    differentiable value.
    """
    x, y = ad.as_node(x), ad.as_node(y)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[0] < 1 or y.shape[0] < 1:
        raise ParameterError("empty token set")
    dxx = ad.sq_dists(x, x)
    dyy = ad.sq_dists(y, y)
    dxy = ad.sq_dists(x, y)

    def kmean(d, gamma):
        return ad.scale(ad.reduce_sum(ad.exp(ad.scale(d, -1.0 / gamma))), 1.0 / d.value.size)

    terms = []
    for gamma in spec.bandwidths:
        t = kmean(dxx, gamma) + kmean(dyy, gamma) - ad.scale(kmean(dxy, gamma), 2.0)
        terms.append(t)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    contributions = [t.item() for t in terms]
    return MmdResult(total.item(), contributions, total)
