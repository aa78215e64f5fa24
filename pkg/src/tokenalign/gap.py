"""Modality-gap diagnostics: centroid distance, 2-D PCA and k-NN overlap."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateDataError, DimensionError, ParameterError

PCA_TOL = 1e-10
PCA_MAX_ITER = 20000


def mean_pool(tokens) -> np.ndarray:
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.float64))
    if tokens.shape[0] == 0:
        raise ContractError("mean_pool of an empty token set")
    return tokens.mean(axis=0)


def centroid_distance(a, b) -> float:
    return float(np.linalg.norm(mean_pool(a) - mean_pool(b)))


def within_spread(a) -> float:
    """Mean distance of the rows of ``a`` to their centroid."""
    a = np.atleast_2d(a)
    return float(np.mean(np.linalg.norm(a - a.mean(axis=0), axis=1)))


def normalized_centroid_distance(a, b) -> float:
    spread = 0.5 * (within_spread(a) + within_spread(b))
    if spread == 0:
        raise DegenerateDataError("both populations have zero spread")
    return centroid_distance(a, b) / spread


def _power_iteration(C, start):
    v = start / np.linalg.norm(start)
    for _ in range(PCA_MAX_ITER):
        w = C @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return v, 0.0
        w /= nw
        if w @ v < 0:
            w = -w
        if np.linalg.norm(w - v) < PCA_TOL:
            v = w
            break
        v = w
    return v, float(v @ C @ v)


def _sign_fix(v):
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


@dataclass
class PcaResult:
    coords_a: np.ndarray
    coords_b: np.ndarray
    explained_variance: np.ndarray
    components: np.ndarray = field(repr=False)
    mean: np.ndarray = field(repr=False)


def pca_2d(a, b) -> PcaResult:
    """Project both populations on the top-2 principal axes of the pooled data.

    Eigenvectors come from power iteration with deflation. Explained variance
    is the eigenvalue over the total variance. Rank-1 data gets an arbitrary
    (but deterministic) orthogonal second axis with zero variance.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] + b.shape[0] < 3 or a.shape[1] < 2:
        raise ParameterError("pca_2d needs at least 3 points in at least 2 dimensions")
    pooled = np.vstack([a, b])
    mean = pooled.mean(axis=0)
    X = pooled - mean
    C = X.T @ X / X.shape[0]
    total = float(np.trace(C))
    if total <= 0:
        raise DegenerateDataError("pooled data has zero variance")
    d = C.shape[0]
    # deterministic start in the column space, nudged off any eigen-subspace
    nudge = np.arange(1, d + 1, dtype=np.float64)
    nudge /= np.linalg.norm(nudge)
    col = C[:, int(np.argmax(np.linalg.norm(C, axis=0)))]
    v1, l1 = _power_iteration(C, col / np.linalg.norm(col) + 1e-3 * nudge)
    v1 = _sign_fix(v1)

    C2 = C - l1 * np.outer(v1, v1)
    start = nudge + 1e-3 * np.cos(np.arange(d))
    start -= (start @ v1) * v1
    if np.linalg.norm(C2) > 1e-12 * total:
        col2 = C2[:, int(np.argmax(np.linalg.norm(C2, axis=0)))]
        col2 = col2 - (col2 @ v1) * v1
        if np.linalg.norm(col2) > 0:
            start = col2 / np.linalg.norm(col2) + 1e-3 * start / np.linalg.norm(start)
            start -= (start @ v1) * v1
    v2, l2 = _power_iteration(C2, start)
    v2 -= (v2 @ v1) * v1
    v2 = _sign_fix(v2 / np.linalg.norm(v2))
    l2 = max(float(v2 @ C @ v2), 0.0) if l2 > 0 else 0.0

    comps = np.vstack([v1, v2])
    ev = np.clip(np.array([l1, l2]) / total, 0.0, 1.0)
    na = a.shape[0]
    return PcaResult(X[:na] @ comps.T, X[na:] @ comps.T, ev, comps, mean)


def overlap_fraction(a, b, k: int = 5) -> float:
    """Share of points whose k nearest neighbours (pooled, self excluded) include the other population.

    Computed per population and averaged. Distance ties break on pooled index.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    pooled = np.vstack([a, b])
    N = pooled.shape[0]
    if not 1 <= k < N:
        raise ParameterError(f"k must lie in [1, {N - 1}], got {k}")
    labels = np.r_[np.zeros(a.shape[0], dtype=bool), np.ones(b.shape[0], dtype=bool)]
    hit = np.empty(N, dtype=bool)
    # one row at a time keeps memory linear for raw-token populations
    for i in range(N):
        d2 = np.sum((pooled - pooled[i]) ** 2, axis=1)
        d2[i] = np.inf
        nn = np.argsort(d2, kind="stable")[:k]
        hit[i] = bool(np.any(labels[nn] != labels[i]))
    return float(0.5 * (hit[~labels].mean() + hit[labels].mean()))


@dataclass
class GapReport:
    centroid_distance: float
    normalized_centroid_distance: float
    pca_coords_a: np.ndarray
    pca_coords_b: np.ndarray
    explained_variance: np.ndarray
    overlap_fraction: float

    def to_dict(self, include_coords: bool = False) -> dict:
        out = {
            "centroid_distance": self.centroid_distance,
            "normalized_centroid_distance": self.normalized_centroid_distance,
            "explained_variance": [float(x) for x in self.explained_variance],
            "overlap_fraction": self.overlap_fraction,
        }
        if include_coords:
            out["pca_coords_a"] = self.pca_coords_a.tolist()
            out["pca_coords_b"] = self.pca_coords_b.tolist()
        return out


def gap_report(a, b, k: int = 5) -> GapReport:
    """``a``: trainable-side embeddings, ``b``: frozen-side embeddings (rows = points)."""
    pca = pca_2d(a, b)
    return GapReport(
        centroid_distance=centroid_distance(a, b),
        normalized_centroid_distance=normalized_centroid_distance(a, b),
        pca_coords_a=pca.coords_a,
        pca_coords_b=pca.coords_b,
        explained_variance=pca.explained_variance,
        overlap_fraction=overlap_fraction(a, b, k),
    )


def write_pca_csv(path, report: GapReport, names=("audio", "image"), labels=None) -> None:
    """Columns ``population,label,pc1,pc2``; labels default to the row index."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["population", "label", "pc1", "pc2"])
        for name, coords, lab in ((names[0], report.pca_coords_a, None if labels is None else labels[0]),
                                  (names[1], report.pca_coords_b, None if labels is None else labels[1])):
            for i, (x, y) in enumerate(coords):
                w.writerow([name, i if lab is None else lab[i], repr(float(x)), repr(float(y))])
