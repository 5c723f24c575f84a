"""DP-means quantization: codebooks for state-initialization features and
for discretizing continuous car signals into a joint word vocabulary."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class Codebook:
    """A fitted set of cluster centers with penalty distance ``lam``.

    ``circular_dims`` marks dimensions that live on a circle of length
    ``circular_period`` (e.g. hour-of-day with period 24); distances and
    means on those dimensions wrap around.
    """

    centers: np.ndarray  # (K, d)
    lam: float
    circular_dims: tuple[int, ...] = ()
    circular_period: float = 24.0

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    def to_json(self) -> str:
        return json.dumps(
            {
                "lambda": self.lam,
                "centers": self.centers.tolist(),
                "circular_dims": list(self.circular_dims),
                "circular_period": self.circular_period,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "Codebook":
        obj = json.loads(text)
        return Codebook(
            centers=np.asarray(obj["centers"], dtype=float),
            lam=float(obj["lambda"]),
            circular_dims=tuple(obj.get("circular_dims", [])),
            circular_period=float(obj.get("circular_period", 24.0)),
        )


@dataclass(frozen=True)
class WordId:
    """Joint (velocity bin, time bin) symbol in a product vocabulary."""

    v_bin: int
    t_bin: int
    t_count: int

    @property
    def flat(self) -> int:
        return self.v_bin * self.t_count + self.t_bin


def _diffs(points: np.ndarray, centers: np.ndarray, circular_dims, period: float) -> np.ndarray:
    """Signed differences points[:, None, :] - centers, wrapped on circular dims."""
    d = points[:, None, :] - centers[None, :, :]
    for dim in circular_dims:
        d[:, :, dim] = (d[:, :, dim] + period / 2.0) % period - period / 2.0
    return d


def sq_distances(points: np.ndarray, centers: np.ndarray, circular_dims=(), period: float = 24.0) -> np.ndarray:
    """(N, K) squared distances, wrapped on circular dims."""
    d = _diffs(points, centers, circular_dims, period)
    return np.einsum("nkd,nkd->nk", d, d)


def _circular_mean_sq(values: np.ndarray, period: float) -> float:
    """Minimizer of the summed squared wrapped distance on a circle.

    Scans every cut point of the sorted values; the optimal center's
    antipodal cut falls between two sorted points, so the scan is exact.
    """
    n = len(values)
    if n == 1:
        return float(values[0] % period)
    v = np.sort(values % period)
    best_sse = np.inf
    best_mu = float(v[0])
    # Cut c means values below index c are unwrapped by +period.
    csum = np.cumsum(v)
    csq = np.cumsum(v**2)
    total, total_sq = csum[-1], csq[-1]
    for c in range(n):
        # unwrapped points: v[c:], v[:c] + period
        s = total + c * period
        sq = total_sq + 2 * period * (csum[c - 1] if c > 0 else 0.0) + c * period**2
        mu = s / n
        sse = sq - n * mu**2
        if sse < best_sse - 1e-12:
            best_sse = sse
            best_mu = mu % period
    return best_mu


def _cluster_means(points: np.ndarray, labels: np.ndarray, k: int, circular_dims, period: float) -> np.ndarray:
    centers = np.empty((k, points.shape[1]))
    for j in range(k):
        members = points[labels == j]
        centers[j] = members.mean(axis=0)
        for dim in circular_dims:
            centers[j, dim] = _circular_mean_sq(members[:, dim], period)
    return centers


def dp_means(
    points: np.ndarray,
    lam: float,
    max_iter: int = 100,
    circular_dims: tuple[int, ...] = (),
    circular_period: float = 24.0,
) -> Codebook:
    """Cluster ``points`` with penalty ``lam``: a point farther than ``lam``
    from every center (squared distance > lam^2) seeds a new cluster.

    Starts from a single cluster at the global mean and processes points in
    dataset order, so the result is deterministic. Empty clusters are deleted
    after each sweep. The objective sum ||x - c(x)||^2 + lam^2 * K is checked
    to be non-increasing across sweeps.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise EmptyInputError("dp_means requires at least one point")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    n, d = points.shape
    lam2 = lam * lam

    centers = _cluster_means(points, np.zeros(n, dtype=int), 1, circular_dims, circular_period)
    labels = np.zeros(n, dtype=int)
    prev_objective = np.inf

    for _ in range(max_iter):
        center_list = [c for c in centers]
        for i in range(n):
            d2 = sq_distances(points[i : i + 1], np.asarray(center_list), circular_dims, circular_period)[0]
            j = int(np.argmin(d2))
            if d2[j] > lam2:
                labels[i] = len(center_list)
                center_list.append(points[i].copy())
            else:
                labels[i] = j
        # drop empty clusters, relabel contiguously
        used = np.unique(labels)
        remap = {int(old): new for new, old in enumerate(used)}
        labels = np.asarray([remap[int(l)] for l in labels], dtype=int)
        k = len(used)
        centers = _cluster_means(points, labels, k, circular_dims, circular_period)

        d2 = sq_distances(points, centers, circular_dims, circular_period)
        objective = float(d2[np.arange(n), labels].sum() + lam2 * k)
        assert objective <= prev_objective + 1e-9 * max(1.0, abs(prev_objective)), (
            f"dp_means objective increased: {prev_objective} -> {objective}"
        )
        converged = objective >= prev_objective - 1e-12 * max(1.0, abs(prev_objective))
        prev_objective = objective
        if converged:
            break

    return Codebook(centers=centers, lam=float(lam), circular_dims=tuple(circular_dims), circular_period=circular_period)


def assign(codebook: Codebook, point) -> int:
    """Index of the nearest center; ties break to the lowest index."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.shape[-1] != codebook.d:
        raise ValueError(f"point has dimension {point.shape[-1]}, codebook has {codebook.d}")
    d2 = sq_distances(point.reshape(1, -1), codebook.centers, codebook.circular_dims, codebook.circular_period)[0]
    return int(np.argmin(d2))


def assign_many(codebook: Codebook, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d2 = sq_distances(points, codebook.centers, codebook.circular_dims, codebook.circular_period)
    return np.argmin(d2, axis=1)


def build_vocab(velocities, times, lambda_v: float, lambda_t: float) -> tuple[Codebook, Codebook, int]:
    """Fit per-signal codebooks and return them with the product vocabulary
    size V = V_count * T_count. Time-of-day clusters on the 24 h circle."""
    velocities = np.asarray(velocities, dtype=float).reshape(-1, 1)
    times = np.asarray(times, dtype=float).reshape(-1, 1)
    if velocities.shape[0] == 0 or times.shape[0] == 0:
        raise EmptyInputError("build_vocab requires non-empty signal lists")
    cb_v = dp_means(velocities, lambda_v)
    cb_t = dp_means(times, lambda_t, circular_dims=(0,), circular_period=24.0)
    return cb_v, cb_t, cb_v.k * cb_t.k


def encode(cb_v: Codebook, cb_t: Codebook, velocity: float, time: float) -> WordId:
    v_bin = assign(cb_v, [velocity])
    t_bin = assign(cb_t, [time])
    return WordId(v_bin=v_bin, t_bin=t_bin, t_count=cb_t.k)


def encode_many(cb_v: Codebook, cb_t: Codebook, velocities, times) -> np.ndarray:
    """Flat word ids for aligned signal arrays."""
    v_bins = assign_many(cb_v, np.asarray(velocities, dtype=float).reshape(-1, 1))
    t_bins = assign_many(cb_t, np.asarray(times, dtype=float).reshape(-1, 1))
    return v_bins * cb_t.k + t_bins


def decode(flat: int, t_count: int) -> tuple[int, int]:
    """Inverse of WordId.flat: (v_bin, t_bin)."""
    return flat // t_count, flat % t_count
