"""Linear dimension reduction of raw covariates into policy features."""

from dataclasses import dataclass

import numpy as np
from sklearn.decomposition import PCA

from robust_policy.errors import ReducerError


@dataclass(frozen=True, eq=False)
class Reducer:
    """Centering vector and orthonormal projection rows, ``(d_out, d_raw)``."""

    mean: np.ndarray
    components: np.ndarray

    @property
    def d_out(self) -> int:
        return int(self.components.shape[0])

    @property
    def d_raw(self) -> int:
        return int(self.components.shape[1])


def fit_reducer(raw: np.ndarray, d_out: int = 4) -> Reducer:
    """PCA: center by column means and keep the top ``d_out`` right singular vectors."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ReducerError("raw covariates must be a matrix")
    if raw.shape[0] < d_out:
        raise ReducerError(f"{d_out} components need at least {d_out} records, got {raw.shape[0]}")
    rank = np.linalg.matrix_rank(raw - raw.mean(axis=0))
    if rank < d_out:
        raise ReducerError(f"centered covariates have rank {rank} < {d_out}")

    pca = PCA(n_components=d_out, svd_solver="full")
    pca.fit(raw)
    return Reducer(mean=pca.mean_.copy(), components=pca.components_.copy())


def apply_reducer(r: Reducer, raw: np.ndarray) -> np.ndarray:
    """Project a raw vector (or each row of a matrix) onto the reducer's components."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != r.d_raw:
        raise ReducerError(f"reducer expects {r.d_raw} raw covariates, got {raw.shape[-1]}")
    return (raw - r.mean) @ r.components.T
