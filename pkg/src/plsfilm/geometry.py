r"""Weighted Euclidean geometry used by every fitter.

Observations carry statistical weights (``p`` over the n subjects, ``q``
over the p objects, each summing to one).  Variables are compared with
the weighted inner product :math:`\langle x|y\rangle_P = x^T P y`, the
rows of a descriptor block with a metric ``M``, and interaction tables
with

.. math:: \langle W|V\rangle_R = \mathrm{tr}(Q W^T P V).

All functions are pure; arrays passed in are never modified.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError

IDENTITY = "identity"
INVERSE_COVARIANCE = "inverse_covariance"
CUSTOM = "custom"
_MODES = (IDENTITY, INVERSE_COVARIANCE, CUSTOM)

# relative eigenvalue cut-off for the pseudo-inverse of X'PX
PINV_RTOL = 1e-10


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def as_weights(w, renormalize: bool = False) -> np.ndarray:
    """Validate a weight vector: strictly positive entries summing to one.

    Parameters
    ----------
    w : array_like
        Candidate weights.
    renormalize : bool
        Divide by the total instead of rejecting a vector whose sum is
        not 1 within 1e-12.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DimensionError("weights must be a non-empty 1-d vector")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and strictly positive")
    total = w.sum()
    if abs(total - 1.0) > 1e-12:
        if not renormalize:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        w = w / total
    return w


@dataclass(frozen=True)
class Metric:
    """Column metric of a descriptor block.

    ``mode`` is one of ``"identity"``, ``"inverse_covariance"`` (the
    pseudo-inverse of X'PX, recomputed from whatever data the block
    holds) or ``"custom"`` (a fixed symmetric positive-definite matrix).
    """

    mode: str = IDENTITY
    matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown metric mode {self.mode!r}")
        if self.mode == CUSTOM:
            if self.matrix is None:
                raise ValueError("custom metric needs a matrix")
            m = np.asarray(self.matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise DimensionError("metric matrix must be square")
            scale = max(np.abs(m).max(), 1e-300)
            if np.abs(m - m.T).max() > 1e-10 * scale:
                raise ValueError("metric matrix is not symmetric")
            if np.linalg.eigvalsh((m + m.T) / 2).min() <= 0:
                raise ValueError("metric matrix is not positive definite")
            object.__setattr__(self, "matrix", (m + m.T) / 2)

    @classmethod
    def identity(cls) -> "Metric":
        return cls(IDENTITY)

    @classmethod
    def inverse_covariance(cls) -> "Metric":
        return cls(INVERSE_COVARIANCE)

    @classmethod
    def custom(cls, matrix) -> "Metric":
        return cls(CUSTOM, np.asarray(matrix, dtype=float))


@dataclass(frozen=True)
class DataBlock:
    """Descriptor table with its row weights and column metric.

    Attributes
    ----------
    data : ndarray, shape (n_obs, n_vars)
    weights : ndarray, shape (n_obs,)
    metric : Metric
    standardized : bool
        Set by :func:`standardize`; informational.
    """

    data: np.ndarray
    weights: np.ndarray
    metric: Metric = field(default_factory=Metric)
    standardized: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise DimensionError("block data must be a matrix")
        if not np.all(np.isfinite(data)):
            raise ValueError("block data contains non-finite values")
        w = as_weights(self.weights)
        if w.shape[0] != data.shape[0]:
            raise DimensionError(
                f"{data.shape[0]} rows but {w.shape[0]} weights")
        if self.metric.mode == CUSTOM and \
                self.metric.matrix.shape[0] != data.shape[1]:
            raise DimensionError("metric size differs from column count")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "weights", w)

    @property
    def shape(self):
        return self.data.shape

    def with_metric(self, metric: Metric) -> "DataBlock":
        return replace(self, metric=metric)

    def with_data(self, data) -> "DataBlock":
        return replace(self, data=np.asarray(data, dtype=float))

    def metric_matrix(self) -> np.ndarray:
        return metric_factors(self)[2]


@dataclass(frozen=True)
class InteractionBlock:
    """The n x p interaction table with both weight systems."""

    z: np.ndarray
    row_weights: np.ndarray
    col_weights: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2:
            raise DimensionError("interaction table must be a matrix")
        if not np.all(np.isfinite(z)):
            raise ValueError("interaction table contains non-finite values")
        p = as_weights(self.row_weights)
        q = as_weights(self.col_weights)
        if z.shape != (p.shape[0], q.shape[0]):
            raise DimensionError(
                f"table is {z.shape} but weights are "
                f"({p.shape[0]}, {q.shape[0]})")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "row_weights", p)
        object.__setattr__(self, "col_weights", q)

    @classmethod
    def uniform(cls, z) -> "InteractionBlock":
        z = np.asarray(z, dtype=float)
        return cls(z, uniform_weights(z.shape[0]), uniform_weights(z.shape[1]))

    @property
    def shape(self):
        return self.z.shape

    def with_table(self, z) -> "InteractionBlock":
        return replace(self, z=np.asarray(z, dtype=float))


def weighted_inner(x, y, w) -> float:
    """Return sum_i w_i x_i y_i."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (x.shape == y.shape == w.shape) or x.ndim != 1:
        raise DimensionError("vectors and weights must have equal length")
    return float(np.sum(w * x * y))


def weighted_norm(x, w) -> float:
    return float(np.sqrt(max(weighted_inner(x, x, w), 0.0)))


def r_inner(w_tab, v_tab, p, q) -> float:
    """Doubly weighted inner product tr(Q W' P V) of two n x p tables.

    Computed entrywise as sum_im p_i q_m w_im v_im.
    """
    w_tab = np.asarray(w_tab, dtype=float)
    v_tab = np.asarray(v_tab, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if w_tab.shape != v_tab.shape or w_tab.shape != (p.size, q.size):
        raise DimensionError("tables and weights do not match")
    return float(p @ (w_tab * v_tab) @ q)


def r_norm2(tab, p, q) -> float:
    return r_inner(tab, tab, p, q)


def metric_factors(block: DataBlock):
    """Square-root factors of the block metric.

    Returns ``(S, S_pinv, M)`` with ``M = S @ S`` symmetric.  Scores of a
    unit loading ``u = S_pinv @ a`` (``a`` Euclidean-unit, in the range of
    ``S``) are ``X M u = X S a``, so every program on the block reduces
    to a Euclidean one in the coordinates ``a``.
    """
    X, w, metric = block.data, block.weights, block.metric
    J = X.shape[1]
    if metric.mode == IDENTITY:
        eye = np.eye(J)
        return eye, eye, eye
    if metric.mode == CUSTOM:
        lam, V = np.linalg.eigh(metric.matrix)
        S = (V * np.sqrt(lam)) @ V.T
        S_pinv = (V / np.sqrt(lam)) @ V.T
        return S, S_pinv, metric.matrix
    cov = X.T @ (w[:, None] * X)
    cov = (cov + cov.T) / 2
    lam, V = np.linalg.eigh(cov)
    top = lam.max() if lam.size else 0.0
    keep = lam > PINV_RTOL * top if top > 0 else np.zeros_like(lam, bool)
    V, lam = V[:, keep], lam[keep]
    S = (V / np.sqrt(lam)) @ V.T
    S_pinv = (V * np.sqrt(lam)) @ V.T
    M = (V / lam) @ V.T
    return S, S_pinv, M


def whitened_scores(block: DataBlock) -> np.ndarray:
    """``X S``: columns spanning the block's admissible scores."""
    S = metric_factors(block)[0]
    return block.data @ S


def metric_projector_apply(block: DataBlock, target) -> np.ndarray:
    """P-orthogonal projection of the columns of ``target`` onto <X>.

    Uses the pseudo-inverse of X'PX, so rank-deficient blocks are fine.
    """
    target = np.asarray(target, dtype=float)
    vec = target.ndim == 1
    if vec:
        target = target[:, None]
    if target.shape[0] != block.data.shape[0]:
        raise DimensionError("target rows differ from block rows")
    basis = whitened_scores(block.with_metric(Metric.inverse_covariance()))
    w = block.weights
    out = basis @ (basis.T @ (w[:, None] * target))
    return out[:, 0] if vec else out


def weighted_mean(data, w) -> np.ndarray:
    return np.asarray(w) @ np.asarray(data, dtype=float)


def standardize(block: DataBlock) -> DataBlock:
    """Centre and scale each column to weighted mean 0 and variance 1."""
    X, w = block.data, block.weights
    centred = X - weighted_mean(X, w)
    var = w @ (centred ** 2)
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    flat = var <= (1e-14 * scale) ** 2
    if np.any(flat):
        cols = ", ".join(str(j) for j in np.flatnonzero(flat))
        raise ValueError(f"constant column(s) cannot be standardized: {cols}")
    return replace(block, data=centred / np.sqrt(var), standardized=True)


def center_columns(block: DataBlock) -> DataBlock:
    X, w = block.data, block.weights
    return replace(block, data=X - weighted_mean(X, w))


def double_center_table(z, p, q) -> np.ndarray:
    """z_im - zbar_i - zbar^m + zbarbar under the weights p, q."""
    z = np.asarray(z, dtype=float)
    row_means = z @ q
    col_means = p @ z
    grand = p @ row_means
    return z - row_means[:, None] - col_means[None, :] + grand


def double_center(zb: InteractionBlock) -> InteractionBlock:
    """Centre the table in rows (under Q) and in columns (under P)."""
    return zb.with_table(
        double_center_table(zb.z, zb.row_weights, zb.col_weights))


def check_compatible(zb: InteractionBlock, xblock: DataBlock,
                     yblock: DataBlock) -> None:
    """Raise DimensionError unless X and Y index the rows/columns of Z."""
    n, p = zb.shape
    if xblock.data.shape[0] != n:
        raise DimensionError(
            f"X has {xblock.data.shape[0]} rows, Z has {n} subjects")
    if yblock.data.shape[0] != p:
        raise DimensionError(
            f"Y has {yblock.data.shape[0]} rows, Z has {p} objects")
    if not np.allclose(xblock.weights, zb.row_weights, rtol=0, atol=1e-12):
        raise DimensionError("X row weights differ from the subject weights")
    if not np.allclose(yblock.weights, zb.col_weights, rtol=0, atol=1e-12):
        raise DimensionError("Y row weights differ from the object weights")
