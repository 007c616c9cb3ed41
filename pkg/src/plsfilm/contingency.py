r"""Interaction modelling of a contingency table.

A normalised frequency table ``f_im`` is turned into the dependence table

.. math:: \phi_{im} = \frac{f_{im}}{f_{i\cdot} f_{\cdot m}} - 1,

which is double-centred under the margin weights and whose squared
R-norm is the mean-square contingency :math:`\phi^2`.  FILM-A then
explains the dependence from descriptors of rows and columns.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import FitConfig, InteractionModel, empty_model, film_a_fit
from .errors import DimensionError
from .geometry import DataBlock, InteractionBlock, r_norm2, standardize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContingencyTable:
    """Normalised frequencies with their margins.

    Build it with :meth:`from_counts`, which accepts raw counts.
    """

    freq: np.ndarray
    row_margins: np.ndarray
    col_margins: np.ndarray
    dropped_rows: tuple = ()
    dropped_cols: tuple = ()

    def __post_init__(self):
        f = np.asarray(self.freq, dtype=float)
        if f.ndim != 2:
            raise DimensionError("contingency table must be a matrix")
        if not np.all(np.isfinite(f)) or np.any(f < 0):
            raise ValueError("frequencies must be finite and non-negative")
        if abs(f.sum() - 1.0) > 1e-10:
            raise ValueError(f"frequencies sum to {f.sum()!r}, expected 1")
        rows, cols = f.sum(axis=1), f.sum(axis=0)
        if np.any(rows == 0) or np.any(cols == 0):
            raise ValueError("contingency table has a zero margin")
        if (np.abs(rows - self.row_margins).max() > 1e-12
                or np.abs(cols - self.col_margins).max() > 1e-12):
            raise ValueError("margins differ from the table sums")
        object.__setattr__(self, "freq", f)

    @property
    def shape(self):
        return self.freq.shape

    @classmethod
    def from_counts(cls, counts, drop_empty: bool = False) -> "ContingencyTable":
        """Normalise a table of counts (or frequencies) by its total.

        Zero rows or columns are rejected unless ``drop_empty``, in which
        case they are removed with a warning and their indices recorded.
        """
        c = np.asarray(counts, dtype=float)
        if c.ndim != 2 or c.size == 0:
            raise DimensionError("contingency table must be a non-empty matrix")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("counts must be finite and non-negative")
        zero_r = tuple(int(i) for i in np.flatnonzero(c.sum(axis=1) == 0))
        zero_c = tuple(int(j) for j in np.flatnonzero(c.sum(axis=0) == 0))
        if zero_r or zero_c:
            if not drop_empty:
                raise ValueError(
                    f"zero margins: rows {list(zero_r)}, columns {list(zero_c)}")
            log.warning("dropping empty rows %s and columns %s",
                        list(zero_r), list(zero_c))
            c = np.delete(np.delete(c, zero_r, axis=0), zero_c, axis=1)
            if c.size == 0:
                raise ValueError("table is empty after dropping zero margins")
        f = c / c.sum()
        # tiny rounding in the division is absorbed into the margins
        return cls(f, f.sum(axis=1), f.sum(axis=0), zero_r, zero_c)


@dataclass(frozen=True)
class PhiTable:
    phi: np.ndarray
    row_weights: np.ndarray
    col_weights: np.ndarray
    phi2: float

    def as_block(self) -> InteractionBlock:
        p = self.row_weights / self.row_weights.sum()
        q = self.col_weights / self.col_weights.sum()
        return InteractionBlock(self.phi, p, q)


def build_phi(ct: ContingencyTable) -> PhiTable:
    """Dependence table ``f_im / (f_i. f_.m) - 1`` and its mean square.

    >>> t = build_phi(ContingencyTable.from_counts([[1, 0], [0, 1]]))
    >>> t.phi.tolist(), t.phi2
    ([[1.0, -1.0], [-1.0, 1.0]], 1.0)
    """
    p, q = ct.row_margins, ct.col_margins
    phi = ct.freq / np.outer(p, q) - 1.0
    return PhiTable(phi, p, q, r_norm2(phi, p, q))


def contingency_blocks(ct: ContingencyTable, xraw, yraw):
    """Dependence table and descriptor blocks standardised under the margins.

    Returns ``(phi, zb, xblock, yblock)``.
    """
    phi = build_phi(ct)
    zb = phi.as_block()
    xraw = np.asarray(xraw, dtype=float)
    yraw = np.asarray(yraw, dtype=float)
    if xraw.ndim == 1:
        xraw = xraw[:, None]
    if yraw.ndim == 1:
        yraw = yraw[:, None]
    if xraw.shape[0] != ct.shape[0] or yraw.shape[0] != ct.shape[1]:
        raise DimensionError(
            f"descriptors have {xraw.shape[0]} and {yraw.shape[0]} rows, "
            f"table is {ct.shape}")
    xb = standardize(DataBlock(xraw, zb.row_weights))
    yb = standardize(DataBlock(yraw, zb.col_weights))
    return phi, zb, xb, yb


def film_contingency(ct: ContingencyTable, xraw, yraw,
                     cfg: FitConfig = FitConfig()) -> InteractionModel:
    """FILM-A on the dependence table of ``ct``.

    Row descriptors are standardised under the row margins, column
    descriptors under the column margins.  The model's term contributions
    are then shares of ``phi^2``.
    """
    phi, zb, xb, yb = contingency_blocks(ct, xraw, yraw)
    if phi.phi2 <= 1e-24:
        return empty_model()
    return film_a_fit(zb, xb, yb, cfg)
