"""Reference methods: the full set of RLQ triplets, the two-group program
and a brute-force maximiser of the rank-1 criterion.

They serve as features in their own right and as independent checks of
the FILM fitters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Component, _pnorm, leading_pair, sign_pivot
from .errors import DegenerateProblemError, DimensionError
from .geometry import (
    DataBlock,
    InteractionBlock,
    Metric,
    check_compatible,
    metric_factors,
)


@dataclass(frozen=True)
class TripletSet:
    """Solutions ``(f^t, g^t, eta^t)`` sorted by non-increasing ``eta``."""

    subject_scores: np.ndarray
    object_scores: np.ndarray
    eigenvalues: np.ndarray
    subject_loadings: np.ndarray
    object_loadings: np.ndarray

    def __len__(self):
        return self.eigenvalues.size

    def __getitem__(self, t):
        return (self.subject_scores[:, t], self.object_scores[:, t],
                float(self.eigenvalues[t]))


def _whitened(block):
    S, S_pinv, _ = metric_factors(block)
    return block.data @ S, S_pinv


def _normed_scores(W, coords, w):
    raw = W @ coords
    norms = np.sqrt(np.sum(w[:, None] * raw ** 2, axis=0))
    return raw / norms, norms


def rlq_triplets(zb: InteractionBlock, xblock: DataBlock,
                 yblock: DataBlock) -> TripletSet:
    """All solutions of program P with a non-negligible eigenvalue.

    The eigenvectors of ``R_{X,M} P Z Q R_{Y,N} Q Z' P`` are read off the
    singular value decomposition of the whitened cross product
    ``S_x X' P Z Q Y S_y``; eigenvalues below ``1e-12 eta_1`` are dropped.
    Each ``f^t`` has its largest coordinate positive and ``g^t`` follows.
    """
    check_compatible(zb, xblock, yblock)
    p, q = zb.row_weights, zb.col_weights
    Wx, Sx_pinv = _whitened(xblock)
    Wy, Sy_pinv = _whitened(yblock)
    K = Wx.T @ (p[:, None] * zb.z * q[None, :]) @ Wy
    U, s, Vt = np.linalg.svd(K, full_matrices=False)
    eta = s ** 2
    keep = eta > 1e-12 * eta[0] if eta.size and eta[0] > 0 else np.zeros(0, bool)
    A, B, eta = U[:, keep], Vt[keep].T, eta[keep]
    F, _ = _normed_scores(Wx, A, p)
    G, _ = _normed_scores(Wy, B, q)
    for t in range(eta.size):
        if F[sign_pivot(F[:, t]), t] < 0:
            F[:, t], G[:, t] = -F[:, t], -G[:, t]
            A[:, t], B[:, t] = -A[:, t], -B[:, t]
    return TripletSet(F, G, eta, Sx_pinv @ A, Sy_pinv @ B)


def two_group_solve(xblock: DataBlock, yblock: DataBlock):
    """Leading solution of the two-group program Q(X, M; Y, N).

    Solves ``R_{X,M} P R_{Y,N} P f = eta f`` and its mirror for ``g``.
    Inverse-covariance metrics give canonical correlation analysis
    (``eta`` is the squared first canonical correlation), identity
    metrics inter-battery analysis.

    Returns
    -------
    f, g : Component
        P-normed scores; ``degenerate`` is set (and ``eta`` is 0) when
        the two column spaces are P-orthogonal.
    eta : float
    """
    if xblock.data.shape[0] != yblock.data.shape[0]:
        raise DimensionError("blocks must share their rows")
    if not np.allclose(xblock.weights, yblock.weights, rtol=0, atol=1e-12):
        raise DimensionError("blocks must share their row weights")
    w = xblock.weights
    Wx, Sx_pinv = _whitened(xblock)
    Wy, Sy_pinv = _whitened(yblock)
    K = Wx.T @ (w[:, None] * Wy)
    bound = np.sqrt(np.sum(w[:, None] * Wx ** 2) * np.sum(w[:, None] * Wy ** 2))
    try:
        a, sigma, b, tied = leading_pair(K, bound)
    except DegenerateProblemError:
        n = w.size
        f = Component(np.zeros(Wx.shape[1]), np.zeros(n), 0.0, 1, 0.0, True)
        g = Component(np.zeros(Wy.shape[1]), np.zeros(n), 0.0, 1, 0.0, True)
        return f, g, 0.0
    f_raw, g_raw = Wx @ a, Wy @ b
    if f_raw[sign_pivot(f_raw)] < 0:
        a, b, f_raw, g_raw = -a, -b, -f_raw, -g_raw
    sf, sg = _pnorm(f_raw, w), _pnorm(g_raw, w)
    eta = sigma ** 2
    f = Component(Sx_pinv @ a, f_raw / sf, eta, 1, sf, tied)
    g = Component(Sy_pinv @ b, g_raw / sg, eta, 1, sg, tied)
    return f, g, eta


def pca_special_case(zb: InteractionBlock) -> TripletSet:
    """Weighted principal components of Z as a special case of program P.

    Uses ``X = I_n`` with ``M = P^{-1}`` and ``Y = I_p`` with
    ``N = Q^{-1}``, which turns the eigen-equation into
    ``Z Q Z' P f = eta f``.
    """
    p, q = zb.row_weights, zb.col_weights
    xb = DataBlock(np.eye(p.size), p, Metric.custom(np.diag(1.0 / p)))
    yb = DataBlock(np.eye(q.size), q, Metric.custom(np.diag(1.0 / q)))
    return rlq_triplets(zb, xb, yb)


def brute_force_rank1(zb: InteractionBlock, xblock: DataBlock,
                      yblock: DataBlock, n_samples: int = 10_000,
                      seed: int = 0, n_polish: int = 3,
                      chunk: int = 50_000):
    """Random search with best-response polishing for program P.

    Draws ``n_samples`` metric-unit pairs ``(u, v)``, improves each by
    ``n_polish`` rounds of the closed-form best response (at fixed ``v``
    the optimal ``u`` is ``M^+ X'PZQYNv`` rescaled to ``u'Mu = 1``; the
    same for ``v``) and keeps the best criterion value.  Everything is
    computed in the original coordinates, never through an eigen- or
    singular-value solver, so the result is an independent lower bound
    on the optimum.  Ties go to the lowest sample index.

    Returns
    -------
    best_u, best_v : ndarray
    best_value : float
    """
    check_compatible(zb, xblock, yblock)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    p, q = zb.row_weights, zb.col_weights
    M = metric_factors(xblock)[2]
    N = metric_factors(yblock)[2]
    Mi, Ni = np.linalg.pinv(M), np.linalg.pinv(N)
    X, Y = xblock.data, yblock.data
    A = M @ X.T @ (p[:, None] * zb.z * q[None, :]) @ Y @ N
    J, K = A.shape
    # separate streams drawn sample-major: the chunk size cannot change the draws
    ru, rv = (np.random.default_rng(s)
              for s in np.random.SeedSequence(seed).spawn(2))

    def unit(V, G):
        # columns rescaled to V' G V = 1; null directions left at zero
        nrm = np.sqrt(np.maximum(np.einsum("ij,ik,kj->j", V, G, V), 0.0))
        return np.divide(V, nrm, out=np.zeros_like(V), where=nrm > 0)

    best = (-np.inf, None, None)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        U = unit(ru.standard_normal((m, J)).T, M)
        V = unit(rv.standard_normal((m, K)).T, N)
        for _ in range(n_polish):
            U = unit(Mi @ (A @ V), M)
            V = unit(Ni @ (A.T @ U), N)
        vals = np.einsum("jm,jk,km->m", U, A, V)
        i = int(np.argmax(vals))
        if vals[i] > best[0]:
            best = (float(vals[i]), U[:, i].copy(), V[:, i].copy())
        done += m
    return best[1], best[2], best[0]
