r"""FILM-A: latent-factor model of a double-centred table.

The rank-1 program maximises the covariance-type criterion

.. math:: \langle Z \mid XMu\,(YNv)^T \rangle_R,\qquad u^TMu = v^TNv = 1,

which rewards at the same time the fit of ``Z`` by the rank-one table
``f g'`` and the structural strength ``||f||_P ||g||_Q`` of the two
components.  Later ranks are extracted from deflated blocks by an
alternating loop that accounts for the cross interactions
``f^s g^t'`` (s != t) with all earlier components, and ``Omega`` is
finally obtained by projecting ``Z`` on the orthonormal tables
``U^{st} = f^s g^t'``.

Every program of this family reduces, in metric-whitened coordinates,
to the leading singular pair of a small cross-product matrix; see
:func:`leading_pair`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegenerateProblemError, DimensionError
from .geometry import (
    DataBlock,
    InteractionBlock,
    Metric,
    check_compatible,
    double_center,
    metric_factors,
    r_norm2,
)

log = logging.getLogger(__name__)

SUBJECT = "subject"
OBJECT = "object"

# relative gap under which two singular values are treated as tied
TIE_RTOL = 1e-10
# relative size under which the operator is treated as zero
ZERO_RTOL = 1e-12


@dataclass(frozen=True)
class Component:
    """One latent component.

    Attributes
    ----------
    loading : ndarray
        Metric-unit loading ``u`` on the (possibly deflated) block the
        component was extracted from.
    scores : ndarray
        Weight-unit scores ``f = XMu / ||XMu||``.
    eigenvalue : float
        ``eta`` of the program that produced the component.
    rank : int
    strength : float
        ``||XMu||`` before renorming, the structural strength.
    degenerate : bool
        True when the defining program had a tied or zero leading value.
    """

    loading: np.ndarray
    scores: np.ndarray
    eigenvalue: float
    rank: int
    strength: float = 1.0
    degenerate: bool = False


@dataclass(frozen=True)
class ComponentBasis:
    components: tuple
    side: str

    @property
    def scores(self) -> np.ndarray:
        if not self.components:
            return np.zeros((0, 0))
        return np.column_stack([c.scores for c in self.components])

    @property
    def loadings(self) -> np.ndarray:
        if not self.components:
            return np.zeros((0, 0))
        return np.column_stack([c.loading for c in self.components])

    def __len__(self):
        return len(self.components)


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by the FILM fitters.

    ``structural_strength`` selects the metric regime: True gives both
    blocks the identity metric (strength counts), False gives them the
    inverse-covariance metric (only the spanned subspaces matter) and
    None keeps the metrics the blocks already carry.
    """

    n_ranks: int = 2
    tol: float = 1e-9
    max_iter: int = 500
    structural_strength: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_ranks < 1:
            raise ValueError("n_ranks must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class InteractionModel:
    """Fitted model A: ``Z = F Omega G' + E``."""

    omega: np.ndarray
    subject_basis: ComponentBasis
    object_basis: ComponentBasis
    r2: float
    term_contributions: np.ndarray
    residual_norm2: float
    total_norm2: float
    x_variance_shares: np.ndarray
    y_variance_shares: np.ndarray
    iterations_per_rank: tuple
    truncated: bool = False
    fit_trace: tuple = field(default=(), repr=False)
    x_coefficients: np.ndarray | None = field(default=None, repr=False)
    y_coefficients: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_ranks(self) -> int:
        return self.omega.shape[0]

    @property
    def fitted_norm2(self) -> float:
        return float(np.sum(self.omega ** 2))

    def fitted_table(self) -> np.ndarray:
        F = self.subject_basis.scores
        G = self.object_basis.scores
        return F @ self.omega @ G.T

    def interaction_matrix(self) -> np.ndarray:
        """``C = A Omega B'`` so that ``Z_hat = X C Y'``."""
        return self.x_coefficients @ self.omega @ self.y_coefficients.T


def apply_regime(block: DataBlock, structural_strength) -> DataBlock:
    if structural_strength is None:
        return block
    if structural_strength:
        return block.with_metric(Metric.identity())
    return block.with_metric(Metric.inverse_covariance())


def leading_pair(K, bound=None):
    """Leading singular triplet of ``K`` with a deterministic tie rule.

    Returns ``(a, sigma, b, tied)``; ``a`` and ``b`` are unit vectors with
    ``K b = sigma a``.  When the top singular value is repeated, ``a`` is
    the unit vector of the tied left subspace that is lexicographically
    largest (maximal first coordinate, then second, ...).

    Raises DegenerateProblemError when ``sigma`` is negligible with
    respect to ``bound`` (an upper bound of the operator norm; defaults
    to the Frobenius norm of ``K``).
    """
    K = np.asarray(K, dtype=float)
    if K.size == 0:
        raise DegenerateProblemError("empty operator")
    U, s, Vt = np.linalg.svd(K, full_matrices=False)
    if bound is None:
        bound = float(np.sqrt(np.sum(K ** 2)))
    if s[0] <= ZERO_RTOL * bound or s[0] == 0.0:
        raise DegenerateProblemError("operator is zero")
    tied = s >= s[0] * (1.0 - TIE_RTOL)
    if tied.sum() == 1:
        return U[:, 0], float(s[0]), Vt[0], False
    Ut = U[:, tied]
    a = None
    for i in range(Ut.shape[0]):
        proj = Ut @ Ut[i]
        nrm = np.linalg.norm(proj)
        if nrm > 1e-8:
            a = proj / nrm
            break
    b = K.T @ a / s[0]
    return a, float(s[0]), b / np.linalg.norm(b), True


def _bound(W_left, p, z, q, W_right) -> float:
    wl = np.sqrt(np.sum(p[:, None] * W_left ** 2))
    wr = np.sqrt(np.sum(q[:, None] * W_right ** 2))
    return float(wl * wr * np.sqrt(r_norm2(z, p, q)))


def _cross(W_left, p, z, q, W_right) -> np.ndarray:
    return W_left.T @ (p[:, None] * z * q[None, :]) @ W_right


def _pnorm(v, w) -> float:
    return float(np.sqrt(np.sum(w * v * v)))


def sign_pivot(v) -> int:
    """Index of the largest-magnitude coordinate (first on ties)."""
    return int(np.argmax(np.abs(v)))


def solve_scores(z, p, q, W_left, W_right):
    """Leading solution of program P between two score bases.

    ``W_left`` (n x a) and ``W_right`` (p x b) are the whitened score
    bases of the two blocks (``X S`` for a block ``(X, M)``, the matrix
    itself for an identity-metric block).  Returns
    ``(a, sigma, b, tied)`` where the raw components are ``W_left @ a`` and
    ``W_right @ b`` and ``sigma`` is the criterion value.
    """
    K = _cross(W_left, p, z, q, W_right)
    return leading_pair(K, _bound(W_left, p, z, q, W_right))


def solve_program_p(zb: InteractionBlock, xblock: DataBlock,
                    yblock: DataBlock):
    """Rank-1 solution of program P(Z; (X, M), (Y, N)).

    Returns
    -------
    f, g : Component
        Subject and object components, P- and Q-normed.  The sign makes
        the largest-magnitude coordinate of ``f`` positive; ``g`` follows
        so that the criterion is non-negative.
    eta : float
        Largest eigenvalue of R_{X,M} P Z Q R_{Y,N} Q Z' P.  The criterion
        at the metric-unit loadings equals ``sqrt(eta)``.
    """
    check_compatible(zb, xblock, yblock)
    p, q = zb.row_weights, zb.col_weights
    Sx, Sx_pinv, _ = metric_factors(xblock)
    Sy, Sy_pinv, _ = metric_factors(yblock)
    Wx = xblock.data @ Sx
    Wy = yblock.data @ Sy
    a, sigma, b, tied = solve_scores(zb.z, p, q, Wx, Wy)
    f_raw, g_raw = Wx @ a, Wy @ b
    if f_raw[sign_pivot(f_raw)] < 0:
        a, b, f_raw, g_raw = -a, -b, -f_raw, -g_raw
    sf, sg = _pnorm(f_raw, p), _pnorm(g_raw, q)
    eta = sigma ** 2
    f = Component(Sx_pinv @ a, f_raw / sf, eta, 1, sf, tied)
    g = Component(Sy_pinv @ b, g_raw / sg, eta, 1, sg, tied)
    return f, g, eta


def program_p_criterion(zb: InteractionBlock, xblock: DataBlock,
                        yblock: DataBlock, u, v) -> float:
    """v' N Y' Q Z' P X M u, evaluated literally."""
    M = metric_factors(xblock)[2]
    N = metric_factors(yblock)[2]
    f = xblock.data @ (M @ u)
    g = yblock.data @ (N @ v)
    return float(f @ (zb.row_weights[:, None] * zb.z
                      * zb.col_weights[None, :]) @ g)


def deflate(block: DataBlock, comp) -> DataBlock:
    """Remove from each column its P-projection on a weight-unit component.

    ``comp`` is a Component or a score vector.
    """
    f = comp.scores if isinstance(comp, Component) else np.asarray(comp, float)
    w = block.weights
    if f.shape != (block.data.shape[0],):
        raise DimensionError("component length differs from block rows")
    if abs(_pnorm(f, w) - 1.0) > 1e-8:
        raise ValueError("deflation needs a weight-normed component")
    X = block.data
    return block.with_data(X - np.outer(f, (w * f) @ X))


def compute_omega(zb: InteractionBlock, fbasis, gbasis) -> np.ndarray:
    """omega_st = f^s' P Z Q g^t for orthonormal bases F and G."""
    F = fbasis.scores if isinstance(fbasis, ComponentBasis) else np.asarray(fbasis, float)
    G = gbasis.scores if isinstance(gbasis, ComponentBasis) else np.asarray(gbasis, float)
    if F.ndim == 1:
        F = F[:, None]
    if G.ndim == 1:
        G = G[:, None]
    p, q = zb.row_weights, zb.col_weights
    if F.shape[0] != p.size or G.shape[0] != q.size:
        raise DimensionError("bases do not match the table")
    for name, B, w in (("subject", F, p), ("object", G, q)):
        gram = B.T @ (w[:, None] * B)
        if np.abs(gram - np.eye(B.shape[1])).max() > 1e-6:
            raise ValueError(f"{name} basis is not orthonormal")
    return _cross(F, p, zb.z, q, G)


def variance_shares(block: DataBlock, scores) -> np.ndarray:
    """f' P X X' P f / tr(X' P X) for each column of ``scores``."""
    X, w = block.data, block.weights
    total = float(np.sum(w[:, None] * X ** 2))
    proj = scores.T @ (w[:, None] * X)
    if total == 0:
        return np.zeros(scores.shape[1])
    return np.sum(proj ** 2, axis=1) / total


def _coefficients(block: DataBlock, scores) -> np.ndarray:
    # minimum-norm A with X A = F in the weighted least-squares sense
    sw = np.sqrt(block.weights)[:, None]
    return np.linalg.lstsq(sw * block.data, sw * scores, rcond=None)[0]


def _exhausted(block: DataBlock, reference: DataBlock) -> bool:
    ref = np.sqrt(np.sum(reference.weights[:, None] * reference.data ** 2))
    cur = np.sqrt(np.sum(block.weights[:, None] * block.data ** 2))
    return cur <= 1e-9 * max(ref, 1e-300)


def _random_start(W, w, rng) -> np.ndarray:
    v = W @ rng.standard_normal(W.shape[1])
    n = _pnorm(v, w)
    if n == 0:
        raise DegenerateProblemError("block has no admissible direction")
    return v / n


def _align(new, old, w):
    return -new if np.sum(w * new * old) < 0 else new


def _rank_start(zc, Xd, Yd, rng):
    """Warm start for an alternating rank: the deflated rank-1 solution."""
    p, q = zc.row_weights, zc.col_weights
    try:
        f0, g0, _ = solve_program_p(zc, Xd, Yd)
        return f0.scores, g0.scores, False
    except DegenerateProblemError:
        log.debug("deflated rank-1 problem is degenerate; random start")
        f0 = _random_start(Xd.data @ metric_factors(Xd)[0], p, rng)
        g0 = _random_start(Yd.data @ metric_factors(Yd)[0], q, rng)
        return f0, g0, True


def _half_step(z, p, q, W_left, W_right, solve_left, previous):
    """One exact maximisation; keeps ``previous`` if the operator is zero.

    Returns ``(scores, coords, sigma, degenerate)`` for the side being
    solved (left when ``solve_left``).
    """
    try:
        a, sigma, b, tied = solve_scores(z, p, q, W_left, W_right)
    except DegenerateProblemError:
        return previous, None, 0.0, True
    if solve_left:
        raw, coords, w = W_left @ a, a, p
    else:
        raw, coords, w = W_right @ b, b, q
    nrm = _pnorm(raw, w)
    scores = raw / nrm
    if np.sum(w * scores * previous) < 0:
        scores, coords = -scores, -coords
    return scores, (coords, nrm), sigma, tied


def film_a_fit(zb: InteractionBlock, xblock: DataBlock, yblock: DataBlock,
               cfg: FitConfig = FitConfig()) -> InteractionModel:
    """Fit model A up to rank ``cfg.n_ranks`` with the FILM-A algorithm.

    ``Z`` is double-centred first; with column-centred X and Y this
    changes nothing, otherwise it removes margins that model A cannot
    represent anyway.

    Rank ``t >= 2`` alternates until the max-abs change of both score
    vectors drops below ``cfg.tol``:

    (i)  f^t = P-normed subject solution of P(Z; (X^{t-1}, M), (G^t, I))
    (ii) g^t = Q-normed object solution of P(Z; (F^t, I), (Y^{t-1}, N))

    where ``G^t`` stacks g^1..g^{t-1} and the current g^t, and the blocks
    are deflated by all earlier components.

    Raises
    ------
    ConvergenceError
        The loop of some rank did not settle within ``cfg.max_iter``.
    DegenerateProblemError
        ``Z`` is orthogonal to every rank-1 table of the cone.
    """
    check_compatible(zb, xblock, yblock)
    xblock = apply_regime(xblock, cfg.structural_strength)
    yblock = apply_regime(yblock, cfg.structural_strength)
    zc = double_center(zb)
    z, p, q = zc.z, zc.row_weights, zc.col_weights
    rng = np.random.default_rng(cfg.seed)

    f1, g1, _ = solve_program_p(zc, xblock, yblock)
    fcomps, gcomps = [f1], [g1]
    iterations = [0]
    trace = [(float(_cross(f1.scores[:, None], p, z, q, g1.scores[:, None])[0, 0] ** 2),)]
    truncated = False
    Xd, Yd = xblock, yblock

    for t in range(2, cfg.n_ranks + 1):
        Xd = deflate(Xd, fcomps[-1])
        Yd = deflate(Yd, gcomps[-1])
        if _exhausted(Xd, xblock) or _exhausted(Yd, yblock):
            log.info("blocks exhausted at rank %d; model truncated", t)
            truncated = True
            break
        Sx, Sx_pinv, _ = metric_factors(Xd)
        Sy, Sy_pinv, _ = metric_factors(Yd)
        Wx, Wy = Xd.data @ Sx, Yd.data @ Sy
        f, g, degenerate = _rank_start(zc, Xd, Yd, rng)
        Fprev = np.column_stack([c.scores for c in fcomps])
        Gprev = np.column_stack([c.scores for c in gcomps])
        fcoords = gcoords = None
        eta_f = eta_g = 0.0
        steps = []
        delta = np.inf
        for k in range(1, cfg.max_iter + 1):
            Gk = np.column_stack([Gprev, g])
            f_new, fc, sig_f, deg_f = _half_step(z, p, q, Wx, Gk, True, f)
            Fk = np.column_stack([Fprev, f_new])
            g_new, gc, sig_g, deg_g = _half_step(z, p, q, Fk, Wy, False, g)
            fcoords = fc if fc is not None else fcoords
            gcoords = gc if gc is not None else gcoords
            eta_f, eta_g = sig_f ** 2, sig_g ** 2
            degenerate = degenerate or deg_f or deg_g
            delta = max(np.abs(f_new - f).max(), np.abs(g_new - g).max())
            f, g = f_new, g_new
            Fk = np.column_stack([Fprev, f])
            Gk = np.column_stack([Gprev, g])
            steps.append(float(np.sum(_cross(Fk, p, z, q, Gk) ** 2)))
            if delta < cfg.tol:
                break
        else:
            raise ConvergenceError(
                f"rank {t}: no convergence after {cfg.max_iter} iterations "
                f"(last change {delta:.3g})", rank=t, delta=float(delta))
        fcomps.append(_make_component(f, fcoords, Sx_pinv, p, eta_f, t, degenerate))
        gcomps.append(_make_component(g, gcoords, Sy_pinv, q, eta_g, t, degenerate))
        iterations.append(k)
        trace.append(tuple(steps))

    fcomps, gcomps = _apply_sign_rule(fcomps, gcomps, z, p, q)
    fb = ComponentBasis(tuple(fcomps), SUBJECT)
    gb = ComponentBasis(tuple(gcomps), OBJECT)
    omega = compute_omega(zc, fb, gb)
    total = r_norm2(z, p, q)
    resid = r_norm2(z - fb.scores @ omega @ gb.scores.T, p, q)
    fitted = float(np.sum(omega ** 2))
    return InteractionModel(
        omega=omega,
        subject_basis=fb,
        object_basis=gb,
        r2=fitted / total if total > 0 else 0.0,
        term_contributions=omega ** 2 / total if total > 0 else omega * 0.0,
        residual_norm2=resid,
        total_norm2=total,
        x_variance_shares=variance_shares(xblock, fb.scores),
        y_variance_shares=variance_shares(yblock, gb.scores),
        iterations_per_rank=tuple(iterations),
        truncated=truncated,
        fit_trace=tuple(trace),
        x_coefficients=_coefficients(xblock, fb.scores),
        y_coefficients=_coefficients(yblock, gb.scores),
    )


def empty_model(total_norm2: float = 0.0) -> InteractionModel:
    """Rank-0 model for a table with nothing to extract."""
    return InteractionModel(
        omega=np.zeros((0, 0)),
        subject_basis=ComponentBasis((), SUBJECT),
        object_basis=ComponentBasis((), OBJECT),
        r2=0.0,
        term_contributions=np.zeros((0, 0)),
        residual_norm2=total_norm2,
        total_norm2=total_norm2,
        x_variance_shares=np.zeros(0),
        y_variance_shares=np.zeros(0),
        iterations_per_rank=(),
        truncated=True,
    )


def _make_component(scores, coords, S_pinv, w, eta, rank, degenerate):
    if coords is None:
        loading = np.full(S_pinv.shape[0], np.nan)
        strength = 0.0
    else:
        a, strength = coords
        loading = S_pinv @ a
    return Component(loading, scores, eta, rank, strength, degenerate)


def _flip(c: Component) -> Component:
    return Component(-c.loading, -c.scores, c.eigenvalue, c.rank,
                     c.strength, c.degenerate)


def _apply_sign_rule(fcomps, gcomps, z, p, q):
    """Largest |coordinate| of f^t positive, then g^t such that omega_tt >= 0."""
    fs, gs = [], []
    for f, g in zip(fcomps, gcomps):
        if f.scores[sign_pivot(f.scores)] < 0:
            f = _flip(f)
        w_tt = float(f.scores @ (p[:, None] * z * q[None, :]) @ g.scores)
        scale = np.sqrt(r_norm2(z, p, q))
        if w_tt < 0 and abs(w_tt) > 1e-14 * scale:
            g = _flip(g)
        elif abs(w_tt) <= 1e-14 * scale and g.scores[sign_pivot(g.scores)] < 0:
            g = _flip(g)
        fs.append(f)
        gs.append(g)
    return fs, gs


def diagnostics(model: InteractionModel, zb: InteractionBlock,
                xblock: DataBlock, yblock: DataBlock) -> dict:
    """Decomposition indicators of a fitted model, recomputed from data.

    Shares are fractions of ``||Z||_R^2`` for the double-centred table:
    R^2, one share per term ``omega_st^2``, the residual share, and the
    share of each block's variance carried by each component.
    """
    zc = double_center(zb)
    z, p, q = zc.z, zc.row_weights, zc.col_weights
    F, G = model.subject_basis.scores, model.object_basis.scores
    omega = compute_omega(zc, F, G)
    total = r_norm2(z, p, q)
    resid = r_norm2(z - F @ omega @ G.T, p, q)
    if total > 0:
        terms = omega ** 2 / total
        resid_share = resid / total
    else:
        terms = np.zeros_like(omega)
        resid_share = 0.0
    return {
        "r2": float(terms.sum()),
        "term_shares": terms.tolist(),
        "residual_share": float(resid_share),
        "total_norm2": float(total),
        "residual_norm2": float(resid),
        "omega": omega.tolist(),
        "x_variance_shares": variance_shares(xblock, F).tolist(),
        "y_variance_shares": variance_shares(yblock, G).tolist(),
        "iterations_per_rank": list(model.iterations_per_rank),
        "truncated": bool(model.truncated),
    }
