r"""Model B: interactions plus own effects of the components.

An arbitrary table splits uniquely into four R-orthogonal parts,

.. math:: Z = \bar z\, e_n e_p^T + f e_p^T + e_n g^T + Z^*,

with ``f`` P-centred, ``g`` Q-centred and ``Z*`` double-centred.
FILM-B1 models the three non-constant parts separately (a PLS1 or OLS1
regression for each margin, FILM-A for ``Z*``); FILM-B2 fits them
simultaneously with shared components, alternating between the subject
and object sides exactly as FILM-A does.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (
    SUBJECT,
    OBJECT,
    Component,
    ComponentBasis,
    FitConfig,
    InteractionModel,
    _exhausted,
    _pnorm,
    _random_start,
    apply_regime,
    deflate,
    empty_model,
    film_a_fit,
    leading_pair,
    sign_pivot,
    solve_program_p,
)
from .errors import ConvergenceError, DegenerateProblemError, DimensionError
from .geometry import (
    DataBlock,
    InteractionBlock,
    check_compatible,
    double_center_table,
    metric_factors,
    metric_projector_apply,
    r_norm2,
)

log = logging.getLogger(__name__)

PLS1 = "pls1"
OLS1 = "ols1"


@dataclass(frozen=True)
class MarginalDecomposition:
    grand_mean: float
    subject_margin: np.ndarray
    object_margin: np.ndarray
    zstar: np.ndarray
    row_weights: np.ndarray
    col_weights: np.ndarray

    def parts(self):
        """The four tables, in the order constant, subject, object, core."""
        n, p = self.zstar.shape
        return (
            np.full((n, p), self.grand_mean),
            np.outer(self.subject_margin, np.ones(p)),
            np.outer(np.ones(n), self.object_margin),
            self.zstar,
        )

    def reconstruct(self) -> np.ndarray:
        return sum(self.parts())


def decompose_margins(zb: InteractionBlock) -> MarginalDecomposition:
    """Split Z into grand mean, subject margin, object margin and core.

    >>> zb = InteractionBlock.uniform([[1., 2.], [3., 4.]])
    >>> d = decompose_margins(zb)
    >>> d.grand_mean, d.subject_margin.tolist(), d.object_margin.tolist()
    (2.5, [-1.0, 1.0], [-0.5, 0.5])
    """
    z, p, q = zb.z, zb.row_weights, zb.col_weights
    row_means = z @ q
    col_means = p @ z
    grand = float(p @ row_means)
    return MarginalDecomposition(
        grand_mean=grand,
        subject_margin=row_means - grand,
        object_margin=col_means - grand,
        zstar=double_center_table(z, p, q),
        row_weights=p,
        col_weights=q,
    )


@dataclass(frozen=True)
class MarginModel:
    """Univariate regression of a margin vector on a descriptor block.

    ``components`` are weight-orthonormal columns, ``coefficients`` the
    matching ``alpha_t`` so that ``y = components @ coefficients +
    residual``.
    """

    components: np.ndarray
    coefficients: np.ndarray
    residual: np.ndarray
    residual_norm2: float
    method: str
    early_stop: bool = False

    @property
    def fitted(self) -> np.ndarray:
        return self.components @ self.coefficients

    @property
    def explained_norm2(self) -> float:
        return float(np.sum(self.coefficients ** 2))


def pls1_fit(y, block: DataBlock, n_comp: int) -> MarginModel:
    """Weighted NIPALS PLS1 of ``y`` on the block.

    At each step the weight vector is ``X_{t-1}' P y_res`` (Euclidean
    unit), the component its P-normed image, the coefficient the
    P-projection of the current residual; both ``y`` and ``X`` are then
    deflated.  Stops early when ``y_res`` is P-orthogonal to what is left
    of ``X``.
    """
    y = np.asarray(y, dtype=float)
    w = block.weights
    if y.shape != (block.data.shape[0],):
        raise DimensionError("response length differs from block rows")
    if n_comp < 1:
        raise ValueError("n_comp must be >= 1")
    X = block.data.copy()
    y_res = y.copy()
    scale = max(_pnorm(y, w), 1e-300) * max(
        np.sqrt(np.sum(w[:, None] * X ** 2)), 1e-300)
    comps, coefs = [], []
    early = False
    for _ in range(n_comp):
        cov = X.T @ (w * y_res)
        nrm = np.linalg.norm(cov)
        if nrm <= 1e-12 * scale:
            early = True
            break
        t = X @ (cov / nrm)
        t = t / _pnorm(t, w)
        alpha = float(np.sum(w * y_res * t))
        comps.append(t)
        coefs.append(alpha)
        y_res = y_res - alpha * t
        X = X - np.outer(t, (w * t) @ X)
    n = block.data.shape[0]
    C = np.column_stack(comps) if comps else np.zeros((n, 0))
    return MarginModel(C, np.asarray(coefs), y_res,
                       float(np.sum(w * y_res ** 2)), PLS1, early)


def ols1_fit(y, block: DataBlock) -> MarginModel:
    """OLS regression of ``y`` on the block, as one P-normed component."""
    y = np.asarray(y, dtype=float)
    w = block.weights
    if y.shape != (block.data.shape[0],):
        raise DimensionError("response length differs from block rows")
    fit = metric_projector_apply(block, y)
    nrm = _pnorm(fit, w)
    y_res = y - fit
    if nrm <= 1e-12 * max(_pnorm(y, w), 1e-300):
        return MarginModel(np.zeros((y.size, 0)), np.zeros(0), y,
                           float(np.sum(w * y ** 2)), OLS1, True)
    return MarginModel((fit / nrm)[:, None], np.array([nrm]), y_res,
                       float(np.sum(w * y_res ** 2)), OLS1, False)


@dataclass(frozen=True)
class B1Model:
    """Separate models of the two margins and of the double-centred core."""

    decomposition: MarginalDecomposition
    subject_margin_model: MarginModel
    object_margin_model: MarginModel
    interaction_model: InteractionModel
    variance_table: dict

    def component_agreement(self):
        """|correlation| between margin components and interaction components.

        Large entries hint that shared components (FILM-B2) would give a
        more parsimonious model.
        """
        p = self.decomposition.row_weights
        q = self.decomposition.col_weights
        sc = self.subject_margin_model.components
        oc = self.object_margin_model.components
        if not len(self.interaction_model.subject_basis):
            return np.zeros((sc.shape[1], 0)), np.zeros((oc.shape[1], 0))
        subj = self.subject_margin_model.components.T @ (
            p[:, None] * self.interaction_model.subject_basis.scores)
        obj = self.object_margin_model.components.T @ (
            q[:, None] * self.interaction_model.object_basis.scores)
        return np.abs(subj), np.abs(obj)


def _require_centred(block: DataBlock, name: str) -> None:
    means = block.weights @ block.data
    scale = max(np.abs(block.data).max(), 1.0)
    if np.abs(means).max() > 1e-8 * scale:
        raise ValueError(f"{name} columns must be centred under their weights")


def _margin_model(y, block, method, n_comp):
    if method == PLS1:
        return pls1_fit(y, block, n_comp)
    if method == OLS1:
        return ols1_fit(y, block)
    raise ValueError(f"unknown margin method {method!r}")


def film_b1_fit(zb: InteractionBlock, xblock: DataBlock, yblock: DataBlock,
                cfg: FitConfig = FitConfig(), margin_method: str = PLS1,
                margin_components: int | None = None) -> B1Model:
    """FILM-B1: PLS1 (or OLS1) for each margin, FILM-A for the core.

    ``margin_components`` defaults to ``cfg.n_ranks``.  The variance
    table splits ``||Z - zbar e e'||_R^2`` into the explained and residual
    parts of the three sub-models; its entries add up to the total.
    """
    check_compatible(zb, xblock, yblock)
    _require_centred(xblock, "X")
    _require_centred(yblock, "Y")
    n_comp = margin_components or cfg.n_ranks
    dec = decompose_margins(zb)
    sm = _margin_model(dec.subject_margin, xblock, margin_method, n_comp)
    om = _margin_model(dec.object_margin, yblock, margin_method, n_comp)
    p, q = zb.row_weights, zb.col_weights
    total = r_norm2(zb.z - dec.grand_mean, p, q)
    core_norm2 = r_norm2(dec.zstar, p, q)
    if core_norm2 <= 1e-24 * max(total, 1e-300):
        # purely additive table: no interaction to extract
        core = empty_model(core_norm2)
    else:
        core = film_a_fit(zb.with_table(dec.zstar), xblock, yblock, cfg)
    table = {
        "total": total,
        "subject_margin_explained": sm.explained_norm2,
        "subject_margin_residual": sm.residual_norm2,
        "object_margin_explained": om.explained_norm2,
        "object_margin_residual": om.residual_norm2,
        "interaction_explained": core.fitted_norm2,
        "interaction_residual": core.residual_norm2,
    }
    return B1Model(dec, sm, om, core, table)


@dataclass(frozen=True)
class B2Model:
    """Shared components carrying own effects and interactions.

    ``Z - zbar e e' = sum_s subject_effects[s] f^s e'
                     + sum_t object_effects[t] e g^t'
                     + sum_st interaction[s, t] f^s g^t' + residual``
    """

    grand_mean: float
    subject_basis: ComponentBasis
    object_basis: ComponentBasis
    subject_effects: np.ndarray
    object_effects: np.ndarray
    interaction: np.ndarray
    residual_norm2: float
    total_norm2: float
    iterations_per_rank: tuple
    truncated: bool = False
    fit_trace: tuple = field(default=(), repr=False)

    @property
    def fitted_norm2(self) -> float:
        return float(np.sum(self.subject_effects ** 2)
                     + np.sum(self.object_effects ** 2)
                     + np.sum(self.interaction ** 2))

    @property
    def r2(self) -> float:
        return self.fitted_norm2 / self.total_norm2 if self.total_norm2 > 0 else 0.0

    def fitted_table(self) -> np.ndarray:
        F, G = self.subject_basis.scores, self.object_basis.scores
        n, p = F.shape[0], G.shape[0]
        return (np.outer(F @ self.subject_effects, np.ones(p))
                + np.outer(np.ones(n), G @ self.object_effects)
                + F @ self.interaction @ G.T)


def _wz(z, p, q):
    return p[:, None] * z * q[None, :]


def _project_terms(zt, p, q, F, G):
    """R-projections of a margin-free table on the B2 term set."""
    wz = _wz(zt, p, q)
    subj = F.T @ wz.sum(axis=1)
    obj = wz.sum(axis=0) @ G
    inter = F.T @ wz @ G
    return subj, obj, inter


def _terms_table(F, G, subj, obj, inter):
    n, p = F.shape[0], G.shape[0]
    return (np.outer(F @ subj, np.ones(p)) + np.outer(np.ones(n), G @ obj)
            + F @ inter @ G.T)


def _fit_b2_rank(zr, p, q, Fprev, Gprev, Xd, Yd, cfg, rng, t):
    """Alternating fit of one B2 rank on the residual ``zr``.

    Object step: with f^t fixed, solve P(T_g; (H, I), (Y^{t-1}, N)) with
    H = (e_n, f^1..f^t) and T_g = zr minus the fixed terms that do not
    involve g^t.  Subject step: symmetric with K = (e_p, g^1..g^t).
    Coefficients are refreshed by exact R-projection after every half
    step.
    """
    n, m = zr.shape
    en, ep = np.ones(n), np.ones(m)
    Sx, Sx_pinv, _ = metric_factors(Xd)
    Sy, Sy_pinv, _ = metric_factors(Yd)
    Wx, Wy = Xd.data @ Sx, Yd.data @ Sy
    try:
        f0, g0, _ = solve_program_p(
            InteractionBlock(double_center_table(zr, p, q), p, q), Xd, Yd)
        f, g = f0.scores, g0.scores
        degenerate = False
    except DegenerateProblemError:
        f, g = _random_start(Wx, p, rng), _random_start(Wy, q, rng)
        degenerate = True
    fa = gb = None
    steps = []
    delta = np.inf
    wz = _wz(zr, p, q)

    def coefs(f, g):
        F = np.column_stack([Fprev, f])
        G = np.column_stack([Gprev, g])
        s, o, inter = _project_terms(zr, p, q, F, G)
        return F, G, s, o, inter

    for k in range(1, cfg.max_iter + 1):
        # object half-step
        F, G, s, o, inter = coefs(f, g)
        fixed = np.outer(f, s[-1] * ep + Gprev @ inter[-1, :-1])
        H = np.column_stack([en, F])
        g_new, gc, deg_g = _solve_side(zr - fixed, p, q, H, Wy, False, g)
        # subject half-step
        F, G, s, o, inter = coefs(f, g_new)
        fixed = np.outer(o[-1] * en + Fprev @ inter[:-1, -1], g_new)
        K = np.column_stack([ep, G])
        f_new, fc, deg_f = _solve_side(zr - fixed, p, q, Wx, K, True, f)
        gb = gc if gc is not None else gb
        fa = fc if fc is not None else fa
        degenerate = degenerate or deg_f or deg_g
        delta = max(np.abs(f_new - f).max(), np.abs(g_new - g).max())
        f, g = f_new, g_new
        *_, s, o, inter = coefs(f, g)
        steps.append(float(s[-1] ** 2 + o[-1] ** 2 + np.sum(inter[-1] ** 2)
                           + np.sum(inter[:-1, -1] ** 2)))
        if delta < cfg.tol:
            break
    else:
        raise ConvergenceError(
            f"B2 rank {t}: no convergence after {cfg.max_iter} iterations "
            f"(last change {delta:.3g})", rank=t, delta=float(delta))
    fcomp = _component(f, fa, Sx_pinv, t, degenerate)
    gcomp = _component(g, gb, Sy_pinv, t, degenerate)
    return fcomp, gcomp, k, tuple(steps)


def _component(scores, coords, S_pinv, rank, degenerate):
    if coords is None:
        return Component(np.full(S_pinv.shape[0], np.nan), scores, 0.0, rank,
                         0.0, degenerate)
    a, strength, sigma = coords
    return Component(S_pinv @ a, scores, sigma ** 2, rank, strength, degenerate)


def _solve_side(target, p, q, W_left, W_right, solve_left, previous):
    K = W_left.T @ _wz(target, p, q) @ W_right
    bound = (np.sqrt(np.sum(p[:, None] * W_left ** 2))
             * np.sqrt(np.sum(q[:, None] * W_right ** 2))
             * np.sqrt(max(r_norm2(target, p, q), 0.0)))
    try:
        a, sigma, b, tied = leading_pair(K, bound)
    except DegenerateProblemError:
        return previous, None, True
    if solve_left:
        raw, c, w = W_left @ a, a, p
    else:
        raw, c, w = W_right @ b, b, q
    nrm = _pnorm(raw, w)
    scores = raw / nrm
    if np.sum(w * scores * previous) < 0:
        scores, c = -scores, -c
    return scores, (c, nrm, sigma), tied


def film_b2_rank1(zb: InteractionBlock, xblock: DataBlock, yblock: DataBlock,
                  cfg: FitConfig = FitConfig()) -> B2Model:
    """Rank-1 FILM-B2: fit ``beta f e' + gamma e g' + delta f g'``."""
    from dataclasses import replace
    return film_b2_fit(zb, xblock, yblock, replace(cfg, n_ranks=1))


def film_b2_fit(zb: InteractionBlock, xblock: DataBlock, yblock: DataBlock,
                cfg: FitConfig = FitConfig()) -> B2Model:
    """FILM-B2 up to rank ``cfg.n_ranks``.

    After each rank the margin-free table is regressed on the terms found
    so far; the next rank works on that residual with blocks deflated by
    the earlier components.  Final coefficients are the R-projections of
    ``Z - zbar e e'`` on the orthonormal term set.
    """
    check_compatible(zb, xblock, yblock)
    _require_centred(xblock, "X")
    _require_centred(yblock, "Y")
    xblock = apply_regime(xblock, cfg.structural_strength)
    yblock = apply_regime(yblock, cfg.structural_strength)
    p, q = zb.row_weights, zb.col_weights
    n, m = zb.shape
    grand = float(p @ zb.z @ q)
    zc = zb.z - grand
    total = r_norm2(zc, p, q)
    rng = np.random.default_rng(cfg.seed)
    F, G = np.zeros((n, 0)), np.zeros((m, 0))
    fcomps, gcomps, iters, trace = [], [], [], []
    Xd, Yd = xblock, yblock
    truncated = False
    zr = zc
    for t in range(1, cfg.n_ranks + 1):
        if t > 1:
            Xd = deflate(Xd, fcomps[-1])
            Yd = deflate(Yd, gcomps[-1])
            if _exhausted(Xd, xblock) or _exhausted(Yd, yblock):
                truncated = True
                break
        fc, gc, k, steps = _fit_b2_rank(zr, p, q, F, G, Xd, Yd, cfg, rng, t)
        fcomps.append(fc)
        gcomps.append(gc)
        iters.append(k)
        trace.append(steps)
        F = np.column_stack([F, fc.scores])
        G = np.column_stack([G, gc.scores])
        s, o, inter = _project_terms(zc, p, q, F, G)
        zr = zc - _terms_table(F, G, s, o, inter)

    fcomps, gcomps = _b2_signs(fcomps, gcomps, zc, p, q)
    F = np.column_stack([c.scores for c in fcomps])
    G = np.column_stack([c.scores for c in gcomps])
    s, o, inter = _project_terms(zc, p, q, F, G)
    resid = r_norm2(zc - _terms_table(F, G, s, o, inter), p, q)
    return B2Model(
        grand_mean=grand,
        subject_basis=ComponentBasis(tuple(fcomps), SUBJECT),
        object_basis=ComponentBasis(tuple(gcomps), OBJECT),
        subject_effects=s,
        object_effects=o,
        interaction=inter,
        residual_norm2=resid,
        total_norm2=total,
        iterations_per_rank=tuple(iters),
        truncated=truncated,
        fit_trace=tuple(trace),
    )


def _flip(c: Component) -> Component:
    return Component(-c.loading, -c.scores, c.eigenvalue, c.rank,
                     c.strength, c.degenerate)


def _b2_signs(fcomps, gcomps, zc, p, q):
    # same rule as FILM-A: pivot of f positive, then interaction_tt >= 0
    fs, gs = [], []
    scale = np.sqrt(max(r_norm2(zc, p, q), 0.0))
    for f, g in zip(fcomps, gcomps):
        if f.scores[sign_pivot(f.scores)] < 0:
            f = _flip(f)
        d = float(f.scores @ _wz(zc, p, q) @ g.scores)
        if d < 0 and abs(d) > 1e-14 * scale:
            g = _flip(g)
        elif abs(d) <= 1e-14 * scale and g.scores[sign_pivot(g.scores)] < 0:
            g = _flip(g)
        fs.append(f)
        gs.append(g)
    return fs, gs
