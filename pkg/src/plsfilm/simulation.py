"""Monte Carlo study of factor recovery by FILM-A.

Each side's descriptor block is built from bundles of noisy copies of
P-orthonormal planted factors, plus a bundle of nearly collinear
"parasite" variables and pure-noise columns.  The interaction table is a
weighted sum of products of the first planted factors plus noise, and
FILM-A is fitted with and without structural strength.  Every cell
(replicate, noise level) draws from its own derived seed, so results do
not depend on scheduling.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import FitConfig, film_a_fit
from .errors import FilmError
from .geometry import DataBlock, InteractionBlock, standardize, uniform_weights

log = logging.getLogger(__name__)

REGIMES = (("off", False), ("on", True))


@dataclass(frozen=True)
class BundleSpec:
    """Layout of a simulated descriptor block.

    ``sizes`` counts the variables built on each explanatory factor;
    ``parasite_size`` variables share one extra factor and correlate
    pairwise at ``parasite_correlation``.
    """

    sizes: tuple = (3, 2, 1)
    parasite_size: int = 4
    within_noise_sd: float = 0.1
    parasite_correlation: float = 0.99
    n_noise_cols: int = 5

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("bundle sizes must be non-empty and >= 1")
        if self.parasite_size < 0 or self.n_noise_cols < 0:
            raise ValueError("column counts must be >= 0")
        if not self.within_noise_sd > 0:
            raise ValueError("within_noise_sd must be > 0")
        if not 0 < self.parasite_correlation < 1:
            raise ValueError("parasite_correlation must lie in (0, 1)")

    @property
    def n_factors(self) -> int:
        return len(self.sizes) + (1 if self.parasite_size else 0)

    @property
    def n_columns(self) -> int:
        return sum(self.sizes) + self.parasite_size + self.n_noise_cols

    @property
    def parasite_sd(self) -> float:
        # corr(f + e1, f + e2) = 1 / (1 + sd^2)
        return float(np.sqrt(1.0 / self.parasite_correlation - 1.0))


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int = 50
    n_objects: int = 40
    weights: tuple = (0.49, 0.69, 0.53)
    noise_fractions: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    n_replicates: int = 100
    seed: int = 0
    n_ranks: int = 3
    tol: float = 1e-9
    max_iter: int = 500
    recovery_threshold: float = 0.7
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "noise_fractions",
                           tuple(float(v) for v in self.noise_fractions))
        if not self.weights or min(self.weights) <= 0:
            raise ValueError("planted weights must be positive")
        if not self.noise_fractions or any(
                not 0.0 <= v <= 1.0 for v in self.noise_fractions):
            raise ValueError("noise fractions must lie in [0, 1]")
        if self.n_replicates < 1 or self.workers < 1:
            raise ValueError("n_replicates and workers must be >= 1")


def planted_factors(n: int, k: int, rng) -> np.ndarray:
    """``k`` centred factors, orthonormal under uniform weights."""
    if n <= k:
        raise ValueError(f"need more than {k} observations, got {n}")
    A = np.column_stack([np.ones(n), rng.standard_normal((n, k))])
    Qm, R = np.linalg.qr(A)
    if np.abs(np.diag(R)).min() <= 1e-10 * np.abs(R).max():
        raise ValueError("random factors are collinear")
    return Qm[:, 1:] * np.sqrt(n)


def generate_blocks(spec: BundleSpec, n: int, side_seed):
    """Standardised descriptor block and its planted factors.

    Returns
    -------
    block : DataBlock
        Columns ordered bundle by bundle, then parasites, then noise.
    factors : ndarray, shape (n, spec.n_factors)
        Explanatory factors first, the parasite factor last.
    """
    rng = np.random.default_rng(side_seed)
    F = planted_factors(n, spec.n_factors, rng)
    cols = []
    for k, size in enumerate(spec.sizes):
        cols += [F[:, k] + spec.within_noise_sd * rng.standard_normal(n)
                 for _ in range(size)]
    cols += [F[:, -1] + spec.parasite_sd * rng.standard_normal(n)
             for _ in range(spec.parasite_size)]
    cols += [rng.standard_normal(n) for _ in range(spec.n_noise_cols)]
    block = standardize(DataBlock(np.column_stack(cols), uniform_weights(n)))
    return block, F


def generate_z(fx, gy, weights, noise_fraction: float, seed) -> InteractionBlock:
    """``sum_k w_k f^k g^k'`` plus i.i.d. noise of variance
    ``noise_fraction * Var(Z*)``."""
    w = np.asarray(weights, dtype=float)
    k = w.size
    zstar = (fx[:, :k] * w) @ gy[:, :k].T
    if noise_fraction > 0:
        rng = np.random.default_rng(seed)
        sd = np.sqrt(noise_fraction * zstar.var())
        zstar = zstar + sd * rng.standard_normal(zstar.shape)
    return InteractionBlock.uniform(zstar)


def _corr(A, B):
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    num = A.T @ B
    den = np.outer(np.linalg.norm(A, axis=0), np.linalg.norm(B, axis=0))
    return np.clip(num / den, -1.0, 1.0)


def greedy_match(score) -> list:
    """Assign rows to columns by repeatedly taking the largest entry.

    Returns ``match`` with ``match[k]`` the column given to row ``k``
    (-1 when columns run out).  Ties go to the lowest flat index.
    """
    S = np.array(score, dtype=float)
    match = [-1] * S.shape[0]
    for _ in range(min(S.shape)):
        k, l = np.unravel_index(int(np.argmax(S)), S.shape)
        match[k] = int(l)
        S[k, :] = -np.inf
        S[:, l] = -np.inf
    return match


def cell_seeds(seed: int, replicate: int, level: int):
    """Seeds for the subject block, object block and table noise."""
    side = np.random.SeedSequence([seed, replicate])
    sx, sy = side.spawn(2)
    noise = np.random.SeedSequence([seed, replicate, level, 1])
    return sx, sy, noise


def _run_cell(spec: BundleSpec, cfg: SimConfig, replicate: int, level: int):
    sx, sy, sn = cell_seeds(cfg.seed, replicate, level)
    xb, F = generate_blocks(spec, cfg.n_subjects, sx)
    yb, G = generate_blocks(spec, cfg.n_objects, sy)
    frac = cfg.noise_fractions[level]
    zb = generate_z(F, G, cfg.weights, frac, sn)
    k = len(cfg.weights)
    rows = []
    for name, strength in REGIMES:
        row = {"replicate": replicate, "noise_fraction": frac, "regime": name}
        fc = FitConfig(n_ranks=cfg.n_ranks, tol=cfg.tol, max_iter=cfg.max_iter,
                       structural_strength=strength, seed=cfg.seed)
        try:
            model = film_a_fit(zb, xb, yb, fc)
        except FilmError as exc:
            row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
            continue
        Fh = model.subject_basis.scores
        Gh = model.object_basis.scores
        rho_f = _corr(F[:, :k], Fh)
        rho_g = _corr(G[:, :k], Gh)
        match = greedy_match(np.abs(rho_f) + np.abs(rho_g))
        row.update(status="ok", error="", r2=model.r2,
                   iterations=list(model.iterations_per_rank),
                   omega=model.omega, rho_f=rho_f, rho_g=rho_g, match=match,
                   truncated=model.truncated)
        rows.append(row)
    return rows


@dataclass
class SimResult:
    """Per-cell records and their aggregates.

    ``cells`` holds one dict per (replicate, noise level, regime) with
    ``r2``, ``omega``, the planted-by-estimated correlation matrices
    ``rho_f`` and ``rho_g``, the greedy ``match`` and ``iterations``;
    failed fits carry ``status == "failed"`` and the error text.
    """

    spec: BundleSpec
    config: SimConfig
    cells: list = field(default_factory=list)

    def select(self, regime=None, noise_fraction=None, ok_only=True):
        out = []
        for c in self.cells:
            if regime is not None and c["regime"] != regime:
                continue
            if noise_fraction is not None and c["noise_fraction"] != noise_fraction:
                continue
            if ok_only and c["status"] != "ok":
                continue
            out.append(c)
        return out

    def mean_omega(self, regime, noise_fraction=0.0) -> np.ndarray:
        cells = self.select(regime, noise_fraction)
        return np.mean([c["omega"] for c in cells], axis=0)

    def matched_correlations(self, cell):
        """|rho| of each planted factor with its matched estimate."""
        k = len(cell["match"])
        rf = np.full(k, np.nan)
        rg = np.full(k, np.nan)
        for i, l in enumerate(cell["match"]):
            if l >= 0:
                rf[i] = abs(cell["rho_f"][i, l])
                rg[i] = abs(cell["rho_g"][i, l])
        return rf, rg

    def cell_rows(self) -> list:
        """Flat records for the tidy cell table."""
        k = len(self.config.weights)
        T = self.config.n_ranks
        out = []
        for c in self.cells:
            row = {key: c[key] for key in
                   ("replicate", "noise_fraction", "regime", "status")}
            ok = c["status"] == "ok"
            row["r2"] = c["r2"] if ok else np.nan
            its = c["iterations"] if ok else []
            row["max_iterations"] = max(its) if its else np.nan
            for t in range(T):
                row[f"iterations_{t + 1}"] = its[t] if t < len(its) else np.nan
            om = c["omega"] if ok else np.zeros((0, 0))
            for s in range(T):
                for t in range(T):
                    row[f"omega_{s + 1}{t + 1}"] = (
                        om[s, t] if s < om.shape[0] and t < om.shape[1] else np.nan)
            if ok:
                rf, rg = self.matched_correlations(c)
            else:
                rf = rg = np.full(k, np.nan)
            for i in range(k):
                row[f"rank_of_factor_{i + 1}"] = (c["match"][i] + 1) if ok else -1
                row[f"rho_f_{i + 1}"] = rf[i]
                row[f"rho_g_{i + 1}"] = rg[i]
            row["error"] = c.get("error", "")
            out.append(row)
        return out

    def aggregate_rows(self) -> list:
        """Mean and standard deviation per (noise level, regime)."""
        k = len(self.config.weights)
        out = []
        for frac in self.config.noise_fractions:
            for name, _ in REGIMES:
                all_cells = self.select(name, frac, ok_only=False)
                cells = [c for c in all_cells if c["status"] == "ok"]
                row = {"noise_fraction": frac, "regime": name,
                       "n_ok": len(cells),
                       "n_failed": len(all_cells) - len(cells)}
                r2 = np.array([c["r2"] for c in cells])
                its = np.array([max(c["iterations"]) for c in cells])
                row["r2_mean"] = r2.mean() if r2.size else np.nan
                row["r2_sd"] = r2.std(ddof=1) if r2.size > 1 else np.nan
                row["max_iterations_mean"] = its.mean() if its.size else np.nan
                corr = [self.matched_correlations(c) for c in cells]
                weak = 0
                for i in range(k):
                    rf = np.array([c[0][i] for c in corr])
                    rg = np.array([c[1][i] for c in corr])
                    row[f"rho_f_{i + 1}_mean"] = np.nanmean(rf) if rf.size else np.nan
                    row[f"rho_g_{i + 1}_mean"] = np.nanmean(rg) if rg.size else np.nan
                for rf, rg in corr:
                    if np.nanmin(np.concatenate([rf, rg])) < self.config.recovery_threshold:
                        weak += 1
                row["n_weak_recovery"] = weak
                T = self.config.n_ranks
                for t in range(T):
                    vals = np.array([c["omega"][t, t] for c in cells
                                     if c["omega"].shape[0] > t])
                    row[f"omega_{t + 1}{t + 1}_mean"] = vals.mean() if vals.size else np.nan
                    row[f"omega_{t + 1}{t + 1}_sd"] = (
                        vals.std(ddof=1) if vals.size > 1 else np.nan)
                out.append(row)
        return out

    def describe(self) -> dict:
        return {"bundle": asdict(self.spec), "config": asdict(self.config)}


def _work(args):
    spec, cfg, rep, level = args
    return _run_cell(spec, cfg, rep, level)


def run_experiment(spec: BundleSpec = BundleSpec(),
                   cfg: SimConfig = SimConfig()) -> SimResult:
    """Fit every (replicate, noise level) cell under both metric regimes.

    With ``cfg.workers > 1`` cells run in worker processes; the output
    order and content are the same as a serial run.
    """
    tasks = [(spec, cfg, r, lv) for r in range(cfg.n_replicates)
             for lv in range(len(cfg.noise_fractions))]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_work, tasks, chunksize=4))
    else:
        chunks = [_work(t) for t in tasks]
    cells = [row for chunk in chunks for row in chunk]
    failed = sum(c["status"] != "ok" for c in cells)
    if failed:
        log.warning("%d of %d fits failed", failed, len(cells))
    return SimResult(spec, cfg, cells)
