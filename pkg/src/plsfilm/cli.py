"""Command-line front end.

::

    plsfilm fit a --x X.csv --y Y.csv --z Z.csv --ranks 3 --out res/
    plsfilm fit contingency --table T.csv --x X.csv --y Y.csv --out res/
    plsfilm simulate --replicates 100 --noise-grid 0,0.25,0.5 --out sim/
    plsfilm replay res/manifest.json --out again/

Exit codes: 0 success, 1 malformed input or usage, 2 numerical failure
(no convergence, degenerate problem), 3 dimension mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import rlq_triplets
from .contingency import ContingencyTable, contingency_blocks
from .core import (
    OBJECT,
    SUBJECT,
    FitConfig,
    apply_regime,
    diagnostics,
    film_a_fit,
)
from .errors import (
    ConvergenceError,
    DegenerateProblemError,
    DimensionError,
    FilmError,
    InputError,
)
from .filmb import OLS1, PLS1, film_b1_fit, film_b2_fit
from .geometry import DataBlock, InteractionBlock, as_weights, standardize, uniform_weights
from .io import (
    component_records,
    read_matrix,
    read_weights,
    write_components,
    write_json,
    write_matrix,
    write_records,
)
from .simulation import BundleSpec, SimConfig, run_experiment

log = logging.getLogger("plsfilm")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_DIMENSION = 0, 1, 2, 3
METHODS = ("a", "b1", "b2", "contingency", "rlq")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list: {text!r}")


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plsfilm",
                     description="Latent-factor models of a subject x object "
                                 "table from descriptor blocks.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model and write a report")
    fit.add_argument("method", choices=METHODS)
    fit.add_argument("--x", required=True, type=Path, help="subject descriptors")
    fit.add_argument("--y", required=True, type=Path, help="object descriptors")
    fit.add_argument("--z", type=Path, help="interaction table")
    fit.add_argument("--table", type=Path,
                     help="contingency table (method 'contingency')")
    fit.add_argument("--px", type=Path, help="subject weights, one per line")
    fit.add_argument("--qy", type=Path, help="object weights, one per line")
    fit.add_argument("--renormalize-weights", action="store_true",
                     help="divide weight files by their sum")
    fit.add_argument("--ranks", type=int, default=2)
    fit.add_argument("--tol", type=float, default=1e-9)
    fit.add_argument("--max-iter", type=int, default=500)
    fit.add_argument("--structural", choices=("on", "off"), default="on",
                     help="'on': identity metrics on standardised blocks; "
                          "'off': inverse-covariance metrics")
    fit.add_argument("--no-standardize", action="store_true",
                     help="use X and Y as given (they must be centred)")
    fit.add_argument("--margin-method", choices=(PLS1, OLS1), default=PLS1)
    fit.add_argument("--margin-components", type=int, default=None)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", type=Path, required=True)
    fit.add_argument("-v", "--verbose", action="count", default=0)

    sim = sub.add_parser("simulate", help="run the factor-recovery study")
    d_spec, d_cfg = BundleSpec(), SimConfig()
    sim.add_argument("--replicates", type=int, default=d_cfg.n_replicates)
    sim.add_argument("--noise-grid", type=_floats, default=d_cfg.noise_fractions,
                     help="comma-separated noise fractions in [0, 1]")
    sim.add_argument("--seed", type=int, default=d_cfg.seed)
    sim.add_argument("--out", type=Path, required=True)
    sim.add_argument("--n-subjects", type=int, default=d_cfg.n_subjects)
    sim.add_argument("--n-objects", type=int, default=d_cfg.n_objects)
    sim.add_argument("--weights", type=_floats, default=d_cfg.weights)
    sim.add_argument("--ranks", type=int, default=d_cfg.n_ranks)
    sim.add_argument("--tol", type=float, default=d_cfg.tol)
    sim.add_argument("--max-iter", type=int, default=d_cfg.max_iter)
    sim.add_argument("--workers", type=int, default=d_cfg.workers)
    sim.add_argument("--sizes", type=_ints, default=d_spec.sizes)
    sim.add_argument("--parasite-size", type=int, default=d_spec.parasite_size)
    sim.add_argument("--within-sd", type=float, default=d_spec.within_noise_sd)
    sim.add_argument("--parasite-correlation", type=float,
                     default=d_spec.parasite_correlation)
    sim.add_argument("--noise-cols", type=int, default=d_spec.n_noise_cols)
    sim.add_argument("-v", "--verbose", action="count", default=0)

    rep = sub.add_parser("replay", help="re-run the command of a manifest")
    rep.add_argument("manifest", type=Path)
    rep.add_argument("--out", type=Path, required=True)
    rep.add_argument("-v", "--verbose", action="count", default=0)
    return parser


# ---------------------------------------------------------------- fitting

def _load_block(path, weights_path, renorm):
    ids, cols, data = read_matrix(path)
    if weights_path is not None:
        raw = read_weights(weights_path)
        if raw.size != data.shape[0]:
            raise DimensionError(f"{weights_path}: {raw.size} weights for "
                                 f"{data.shape[0]} rows of {path}")
        try:
            w = as_weights(raw, renormalize=renorm)
        except ValueError as exc:
            raise InputError(str(exc), weights_path) from None
    else:
        w = uniform_weights(data.shape[0])
    return ids, cols, DataBlock(data, w)


def _prepare(block, args):
    return block if args.no_standardize else standardize(block)


def _omega_labels(T):
    return [f"f{t + 1}" for t in range(T)], [f"g{t + 1}" for t in range(T)]


def _fit_config(args) -> FitConfig:
    return FitConfig(n_ranks=args.ranks, tol=args.tol, max_iter=args.max_iter,
                     structural_strength=args.structural == "on",
                     seed=args.seed)


def _run_fit(args) -> dict:
    cfg = _fit_config(args)
    out = args.out
    if args.method == "contingency":
        if args.table is None:
            raise InputError("method 'contingency' needs --table")
        tids, tcols, counts = read_matrix(args.table)
        xids, xcols, xraw = read_matrix(args.x)
        yids, ycols, yraw = read_matrix(args.y)
        try:
            ct = ContingencyTable.from_counts(counts)
        except ValueError as exc:
            raise InputError(str(exc), args.table) from None
        phi, zb, xb, yb = contingency_blocks(ct, xraw, yraw)
        xb, yb = apply_regime(xb, cfg.structural_strength), apply_regime(
            yb, cfg.structural_strength)
        if phi.phi2 <= 1e-24:
            raise DegenerateProblemError("independent table: phi2 is zero")
        model = film_a_fit(zb, xb, yb, cfg)
        diag = diagnostics(model, zb, xb, yb)
        diag["phi2"] = phi.phi2
        diag["phi2_shares"] = (model.omega ** 2 / phi.phi2).tolist()
        _write_a(out, model, (tids, xcols), (tcols, ycols))
        return diag

    if args.z is None:
        raise InputError("method %r needs --z" % args.method)
    zids, zcols, z = read_matrix(args.z)
    xids, xcols, xb = _load_block(args.x, args.px, args.renormalize_weights)
    yids, ycols, yb = _load_block(args.y, args.qy, args.renormalize_weights)
    if (zids and xids and zids != xids) or (zcols and yids and zcols != yids):
        log.warning("identifiers of Z differ from those of X/Y; "
                    "rows are matched by position")
    zb = InteractionBlock(z, xb.weights, yb.weights) if z.shape == (
        xb.shape[0], yb.shape[0]) else None
    if zb is None:
        raise DimensionError(f"Z is {z.shape[0]}x{z.shape[1]} but X has "
                             f"{xb.shape[0]} rows and Y has {yb.shape[0]}")
    xb, yb = _prepare(xb, args), _prepare(yb, args)

    if args.method == "a":
        model = film_a_fit(zb, xb, yb, cfg)
        xr = apply_regime(xb, cfg.structural_strength)
        yr = apply_regime(yb, cfg.structural_strength)
        _write_a(out, model, (zids, xcols), (zcols, ycols))
        return diagnostics(model, zb, xr, yr)

    if args.method == "b1":
        m = film_b1_fit(zb, xb, yb, cfg, margin_method=args.margin_method,
                        margin_components=args.margin_components)
        _write_a(out, m.interaction_model, (zids, xcols), (zcols, ycols),
                 extra=_margin_records(m, zids, zcols))
        agree_s, agree_o = m.component_agreement()
        sm, om = m.subject_margin_model, m.object_margin_model
        return {
            "grand_mean": m.decomposition.grand_mean,
            "variance_table": m.variance_table,
            "subject_margin": {"method": sm.method,
                               "coefficients": sm.coefficients,
                               "early_stop": sm.early_stop},
            "object_margin": {"method": om.method,
                              "coefficients": om.coefficients,
                              "early_stop": om.early_stop},
            "component_agreement": {"subject": agree_s, "object": agree_o},
            "interaction": diagnostics(
                m.interaction_model, zb.with_table(m.decomposition.zstar),
                apply_regime(xb, cfg.structural_strength),
                apply_regime(yb, cfg.structural_strength)),
        }

    if args.method == "b2":
        m = film_b2_fit(zb, xb, yb, cfg)
        recs = (component_records(m.subject_basis, zids, xcols)
                + component_records(m.object_basis, zcols, ycols))
        write_components(out / "components.csv", recs)
        r, c = _omega_labels(m.interaction.shape[0])
        write_matrix(out / "omega.csv", r, c[:m.interaction.shape[1]],
                     m.interaction, index_name="component")
        return {
            "grand_mean": m.grand_mean,
            "subject_effects": m.subject_effects,
            "object_effects": m.object_effects,
            "interaction": m.interaction,
            "r2": m.r2,
            "residual_norm2": m.residual_norm2,
            "total_norm2": m.total_norm2,
            "iterations_per_rank": list(m.iterations_per_rank),
            "truncated": m.truncated,
        }

    # rlq
    xr = apply_regime(xb, cfg.structural_strength)
    yr = apply_regime(yb, cfg.structural_strength)
    tri = rlq_triplets(zb, xr, yr)
    T = min(len(tri), cfg.n_ranks)
    recs = []
    for t in range(T):
        recs += [(SUBJECT, "score", t + 1, lab, v)
                 for lab, v in zip(zids, tri.subject_scores[:, t])]
        recs += [(SUBJECT, "loading", t + 1, lab, v)
                 for lab, v in zip(xcols, tri.subject_loadings[:, t])]
    for t in range(T):
        recs += [(OBJECT, "score", t + 1, lab, v)
                 for lab, v in zip(zcols, tri.object_scores[:, t])]
        recs += [(OBJECT, "loading", t + 1, lab, v)
                 for lab, v in zip(ycols, tri.object_loadings[:, t])]
    write_components(out / "components.csv", recs)
    F, G = tri.subject_scores[:, :T], tri.object_scores[:, :T]
    p, q = zb.row_weights, zb.col_weights
    coupling = F.T @ (p[:, None] * zb.z * q[None, :]) @ G
    r, c = _omega_labels(T)
    write_matrix(out / "omega.csv", r, c, coupling, index_name="component")
    return {"eigenvalues": tri.eigenvalues,
            "n_triplets": len(tri),
            "omega_note": "R inner products <Z | f^s g^t'>; the scores are "
                          "orthonormal only under inverse-covariance metrics"}


def _write_a(out, model, subj_labels, obj_labels, extra=()):
    recs = (component_records(model.subject_basis, *subj_labels)
            + component_records(model.object_basis, *obj_labels)
            + list(extra))
    write_components(out / "components.csv", recs)
    r, c = _omega_labels(model.n_ranks)
    write_matrix(out / "omega.csv", r, c, model.omega, index_name="component")


def _margin_records(m, zids, zcols):
    recs = []
    for side, mm, labels in (("subject_margin", m.subject_margin_model, zids),
                             ("object_margin", m.object_margin_model, zcols)):
        for t in range(mm.components.shape[1]):
            recs += [(side, "score", t + 1, lab, v)
                     for lab, v in zip(labels, mm.components[:, t])]
    return recs


# ------------------------------------------------------------- simulation

def _run_simulate(args) -> dict:
    spec = BundleSpec(sizes=args.sizes, parasite_size=args.parasite_size,
                      within_noise_sd=args.within_sd,
                      parasite_correlation=args.parasite_correlation,
                      n_noise_cols=args.noise_cols)
    cfg = SimConfig(n_subjects=args.n_subjects, n_objects=args.n_objects,
                    weights=args.weights, noise_fractions=args.noise_grid,
                    n_replicates=args.replicates, seed=args.seed,
                    n_ranks=args.ranks, tol=args.tol, max_iter=args.max_iter,
                    workers=args.workers)
    res = run_experiment(spec, cfg)
    write_records(args.out / "cells.csv", res.cell_rows())
    write_records(args.out / "aggregates.csv", res.aggregate_rows())
    failed = sum(c["status"] != "ok" for c in res.cells)
    print(f"{len(res.cells)} fits, {failed} failed; results in {args.out}")
    return res.describe()


# ---------------------------------------------------------------- manifest

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical_argv(args) -> list:
    """Fully explicit argument list with absolute paths (minus --out)."""
    argv = [args.command]
    if args.command == "fit":
        argv.append(args.method)
    skip = {"command", "method", "out", "verbose", "func"}
    for key, val in sorted(vars(args).items()):
        if key in skip or val is None or val is False:
            continue
        flag = "--" + key.replace("_", "-")
        if val is True:
            argv.append(flag)
        elif isinstance(val, Path):
            argv += [flag, str(val.resolve())]
        elif isinstance(val, tuple):
            argv += [flag, ",".join(repr(v) for v in val)]
        else:
            argv += [flag, str(val)]
    return argv


def _manifest(args, started, extra) -> dict:
    inputs = {}
    for key in ("x", "y", "z", "table", "px", "qy"):
        path = getattr(args, key, None)
        if path is not None:
            inputs[key] = {"path": str(Path(path).resolve()),
                           "sha256": _sha256(path)}
    config = {k: (str(v) if isinstance(v, Path) else v)
              for k, v in sorted(vars(args).items()) if k != "verbose"}
    return {
        "command": args.command,
        "argv": _canonical_argv(args),
        "inputs": inputs,
        "config": config,
        "resolved": extra,
        "seed": args.seed,
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }


def _dispatch(args) -> int:
    started = datetime.now(timezone.utc).isoformat()
    if args.command == "replay":
        import json
        try:
            man = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
            argv = list(man["argv"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InputError(f"unreadable manifest ({exc})", args.manifest) from None
        argv += ["--out", str(args.out)] + ["-v"] * args.verbose
        return main(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.command == "fit":
        diag = _run_fit(args)
        diag["method"] = args.method
        diag["config"] = asdict(_fit_config(args))
        write_json(args.out / "diagnostics.json", diag)
        extra = {"fit_config": asdict(_fit_config(args))}
    else:
        extra = _run_simulate(args)
    write_json(args.out / "manifest.json", _manifest(args, started, extra))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except DimensionError as exc:
        print(f"plsfilm: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (ConvergenceError, DegenerateProblemError, np.linalg.LinAlgError) as exc:
        print(f"plsfilm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, FilmError, ValueError) as exc:
        print(f"plsfilm: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
