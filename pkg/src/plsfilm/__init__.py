"""Latent-factor models of a subject x object interaction table.

A table ``Z`` of interactions between n subjects and p objects is
explained by latent components built from a block ``X`` describing the
subjects and a block ``Y`` describing the objects.
"""
from .baselines import (
    TripletSet,
    brute_force_rank1,
    pca_special_case,
    rlq_triplets,
    two_group_solve,
)
from .contingency import ContingencyTable, PhiTable, build_phi, film_contingency
from .core import (
    Component,
    ComponentBasis,
    FitConfig,
    InteractionModel,
    compute_omega,
    deflate,
    diagnostics,
    film_a_fit,
    program_p_criterion,
    solve_program_p,
)
from .errors import (
    ConvergenceError,
    DegenerateProblemError,
    DimensionError,
    FilmError,
    InputError,
)
from .filmb import (
    B1Model,
    B2Model,
    MarginalDecomposition,
    decompose_margins,
    film_b1_fit,
    film_b2_fit,
    film_b2_rank1,
    ols1_fit,
    pls1_fit,
)
from .geometry import (
    DataBlock,
    InteractionBlock,
    Metric,
    double_center,
    r_inner,
    r_norm2,
    standardize,
    uniform_weights,
    weighted_inner,
    weighted_norm,
)

__version__ = "0.1.0"
