import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plsfilm.core import FitConfig, film_a_fit
from plsfilm.errors import DimensionError
from plsfilm.filmb import (
    OLS1,
    decompose_margins,
    film_b1_fit,
    film_b2_fit,
    film_b2_rank1,
    ols1_fit,
    pls1_fit,
)
from plsfilm.geometry import (
    DataBlock,
    InteractionBlock,
    double_center,
    r_inner,
    r_norm2,
    standardize,
    uniform_weights,
)

from helpers import (
    centred_orthonormal,
    planted_b1,
    planted_b2,
    planted_b2_rank1,
    random_instance,
    random_weights,
    unsign,
)
from oracles import same_up_to_sign, weighted_lstsq_fit


class TestDecomposeMargins:
    def test_constant(self):
        d = decompose_margins(InteractionBlock.uniform(np.full((3, 4), 2.5)))
        assert d.grand_mean == pytest.approx(2.5)
        assert np.abs(d.subject_margin).max() < 1e-15
        assert np.abs(d.object_margin).max() < 1e-15
        assert np.abs(d.zstar).max() < 1e-15

    def test_centred_rank_one(self, rng):
        p, q = random_weights(rng, 5), random_weights(rng, 4)
        f = centred_orthonormal(rng, p, 1)[:, 0]
        g = centred_orthonormal(rng, q, 1)[:, 0]
        d = decompose_margins(InteractionBlock(np.outer(f, g), p, q))
        assert abs(d.grand_mean) < 1e-14
        assert np.abs(d.subject_margin).max() < 1e-14
        np.testing.assert_allclose(d.zstar, np.outer(f, g), atol=1e-14)

    def test_hand_example(self):
        d = decompose_margins(InteractionBlock.uniform([[1., 2.], [3., 4.]]))
        assert d.grand_mean == 2.5
        np.testing.assert_allclose(d.subject_margin, [-1, 1])
        np.testing.assert_allclose(d.object_margin, [-0.5, 0.5])
        assert np.abs(d.zstar).max() == 0

    @given(seed=st.integers(0, 100_000))
    def test_parts_orthogonal_and_additive(self, seed):
        r = np.random.default_rng(seed)
        n, m = int(r.integers(1, 8)), int(r.integers(1, 8))
        p, q = random_weights(r, n), random_weights(r, m)
        Z = r.standard_normal((n, m)) * 2 + 1
        d = decompose_margins(InteractionBlock(Z, p, q))
        parts = d.parts()
        np.testing.assert_allclose(d.reconstruct(), Z, atol=1e-12)
        for i in range(4):
            for j in range(i + 1, 4):
                assert abs(r_inner(parts[i], parts[j], p, q)) < 1e-10
        total = r_norm2(Z - d.grand_mean, p, q)
        pieces = sum(r_norm2(t, p, q) for t in parts[1:])
        assert total == pytest.approx(pieces, rel=1e-8, abs=1e-12)
        # the subject-margin table has the P-norm of the margin vector
        assert r_norm2(parts[1], p, q) == pytest.approx(np.sum(p * d.subject_margin ** 2), abs=1e-12)


class TestMarginRegression:
    def test_pls1_spans_response(self, rng):
        w = random_weights(rng, 8)
        X = standardize(DataBlock(rng.standard_normal((8, 3)), w))
        y = X.data @ np.array([1.0, -2.0, 0.5])
        mm = pls1_fit(y, X, 3)
        assert mm.residual_norm2 < 1e-16
        C = mm.components
        np.testing.assert_allclose(C.T @ (w[:, None] * C), np.eye(3), atol=1e-10)
        np.testing.assert_allclose(mm.fitted, y, atol=1e-8)

    def test_pls1_single_column(self, rng):
        w = random_weights(rng, 6)
        X = standardize(DataBlock(rng.standard_normal((6, 1)), w))
        y = rng.standard_normal(6)
        y -= w @ y
        mm = pls1_fit(y, X, 2)
        fit = weighted_lstsq_fit(X.data, y, w)
        assert mm.coefficients.size == 1 and mm.early_stop
        assert abs(mm.coefficients[0]) == pytest.approx(np.sqrt(np.sum(w * fit ** 2)), rel=1e-10)

    def test_pls1_orthogonal_response(self):
        w = uniform_weights(4)
        X = DataBlock(np.array([[1.], [-1.], [1.], [-1.]]), w)
        mm = pls1_fit(np.array([1., 1., -1., -1.]), X, 2)
        assert mm.coefficients.size == 0 and mm.early_stop

    def test_pls1_residual_orthogonal(self, rng):
        w = random_weights(rng, 9)
        X = standardize(DataBlock(rng.standard_normal((9, 4)), w))
        y = rng.standard_normal(9)
        y -= w @ y
        mm = pls1_fit(y, X, 2)
        assert np.abs(mm.components.T @ (w * mm.residual)).max() < 1e-12
        # sum of squared coefficients is the norm of the fitted part
        assert mm.explained_norm2 == pytest.approx(np.sum(w * mm.fitted ** 2), rel=1e-10)

    def test_ols1(self, rng):
        w = random_weights(rng, 7)
        X = standardize(DataBlock(rng.standard_normal((7, 2)), w))
        y = rng.standard_normal(7)
        y -= w @ y
        mm = ols1_fit(y, X)
        np.testing.assert_allclose(mm.fitted, weighted_lstsq_fit(X.data, y, w), atol=1e-10)

    def test_length_checked(self, rng):
        X = DataBlock(rng.standard_normal((4, 2)), uniform_weights(4))
        with pytest.raises(DimensionError):
            pls1_fit(np.ones(3), X, 1)


@pytest.fixture(name="planted_b1")
def planted_b1_fixture(rng):
    return planted_b1(rng)


class TestB1:
    def test_planted_recovery(self, planted_b1):
        zb, X, Y = planted_b1
        m = film_b1_fit(zb, X, Y, FitConfig(n_ranks=1))
        assert m.subject_margin_model.coefficients[0] == pytest.approx(0.5, abs=1e-6)
        assert m.object_margin_model.coefficients[0] == pytest.approx(0.7, abs=1e-6)
        assert m.interaction_model.omega[0, 0] == pytest.approx(0.9, abs=1e-6)
        assert m.decomposition.grand_mean == pytest.approx(1.3)

    def test_variance_table_adds_up(self, rng):
        zb, X, Y = random_instance(rng, J=3, K=3)
        zb = zb.with_table(zb.z + np.arange(zb.shape[0])[:, None] * 0.3)
        m = film_b1_fit(zb, X, Y, FitConfig(n_ranks=2))
        t = m.variance_table
        parts = [v for k, v in t.items() if k != "total"]
        assert all(v >= -1e-14 for v in parts)
        assert sum(parts) == pytest.approx(t["total"], rel=1e-8)

    def test_double_centred_reduces_to_film_a(self, rng):
        zb, X, Y = random_instance(rng, J=3, K=3)
        zb = double_center(zb)
        cfg = FitConfig(n_ranks=2)
        m = film_b1_fit(zb, X, Y, cfg)
        assert m.subject_margin_model.explained_norm2 < 1e-20
        assert m.object_margin_model.explained_norm2 < 1e-20
        a = film_a_fit(zb, X, Y, cfg)
        np.testing.assert_allclose(m.interaction_model.omega, a.omega, atol=1e-12)

    def test_pure_subject_margin(self, rng):
        n, m = 8, 6
        p, q = random_weights(rng, n), random_weights(rng, m)
        X = standardize(DataBlock(rng.standard_normal((n, 2)), p))
        Y = standardize(DataBlock(rng.standard_normal((m, 2)), q))
        f = X.data @ np.array([0.4, -1.1])
        zb = InteractionBlock(np.outer(f, np.ones(m)), p, q)
        b1 = film_b1_fit(zb, X, Y, FitConfig(n_ranks=2), margin_method=OLS1)
        t = b1.variance_table
        assert t["subject_margin_explained"] == pytest.approx(t["total"], rel=1e-10)
        assert t["interaction_explained"] == pytest.approx(0.0, abs=1e-20)
        s_agree, _ = b1.component_agreement()
        assert s_agree.shape[1] == 0

    def test_requires_centred_blocks(self, rng):
        zb, X, Y = random_instance(rng, center=False)
        X = X.with_data(X.data + 5)
        with pytest.raises(ValueError):
            film_b1_fit(zb, X, Y)

    def test_component_agreement_shape(self, planted_b1):
        zb, X, Y = planted_b1
        m = film_b1_fit(zb, X, Y, FitConfig(n_ranks=1))
        s, o = m.component_agreement()
        # margin and interaction components are the same planted factors
        assert s[0, 0] == pytest.approx(1.0, abs=1e-10)
        assert o[0, 0] == pytest.approx(1.0, abs=1e-10)


@pytest.fixture(name="planted_b2")
def planted_b2_fixture(rng):
    return planted_b2(rng)


class TestB2:
    @pytest.mark.parametrize("structural", [True, False])
    def test_planted_recovery(self, planted_b2, structural):
        zb, X, Y, (F, G, b, c, gam) = planted_b2
        m = film_b2_fit(zb, X, Y, FitConfig(n_ranks=2, structural_strength=structural))
        sb, oc, ig = unsign(m, F, G, zb.row_weights, zb.col_weights)
        np.testing.assert_allclose(sb, b, atol=1e-5)
        np.testing.assert_allclose(oc, c, atol=1e-5)
        np.testing.assert_allclose(ig, gam, atol=1e-5)
        assert m.grand_mean == pytest.approx(3.0)
        assert m.r2 == pytest.approx(1.0, abs=1e-10)

    def test_rank_one_planted(self, rng):
        zb, X, Y, (F, G) = planted_b2_rank1(rng)
        mdl = film_b2_rank1(zb, X, Y)
        sb, oc, ig = unsign(mdl, F[:, :1], G[:, :1], zb.row_weights, zb.col_weights)
        np.testing.assert_allclose([sb[0], oc[0], ig[0, 0]], [0.8, -0.3, 1.1], atol=1e-6)

    def test_double_centred_matches_film_a(self, rng):
        zb, X, Y = random_instance(rng, J=3, K=3)
        zb = double_center(zb)
        cfg = FitConfig(n_ranks=1, structural_strength=True)
        b2 = film_b2_fit(zb, X, Y, cfg)
        a = film_a_fit(zb, X, Y, cfg)
        assert np.abs(b2.subject_effects).max() < 1e-8
        assert np.abs(b2.object_effects).max() < 1e-8
        assert b2.interaction[0, 0] == pytest.approx(a.omega[0, 0], abs=1e-6)
        assert same_up_to_sign(b2.subject_basis.scores[:, 0], a.subject_basis.scores[:, 0], 1e-6)

    def test_double_centred_no_own_effects_matches_omega(self, rng):
        zb, X, Y = random_instance(rng, J=3, K=3)
        zb = double_center(zb)
        cfg = FitConfig(n_ranks=2, structural_strength=False)
        b2 = film_b2_fit(zb, X, Y, cfg)
        a = film_a_fit(zb, X, Y, cfg)
        np.testing.assert_allclose(np.abs(b2.interaction), np.abs(a.omega), atol=1e-6)

    def test_constant_table(self, rng):
        zb, X, Y = random_instance(rng)
        b2 = film_b2_rank1(zb.with_table(np.full(zb.shape, 4.0)), X, Y)
        assert b2.grand_mean == pytest.approx(4.0)
        assert np.abs(b2.subject_effects).max() < 1e-12
        assert np.abs(b2.interaction).max() < 1e-12

    def test_rank_one_data_leaves_rank_two_empty(self, rng):
        n, m = 10, 7
        p, q = uniform_weights(n), uniform_weights(m)
        F = centred_orthonormal(rng, p, 3)
        G = centred_orthonormal(rng, q, 3)
        Z = 0.5 * np.outer(F[:, 0], np.ones(m)) + 0.9 * np.outer(F[:, 0], G[:, 0])
        mdl = film_b2_fit(InteractionBlock(Z, p, q), DataBlock(F, p), DataBlock(G, q),
                          FitConfig(n_ranks=2))
        assert abs(mdl.subject_effects[1]) < 1e-6
        assert abs(mdl.object_effects[1]) < 1e-6
        assert np.abs(mdl.interaction[1, :]).max() < 1e-6
        assert np.abs(mdl.interaction[:, 1]).max() < 1e-6

    @pytest.mark.parametrize("structural", [True, False])
    @given(seed=st.integers(0, 100_000))
    def test_invariants(self, structural, seed):
        zb, X, Y = random_instance(np.random.default_rng(seed), J=3, K=3)
        zb = zb.with_table(zb.z + 2.0)
        m = film_b2_fit(zb, X, Y, FitConfig(n_ranks=2, structural_strength=structural))
        p, q = zb.row_weights, zb.col_weights
        F, G = m.subject_basis.scores, m.object_basis.scores
        T = F.shape[1]
        assert np.abs(p @ F).max() < 1e-9 and np.abs(q @ G).max() < 1e-9
        assert np.abs(F.T @ (p[:, None] * F) - np.eye(T)).max() < 1e-9
        assert np.abs(G.T @ (q[:, None] * G) - np.eye(T)).max() < 1e-9
        zc = zb.z - m.grand_mean
        fitted = r_norm2(m.fitted_table(), p, q)
        assert fitted == pytest.approx(m.fitted_norm2, rel=1e-8, abs=1e-12)
        assert m.total_norm2 == pytest.approx(fitted + m.residual_norm2, rel=1e-8)
        assert r_norm2(zc - m.fitted_table(), p, q) == pytest.approx(m.residual_norm2, rel=1e-8, abs=1e-14)

    def test_trace_monotone_inverse_covariance(self):
        for seed in range(15):
            zb, X, Y = random_instance(np.random.default_rng(seed), J=3, K=3)
            zb = zb.with_table(zb.z + np.linspace(0, 1, zb.shape[1]))
            m = film_b2_fit(zb, X, Y, FitConfig(n_ranks=2, structural_strength=False))
            for steps in m.fit_trace:
                assert np.all(np.diff(steps) >= -1e-12)
