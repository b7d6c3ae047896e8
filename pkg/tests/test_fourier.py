import math

import numpy as np
import pytest

from dvgp.fourier import (
    DomainWarning,
    FourierBasis,
    MultiDimBasis,
    NoFeatureRepresentationError,
    basis_from_config,
    basis_to_config,
    cross_covariance,
    eval_features,
    feature_matrix,
    gram,
    hybrid_basis,
    make_frequencies,
    target_feature_count,
)
from dvgp.kernels import KernelSpec, PeriodicSpec, periodic_matrix

from oracles import grid_projection_gram


def spec_1d(family="matern32", ell=0.2, var=1.0):
    return KernelSpec(families=(family,), lengthscales=(ell,), variance=var,
                      structure="one_dim")


def basis_1d(F=4, interval=(0.0, 1.0)):
    return MultiDimBasis(structure="one_dim", bases=(FourierBasis(interval, F),))


class TestFrequencies:
    def test_harmonics_on_unit_interval(self):
        om = make_frequencies(3, (0.0, 1.0))
        assert np.allclose(om, [2 * math.pi, 4 * math.pi, 6 * math.pi], rtol=1e-15)

    def test_unit_reducing_interval(self):
        assert np.allclose(make_frequencies(1, (0.0, 2 * math.pi)), [1.0])

    def test_interval_of_length_two(self):
        assert np.allclose(make_frequencies(2, (-1.0, 1.0)), [math.pi, 2 * math.pi])

    def test_strictly_increasing(self):
        om = make_frequencies(10, (0.3, 2.7))
        assert np.all(np.diff(om) > 0)

    def test_errors(self):
        with pytest.raises(ValueError, match=">= 1"):
            make_frequencies(0, (0.0, 1.0))
        with pytest.raises(ValueError, match="degenerate"):
            make_frequencies(2, (1.0, 1.0))


class TestFeatures:
    def test_left_endpoint(self):
        b = FourierBasis((0.0, 1.0), 3)
        v = eval_features(b, 0.0)
        assert np.allclose(v, [1, 1, 1, 1, 0, 0, 0], atol=1e-15)

    def test_right_endpoint_periodicity(self):
        b = FourierBasis((0.2, 1.7), 4)
        v = eval_features(b, 1.7)
        assert np.allclose(v, [1, 1, 1, 1, 1, 0, 0, 0, 0], atol=1e-12)

    def test_midpoint_single_frequency(self):
        b = FourierBasis((0.0, 1.0), 1)
        v = eval_features(b, 0.5)
        assert np.allclose(v, [1.0, -1.0, 0.0], atol=1e-12)

    def test_domain_warning_outside(self):
        b = FourierBasis((0.0, 1.0), 2)
        with pytest.warns(DomainWarning):
            feature_matrix(b, [1.2])

    def test_nan_input_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            feature_matrix(FourierBasis((0.0, 1.0), 2), [np.nan])


class TestCrossCovariance:
    def test_column_at_left_endpoint(self):
        mb = basis_1d(3)
        col = cross_covariance(mb, spec_1d(), np.array([[0.0]]))
        assert np.allclose(col[:, 0], eval_features(mb.bases[0], 0.0))

    def test_additive_concatenates_per_dimension(self):
        spec = KernelSpec(families=("matern32",) * 2, lengthscales=(0.2, 0.2),
                          variance=1.0, structure="additive")
        mb = MultiDimBasis(structure="additive",
                           bases=(FourierBasis((0.0, 1.0), 2), FourierBasis((0.0, 1.0), 2)))
        col = cross_covariance(mb, spec, np.array([[0.0, 0.0]]))
        one = eval_features(mb.bases[0], 0.0)
        assert np.allclose(col[:, 0], np.concatenate([one, one]))

    def test_matches_eval_features(self, rng):
        mb = basis_1d(5)
        X = rng.uniform(0, 1, size=(11, 1))
        M = cross_covariance(mb, spec_1d(), X)
        for j, x in enumerate(X[:, 0]):
            assert np.max(np.abs(M[:, j] - eval_features(mb.bases[0], x))) <= 1e-15

    def test_separable_rows_are_products(self, rng):
        spec = KernelSpec(families=("matern32",) * 2, lengthscales=(0.2, 0.3),
                          variance=1.0, structure="separable")
        mb = MultiDimBasis(structure="separable",
                           bases=(FourierBasis((0.0, 1.0), 1), FourierBasis((0.0, 1.0), 2)))
        X = rng.uniform(0, 1, size=(4, 2))
        M = cross_covariance(mb, spec, X)
        f0 = feature_matrix(mb.bases[0], X[:, 0])
        f1 = feature_matrix(mb.bases[1], X[:, 1])
        for n in range(4):
            assert np.allclose(M[:, n], np.kron(f0[:, n], f1[:, n]), atol=1e-15)

    def test_structure_mismatch_raises(self):
        spec = KernelSpec(families=("matern32",) * 2, lengthscales=(0.2, 0.2),
                          variance=1.0, structure="additive")
        with pytest.raises(ValueError, match="mismatch"):
            cross_covariance(basis_1d(2), spec, np.zeros((1, 1)))


class TestGram:
    def test_symmetric_positive_definite(self, rng):
        for fam in ("matern12", "matern32", "matern52"):
            K = gram(basis_1d(6), spec_1d(fam, 0.15)).dense()
            assert np.max(np.abs(K - K.T)) <= 1e-12 * np.max(np.abs(K))
            assert np.linalg.eigvalsh(K).min() > 0

    def test_projection_oracle_matern12(self):
        spec = spec_1d("matern12", 0.2, 1.0)
        mb = basis_1d(4, (0.0, 1.0))
        K = gram(mb, spec).dense()
        P = grid_projection_gram(spec, mb, 2000)
        scale = np.sqrt(np.outer(np.diag(K), np.diag(K)))
        assert np.max(np.abs(K - P) / scale) <= 1e-2

    def test_projection_lower_bound_loewner_monotone(self):
        # nested grids: the projection increases toward the closed form
        spec = spec_1d("matern32", 0.3)
        mb = basis_1d(3)
        K = gram(mb, spec).dense()
        P_coarse = grid_projection_gram(spec, mb, 251)
        P_fine = grid_projection_gram(spec, mb, 1001)
        assert np.linalg.eigvalsh(P_fine - P_coarse).min() >= -1e-6
        assert np.linalg.eigvalsh(K - P_fine).min() >= -1e-6

    def test_additive_gram_is_block_diagonal_with_identical_blocks(self):
        spec = KernelSpec(families=("matern32",) * 3, lengthscales=(0.2,) * 3,
                          variance=3.0, structure="additive")
        mb = MultiDimBasis(structure="additive",
                           bases=tuple(FourierBasis((0.0, 1.0), 2) for _ in range(3)))
        K = gram(mb, spec).dense()
        m = 5
        blk = K[:m, :m]
        for d in range(3):
            sl = slice(d * m, (d + 1) * m)
            assert np.array_equal(K[sl, sl], blk)
        off = K.copy()
        for d in range(3):
            sl = slice(d * m, (d + 1) * m)
            off[sl, sl] = 0.0
        assert np.all(off == 0.0)

    def test_structured_ops_match_dense_up_to_61(self, rng):
        for fam, F in (("matern12", 30), ("matern32", 30), ("matern52", 30)):
            g = gram(basis_1d(F), spec_1d(fam, 0.1))
            assert g.size == 61
            D = g.dense()
            B = rng.standard_normal((61, 2))
            ref = np.linalg.solve(D, B)
            assert np.max(np.abs(g.solve(B) - ref)) / np.max(np.abs(ref)) <= 1e-10
            mv = g.matvec(B)
            assert np.max(np.abs(mv - D @ B)) / np.max(np.abs(D @ B)) <= 1e-10
            assert abs(g.logdet() - np.linalg.slogdet(D)[1]) <= 1e-10 * abs(g.logdet())

    def test_separable_gram_is_kronecker_and_independent_across_dims(self, rng):
        spec = KernelSpec(families=("matern32",) * 2, lengthscales=(0.2, 0.4),
                          variance=1.0, structure="separable")
        mb = MultiDimBasis(structure="separable",
                           bases=(FourierBasis((0.0, 1.0), 2), FourierBasis((0.0, 1.0), 2)))
        K = gram(mb, spec).dense()
        oneds = [gram(MultiDimBasis(structure="one_dim", bases=(b,)),
                      spec_1d("matern32", ell, math.sqrt(spec.variance))).dense()
                 for b, ell in zip(mb.bases, spec.lengthscales)]
        assert np.allclose(K, np.kron(oneds[0], oneds[1]), rtol=1e-12)
        # independence across dimensions: every entry factorizes exactly
        m = 5
        for _ in range(30):
            i1, i2, j1, j2 = rng.integers(0, m, size=4)
            assert K[i1 * m + i2, j1 * m + j2] == pytest.approx(
                oneds[0][i1, j1] * oneds[1][i2, j2], rel=1e-12)

    def test_unsupported_family_raises_feature_error(self):
        spec = spec_1d()
        object.__setattr__(spec, "families", ("rbf",))
        with pytest.raises(NoFeatureRepresentationError, match="no RKHS feature"):
            gram(basis_1d(2), spec)


class TestHybrid:
    def make(self, ns_var=0.5):
        ns = PeriodicSpec(variance=ns_var, lengthscale=0.2, period=0.5)
        spec = KernelSpec(families=("matern32",), lengthscales=(0.2,), variance=1.0,
                          structure="hybrid_additive", nonstationary=ns)
        fb = FourierBasis((0.0, 1.0), 2)
        r = np.linspace(0.1, 0.9, fb.size)[:, None]
        mb, g = hybrid_basis(fb, spec, r)
        return spec, mb, g, r

    def test_off_diagonal_blocks_zero(self):
        spec, mb, g, r = self.make()
        K = g.dense()
        m = mb.bases[0].size
        assert np.all(K[:m, m:] == 0.0)
        assert np.all(K[m:, :m] == 0.0)

    def test_second_block_is_nonstationary_kernel_matrix(self):
        spec, mb, g, r = self.make()
        K = g.dense()
        m = mb.bases[0].size
        assert np.allclose(K[m:, m:], periodic_matrix(spec.nonstationary, r, r), rtol=1e-14)

    def test_count_mismatch_rejected(self):
        ns = PeriodicSpec(variance=0.5, lengthscale=0.2, period=0.5)
        spec = KernelSpec(families=("matern32",), lengthscales=(0.2,), variance=1.0,
                          structure="hybrid_additive", nonstationary=ns)
        with pytest.raises(ValueError, match="counts"):
            hybrid_basis(FourierBasis((0.0, 1.0), 2), spec, np.zeros((3, 1)))


class TestSerialization:
    def test_feature_ordering_stable_across_roundtrip(self, rng):
        mb = MultiDimBasis(
            structure="additive",
            bases=(FourierBasis((-0.2, 1.3), 3), FourierBasis((0.1, 0.9), 2)),
        )
        back = basis_from_config(basis_to_config(mb))
        spec = KernelSpec(families=("matern32",) * 2, lengthscales=(0.2, 0.2),
                          variance=1.0, structure="additive")
        X = rng.uniform(0.2, 0.8, size=(6, 2))
        assert np.array_equal(cross_covariance(mb, spec, X),
                              cross_covariance(back, spec, X))

    def test_hybrid_roundtrip(self):
        ns = PeriodicSpec(variance=0.5, lengthscale=0.2, period=0.5)
        spec = KernelSpec(families=("matern32",), lengthscales=(0.2,), variance=1.0,
                          structure="hybrid_additive", nonstationary=ns)
        fb = FourierBasis((0.0, 1.0), 2)
        mb, _ = hybrid_basis(fb, spec, np.linspace(0, 1, fb.size)[:, None])
        back = basis_from_config(basis_to_config(mb))
        assert back.structure == mb.structure
        assert np.array_equal(back.hybrid_inducing, mb.hybrid_inducing)


class TestTargetCount:
    def test_even_targets_round_down_to_odd(self):
        F = target_feature_count(50, 1, "one_dim")
        assert 2 * F + 1 == 49
        F = target_feature_count(21, 1, "one_dim")
        assert 2 * F + 1 == 21

    def test_additive_splits_across_dims(self):
        F = target_feature_count(50, 10, "additive")
        assert 10 * (2 * F + 1) == 50
