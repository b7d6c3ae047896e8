import math

import numpy as np
import pytest

from dvgp.kernels import (
    InputDomain,
    KernelSpec,
    PeriodicSpec,
    eval_kernel,
    kernel_contract,
    kernel_diag,
    kernel_matrix,
    spec_from_config,
    spec_to_config,
)

from oracles import central_fd


def one_dim(family="matern32", ell=0.1, var=1.0):
    return KernelSpec(families=(family,), lengthscales=(ell,), variance=var,
                      structure="one_dim")


class TestEvalKernel:
    def test_zero_distance_is_variance(self):
        assert eval_kernel(one_dim("matern32", 0.1), [0.3], [0.3]) == pytest.approx(1.0)

    def test_matern12_unit_distance(self):
        k = eval_kernel(one_dim("matern12", 1.0), [0.0], [1.0])
        assert k == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_additive_equals_sum_of_one_dim(self, rng):
        spec = KernelSpec(families=("matern32", "matern32"), lengthscales=(0.2, 0.5),
                          variance=2.0, structure="additive")
        parts = [one_dim("matern32", 0.2, 1.0), one_dim("matern32", 0.5, 1.0)]
        for _ in range(20):
            x, xp = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
            expect = sum(eval_kernel(p, [x[d]], [xp[d]]) for d, p in enumerate(parts))
            got = eval_kernel(spec, x, xp)
            assert abs(got - expect) <= 1e-12 * abs(expect)

    def test_separable_equals_product_of_one_dim(self, rng):
        spec = KernelSpec(families=("matern12", "matern52"), lengthscales=(0.3, 0.4),
                          variance=1.7, structure="separable")
        for _ in range(20):
            x, xp = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
            expect = 1.7
            for d, fam in enumerate(("matern12", "matern52")):
                expect *= eval_kernel(one_dim(fam, spec.lengthscales[d]), [x[d]], [xp[d]])
            assert abs(eval_kernel(spec, x, xp) - expect) <= 1e-12 * abs(expect)

    def test_symmetry_and_stationarity(self, rng):
        spec = KernelSpec(families=("matern52",) * 3, lengthscales=(0.2, 0.3, 0.4),
                          variance=1.2, structure="additive")
        for _ in range(20):
            x, xp, t = rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3)
            assert eval_kernel(spec, x, xp) == pytest.approx(eval_kernel(spec, xp, x), rel=1e-14)
            assert eval_kernel(spec, x + t, xp + t) == pytest.approx(
                eval_kernel(spec, x, xp), rel=1e-10)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            eval_kernel(one_dim(), [0.1, 0.2], [0.1, 0.2])

    def test_hybrid_includes_periodic_addend(self):
        ns = PeriodicSpec(variance=0.5, lengthscale=0.2, period=0.5)
        spec = KernelSpec(families=("matern32",), lengthscales=(0.2,), variance=1.0,
                          structure="hybrid_additive", nonstationary=ns)
        assert eval_kernel(spec, [0.3], [0.3]) == pytest.approx(1.5)
        assert kernel_diag(spec, np.zeros((4, 1)))[0] == pytest.approx(1.5)


class TestValidation:
    def test_nonpositive_hyperparameters_rejected(self):
        with pytest.raises(ValueError, match="lengthscales"):
            KernelSpec(families=("matern32",), lengthscales=(0.0,), variance=1.0)
        with pytest.raises(ValueError, match="variance"):
            KernelSpec(families=("matern32",), lengthscales=(0.1,), variance=-1.0)

    def test_one_dim_requires_single_dimension(self):
        with pytest.raises(ValueError, match="one_dim"):
            KernelSpec(families=("matern32",) * 2, lengthscales=(0.1, 0.1),
                       variance=1.0, structure="one_dim")

    def test_separable_rejected_above_three_dims(self):
        with pytest.raises(ValueError, match="D <= 3"):
            KernelSpec(families=("matern32",) * 4, lengthscales=(0.1,) * 4,
                       variance=1.0, structure="separable")

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError, match="family"):
            KernelSpec(families=("rbf",), lengthscales=(0.1,), variance=1.0)


class TestKernelMatrix:
    def test_single_point(self):
        K = kernel_matrix(one_dim(var=2.5), np.array([[0.4]]))
        assert K.shape == (1, 1)
        assert K[0, 0] == pytest.approx(2.5)

    def test_psd_on_random_sets(self, rng):
        spec = KernelSpec(families=("matern32", "matern12"), lengthscales=(0.2, 0.4),
                          variance=1.0, structure="additive")
        X = rng.uniform(0, 1, size=(20, 2))
        K = kernel_matrix(spec, X)
        w = np.linalg.eigvalsh(K + 1e-8 * spec.variance * np.eye(20))
        assert w.min() > 0

    def test_psd_tolerance_50_points(self, rng):
        spec = one_dim("matern52", 0.05)
        X = rng.uniform(0, 1, size=(50, 1))
        w = np.linalg.eigvalsh(kernel_matrix(spec, X))
        assert w.min() >= -1e-8 * np.trace(kernel_matrix(spec, X)) / 50

    def test_transpose_identity(self, rng):
        spec = one_dim()
        X, Xp = rng.uniform(0, 1, (7, 1)), rng.uniform(0, 1, (5, 1))
        assert np.array_equal(kernel_matrix(spec, X, Xp), kernel_matrix(spec, Xp, X).T)

    def test_matches_eval_kernel(self, rng):
        spec = KernelSpec(families=("matern52",) * 2, lengthscales=(0.3, 0.6),
                          variance=1.1, structure="separable")
        X, Xp = rng.uniform(0, 1, (4, 2)), rng.uniform(0, 1, (3, 2))
        K = kernel_matrix(spec, X, Xp)
        for i in range(4):
            for j in range(3):
                assert K[i, j] == pytest.approx(eval_kernel(spec, X[i], Xp[j]), rel=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="dimension mismatch"):
            kernel_matrix(one_dim(), rng.uniform(0, 1, (4, 2)))


class TestContract:
    @pytest.mark.parametrize("structure", ["additive", "separable"])
    def test_hyper_gradients_match_fd(self, rng, structure):
        spec = KernelSpec(families=("matern32", "matern52"), lengthscales=(0.3, 0.5),
                          variance=1.4, structure=structure)
        X1 = rng.uniform(0, 1, (6, 2))
        X2 = rng.uniform(0, 1, (4, 2))
        G = rng.standard_normal((6, 4))

        def f(lp):
            return float(np.sum(G * kernel_matrix(spec.with_log_params(lp), X1, X2)))

        got, _, _ = kernel_contract(spec, X1, X2, G)
        ref = central_fd(f, spec.log_params())
        assert np.max(np.abs(got - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))

    @pytest.mark.parametrize("structure", ["additive", "separable"])
    def test_location_gradients_match_fd(self, rng, structure):
        spec = KernelSpec(families=("matern32", "matern32"), lengthscales=(0.3, 0.5),
                          variance=1.4, structure=structure)
        X1 = rng.uniform(0, 1, (6, 2))
        X2 = rng.uniform(0, 1, (4, 2))
        G = rng.standard_normal((6, 4))

        def f(x2flat):
            return float(np.sum(G * kernel_matrix(spec, X1, x2flat.reshape(4, 2))))

        _, _, dX2 = kernel_contract(spec, X1, X2, G, want_dx2=True)
        ref = central_fd(f, X2.ravel()).reshape(4, 2)
        assert np.max(np.abs(dX2 - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))


class TestConfigAndDomain:
    def test_log_params_roundtrip(self):
        spec = KernelSpec(families=("matern12", "matern52"), lengthscales=(0.2, 0.7),
                          variance=0.9, structure="additive")
        back = spec.with_log_params(spec.log_params())
        assert back.lengthscales == pytest.approx(spec.lengthscales)
        assert back.variance == pytest.approx(spec.variance)

    def test_config_roundtrip(self):
        ns = PeriodicSpec(variance=0.5, lengthscale=0.2, period=0.5)
        spec = KernelSpec(families=("matern32",), lengthscales=(0.2,), variance=1.0,
                          structure="hybrid_additive", nonstationary=ns)
        back = spec_from_config(spec_to_config(spec))
        assert back == spec

    def test_input_domain(self):
        dom = InputDomain(intervals=((0.0, 1.0), (-1.0, 1.0)))
        ok = dom.contains(np.array([[0.5, 0.0], [1.5, 0.0]]))
        assert ok.tolist() == [True, False]
        with pytest.raises(ValueError, match="degenerate"):
            InputDomain(intervals=((1.0, 1.0),))
