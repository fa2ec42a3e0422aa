import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from infuq import nets
from infuq.architecture import Architecture
from infuq.errors import DimensionMismatch, UnsupportedActivation
from infuq.kernels import (
    KernelKind,
    RBFParams,
    empirical_nngp,
    max_entry_error,
    nngp_gram,
    nngp_kernel,
    ntk_gram,
    ntk_kernel,
    rbf_gram,
    rbf_kernel,
    rbf_matrices,
    z_scores,
)
from infuq.linalg_stats import SeededRng

coords = st.floats(-3.0, 3.0, allow_nan=False)
archs = st.builds(
    Architecture,
    input_dim=st.just(2),
    hidden_widths=st.integers(0, 3).map(lambda d: (None,) * d),
    activation=st.sampled_from(["erf", "relu", "identity"]),
    sigma_w=st.floats(0.3, 2.5),
    sigma_b=st.floats(0.0, 1.0),
)


def test_rbf_zero_distance():
    assert rbf_kernel([0.3, -1.0], [0.3, -1.0], RBFParams(1.7, 0.4)) == 1.7**2


def test_rbf_direct_value():
    assert rbf_kernel([1.0, 1.0], [0.0, 0.0], RBFParams(1.0, 1.0)) == pytest.approx(math.exp(-1.0), abs=1e-15)


def test_rbf_decays_monotonically():
    values = [rbf_kernel([0.0], [d], RBFParams(1.0, 0.7)) for d in np.linspace(0.0, 10.0, 50)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-40


def test_rbf_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        rbf_kernel([0.0, 1.0], [0.0], RBFParams())


def test_rbf_params_must_be_positive():
    with pytest.raises(ValueError):
        RBFParams(0.0, 1.0)
    with pytest.raises(ValueError):
        RBFParams(1.0, -1.0)


def test_rbf_gram_matches_pointwise():
    gen = np.random.default_rng(0)
    a, b = gen.standard_normal((4, 3)), gen.standard_normal((5, 3))
    p = RBFParams(0.8, 1.3)
    expected = np.array([[rbf_kernel(x, y, p) for y in b] for x in a])
    np.testing.assert_allclose(rbf_gram(a, b, p), expected, rtol=1e-14)


@pytest.mark.parametrize("activation", ["erf", "relu", "identity"])
def test_depth_zero_is_affine(activation, five_points):
    arch = Architecture(2, (), activation, 1.3, 0.4)
    expected = 0.4**2 + 1.3**2 * (five_points @ five_points.T) / 2
    np.testing.assert_allclose(nngp_gram(arch, five_points), expected, rtol=1e-15)
    np.testing.assert_allclose(ntk_gram(arch, five_points), expected, rtol=1e-15)


def test_identity_nngp_equals_ntk_at_depth_zero(five_points):
    arch = Architecture(2, (), "identity", 0.9, 0.2)
    assert np.array_equal(nngp_gram(arch, five_points), ntk_gram(arch, five_points))


def test_tanh_has_no_closed_form(five_points):
    arch = Architecture(2, (None,), "tanh", 1.0, 0.0)
    with pytest.raises(UnsupportedActivation):
        nngp_gram(arch, five_points)
    with pytest.raises(UnsupportedActivation):
        ntk_gram(arch, five_points)


def test_kernel_blocks_have_consistent_shapes(plane_data):
    arch = Architecture.infinite(2, 2, activation="erf", sigma_w=1.5, sigma_b=0.1)
    k = nngp_kernel(arch, plane_data.train_x, plane_data.test_x)
    assert k.kind == KernelKind.NNGP
    assert k.train_train.shape == (5, 5) and k.test_train.shape == (5, 5) and k.test_test.shape == (5, 5)
    t = ntk_kernel(arch, plane_data.train_x, plane_data.test_x)
    np.testing.assert_allclose(t.joint(), ntk_gram(arch, np.vstack([plane_data.train_x, plane_data.test_x])),
                               rtol=1e-13)


@settings(max_examples=50, deadline=None)
@given(arch=archs, pts=arrays(np.float64, (2, 2), elements=coords))
def test_kernels_exactly_symmetric_in_arguments(arch, pts):
    x, y = pts[:1], pts[1:]
    assert nngp_gram(arch, x, y)[0, 0] == nngp_gram(arch, y, x)[0, 0]
    assert ntk_gram(arch, x, y)[0, 0] == ntk_gram(arch, y, x)[0, 0]
    p = RBFParams(1.2, 0.8)
    assert rbf_kernel(x[0], y[0], p) == rbf_kernel(y[0], x[0], p)


@settings(max_examples=50, deadline=None)
@given(arch=archs, pts=arrays(np.float64, st.tuples(st.integers(1, 10), st.just(2)), elements=coords))
def test_gram_matrices_psd(arch, pts):
    for gram in (nngp_gram(arch, pts), ntk_gram(arch, pts), rbf_gram(pts, pts, RBFParams())):
        assert np.array_equal(gram, gram.T)
        lam = np.linalg.eigvalsh(gram)
        assert lam[0] > -1e-10 * max(1.0, lam[-1])


@settings(max_examples=50, deadline=None)
@given(arch=archs, pts=arrays(np.float64, st.tuples(st.integers(1, 6), st.just(2)), elements=coords))
def test_ntk_diagonal_dominates_nngp(arch, pts):
    assert np.all(np.diag(ntk_gram(arch, pts)) >= np.diag(nngp_gram(arch, pts)) - 1e-12)


def test_empirical_nngp_single_sample_single_point():
    arch = Architecture(2, (16,), "erf", 1.5, 0.1)
    x = np.array([[0.3, -0.7]])
    est, se = empirical_nngp(arch, x, 1, SeededRng(4))
    f = nets.forward(arch, nets.init(arch, SeededRng(4).stream(0)), x)
    assert est.train_train[0, 0] == f[0] ** 2
    assert est.kind == KernelKind.EMPIRICAL_NNGP
    assert np.isinf(se[0, 0])


def test_empirical_nngp_chunking_is_invisible(five_points):
    arch = Architecture(2, (32,), "relu", 1.5, 0.1)
    a, _ = empirical_nngp(arch, five_points, 40, SeededRng(2))
    b, _ = empirical_nngp(arch, five_points, 40, SeededRng(2), max_chunk_params=100)
    np.testing.assert_allclose(a.train_train, b.train_train, rtol=1e-13)


def test_empirical_nngp_matches_erf_kernel_at_width_4096(five_points):
    arch = Architecture(2, (4096,), "erf", 1.5, 0.1)
    est, se = empirical_nngp(arch, five_points, 2000, SeededRng(17))
    exact = nngp_gram(arch.with_width(None), five_points)
    assert np.max(z_scores(est.train_train, exact, se)) < 3.0


@pytest.mark.parametrize("width", [2, 16, 128])
def test_empirical_nngp_identity_is_exact_case(width, five_points):
    arch = Architecture(2, (width,), "identity", 1.2, 0.3)
    est, se = empirical_nngp(arch, five_points, 2000, SeededRng(width))
    exact = nngp_gram(arch.with_width(None), five_points)
    assert np.max(z_scores(est.train_train, exact, se)) < 3.5
    # a linear network's kernel does not depend on width, so it equals the
    # depth-0 kernel with compounded scales
    assert np.allclose(exact, nngp_gram(Architecture(2, (), "identity", 1.2, 0.3), five_points) * 1.2**2 + 0.3**2)


@pytest.mark.parametrize("activation", ["erf", "relu"])
def test_readout_estimator_median_error_shrinks_with_width(activation, five_points):
    """Averaging the readout analytically leaves a width-dependent error that the median tracks."""
    medians = []
    for width in (64, 256, 1024):
        arch = Architecture(2, (width,), activation, 1.5, 0.1)
        exact = nngp_gram(arch.with_width(None), five_points)
        errs = [
            max_entry_error(empirical_nngp(arch, five_points, 500, SeededRng(r).stream(width),
                                           estimator="readout")[0].train_train, exact)
            for r in range(10)
        ]
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


def test_readout_estimator_has_same_expectation(five_points):
    arch = Architecture(2, (8,), "relu", 1.5, 0.1)
    out, se_out = empirical_nngp(arch, five_points, 4000, SeededRng(6))
    ro, se_ro = empirical_nngp(arch, five_points, 4000, SeededRng(6), estimator="readout")
    assert np.all(se_ro <= se_out)
    assert np.max(np.abs(out.train_train - ro.train_train) / se_out) < 3.5


def test_empirical_nngp_rejects_infinite_width(five_points):
    with pytest.raises(ValueError):
        empirical_nngp(Architecture.infinite(2, 1), five_points, 10, SeededRng(0))
    with pytest.raises(ValueError):
        empirical_nngp(Architecture(2, (4,)), five_points, 10, SeededRng(0), estimator="bogus")
