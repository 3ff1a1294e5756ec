import numpy as np
import pytest

from capbound.convop import ConvSpec, materialize
from capbound.errors import UsageError
from capbound.lipschitz import (
    dense_spectral_norm,
    embed_kernel_grid,
    extract_kernel_grid,
    fft_exact_norm,
    fft_exact_spectrum,
    operator_norm,
    power_iteration,
)
from capbound.tensors import KernelTensor

from oracles import dft_spectrum


def circular_case(rng, max_c=3, max_hw=6, max_k=3):
    c_in = int(rng.integers(1, max_c + 1))
    c_out = int(rng.integers(1, max_c + 1))
    h = int(rng.integers(2, max_hw + 1))
    w = int(rng.integers(2, max_hw + 1))
    k_h = int(rng.integers(1, min(max_k, h) + 1))
    k_w = int(rng.integers(1, min(max_k, w) + 1))
    spec = ConvSpec((c_in, h, w), (k_h, k_w), (1, 1), "circular")
    kern = KernelTensor(rng.standard_normal((c_out, c_in, k_h, k_w)))
    return spec, kern


def test_embed_extract_round_trip():
    rng = np.random.default_rng(0)
    spec, kern = circular_case(rng)
    grid = embed_kernel_grid(kern, spec)
    back = extract_kernel_grid(grid, kern.k_h, kern.k_w)
    np.testing.assert_array_equal(back, kern.entries)
    # everything outside the support window is zero
    assert np.count_nonzero(grid) <= kern.entries.size


def test_fft_spectrum_matches_direct_dft_oracle():
    rng = np.random.default_rng(1)
    for _ in range(15):
        spec, kern = circular_case(rng)
        got = fft_exact_spectrum(kern, spec).values
        want = dft_spectrum(kern.entries, spec.input_shape[1], spec.input_shape[2])
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_fft_spectrum_matches_dense_svd_multiset():
    rng = np.random.default_rng(2)
    for _ in range(10):
        spec, kern = circular_case(rng)
        got = np.sort(fft_exact_spectrum(kern, spec).values)[::-1]
        m = materialize(kern, spec).entries
        want = np.linalg.svd(m, compute_uv=False)
        want = np.sort(want)[::-1][: got.size]
        np.testing.assert_allclose(got, want, atol=1e-8)


def test_identity_kernel_spectrum_is_ones():
    spec = ConvSpec((2, 4, 4), (1, 1), (1, 1), "circular")
    k = np.zeros((2, 2, 1, 1))
    k[0, 0] = 1.0
    k[1, 1] = 1.0
    rep = fft_exact_spectrum(KernelTensor(k), spec)
    np.testing.assert_allclose(rep.values, np.ones(2 * 16))
    assert rep.max_value == pytest.approx(1.0)


def test_power_iteration_reaches_exact_max():
    rng = np.random.default_rng(3)
    for _ in range(15):
        spec, kern = circular_case(rng)
        exact = fft_exact_norm(kern, spec).value
        est = power_iteration(kern, spec, tol=1e-10, max_iters=5000)
        assert est.value == pytest.approx(exact, rel=1e-4)
        assert est.value <= exact * (1 + 1e-9)
        assert est.method == "power_iteration"
        assert est.iterations_used >= 1


def test_power_iteration_zero_kernel():
    spec = ConvSpec((1, 3, 3), (1, 1), (1, 1), "circular")
    est = power_iteration(KernelTensor(np.zeros((1, 1, 1, 1))), spec)
    assert est.value == 0.0


def test_power_iteration_deterministic_given_seed():
    rng = np.random.default_rng(4)
    spec, kern = circular_case(rng)
    a = power_iteration(kern, spec, seed=123)
    b = power_iteration(kern, spec, seed=123)
    assert a == b


def test_power_iteration_handles_strided_and_zero_padded():
    rng = np.random.default_rng(5)
    spec = ConvSpec((2, 6, 6), (3, 3), (2, 2), "zero_same")
    kern = KernelTensor(rng.standard_normal((2, 2, 3, 3)))
    exact = dense_spectral_norm(materialize(kern, spec)).value
    est = power_iteration(kern, spec, tol=1e-12, max_iters=5000)
    assert est.value == pytest.approx(exact, rel=1e-6)


def test_spectral_norm_homogeneity():
    rng = np.random.default_rng(6)
    spec, kern = circular_case(rng)
    base = fft_exact_norm(kern, spec).value
    scaled = fft_exact_norm(KernelTensor(3.5 * kern.entries), spec).value
    assert scaled == pytest.approx(3.5 * base, rel=1e-12)


def test_operator_submultiplicativity_via_composition():
    # |M_K2 @ M_K1|_2 <= |M_K2|_2 |M_K1|_2 on compatible circular layers
    rng = np.random.default_rng(7)
    spec1 = ConvSpec((2, 5, 5), (3, 3), (1, 1), "circular")
    spec2 = ConvSpec((3, 5, 5), (3, 3), (1, 1), "circular")
    k1 = KernelTensor(rng.standard_normal((3, 2, 3, 3)))
    k2 = KernelTensor(rng.standard_normal((2, 3, 3, 3)))
    m1 = materialize(k1, spec1).entries
    m2 = materialize(k2, spec2).entries
    combined = np.linalg.svd(m2 @ m1, compute_uv=False)[0]
    assert combined <= (
        fft_exact_norm(k1, spec1).value * fft_exact_norm(k2, spec2).value
    ) * (1 + 1e-10)


def test_fft_rejects_ineligible_specs():
    k = KernelTensor(np.ones((1, 1, 3, 3)))
    with pytest.raises(UsageError):
        fft_exact_spectrum(k, ConvSpec((1, 4, 4), (3, 3), (2, 2), "circular"))
    with pytest.raises(UsageError):
        fft_exact_spectrum(k, ConvSpec((1, 4, 4), (3, 3), (1, 1), "zero_same"))


def test_operator_norm_dispatch():
    rng = np.random.default_rng(8)
    spec, kern = circular_case(rng)
    assert operator_norm(kern, spec).method == "fft_exact"
    zp = ConvSpec(spec.input_shape, spec.kernel_shape, (1, 1), "zero_same")
    assert operator_norm(kern, zp).method == "power_iteration"


def test_power_iteration_below_exact_spectral_norm():
    rng = np.random.default_rng(9)
    for _ in range(10):
        spec, kern = circular_case(rng)
        est = power_iteration(kern, spec, tol=1e-8)
        exact = fft_exact_norm(kern, spec).value
        assert est.value <= exact * (1 + 1e-8)
