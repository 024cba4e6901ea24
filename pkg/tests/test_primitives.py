import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given, settings

from fpbc.errors import BadEncoderParam, NegativeIntensity, TierUnsupported, UnknownFamily
from fpbc.primitives import (
    ENCODERS,
    LAMBDA_FAMILIES,
    NoiseModel,
    apply,
    adjoint,
    detect,
    dot_test,
    export_psf_stack,
    generate_depth_psfs,
    lambda_lipschitz,
    lipschitz_bound,
    load_psf_stack,
    make_primitive,
    psf_cross_correlation,
)

from helpers import CASES, max_tier

C5_TOL = 1e-4


def all_kind_tiers():
    for kind, params, ndim, cplx in CASES:
        for tier in range(max_tier(kind) + 1):
            yield kind, params, ndim, cplx, tier


@pytest.mark.parametrize("kind,params,ndim,cplx,tier", list(all_kind_tiers()))
def test_adjoint_every_kind_and_tier(kind, params, ndim, cplx, tier):
    p = make_primitive(kind, dict(params), tier)
    shape = (24, 24 if kind == "Pi" else 20, 4)[:ndim]
    assert dot_test(p, shape, seed=tier, trials=3, complex_input=cplx) < C5_TOL


def test_tier3_scatter_is_nonlinear_and_consistent():
    p = make_primitive("R", {"length": 1.0, "beta": 0.1}, tier=3)
    assert not p.is_linear
    assert dot_test(p, (32, 32)) < C5_TOL


@settings(max_examples=25, deadline=None)
@given(case=st.sampled_from(CASES), h=st.integers(16, 64), w=st.integers(16, 64),
       depth=st.integers(2, 6), seed=st.integers(0, 2 ** 31))
def test_adjoint_random_fields(case, h, w, depth, seed):
    kind, params, ndim, cplx = case
    shape = (h, h if kind == "Pi" else w, depth)[:ndim]
    p = make_primitive(kind, dict(params), 1)
    assert dot_test(p, shape, seed=seed, complex_input=cplx) < C5_TOL


def test_identity_mask():
    x = np.random.default_rng(0).random((8, 8))
    p = make_primitive("M", {"mask": "ones"})
    np.testing.assert_array_equal(apply(p, x), x)


def test_mask_is_self_adjoint():
    p = make_primitive("M", {"mask": "random"})
    y = np.random.default_rng(1).random((8, 8))
    np.testing.assert_array_equal(adjoint(p, y), apply(p, y))


def test_sigma_sums_axis():
    p = make_primitive("Sigma", {"axis": 0})
    x = np.ones((4, 8, 8))
    p.bind(x.shape)
    out = apply(p, x)
    assert out.shape == (8, 8)
    assert np.all(out == 4)
    back = adjoint(p, np.arange(64.0).reshape(8, 8))
    assert back.shape == (4, 8, 8)
    assert np.all(back == np.arange(64.0).reshape(8, 8)[None])


def test_radon_single_angle_delta():
    # hand oracle: at angle 0 a rotate-and-sum projector sums along rows,
    # so a delta at (r, c) lands in detector bin c only
    x = np.zeros((4, 4))
    x[1, 2] = 1.0
    p = make_primitive("Pi", {"n_angles": 1})
    y = apply(p, x)
    assert y.shape == (1, 4)
    np.testing.assert_allclose(y, [[0, 0, 1, 0]], atol=1e-12)


def test_fourier_unitary_adjoint():
    p = make_primitive("F", {})
    assert dot_test(p, (16, 16), complex_input=True) < 1e-12
    x = np.random.default_rng(0).standard_normal((16, 16))
    np.testing.assert_allclose(adjoint(p, apply(p, x)), x, atol=1e-12)
    assert lipschitz_bound(p) == pytest.approx(1.0)


def test_binary_mask_lipschitz():
    p = make_primitive("M", {"mask": "random", "density": 0.5})
    p.bind((16, 16))
    assert lipschitz_bound(p) == 1.0


def test_exponential_lipschitz_matches_grid():
    # sup over t in [0, 1] and mu in [0, 3] of max(|df/dt|, |df/dmu|), f = exp(-mu t)
    t = np.linspace(0, 1, 2001)[:, None]
    mu = np.linspace(0, 3, 1201)[None, :]
    grid = max(np.abs(mu * np.exp(-mu * t)).max(), np.abs(t * np.exp(-mu * t)).max())
    closed = lambda_lipschitz("exponential", {"mu": 1.0}, {"mu": (0.0, 3.0)}, (0.0, 1.0))
    assert closed == pytest.approx(grid, rel=1e-6)


def test_exponential_has_one_free_param():
    p = make_primitive("Lambda", {"family": "exponential", "mu": 0.5})
    assert not p.is_linear
    assert p.free_params() == ["mu"]


def test_unknown_family():
    with pytest.raises(UnknownFamily):
        make_primitive("Lambda", {"family": "cubic_spline"})


def test_bad_tier():
    with pytest.raises(TierUnsupported):
        make_primitive("M", {}, tier=3)


# ---- noise

def test_noiseless_passthrough():
    y = np.random.default_rng(0).random((8, 8))
    np.testing.assert_array_equal(detect(y, NoiseModel("gaussian", sigma=0.0)), y)
    np.testing.assert_array_equal(detect(y, NoiseModel("poisson", i0=float("inf"))), y)


def test_noise_deterministic():
    y = np.random.default_rng(0).random((8, 8))
    nm = NoiseModel("poisson_gaussian", sigma=2.0, i0=100.0, seed=7)
    np.testing.assert_array_equal(detect(y, nm), detect(y, nm))


def test_poisson_mean_oracle():
    y = np.full((64, 64), 0.5)
    out = detect(y, NoiseModel("poisson", i0=1e4, seed=3))
    assert abs(out.mean() - 0.5) < 3 * np.sqrt(0.5 / 1e4) / 64


def test_poisson_rejects_negative():
    with pytest.raises(NegativeIntensity):
        detect(-np.ones((4, 4)), NoiseModel("poisson", i0=10.0))


# ---- depth PSFs

def test_flat_phase_gives_delta():
    stack = generate_depth_psfs("diffuser", 1, {"phase_std": 0.0, "defocus_max": 0.0, "aperture": 2.0},
                                size=(32, 32))
    expect = np.zeros((32, 32))
    expect[16, 16] = 1.0
    np.testing.assert_allclose(stack[0], expect, atol=1e-12)


@pytest.mark.parametrize("encoder", ENCODERS)
def test_psfs_unit_sum(encoder):
    stack = generate_depth_psfs(encoder, 8)
    np.testing.assert_allclose(stack.sum(axis=(1, 2)), 1.0, atol=1e-9)
    assert np.all(stack >= 0)


def test_encoder_correlations():
    target = {"diffuser": 0.29, "multilens": 0.17, "metasurface": 0.46}
    rho = {e: psf_cross_correlation(generate_depth_psfs(e, 8)) for e in ENCODERS}
    for e, t in target.items():
        assert abs(rho[e] - t) <= 0.10, (e, rho[e])
    assert rho["multilens"] < rho["diffuser"] < rho["metasurface"]


def test_bad_encoder():
    with pytest.raises(BadEncoderParam):
        generate_depth_psfs("pinhole", 4)
    with pytest.raises(BadEncoderParam):
        generate_depth_psfs("diffuser", 0)


def test_psf_stack_file_round_trip(tmp_path):
    stack = generate_depth_psfs("metasurface", 3, size=(16, 16))
    path = tmp_path / "psf.bin"
    export_psf_stack(stack, path)
    np.testing.assert_array_equal(load_psf_stack(path), stack)
