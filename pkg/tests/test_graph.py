import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given, settings

from fpbc.compiler import adjoint_statistic
from fpbc.errors import BoundsExceeded
from fpbc.graph import (
    DENSE_LIMIT,
    build_graph,
    canonical_chain,
    dense_matrix,
    downscale_doc,
    graph_from_chain,
    kahn_order,
    spectral_estimate,
    spectral_from_matrix,
)
from fpbc.primitives import apply, make_primitive
from fpbc.registry import load_registry

from helpers import MASK, TAIL, small_cassi, wide_chain, with_chain

CASSI = f"{MASK} -> {TAIL}"
STREAK = ("Modulate(M, mask=random, per_plane=true) -> Disperse(W_t, axis=4, shift_axis=0) -> "
          "Convolve(Phi_z, psf=diffuser(z), axis=2) -> Accumulate(Sigma) -> Detect(D)")


@pytest.fixture(scope="module")
def reg():
    return load_registry()


def shear_oracle(x, shift=1):
    # shift-and-accumulate by hand: band k lands at columns k*shift ... k*shift+w-1
    h, w, L = x.shape
    out = np.zeros((h, w + (L - 1) * shift))
    for k in range(L):
        out[:, k * shift:k * shift + w] += x[:, :, k]
    return out


def test_cassi_shape_and_shear():
    g = graph_from_chain("Disperse(W, shift=1.0) -> Accumulate(Sigma) -> Detect(D)", (4, 4, 3))
    assert g.measurement_dims == (4, 6)
    x = np.random.default_rng(0).random((4, 4, 3))
    np.testing.assert_allclose(g.forward(x), shear_oracle(x), atol=1e-12)


def test_cassi_doc_four_nodes(reg):
    doc = small_cassi(reg, (32, 32, 8))
    g = build_graph(doc, reg)
    assert len(g.nodes) == 4
    assert g.measurement_dims == (32, 39)


def test_ct_measurement_dims(reg):
    doc = reg.get("ct").to_doc()
    g = build_graph(doc, reg)
    n_angles = doc.geometry.get("n_angles") or g.nodes[0].primitive.params["n_angles"]
    assert g.measurement_dims == (n_angles, doc.object.dims[1])


def test_21_nodes_exceeds_bounds(reg):
    doc = with_chain(small_cassi(reg), wide_chain(18))
    with pytest.raises(BoundsExceeded):
        build_graph(doc, reg, enforce_bounds=True)


def test_identity_chain():
    g = graph_from_chain("Modulate(M, mask=ones) -> Detect(D, gain=1.0)", (8, 8))
    x = np.random.default_rng(1).random((8, 8))
    np.testing.assert_array_equal(g.forward(x), x)


def test_streak_matches_direct_composition():
    g = graph_from_chain(STREAK, (16, 16, 2, 2, 2))
    x = np.random.default_rng(2).random((16, 16, 2, 2, 2))
    y = x
    for nd in g.nodes:
        y = apply(nd.primitive, y)
    np.testing.assert_allclose(g.forward(x), y, atol=1e-12)
    assert canonical_chain(g) == "M→W_t→Φ_z→Σ→D"


@pytest.mark.parametrize("chain,dims", [(CASSI, (8, 8, 4)), ("Radon(Pi, n_angles=6) -> Detect(D)", (8, 8)),
                                        (STREAK, (8, 8, 2, 2, 2))])
def test_zero_in_zero_out(chain, dims):
    g = graph_from_chain(chain, dims)
    assert not np.any(g.forward(np.zeros(dims)))


def test_single_mask_adjoint():
    g = graph_from_chain("Modulate(M, mask=random)", (8, 8))
    y = np.random.default_rng(3).random((8, 8))
    np.testing.assert_array_equal(g.adjoint(y), g.nodes[0].primitive.mask((8, 8)) * y)


def test_ct_adjoint_is_transpose():
    g = graph_from_chain("Radon(Pi, n_angles=10) -> Detect(D)", (8, 8))
    A = dense_matrix(g)
    y = np.random.default_rng(4).random(g.measurement_dims)
    np.testing.assert_allclose(g.adjoint(y).ravel(), A.T @ y.ravel(), atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(chain=st.sampled_from([CASSI, "Convolve(C, psf=gaussian) -> Sample(S, fraction=0.5) -> Detect(D)",
                              "Fourier(F) -> Sample(S, pattern=lines, acceleration=2) -> Detect(D)"]),
       h=st.integers(8, 24), seed=st.integers(0, 10 ** 6))
def test_random_chains_pass_dot_test(chain, h, seed):
    dims = (h, h, 3) if "Disperse" in chain else (h, h)
    g = graph_from_chain(chain, dims)
    assert adjoint_statistic(g, seed) < 1e-4


def test_canonical_names(reg):
    assert canonical_chain(build_graph(small_cassi(reg), reg)) == "M→W→Σ→D"
    assert canonical_chain(graph_from_chain("Detect(D)", (4, 4))) == "D"


def test_unitary_kappa():
    est = spectral_estimate(graph_from_chain("Fourier(F) -> Detect(D)", (8, 8)))
    assert est.condition_number == pytest.approx(1.0, abs=1e-6)


def test_diagonal_kappa():
    g = graph_from_chain("Modulate(M, mask=ones) -> Detect(D)", (8, 8))
    m = np.where(np.arange(64).reshape(8, 8) % 2, 0.5, 1.0)
    g.nodes[0].primitive = make_primitive("M", {"mask": m}, in_shape=(8, 8))
    assert spectral_estimate(g).condition_number == pytest.approx(2.0, abs=1e-12)


def test_restricted_kappa_ignores_null_space():
    A = np.diag([4.0, 2.0, 0.0, 0.0])
    est = spectral_from_matrix(A)
    assert est.rank == 2 and est.condition_number == pytest.approx(2.0)


def test_power_iteration_agrees_with_svd():
    g = graph_from_chain("Convolve(C, psf=caustic) -> Detect(D)", (16, 16))
    a = spectral_estimate(g, "dense_svd")
    b = spectral_estimate(g, "power_iteration")
    assert b.sigma_max == pytest.approx(a.sigma_max, rel=1e-4)


def test_kahn_order_reports_residual():
    order, residual = kahn_order(["a", "b", "c"], [("a", "b"), ("b", "a"), ("b", "c")])
    assert order == [] and set(residual) == {"a", "b", "c"}
    order, residual = kahn_order(["a", "b"], [("a", "b")])
    assert order == ["a", "b"] and not residual


def test_downscale_respects_limit(reg):
    doc = small_cassi(reg, (128, 128, 8))
    small = downscale_doc(doc, DENSE_LIMIT)
    assert int(np.prod(small.object.dims)) <= DENSE_LIMIT
    assert len(small.object.dims) == 3
