import dataclasses
import math

import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given

from fpbc.compiler import compile_graph
from fpbc.errors import MissingScenarioData, NonNumericParam
from fpbc.graph import build_graph
from fpbc.protocol import (
    ProtocolConfig,
    ScenarioReport,
    apply_perturbation,
    eps_param_bound,
    error_budget,
    gain_factor,
    get_param,
    recovery_ratio,
    richardson,
    run_four_scenarios,
    sensitivity,
    set_param,
    triad_decomposition,
)
from fpbc.protocol.scenarios import search_window
from fpbc.registry import load_registry
from fpbc.specdoc import CalibrationEntry, parse_spec

from helpers import small_cassi

DEBLUR = """\
modality: deblur_toy
carrier: photon
geometry:
object: 32x32 real_nonneg
forward_model: Convolve(C, psf=gaussian, sigma=1.5) -> Detect(D)
noise: gaussian, sigma=0.01
target: psnr_db >= 10
system_elements:
  source: n_photon=1e6
  detector: qe=0.8
"""


@pytest.fixture(scope="module")
def reg():
    return load_registry()


@pytest.fixture(scope="module")
def ct(reg):
    doc = reg.get("ct").to_doc()
    return dataclasses.replace(doc, object=dataclasses.replace(doc.object, dims=(32, 32)))


@pytest.fixture(scope="module")
def ct_run(ct, reg):
    return run_four_scenarios(ct, {"angle_offset": 2.0}, seed=0, reg=reg, pcfg=ProtocolConfig(cal_outer=1))


# ---- parameters

def test_param_round_trip(ct):
    assert get_param(ct, "angle_offset") == 0.0
    assert get_param(set_param(ct, "angle_offset", 1.5), "angle_offset") == 1.5
    assert get_param(ct, "angle_offset") == 0.0  # original untouched


def test_apply_perturbation_adds(reg):
    doc = small_cassi(reg)
    out = apply_perturbation(doc, {"mask_shift": 0.6, "shift": 0.15})
    assert get_param(out, "mask_shift") == pytest.approx(0.6)
    assert get_param(out, "shift") == pytest.approx(get_param(doc, "shift") + 0.15)


def test_perturbed_shift_keeps_measurement_shape(reg):
    doc = small_cassi(reg)
    out = apply_perturbation(doc, {"shift": 0.5})
    assert build_graph(out, reg).measurement_dims == build_graph(doc, reg).measurement_dims


def test_unknown_param(ct):
    with pytest.raises(NonNumericParam):
        get_param(ct, "no_such_thing")


# ---- recovery ratio

def test_recovery_ratio_arithmetic():
    assert recovery_ratio(30.0, 20.0, 28.5) == pytest.approx(0.85)
    assert recovery_ratio(30.0, 29.6, 29.9) is None


@given(st.floats(-50, 50), st.floats(0.51, 40), st.floats(0, 1))
def test_recovery_ratio_interpolates(p2, gap, frac):
    assert recovery_ratio(p2 + gap, p2, p2 + frac * gap) == pytest.approx(frac, abs=1e-9)


# ---- four scenarios

def test_zero_perturbation_all_equal(ct, reg):
    r = run_four_scenarios(ct, {}, seed=0, reg=reg)
    assert r.psnr_i == r.psnr_ii == r.psnr_iii == r.psnr_iv
    assert r.rho_na and r.to_json()["rho_recov"] == "n/a"


def test_ct_angle_recovery(ct_run):
    assert ct_run.psnr_i - ct_run.psnr_ii >= 0.5
    assert -0.1 <= ct_run.rho_recov <= 1.1
    assert ct_run.rho_recov > 0.9
    assert ct_run.estimates["angle_offset"] == pytest.approx(2.0, abs=0.5)


def test_search_window(ct):
    lo, hi = search_window(ct, "angle_offset", 0.0, ProtocolConfig())
    assert (lo, hi) == (-2.0, 2.0)
    cal = dataclasses.replace(ct.system_elements, calibration=[CalibrationEntry("angle_offset", 3.0, 1.0)])
    lo, hi = search_window(dataclasses.replace(ct, system_elements=cal), "angle_offset", 10.0,
                           ProtocolConfig())
    assert (lo, hi) == (4.0, 16.0)
    lo, hi = search_window(ct, "angle_offset", 0.0, ProtocolConfig(search_halfwidth={"angle_offset": 0.5}))
    assert (lo, hi) == (-0.5, 0.5)


# ---- sensitivity

def test_inert_parameter_zero_sensitivity(ct, reg):
    doc = dataclasses.replace(ct, geometry={**(ct.geometry or {}), "label_offset": 1.0})
    assert sensitivity(doc, "label_offset", reg=reg) == 0.0


def test_mask_shift_hurts(reg):
    doc = small_cassi(reg)
    assert sensitivity(doc, "mask_shift", reg=reg, step=1.0) > 3.0


def test_halving_step_consistent():
    doc = parse_spec(DEBLUR)
    s_h = sensitivity(doc, "sigma", mode="design", step=0.1)
    s_h2 = sensitivity(doc, "sigma", mode="design", step=0.05)
    assert s_h < 0  # wider blur loses PSNR
    assert abs(s_h2 - s_h) < 0.2 * abs(s_h)
    assert abs(richardson(s_h, s_h2) - s_h2) < 0.2 * abs(s_h2)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 2))
def test_richardson_exact_on_cubic(a, b, x0):
    # central differences of a cubic carry an h^2 error only, which extrapolation removes
    f = lambda x: a * x ** 3 + b * x ** 2 + x
    cd = lambda h: (f(x0 + h) - f(x0 - h)) / (2 * h)
    assert richardson(cd(0.2), cd(0.1)) == pytest.approx(3 * a * x0 ** 2 + 2 * b * x0 + 1, abs=1e-9)


def test_sensitivity_rejects_bad_mode(ct, reg):
    with pytest.raises(ValueError):
        sensitivity(ct, "angle_offset", reg=reg, mode="sideways")


# ---- error budget

def test_eps_param_arithmetic():
    assert eps_param_bound(1.0, 1.0, 1.0, 2.0, 0.1) == pytest.approx(0.2, abs=1e-12)
    assert eps_param_bound(5.0, 1.0, 1.0, 2.0, 0.0) == 0.0


@given(st.floats(1e-6, 4), st.floats(1e-6, 4), st.floats(0, 20))
def test_gain_factor_matches_grid(alpha, lam, extra):
    lo = math.sqrt(alpha)
    hi = lo + extra
    s = np.linspace(lo, hi, 200001)
    grid = float(np.max(s / (s * s + lam)))
    assert gain_factor(alpha, lam, hi) == pytest.approx(grid, rel=1e-6)
    assert gain_factor(alpha, lam, hi) >= grid * (1 - 1e-12)


def test_zero_perturbation_budget(ct, reg):
    runs = run_four_scenarios(ct, {}, seed=0, reg=reg)
    rep = compile_graph(build_graph(ct, reg), reg, 0)
    b = error_budget(ct, rep, {}, runs)
    c = b.components
    assert b.eps_param == b.eps_spec == b.eps_trans == b.eps_unmod == 0.0
    assert b.eps_fpb <= 0.01 * 2 * c["B"] * c["sigma_max"] * c["gain"] * (1 + 1e-12)
    assert b.observed_error == b.eps_recon
    assert b.predicted_total == pytest.approx(b.eps_fpb + b.eps_recon)
    assert b.tau >= 1


def test_ct_budget_valid(ct, reg, ct_run):
    b = error_budget(ct, compile_graph(build_graph(ct, reg), reg, 0), {"angle_offset": 2.0}, ct_run)
    assert b.valid and 1 <= b.tau <= 10
    assert b.eps_param > 0
    assert sum(b.percentages().values()) == pytest.approx(100.0)


def test_budget_additivity(reg):
    # joint (a, b) vs a then b from the a-shifted nominal: ||A_ab x - A_00 x|| is at most the
    # sum of the two legs, and eps_param = 2 gain ||dA x*|| on each
    doc = small_cassi(reg)
    cfg = ProtocolConfig(run_iv=False, max_iters=30)
    xs = run_four_scenarios(doc, {}, seed=1, reg=reg, pcfg=cfg).x["star"]
    legs = [(doc, {"mask_shift": 0.5, "shift": 0.1}),
            (doc, {"mask_shift": 0.5}),
            (apply_perturbation(doc, {"mask_shift": 0.5}), {"shift": 0.1})]
    budgets = []
    for d, pert in legs:
        runs = run_four_scenarios(d, pert, seed=1, reg=reg, pcfg=cfg, x_star=xs)
        budgets.append(error_budget(d, None, pert, runs))
    dd = [b.components["directional_difference"] for b in budgets]
    assert dd[0] <= dd[1] + dd[2] + 1e-12
    for b in budgets:
        assert b.eps_param == pytest.approx(2 * b.components["gain"] * b.components["directional_difference"])


def test_budget_needs_scenarios(ct):
    empty = ScenarioReport(0, 0, 0, 0, None, {}, "grid_search")
    with pytest.raises(MissingScenarioData):
        error_budget(ct, None, {}, empty)


def test_triad_bound_holds(ct_run):
    tri = triad_decomposition(ct_run)
    assert tri.holds
    assert tri.mse_measured <= tri.bound
