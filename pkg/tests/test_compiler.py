import pytest

from fpbc.compiler import (
    C5_TOL,
    adjoint_statistic,
    check_c1_dag,
    check_c3_bounds,
    check_c4_nonlinear,
    check_c6_representation,
    compile_graph,
    compile_spec,
)
from fpbc.graph import build_graph, graph_from_chain
from fpbc.registry import load_registry

from helpers import CHECK_IDS, MASK, TAIL, defect_fixtures, pattern, run_defect, small_cassi, wide_chain, with_chain


@pytest.fixture(scope="module")
def reg():
    return load_registry()


@pytest.fixture(scope="module")
def defects(reg):
    return defect_fixtures(reg)


@pytest.mark.parametrize("cid", CHECK_IDS)
def test_single_defect_flips_only_its_check(defects, cid):
    rep = run_defect(defects[cid])
    pat = pattern(rep)
    assert pat[cid] is False
    assert [k for k, v in pat.items() if v is False] == [cid]
    assert rep.overall is (cid == "C2")  # C2 mismatch alone is non-fatal


def test_scaled_adjoint_statistic(defects):
    rep = run_defect(defects["C5"])
    # |<Ax,y> - <x,A^T y>/1.01| / |<Ax,y>| = 1 - 1/1.01
    assert rep.check("C5").statistic == pytest.approx(1 - 1 / 1.01, rel=1e-9)


def test_shifted_mask_reference(defects):
    assert run_defect(defects["C6"]).check("C6").statistic > 0.01


def test_clean_cassi_passes(reg):
    doc = small_cassi(reg)
    ref = build_graph(doc, reg, enforce_bounds=False)
    rep = compile_spec(doc, reg, reference=ref)
    assert rep.overall and all(c.passed for c in rep.checks)
    assert rep.check("C6").statistic == 0.0


def test_c6_skipped_without_reference(reg):
    rep = compile_spec(small_cassi(reg), reg)
    assert rep.check("C6").skipped and rep.overall
    assert any("C6 skipped" in n for n in rep.notes)


def test_ct_compiles(reg):
    rep = compile_spec(reg.get("ct").to_doc(), reg)
    assert rep.overall and rep.chain_match.kind == "exact"


def test_cycle_detail_names_residual():
    res = check_c1_dag((["A", "B"], [("A", "B"), ("B", "A")]))
    assert not res.passed and "A" in res.detail and "B" in res.detail


def test_two_nodes_pass():
    assert check_c1_dag(graph_from_chain("Fourier(F) -> Detect(D)", (8, 8))).passed


def test_twenty_nodes_boundary():
    g = graph_from_chain(wide_chain(17), (8, 8, 2))
    assert len(g.nodes) == 20
    assert check_c1_dag(g).statistic == 20
    assert check_c3_bounds(g).passed


def test_depth_eleven_fails():
    g = graph_from_chain(" -> ".join([MASK] * 8 + [TAIL]), (8, 8, 2))
    assert len(g.nodes) == 11 and g.depth() == 11
    assert not check_c3_bounds(g).passed


def test_five_nodes_pass_c3():
    g = graph_from_chain(f"{MASK} -> Convolve(C, psf=gaussian) -> {TAIL}", (8, 8, 2))
    assert check_c3_bounds(g).passed


def test_exponential_lambda_in_range():
    g = graph_from_chain("Nonlinear(Lambda, family=exponential, mu=0.5, mu_max=10) -> Detect(D)", (8, 8))
    res, la = check_c4_nonlinear(g)
    assert res.passed and la > 0


def test_out_of_range_lambda():
    g = graph_from_chain("Nonlinear(Lambda, family=exponential, mu=12.0, mu_max=10) -> Detect(D)", (8, 8))
    assert not check_c4_nonlinear(g)[0].passed


def test_linear_chain_lipschitz_product():
    g = graph_from_chain("Modulate(M, mask=random) -> Fourier(F) -> Detect(D, gain=2.0)", (8, 8))
    res, la = check_c4_nonlinear(g)
    assert res.passed and la == pytest.approx(2.0)


def test_adjoint_statistic_reproducible(reg):
    g = build_graph(small_cassi(reg), reg)
    assert adjoint_statistic(g, seed=5) == adjoint_statistic(g, seed=5) < C5_TOL


def test_c6_same_graph_zero(reg):
    g = build_graph(small_cassi(reg), reg)
    res = check_c6_representation(g, build_graph(small_cassi(reg), reg))
    assert res.passed and res.statistic == 0.0


def test_c3_failure_isolated_via_spec(reg):
    doc = with_chain(small_cassi(reg), wide_chain(18))
    rep = compile_spec(doc, reg)
    assert rep.check("C3").passed is False and not rep.overall


def test_report_json_shape(reg):
    js = compile_graph(build_graph(small_cassi(reg), reg), reg).to_json()
    assert [c["id"] for c in js["checks"]] == list(CHECK_IDS)
    assert js["eps_spec_zero"] is True and js["eps_trans_zero"] is True
