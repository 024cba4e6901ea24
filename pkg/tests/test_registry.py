import json

import pytest

from fpbc.errors import FileUnreadable, MalformedEntry, UnknownModality
from fpbc.compiler import check_c1_dag, check_c3_bounds, check_c4_nonlinear, check_c5_adjoint
from fpbc.graph import build_graph
from fpbc.registry import (
    MIN_ENTRIES,
    Registry,
    _parse_entry,
    default_registry_path,
    entry_to_json,
    load_registry,
    lookup_modality,
    match_chain,
)
from fpbc.specdoc import format_chain, parse_chain


@pytest.fixture(scope="module")
def reg():
    return load_registry()


def symbols(chain):
    return [n.kind for n in chain.nodes]


def test_bundled_size(reg):
    assert len(reg) >= MIN_ENTRIES


def test_cassi_and_mri_chains(reg):
    assert symbols(reg.get("cassi").canonical_chain) == ["M", "W", "Sigma", "D"]
    assert symbols(reg.get("mri").canonical_chain) == ["M", "F", "S", "D"]


def test_lookup_case_fold(reg):
    assert lookup_modality("CT", reg).modality == "ct"


def test_lookup_eptychography(reg):
    assert symbols(lookup_modality("e-ptychography", reg).canonical_chain) == ["M", "P", "D"]


def test_lookup_miss(reg):
    with pytest.raises(UnknownModality):
        lookup_modality("holography2099", reg)


def test_exact_match_ct(reg):
    m = match_chain(parse_chain("Radon(Pi) -> Detect(D)"), reg)
    assert m.kind == "exact" and m.matched_entry.modality == "ct"


def test_equivalent_via_sigma_merge(reg):
    raw = entry_to_json(reg.get("cassi"))
    raw.update(modality="hypo", aliases=[], chain="Modulate(M) -> Detect(D)")
    tiny = Registry([_parse_entry(0, raw)])
    m = match_chain(parse_chain("Modulate(M) -> Accumulate(Sigma) -> Detect(D)"), tiny)
    assert m.kind == "equivalent" and m.matched_entry.modality == "hypo"


def test_no_match(reg):
    chain = parse_chain("Nonlinear(Lambda, family=exponential) -> Nonlinear(Lambda, family=exponential)"
                        " -> Nonlinear(Lambda, family=exponential) -> Detect(D)")
    assert match_chain(chain, reg).kind == "none"


def test_missing_chain_is_malformed(tmp_path, reg):
    raw = entry_to_json(reg.get("ct"))
    del raw["chain"]
    p = tmp_path / "reg.json"
    p.write_text(json.dumps([raw]))
    with pytest.raises(MalformedEntry):
        load_registry(p)


def test_unreadable(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(FileUnreadable):
        load_registry(p)


def test_env_override(tmp_path, monkeypatch, reg):
    p = tmp_path / "one.json"
    p.write_text(json.dumps([entry_to_json(reg.get("ct"))]))
    monkeypatch.setenv("FPBC_REGISTRY", str(p))
    assert default_registry_path() == p
    assert [e.modality for e in load_registry()] == ["ct"]


def test_json_round_trip(tmp_path, reg):
    p = tmp_path / "copy.json"
    p.write_text(json.dumps([entry_to_json(e) for e in reg]), encoding="utf-8")
    again = load_registry(p)
    for a, b in zip(reg, again):
        assert a.modality == b.modality
        assert format_chain(a.canonical_chain) == format_chain(b.canonical_chain)
        assert a.gamma_min == b.gamma_min


def test_entry_invariants(reg):
    for e in reg:
        assert 0 < e.gamma_min <= 1
        assert e.canonical_chain.nodes[-1].kind == "D"
        assert e.dominant_eps in ("param", "unmod")
        lo, hi = e.tier_range
        assert 0 <= lo <= hi <= 3


def test_every_entry_compiles_c1_to_c4(reg):
    for e in reg:
        g = build_graph(e.to_doc(), reg, enforce_bounds=False)
        assert check_c1_dag(g).passed, e.modality
        assert check_c3_bounds(g).passed, e.modality
        assert check_c4_nonlinear(g)[0].passed, e.modality


def test_every_entry_passes_adjoint_check(reg):
    for e in reg:
        g = build_graph(e.to_doc(), reg, enforce_bounds=False)
        assert check_c5_adjoint(g).passed, e.modality
