import dataclasses

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from fpbc.errors import ChainParseError, DuplicateField, MissingField, SpecParseError, UnknownCarrier
from fpbc.specdoc import (
    ObjectSpec,
    parse_chain,
    parse_spec,
    serialize_spec,
    validate_schema,
)

CT_TEXT = """\
modality: computed_tomography
carrier: xray
geometry: parallel_beam, n_angles=128
object: 128x128 real_nonneg
forward_model: Radon(Pi) -> Detect(D, mode=intensity)
noise: poisson, i0=10000.0
target: psnr_db >= 30.0
system_elements:
  source: n_photon=10000.0
  detector: qe=0.8, read_noise_e=5
  calibration: angle_offset=0.1@2.0
"""

CASSI_TEXT = """\
modality: cassi
carrier: photon
geometry: snapshot
object: 32x32x8 real_nonneg
forward_model: Modulate(M) -> Disperse(W) -> Accumulate(Sigma) -> Detect(D)
noise: gaussian, sigma=0.01
target: psnr_db >= 25
system_elements:
  source: n_photon=1e5
  detector: qe=0.8
"""

MRI_TEXT = """\
modality: mri
carrier: spin
geometry: cartesian
object: 64x64 complex
forward_model: Modulate(M, mask=coil) -> Fourier(F) -> Sample(S, pattern=lines, acceleration=4) -> Detect(D)
noise: gaussian, sigma=0.01
target: psnr_db >= 30
system_elements:
  source: n_photon=1e6
  detector: qe=1.0
"""


def kinds(doc):
    return [n.kind for n in doc.forward_model.nodes]


def test_parse_ct_block():
    doc = parse_spec(CT_TEXT)
    assert doc.modality == "computed_tomography"
    assert doc.carrier == "xray"
    assert kinds(doc) == ["Pi", "D"]
    assert doc.noise.kind == "poisson" and doc.noise.i0 == 1e4
    assert doc.target.metric == "psnr_db" and doc.target.threshold == 30.0
    assert doc.geometry["n_angles"] == 128


def test_missing_noise_line():
    text = "\n".join(l for l in CT_TEXT.splitlines() if not l.startswith("noise:"))
    with pytest.raises(MissingField) as e:
        parse_spec(text)
    assert "noise" in str(e.value)


def test_duplicate_field():
    with pytest.raises(DuplicateField):
        parse_spec(CT_TEXT + "modality: again\n")


def test_unknown_carrier():
    with pytest.raises(UnknownCarrier):
        parse_spec(CT_TEXT.replace("carrier: xray", "carrier: neutrino"))


def test_depth_psf_chain():
    text = CASSI_TEXT.replace("32x32x8", "128x128x8").replace(
        "Modulate(M) -> Disperse(W) -> Accumulate(Sigma) -> Detect(D)",
        "Convolve_z(C, psf=diffuser(z)) -> Accumulate(Sigma) -> Detect(D)")
    doc = parse_spec(text)
    assert kinds(doc) == ["C", "Sigma", "D"]
    assert doc.object.dims == (128, 128, 8)
    assert doc.forward_model.nodes[0].params["psf"] == "diffuser(z)"


def test_validate_clean_mri():
    assert validate_schema(parse_spec(MRI_TEXT)) == []


def test_validate_bad_qe():
    doc = parse_spec(CT_TEXT.replace("qe=0.8", "qe=1.3"))
    issues = validate_schema(doc)
    assert [(i.field, i.rule) for i in issues] == [("detector.qe", "fraction in (0,1]")]


def test_validate_chain_must_end_in_detect():
    doc = parse_spec(CT_TEXT.replace("Radon(Pi) -> Detect(D, mode=intensity)", "Radon(Pi)"))
    issues = validate_schema(doc)
    assert any(i.field == "forward_model" and "Detect" in i.rule for i in issues)


@pytest.mark.parametrize("text", [CT_TEXT, CASSI_TEXT, MRI_TEXT])
def test_round_trip(text):
    doc = parse_spec(text)
    assert parse_spec(serialize_spec(doc)) == doc


def test_unicode_modality_preserved():
    doc = parse_spec(CT_TEXT.replace("computed_tomography", "tomografía_λ"))
    again = parse_spec(serialize_spec(doc))
    assert again.modality == "tomografía_λ"
    assert again.modality.encode() == "tomografía_λ".encode()


def test_cassi_serialized_chain():
    text = serialize_spec(parse_spec(CASSI_TEXT))
    assert "forward_model: Modulate(M) -> Disperse(W) -> Accumulate(Sigma) -> Detect(D)" in text


def test_unicode_arrow_and_symbols():
    a = parse_chain("Radon(Π) → Detect(D)")
    b = parse_chain("Radon(Pi) -> Detect(D)")
    assert [n.kind for n in a.nodes] == [n.kind for n in b.nodes]


@pytest.mark.parametrize("bad", ["", "Radon(Pi", "Radon Pi", "Radon(Foo) -> Detect(D)",
                                 "Radon(Pi) Detect(D)", "Radon(Pi, k) -> Detect(D)"])
def test_bad_chains(bad):
    with pytest.raises(ChainParseError):
        parse_chain(bad)


# ---- property-based round trip over generated documents

names = st.text(alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd")), min_size=1, max_size=12)
numbers = st.one_of(st.integers(-1000, 1000), st.floats(-1e6, 1e6, allow_nan=False).map(lambda v: round(v, 6)))
chains = st.sampled_from([
    "Radon(Pi) -> Detect(D)",
    "Modulate(M, mask=random, density=0.5) -> Disperse(W, shift=1.0) -> Accumulate(Sigma) -> Detect(D)",
    "Convolve(Phi_z, psf=diffuser(z)) -> Accumulate(Sigma) -> Detect(D)",
    "Fourier(F) -> Sample(S, pattern=lines, acceleration=2) -> Detect(D)",
])


@st.composite
def documents(draw):
    doc = parse_spec(CASSI_TEXT)
    dims = tuple(draw(st.lists(st.integers(2, 64), min_size=2, max_size=4)))
    geometry = draw(st.dictionaries(st.sampled_from(["n_angles", "pitch", "distance"]), numbers, max_size=3))
    return dataclasses.replace(
        doc,
        modality=draw(names),
        carrier=draw(st.sampled_from(["photon", "xray", "electron", "acoustic", "spin", "particle"])),
        object=ObjectSpec(dims, draw(st.sampled_from(["real_nonneg", "real", "complex"]))),
        geometry=geometry,
        forward_model=parse_chain(draw(chains)),
        target=dataclasses.replace(doc.target, threshold=draw(st.floats(0, 60).map(lambda v: round(v, 3)))),
    )


@settings(max_examples=60, deadline=None)
@given(documents())
def test_round_trip_property(doc):
    assert parse_spec(serialize_spec(doc)) == doc


@settings(max_examples=100, deadline=None)
@given(st.text(max_size=200))
def test_parser_only_raises_parse_errors(text):
    try:
        parse_spec(text)
    except SpecParseError:
        pass

