"""Write src/fpbc/data/registry.json from the modality table below.

gamma_min starts at 1.0 and is filled in by derive_gamma_min.py.
"""
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "fpbc" / "data" / "registry.json"

SOURCE = {"xray": 1e4, "photon": 1e5, "spin": 1e5, "acoustic": 1e5, "electron": 1e4, "particle": 1e4}
DETECTOR = {"qe": 0.8, "read_noise_e": 2.0, "dark_current": 0.1, "exposure_s": 1.0}

RADON = "Radon(Pi)"
# modality, display name, carrier, tier range, status, dominant eps, chain, extra
TABLE = [
    ("ct", "CT", "xray", [1, 2], "FV", "param",
     f"{RADON} -> Detect(D)", {"aliases": ["computed_tomography"], "geometry": {"n_angles": 32},
                               "noise": {"kind": "poisson", "i0": 1e4}}),
    ("cbct", "CBCT", "xray", [2, 2], "T", "param",
     f"{RADON} -> Attenuate(Lambda, family=exponential, mu=0.05, t_max=40.0) -> Detect(D)",
     {"geometry": {"n_angles": 32}}),
    ("ct_polychromatic", "CT (polychromatic)", "xray", [2, 2], "T", "unmod",
     f"{RADON} -> BeamHardening(Lambda, family=polynomial, c1=1.0, c2=-0.01, t_max=40.0) -> Detect(D)",
     {"aliases": ["ct_poly"], "geometry": {"n_angles": 32}}),
    ("phase_contrast", "Phase contrast", "xray", [1, 2], "HO", "param",
     f"{RADON} -> Propagate(P, distance=5.0) -> Grating(M, mask=sinusoid, period=4.0) -> Detect(D, mode=intensity)",
     {"geometry": {"n_angles": 32}}),
    ("dexa", "DEXA", "xray", [2, 2], "T", "param",
     f"DualEnergy(M, mask=sinusoid, period=8.0) -> {RADON} -> Detect(D)", {"geometry": {"n_angles": 32}}),
    ("compton", "Compton", "xray", [2, 2], "HO", "unmod",
     "Collimator(M, mask=random, density=0.7) -> Scatter(R, length=1.0) -> Detect(D)", {}),
    ("cassi", "CASSI", "photon", [2, 2], "FV", "param",
     "Modulate(M, mask=random, density=0.5) -> Disperse(W, shift=1.0) -> Accumulate(Sigma) -> Detect(D)",
     {"object": [32, 32, 8]}),
    ("cacti", "CACTI", "photon", [2, 2], "FV", "param",
     "Shutter(M, mask=random, per_plane=true) -> Accumulate(Sigma) -> Detect(D)", {"object": [32, 32, 8]}),
    ("spc", "SPC", "photon", [2, 2], "FV", "param",
     "Patterns(M, mask=random, n_patterns=256) -> Accumulate(Sigma, axis=[0, 1]) -> Detect(D)",
     {"aliases": ["single_pixel_camera"]}),
    ("oct", "OCT", "photon", [1, 2], "HO", "param",
     "ReferenceArm(P, distance=2.0) + SampleArm(P, distance=6.0) -> Interfere(Sigma) -> Detect(D, mode=intensity)",
     {}),
    ("sim", "SIM", "photon", [1, 1], "HO", "param",
     "Illumination(M, mask=sinusoid, period=4.0) -> Blur(C, psf=gaussian, sigma=1.5) -> Detect(D)", {}),
    ("sted", "STED", "photon", [1, 1], "T", "param",
     "Depletion(M, mask=sinusoid, period=3.0) -> Blur(C, psf=gaussian, sigma=1.0) -> Detect(D)", {}),
    ("palm_storm", "PALM/STORM", "photon", [1, 1], "T", "param",
     "Blinking(M, mask=random, density=0.3) -> Blur(C, psf=gaussian, sigma=1.2) -> Detect(D)",
     {"aliases": ["palm", "storm"]}),
    ("tirf", "TIRF", "photon", [1, 1], "T", "param",
     "Evanescent(P, distance=0.5) -> Blur(C, psf=gaussian, sigma=1.2) -> Detect(D, mode=intensity)", {}),
    ("ptychography", "Ptychography", "photon", [1, 2], "FV", "param",
     "Probe(M, mask=random, density=0.6) -> Propagate(P, distance=20.0) -> Detect(D, mode=intensity)",
     {"value_domain": "complex"}),
    ("lensless", "Lensless", "photon", [1, 1], "FV", "param",
     "Convolve(C, psf=caustic) -> Detect(D)", {}),
    ("lensless_3d", "3D Lensless", "photon", [1, 2], "FV", "param",
     "Convolve(Phi_z, psf=diffuser(z)) -> Accumulate(Sigma) -> Detect(D)",
     {"object": [32, 32, 4], "aliases": ["3d_lensless"]}),
    ("temporal_lensless", "Temporal-coded lensless", "photon", [1, 2], "FV", "param",
     "Shutter(M, mask=random, per_plane=true) -> Convolve(C, psf=caustic) -> Accumulate(Sigma) -> Detect(D)",
     {"object": [32, 32, 4]}),
    ("spectral_lensless", "Spectral lensless", "photon", [1, 2], "FV", "param",
     "Modulate(M, mask=random) -> Disperse(W_lambda, shift=1.0) -> Convolve(C, psf=caustic) -> Accumulate(Sigma) -> Detect(D)",
     {"object": [32, 32, 4]}),
    ("dot", "DOT", "photon", [2, 3], "HO", "unmod",
     "Source(M, mask=random, density=0.5) -> Scatter(R, length=1.5, tier=2) -> Propagate(P, distance=3.0, tier=2) "
     "-> Scatter(R, length=1.5, tier=2) -> Detect(D, mode=intensity)",
     {"aliases": ["diffuse_optical_tomography"]}),
    ("ghost_imaging", "Ghost imaging", "photon", [2, 2], "HO", "param",
     "Speckle(M, mask=random, n_patterns=128) -> Bucket(Sigma, axis=[0, 1]) -> Detect(D)", {}),
    ("thz_tds", "THz-TDS", "photon", [1, 1], "HO", "param",
     "Pulse(C, psf=gaussian, sigma=2.0) -> Detect(D)", {}),
    ("light_field", "Light field", "photon", [1, 1], "T", "param",
     "Microlens(M, mask=random, density=0.8) -> Blur(C, psf=gaussian, sigma=1.0) -> Sample(S, fraction=0.5) -> Detect(D)",
     {}),
    ("raman", "Raman", "photon", [2, 2], "HO", "unmod",
     "Excitation(M, mask=random, density=0.7) -> Scatter(R, length=1.0) -> Detect(D)", {}),
    ("fluorescence", "Fluorescence", "photon", [2, 2], "HO", "unmod",
     "Excitation(M, mask=sinusoid, period=6.0) -> Scatter(R, length=1.0) -> Detect(D)", {}),
    ("fluorescence_sat", "Fluorescence (sat.)", "photon", [2, 2], "T", "unmod",
     "Excitation(M, mask=sinusoid, period=6.0) -> Scatter(R, length=1.0) -> Saturate(Lambda, family=saturation, s=2.0) -> Detect(D)",
     {}),
    ("brillouin", "Brillouin", "photon", [2, 2], "HO", "unmod",
     "Excitation(M, mask=random, density=0.7) -> Scatter(R, length=0.8) -> Detect(D)", {}),
    ("mri", "MRI", "spin", [1, 2], "FV", "param",
     "Coils(M, mask=coil) -> Fourier(F) -> Sample(S, pattern=lines) -> Detect(D)",
     {"aliases": ["magnetic_resonance_imaging"], "geometry": {"acceleration": 4}}),
    ("mri_phase", "MRI (phase)", "spin", [2, 2], "T", "unmod",
     "Coils(M, mask=coil) -> Fourier(F) -> Sample(S, pattern=lines) -> PhaseWrap(Lambda, family=phase_wrap, k=1.0) -> Detect(D)",
     {"geometry": {"acceleration": 4}}),
    ("ultrasound", "Ultrasound", "acoustic", [2, 2], "FV", "param",
     "Transmit(P, distance=4.0) -> Scatter(R, length=1.0) -> Receive(P, distance=4.0) -> Detect(D)",
     {"aliases": ["us"]}),
    ("doppler_us", "Doppler US", "acoustic", [2, 2], "T", "unmod",
     "Transmit(P, distance=4.0) -> Detect(D, mode=intensity)", {"aliases": ["doppler"]}),
    ("elastography", "Elastography", "acoustic", [2, 2], "T", "unmod",
     "Push(P, distance=3.0) -> Track(P, distance=3.0) -> Detect(D)", {}),
    ("photoacoustic", "Photoacoustic", "acoustic", [2, 2], "HO", "param",
     "Illumination(M, mask=random, density=0.7) -> Propagate(P, distance=4.0) -> Detect(D)", {}),
    ("sem", "SEM", "electron", [2, 2], "T", "param",
     "Raster(M, mask=random, density=0.5) -> Detect(D)", {}),
    ("tem", "TEM", "electron", [2, 2], "T", "param",
     "Aperture(M, mask=ones) -> Blur(C, psf=gaussian, sigma=1.0) -> Detect(D)", {}),
    ("e-ptychography", "E-ptychography", "electron", [2, 2], "FV", "param",
     "Probe(M, mask=random, density=0.6) -> Propagate(P, distance=20.0) -> Detect(D, mode=intensity)",
     {"aliases": ["electron_ptychography"], "value_domain": "complex"}),
    ("pet", "PET", "particle", [2, 2], "T", "unmod",
     f"{RADON} -> Detect(D)", {"geometry": {"n_angles": 32}, "noise": {"kind": "poisson", "i0": 1e3}}),
    ("spect", "SPECT", "particle", [2, 2], "T", "unmod",
     f"Collimator(M, mask=sinusoid, period=8.0) -> {RADON} -> Detect(D)", {"geometry": {"n_angles": 32}}),
    ("muon_tomography", "Muon tomography", "particle", [2, 2], "T", "unmod",
     f"Scatter(R, length=1.0) -> {RADON} -> Detect(D)", {"aliases": ["muon"], "geometry": {"n_angles": 32}}),
    ("proton_therapy", "Proton therapy", "particle", [2, 2], "T", "unmod",
     f"Stopping(Lambda, family=saturation, s=2.0) -> {RADON} -> Detect(D)",
     {"aliases": ["proton"], "geometry": {"n_angles": 32}}),
]


def entry(row, old=None):
    mod, disp, car, tier, status, dom, chain, extra = row
    dims = extra.get("object", [32, 32])
    e = {
        "modality": mod, "display_name": disp, "aliases": extra.get("aliases", []),
        "carrier": car, "tier": tier, "status": status, "chain": chain,
        "gamma_min": 1.0, "gamma_min_provenance": "derived", "dominant_eps": dom,
        "sigma_d_merge": chain.replace(" ", "").endswith("->Accumulate(Sigma)->Detect(D)")
        or "(Sigma," in chain.split("->")[-2] if "->" in chain else False,
        "object": {"dims": dims, "value_domain": extra.get("value_domain", "real_nonneg"),
                   "constraints": []},
        "geometry": extra.get("geometry", {}),
        "noise": extra.get("noise", {"kind": "gaussian", "sigma": 0.01}),
        "defaults": {"source": {"n_photon": SOURCE[car]}, "optics": {}, "detector": dict(DETECTOR),
                     "calibration": []},
    }
    if old and mod in old:
        e["gamma_min"] = old[mod]["gamma_min"]
        e["gamma_min_provenance"] = old[mod].get("gamma_min_provenance", "derived")
    return e


def main():
    old = {}
    if OUT.exists():
        old = {e["modality"]: e for e in json.loads(OUT.read_text())}
    data = [entry(r, old) for r in TABLE]
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote {len(data)} entries to {OUT}")


if __name__ == "__main__":
    main()
