"""Numerical PSNR sensitivity of a design to one parameter."""
from __future__ import annotations

from ..graph import build_graph
from ..recon import psnr, reconstruct
from .params import get_param, set_param
from .scenarios import ProtocolConfig, simulate, solver_config


def sensitivity_step(value, rel_step=0.01, abs_step=0.1):
    return abs(value) * rel_step if value != 0 else abs_step


def _psnr_at(doc, data_value, model_value, name, seed, reg, pcfg, phantom):
    true_doc = set_param(doc, name, data_value)
    model_doc = set_param(doc, name, model_value)
    sim = simulate(true_doc, seed, phantom, reg=reg)
    g = build_graph(model_doc, reg, enforce_bounds=False)
    x = reconstruct(g, sim.y, solver_config(doc, pcfg, seed=seed)).x_hat
    return psnr(x, sim.x_star)


def sensitivity(doc, param_name, seed=0, reg=None, mode="mismatch", step=None,
                rel_step=0.01, abs_step=0.1, pcfg: ProtocolConfig | None = None,
                phantom=None) -> float:
    """dB of reconstructed PSNR per unit of ``param_name``.

    mismatch (default): the system drifts to theta +- h while the model stays
        at theta; s = (2 P(0) - P(+h) - P(-h)) / (2h), the mean one-sided loss
        slope (positive when mismatch hurts).
    design: system and model move together; s = (P(+h) - P(-h)) / (2h).

    h is 1% of the parameter value (``abs_step`` when the value is 0) unless
    ``step`` is given. Phantom and noise realisation are fixed by ``seed``.
    """
    pcfg = pcfg or ProtocolConfig()
    v0 = get_param(doc, param_name)
    h = float(step) if step is not None else sensitivity_step(v0, rel_step, abs_step)
    if mode == "design":
        p_plus = _psnr_at(doc, v0 + h, v0 + h, param_name, seed, reg, pcfg, phantom)
        p_minus = _psnr_at(doc, v0 - h, v0 - h, param_name, seed, reg, pcfg, phantom)
        return (p_plus - p_minus) / (2 * h)
    if mode != "mismatch":
        raise ValueError(f"mode must be 'mismatch' or 'design', got {mode!r}")
    p0 = _psnr_at(doc, v0, v0, param_name, seed, reg, pcfg, phantom)
    p_plus = _psnr_at(doc, v0 + h, v0, param_name, seed, reg, pcfg, phantom)
    p_minus = _psnr_at(doc, v0 - h, v0, param_name, seed, reg, pcfg, phantom)
    return (2 * p0 - p_plus - p_minus) / (2 * h)


def richardson(s_h, s_h2, order=2):
    """Richardson extrapolation of a central difference from steps h and h/2."""
    k = 2 ** order
    return (k * s_h2 - s_h) / (k - 1)
