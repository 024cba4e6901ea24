"""Error budget (five design terms plus reconstruction error) and the triad decomposition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..compiler import CompileReport, _num
from ..errors import MissingScenarioData
from ..graph import OperatorGraph, linearization_point, spectral_estimate
from .scenarios import ScenarioReport

C6_SKIPPED_BOUND = 0.01
TERMS = ("eps_fpb", "eps_spec", "eps_trans", "eps_param", "eps_unmod")


def gain_factor(alpha, lam, sigma_max=None):
    """max sigma / (sigma^2 + lam) over sigma in [sqrt(alpha), sigma_max].

    This is the norm of the regularized pseudo-inverse (A^T A + lam)^-1 A^T.
    With sigma_max = sqrt(alpha) it reduces to sqrt(alpha) / (alpha + lam).
    """
    lo = math.sqrt(max(alpha, 0.0))
    hi = lo if sigma_max is None else max(float(sigma_max), lo)
    if lam <= 0:
        return math.inf if lo == 0 else 1.0 / lo
    s_star = math.sqrt(lam)
    s = min(max(s_star, lo), hi)
    return s / (s * s + lam)


def eps_param_bound(B, alpha, lam, L_A, dtheta_norm, sigma_max=None):
    """2 B L_A ||dtheta|| * max sigma/(sigma^2 + lam).

    ``L_A * ||dtheta||`` bounds the operator change ||A_true - A_nominal||.
    For a unit-norm operator (alpha = 1, sigma_max = 1) this is 2B L_A ||dtheta|| / (1 + lam).
    """
    if dtheta_norm == 0:
        return 0.0
    return 2.0 * B * L_A * dtheta_norm * gain_factor(alpha, lam, sigma_max)


def operator_difference_norm(g1: OperatorGraph, g2: OperatorGraph, iters=60, seed=0):
    """||A1 - A2||_op by power iteration (Jacobians at the default point if nonlinear)."""
    rng = np.random.default_rng(seed)
    cplx = g1.value_domain == "complex"
    x0 = None if (g1.is_linear and g2.is_linear) else linearization_point(g1)

    def fwd(g, v):
        return g.forward(v) if x0 is None else g.jvp(x0, v)

    def adj(g, r):
        return g.adjoint(r, x0)

    v = rng.standard_normal(g1.object_dims)
    if cplx:
        v = v + 1j * rng.standard_normal(g1.object_dims)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        d = fwd(g1, v) - fwd(g2, v)
        w = adj(g1, d) - adj(g2, d)
        if not cplx:
            w = np.real(w)
        nw = float(np.linalg.norm(w))
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= 1e-7 * nw:
            lam = nw
            break
        lam = nw
    return math.sqrt(lam)


@dataclass
class ErrorBudget:
    eps_fpb: float
    eps_spec: float
    eps_trans: float
    eps_param: float
    eps_unmod: float
    eps_recon: float
    predicted_total: float
    observed_error: float
    tau: float
    components: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def valid(self):
        return self.observed_error <= self.predicted_total

    def percentages(self):
        tot = self.predicted_total
        vals = {k: getattr(self, k) for k in TERMS + ("eps_recon",)}
        if not math.isfinite(tot) or tot <= 0:
            return {k: None for k in vals}
        return {k: 100.0 * v / tot for k, v in vals.items()}

    def to_json(self):
        out = {k: _num(getattr(self, k)) for k in TERMS + ("eps_recon", "predicted_total",
                                                            "observed_error", "tau")}
        out["valid"] = bool(self.valid)
        out["percent_of_predicted"] = {k: _num(v) for k, v in self.percentages().items()}
        out["components"] = {k: _num(v) if isinstance(v, (int, float)) else v
                             for k, v in sorted(self.components.items())}
        out["flags"] = list(self.flags)
        return out


def error_budget(doc, compile_report: CompileReport | None, perturbation: dict,
                 runs: ScenarioReport, B=None, unmod_residual=0.0, seed=0,
                 mode="directional") -> ErrorBudget:
    """Assemble the budget from a four-scenario run.

    eps_fpb    representation error of the graph vs the reference (C6), amplified
               like eps_param; 0.01 relative when C6 was skipped
    eps_spec   0 when compile passed, else unbounded
    eps_trans  0 when C2 matched a registry chain, else unbounded
    eps_param  2 B L ||dtheta|| * max sigma/(sigma^2 + lam_eff), where L ||dtheta|| B is
               ||(A_true - A_nominal) x*|| ("directional", default) or
               ||A_true - A_nominal||_op B ("operator", worst case)
    eps_unmod  supplied cross-tier residual (0 when simulation and model share tiers)
    eps_recon  ||x_I - x*||; observed = ||x_II - x*||
    """
    if runs is None or not runs.x or "I" not in runs.x or "II" not in runs.x:
        raise MissingScenarioData("error_budget needs Scenario I and II reconstructions")
    ctx = runs.context
    if "g_true" not in ctx or "g_nominal" not in ctx:
        raise MissingScenarioData("scenario context (graphs) missing")
    xs = runs.x["star"]
    g_true, g_nom, cfg = ctx["g_true"], ctx["g_nominal"], ctx["cfg"]
    flags = []
    if B is None:
        B = float(np.linalg.norm(xs))
        flags.append("B = ||x*|| (true phantom norm)")
    est = spectral_estimate(g_nom, "auto", seed)
    alpha = est.sigma_min_restricted ** 2
    lam_eff = cfg.lam * est.sigma_max ** 2
    gain = gain_factor(alpha, lam_eff, est.sigma_max)
    d_op = operator_difference_norm(g_true, g_nom, seed=seed) if perturbation else 0.0
    dtheta = float(sum(abs(float(v)) for v in perturbation.values())) if perturbation else 0.0
    d_dir = float(np.linalg.norm(g_true.forward(xs) - g_nom.forward(xs))) if perturbation else 0.0
    if mode == "operator":
        L_theta = d_op / dtheta if dtheta > 0 else 0.0
    else:  # Lipschitz constant of theta -> A_theta x* along the object, per unit B
        L_theta = d_dir / (B * dtheta) if dtheta > 0 else 0.0
    eps_param = eps_param_bound(B, alpha, lam_eff, L_theta, dtheta, est.sigma_max)

    eps_spec = eps_trans = 0.0
    if compile_report is not None:
        c6 = compile_report.check("C6")
        eps_c6 = C6_SKIPPED_BOUND if c6.passed is None else float(c6.statistic or 0.0)
        if not compile_report.overall:
            eps_spec = math.inf
            flags.append("compile failed: eps_spec unbounded")
        if not compile_report.eps_trans_zero:
            eps_trans = math.inf
            flags.append("chain not in registry: eps_trans not claimed")
    else:
        eps_c6 = 0.0
        flags.append("no compile report: model taken as the simulation reference (eps_fpb = 0)")
    eps_fpb = 2.0 * B * eps_c6 * est.sigma_max * gain

    eps_recon = float(np.linalg.norm(runs.x["I"] - xs))
    observed = float(np.linalg.norm(runs.x["II"] - xs))
    predicted = eps_fpb + eps_spec + eps_trans + eps_param + float(unmod_residual) + eps_recon
    tau = predicted / observed if observed > 0 else math.inf
    comps = {"B": B, "alpha": alpha, "sigma_max": est.sigma_max, "lambda_eff": lam_eff,
             "gain": gain, "op_difference_norm": d_op, "directional_difference": d_dir,
             "dtheta_l1": dtheta, "mode": mode,
             "L_theta": L_theta, "L_A_compile": compile_report.lipschitz_LA if compile_report else None,
             "spectral_method": est.method}
    return ErrorBudget(eps_fpb, eps_spec, eps_trans, eps_param, float(unmod_residual), eps_recon,
                       predicted, observed, tau, comps, flags)


# --------------------------------------------------------------------------
# triad decomposition

@dataclass
class TriadDecomposition:
    mse_measured: float
    mse_g1: float
    mse_g2: float
    mse_g3: float

    @property
    def bound(self):
        return self.mse_g1 + self.mse_g2 + self.mse_g3

    @property
    def holds(self):
        return self.mse_measured <= self.bound * (1 + 1e-12)

    def to_json(self):
        return {"mse_measured": self.mse_measured, "mse_g1": self.mse_g1, "mse_g2": self.mse_g2,
                "mse_g3": self.mse_g3, "bound": self.bound, "holds": self.holds}


def triad_decomposition(runs: ScenarioReport) -> TriadDecomposition:
    """Split x_II - x* = (x_clean - x*) + (x_I - x_clean) + (x_II - x_I).

    x_clean is the oracle reconstruction from noiseless data: its error is the
    information (G1) part; x_I - x_clean the noise (G2) part; x_II - x_I the
    mismatch (G3) part. ||a + b + c||^2 <= 3(||a||^2 + ||b||^2 + ||c||^2), so each
    term carries the factor 3.
    """
    from ..recon import reconstruct
    ctx = runs.context
    if "y_clean" not in ctx:
        raise MissingScenarioData("triad decomposition needs the noiseless measurement")
    xs = runs.x["star"]
    n = xs.size
    x_clean = reconstruct(ctx["g_true"], ctx["y_clean"], ctx["cfg"]).x_hat

    def mse(v):
        return float(np.sum(np.abs(v) ** 2)) / n

    return TriadDecomposition(mse(runs.x["II"] - xs), 3 * mse(x_clean - xs),
                              3 * mse(runs.x["I"] - x_clean), 3 * mse(runs.x["II"] - runs.x["I"]))
