"""Turn an observed run into named pass/fail verdicts with the numbers behind them."""

from __future__ import annotations

import math

import numpy as np

from ..channels import assemble_propagation_ledger, beta_window, cauchy_differences, loglog_slope
from ..model import nl_F0

# plateau tolerance for the local-mass calibration: (max - min)/max over the first half
PLATEAU_TOL = 0.1


def final_decade(x: np.ndarray) -> np.ndarray:
    """Mask of the samples in [x_end/10, x_end]."""
    return x >= x[-1] / 10.0


def envelope_slope(n: int, epsilon: float, beta: float) -> float:
    """The slower of the two decay rates bounding the weak-localisation norm."""
    return max(-n * (1 - epsilon - beta) / 2, -((n - 2) / 2 - (n - 2) * epsilon - n * beta / 2))


def _col(rec, name):
    return np.array([r.get(name, np.nan) for r in rec.rows], dtype=float)


def ionization(rec, setup) -> dict:
    s = _col(rec, "s")
    A = _col(rec, "re_A") + 1j * _col(rec, "im_A")
    absA = np.abs(A)
    s1, D = cauchy_differences(s, A, lo=0.1, hi=0.5)
    slope = loglog_slope(s1, D)
    min_abs = float(absA[final_decade(s)].min())
    return {
        "min_abs_A_final_s_decade": min_abs,
        "cauchy_slope": slope,
        "cauchy_C": float(np.max(D * np.sqrt(1 + s1**2))),
        "A_final": [float(A[-1].real), float(A[-1].imag)],
        "passed": bool(min_abs >= 0.5 and -1.3 <= slope <= -0.7),
    }


def weak_localization(rec, setup) -> dict:
    cfg = setup.cfg
    t, w = _col(rec, "t"), _col(rec, "wl_norm")
    keep = final_decade(t)
    slope = loglog_slope(t[keep], w[keep])
    env = envelope_slope(cfg.n, cfg.epsilon, cfg.beta)
    ratio = float(w[-1] / w[0])
    return {
        "slope_final_decade": slope,
        "envelope": env,
        "wl_t0": float(w[0]),
        "wl_t_end": float(w[-1]),
        "ratio_end_over_start": ratio,
        "beta_window": list(beta_window(cfg.n, cfg.epsilon)),
        # the envelope bounds the decay from above: any slope at least half as steep passes
        "passed": bool(slope <= 0.5 * env and ratio <= 0.2),
    }


def free_channel(rec, setup) -> dict:
    cfg = setup.cfg
    expected = -(1 - cfg.n * cfg.alpha / 2)
    t1 = np.array([a for a, _ in rec.free_cauchy])
    D = np.array([b for _, b in rec.free_cauchy])
    keep = final_decade(t1) if t1.size else t1 > 0
    slope = loglog_slope(t1[keep], D[keep]) if keep.sum() >= 2 else float("nan")
    out = {"expected_slope": expected, "cauchy_slope": slope}
    ok = math.isfinite(slope) and abs(slope - expected) <= 0.4 * abs(expected)
    if rec.ledger_rows:
        t, B, A1, A2 = (np.array(x) for x in zip(*rec.ledger_rows))
        led = assemble_propagation_ledger(t, B, A1, A2)
        bound = led.bound(rec.mass0)
        out.update(
            int_A1=led.int_A1,
            bound=bound,
            int_abs_A2=led.int_abs_A2,
            balance=led.balance,
            min_A1=float(A1.min()),
            B_range=[float(B.min()), float(B.max())],
        )
        ok = ok and led.int_A1 <= 1.05 * bound and A1.min() >= -1e-10
        ok = ok and B.min() >= 0.0 and B.max() <= rec.mass0 * (1 + 1e-12)
    out["passed"] = bool(ok)
    return out


def bubble(rec, setup) -> dict:
    s, c = _col(rec, "s"), _col(rec, "abs_c")
    orth = float(np.max(rec.extras.get("orthogonality", [0.0])))
    min_c = float(c[final_decade(s)].min())
    return {
        "min_abs_c_final_s_decade": min_c,
        "max_orthogonality_defect": orth,
        "passed": bool(min_c >= 0.25 and orth <= 1e-10),
    }


def weak_limit(rec, setup) -> dict:
    s = _col(rec, "s")
    over = np.array(rec.extras["probe"])
    names = rec.extras["probe_names"]
    jb, jc = names.index("psi_b"), names.index("continuum")
    A_end = complex(_col(rec, "re_A")[-1], _col(rec, "im_A")[-1])
    keep = final_decade(s)
    pc_max = float(np.abs(over[keep, jc]).max())
    norm0 = math.sqrt(rec.mass0)
    match = abs(over[-1, jb] - A_end)
    return {
        "continuum_overlap_max_final_s_decade": pc_max,
        "psi_b_overlap_final": [float(over[-1, jb].real), float(over[-1, jb].imag)],
        "psi_b_vs_A_final": float(match),
        "dictionary_final": [float(abs(x)) for x in over[-1]],
        "passed": bool(pc_max <= 0.05 * norm0 and match <= 1e-2),
    }


def frame(rec, setup) -> dict:
    res = [f["residual"] for f in rec.frame]
    worst = float(max(res)) if res else float("nan")
    return {"max_residual": worst, "checkpoints": len(res), "passed": bool(res) and worst <= 1e-3}


def unitarity(rec, setup) -> dict:
    drift = rec.extras["unitarity_drift"]
    run_drift = abs(rec.mass_final - rec.mass0) / rec.mass0
    return {
        "relative_mass_drift_1e4_steps": drift,
        "relative_mass_drift_full_run": run_drift,
        "passed": bool(drift <= 1e-11),
    }


def mixture(rec, setup) -> dict:
    t = _col(rec, "t")
    keep = final_decade(t)
    min_A = float(_col(rec, "abs_A")[keep].min())
    min_ov = float(_col(rec, "bubble2_overlap")[keep].min())
    floor = 1 / (2 * math.sqrt(2)) - 0.1
    return {
        "min_abs_A_final_decade": min_A,
        "min_defect_overlap_final_decade": min_ov,
        "overlap_floor": floor,
        "passed": bool(min_A >= 0.5 and min_ov >= floor),
    }


def calibrate_local_mass(rec) -> tuple:
    """(M*, c', plateau) with M* the smallest M whose local mass is flat over the first half."""
    t = _col(rec, "t")
    first = t <= 0.5 * (t[0] + t[-1])
    for M in sorted(rec.local_masses):
        lm = np.array(rec.local_masses[M])[first]
        if lm.max() > 0 and (lm.max() - lm.min()) / lm.max() <= PLATEAU_TOL:
            plateau = float(lm.mean())
            return M, 0.5 * plateau, plateau
    return None, float("nan"), float("nan")


def nonlinear(rec, setup) -> dict:
    t = _col(rec, "t")
    keep = final_decade(t)
    min_A = float(_col(rec, "abs_A")[keep].min())
    M_star, c_prime, plateau = calibrate_local_mass(rec)
    lm_min = float(np.min(rec.local_masses[M_star])) if M_star is not None else float("nan")
    h1 = _col(rec, "h1")
    h1_ratio = float(h1.max() / h1[0])
    e = rec.energy
    defect = np.abs(e.defect())
    sol = setup.soliton
    scale = abs(sol.eigenvalue) * sol.state.mass() if sol is not None else abs(e.energy[0])
    rel_defect = float(defect.max() / scale)
    out = {
        "min_abs_A_final_decade": min_A,
        "M_star": M_star,
        "c_prime": c_prime,
        "local_mass_plateau": plateau,
        "min_local_mass": lm_min,
        "h1_ratio": h1_ratio,
        "energy_defect_max": float(defect.max()),
        "energy_scale": scale,
        "energy_defect_relative": rel_defect,
    }
    if sol is not None:
        # the initial-energy condition of the nonlinear two-bubble statement
        lhs = e.energy[0]
        rhs = 0.5 * sol.eigenvalue * sol.state.mass()
        out["initial_energy"] = float(lhs)
        out["initial_energy_bound"] = float(rhs)
        out["initial_energy_condition"] = bool(lhs <= rhs)
    out["passed"] = bool(
        min_A >= 0.5 and M_star is not None and lm_min >= c_prime and h1_ratio <= 3.0 and rel_defect <= 1e-4
    )
    return out


CRITERIA = {
    "ionization": ionization,
    "weak-localization": weak_localization,
    "free-channel": free_channel,
    "bubble": bubble,
    "weak-limit": weak_limit,
    "frame": frame,
    "unitarity": unitarity,
    "mixture": mixture,
    "nonlinear": nonlinear,
}


def evaluate(rec, setup) -> tuple[dict, object]:
    """Run every enabled criterion; returns (results by name, calibrated M* or None)."""
    results = {}
    for name in rec.cfg.criteria:
        if name not in CRITERIA:
            raise KeyError(f"unknown criterion {name!r}")
        results[name] = CRITERIA[name](rec, setup)
    M_star = None
    if rec.local_masses:
        M_star = calibrate_local_mass(rec)[0]
    return results, M_star
