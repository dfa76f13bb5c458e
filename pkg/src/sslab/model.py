"""Scaling profile g(t), potential families and the saturated nonlinearity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import FailsConditions

__all__ = [
    "ScalingProfile",
    "PotentialSpec",
    "NonlinearitySpec",
    "bracket",
    "g_eval",
    "check_g_conditions",
    "time_map",
    "time_map_inv",
    "f_eval",
    "scaled_potential",
    "scaled_potential_dt",
    "nl_value",
    "nl_F",
    "nl_F0",
    "nl_F0_prime",
    "nl_energy_density",
]


def bracket(t):
    """<t> = (1 + t^2)^{1/2}."""
    return np.sqrt(1.0 + np.square(t))


# ---------------------------------------------------------------------------
# scaling profile


@dataclass(frozen=True)
class ScalingProfile:
    """g(t) = (1 + t^2)^{epsilon/2} and its reparametrisation s = T(t)."""

    epsilon: float
    form: str = "bracket"

    def __post_init__(self):
        if self.form != "bracket":
            raise ValueError(f"unsupported profile form {self.form!r}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    @cached_property
    def tail_constant(self) -> float:
        """lim_{t->inf} [T(t) - t^{1-2eps}/(1-2eps)]."""
        e = self.epsilon
        head, _ = quad(lambda u: (1.0 + u * u) ** (-e), 0.0, 1.0, epsabs=0, epsrel=1e-13)
        rest, _ = quad(_tail_integrand, 0.0, 1.0, args=(e,), epsabs=0, epsrel=1e-13)
        return head - 1.0 / (1.0 - 2.0 * e) + rest


def _tail_integrand(w: float, e: float) -> float:
    # w^{2e-2}[(1+w^2)^{-e} - 1], rewritten to avoid cancellation near w = 0
    if w == 0.0:
        return 0.0
    return w ** (2 * e - 2) * math.expm1(-e * math.log1p(w * w))


def g_eval(p: ScalingProfile, t):
    """Return (g, g', g'') at ``t``."""
    e = p.epsilon
    t = np.asarray(t, dtype=float)
    b2 = 1.0 + t * t
    g = b2 ** (0.5 * e)
    g1 = e * t * b2 ** (0.5 * e - 1.0)
    g2 = e * b2 ** (0.5 * e - 2.0) * (1.0 + (e - 1.0) * t * t)
    if g.ndim == 0:
        return float(g), float(g1), float(g2)
    return g, g1, g2


@dataclass
class GReport:
    c_g: float
    ratio_tg1_over_g: float
    ratio_t2g2_over_g: float
    inf_g: float
    passed: bool
    clauses: list = field(default_factory=list)


def check_g_conditions(p: ScalingProfile, t_probe: float = 1e8, tol: float = 1e-4) -> GReport:
    """Check the growth conditions on g numerically.

    c_g is estimated as (g - 2tg')/g at ``t_probe``; the comparability
    g ~ t g' ~ t^2 g'' is checked through the two ratios, which must stay
    bounded away from 0 and infinity.

    Raises
    ------
    FailsConditions
        naming the first violated clause.
    """
    g, g1, g2 = g_eval(p, t_probe)
    c_g = (g - 2.0 * t_probe * g1) / g
    r1 = t_probe * g1 / g
    r2 = t_probe**2 * g2 / g
    scan = np.concatenate(([0.0], np.logspace(-3, 8, 400)))
    inf_g = float(np.min(g_eval(p, scan)[0]))
    clauses = []
    if not 0.0 < p.epsilon < 0.5:
        clauses.append(f"epsilon={p.epsilon} outside (0, 1/2)")
    if not (tol < c_g < 1.0 - tol):
        clauses.append(f"c_g={c_g:.6g} not in (0, 1)")
    if inf_g < 1.0 - 1e-12:
        clauses.append(f"inf g = {inf_g:.6g} < 1")
    if not (1e-6 < abs(r1) < 1e6 and 1e-6 < abs(r2) < 1e6):
        clauses.append("g ~ t g' ~ t^2 g'' violated")
    report = GReport(float(c_g), float(r1), float(r2), inf_g, not clauses, clauses)
    if clauses:
        raise FailsConditions(clauses[0], report)
    return report


def _T_scalar(e: float, t: float) -> float:
    if t <= 1.0:
        val, _ = quad(lambda u: (1.0 + u * u) ** (-e), 0.0, t, epsabs=0, epsrel=1e-13)
        return val
    head, _ = quad(lambda u: (1.0 + u * u) ** (-e), 0.0, 1.0, epsabs=0, epsrel=1e-13)
    power = math.expm1((1.0 - 2.0 * e) * math.log(t)) / (1.0 - 2.0 * e)
    rest, _ = quad(_tail_integrand, 1.0 / t, 1.0, args=(e,), epsabs=0, epsrel=1e-13)
    return head + power + rest


def time_map(p: ScalingProfile, t):
    """s = T(t) = int_0^t g(u)^{-2} du."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("time_map needs t >= 0")
    out = np.vectorize(lambda x: _T_scalar(p.epsilon, x), otypes=[float])(t_arr)
    return float(out) if out.ndim == 0 else out


def time_map_inv(p: ScalingProfile, s):
    """t = T^{-1}(s) by bracketed root finding."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ValueError("time_map_inv needs s >= 0")

    def one(sv: float) -> float:
        if sv == 0.0:
            return 0.0
        hi = max(1.0, sv)
        while _T_scalar(p.epsilon, hi) < sv:
            hi *= 4.0
        return brentq(lambda x: _T_scalar(p.epsilon, x) - sv, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500)

    out = np.vectorize(one, otypes=[float])(s_arr)
    return float(out) if out.ndim == 0 else out


def f_eval(p: ScalingProfile, s):
    """f(s) = -(g' g) evaluated at t = T^{-1}(s)."""
    t = time_map_inv(p, s)
    g, g1, _ = g_eval(p, t)
    return -g1 * g


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialSpec:
    """Radial real potential; ``gaussian-well`` is -depth * exp(-r^2/(2 width^2))."""

    kind: str = "gaussian-well"
    depth: float = 1.0
    width: float = 1.0
    table_r: Optional[tuple] = None
    table_v: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "gaussian-well":
            if not (self.depth > 0 and self.width > 0):
                raise ValueError("gaussian-well needs depth > 0 and width > 0")
        elif self.kind == "tabulated":
            if self.table_r is None or self.table_v is None or len(self.table_r) != len(self.table_v):
                raise ValueError("tabulated potential needs matching table_r/table_v")
        else:
            raise ValueError(f"unknown potential kind {self.kind!r}")

    @cached_property
    def _spline(self):
        return CubicSpline(np.asarray(self.table_r), np.asarray(self.table_v), bc_type="natural")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "gaussian-well":
            return -self.depth * np.exp(-0.5 * (r / self.width) ** 2)
        r_hi = self.table_r[-1]
        return np.where(r <= r_hi, self._spline(np.minimum(r, r_hi)), 0.0)

    def derivative(self, r):
        """dV/dr."""
        r = np.asarray(r, dtype=float)
        if self.kind == "gaussian-well":
            return -r / self.width**2 * self(r)
        r_hi = self.table_r[-1]
        return np.where(r <= r_hi, self._spline(np.minimum(r, r_hi), 1), 0.0)

    def to_text(self, r) -> str:
        """Two-column (r, V(r)) text export."""
        r = np.asarray(r, dtype=float)
        rows = "\n".join(f"{a:.17g} {b:.17g}" for a, b in zip(r, self(r)))
        return "# r V(r)\n" + rows + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PotentialSpec":
        data = np.loadtxt(text.splitlines(), comments="#", ndmin=2)
        return cls(kind="tabulated", table_r=tuple(data[:, 0]), table_v=tuple(data[:, 1]))


def scaled_potential(V: PotentialSpec, p: ScalingProfile, t, r):
    """g(t)^{-2} V(r/g(t))."""
    g, _, _ = g_eval(p, t)
    return V(np.asarray(r) / g) / g**2


def scaled_potential_dt(V: PotentialSpec, p: ScalingProfile, t, r):
    """Analytic d/dt of g^{-2} V(r/g) = -(g'/g^3) [2 V(y) + y V'(y)], y = r/g."""
    g, g1, _ = g_eval(p, t)
    y = np.asarray(r) / g
    return -(g1 / g**3) * (2.0 * V(y) + y * V.derivative(y))


# ---------------------------------------------------------------------------
# saturated nonlinearity N(k) = -lam k / (1 + k^2)


@dataclass(frozen=True)
class NonlinearitySpec:
    strength: float
    form: str = "saturated"

    def __post_init__(self):
        if self.form != "saturated":
            raise ValueError(f"unsupported nonlinearity {self.form!r}")
        if self.strength < 0:
            raise ValueError("nonlinearity strength must be >= 0")


def _check_k(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise ValueError("nonlinearity argument must be >= 0")
    return k


def _k_minus_arctan(k: np.ndarray) -> np.ndarray:
    # k - arctan(k) without cancellation for small k
    small = k < 1e-2
    ks = np.where(small, k, 0.0)
    series = ks**3 / 3.0 - ks**5 / 5.0 + ks**7 / 7.0 - ks**9 / 9.0
    return np.where(small, series, k - np.arctan(k))


def nl_value(nl: NonlinearitySpec, k):
    """N(k) = -lam k/(1+k^2)."""
    k = _check_k(k)
    return -nl.strength * k / (1.0 + k * k)


def nl_F0(nl: NonlinearitySpec, k):
    """N_{F,0}(k) = k^{-2} int_0^k q N(q) dq = -lam (k - arctan k)/k^2; 0 at k = 0."""
    k = _check_k(k)
    small = k < 1e-2
    ks = np.where(small, k, 0.0)
    kl = np.where(small, 1.0, k)
    series = ks / 3.0 - ks**3 / 5.0 + ks**5 / 7.0 - ks**7 / 9.0
    return -nl.strength * np.where(small, series, (kl - np.arctan(kl)) / kl**2)


def nl_F0_prime(nl: NonlinearitySpec, k):
    """d/dk N_{F,0}(k) = N(k)/k - 2 N_{F,0}(k)/k."""
    k = _check_k(k)
    small = k < 1e-2
    ks = np.where(small, k, 0.0)
    kl = np.where(small, 1.0, k)
    series = -nl.strength * (1.0 / 3.0 - 3.0 * ks**2 / 5.0 + 5.0 * ks**4 / 7.0 - 7.0 * ks**6 / 9.0)
    return np.where(small, series, (nl_value(nl, kl) - 2.0 * nl_F0(nl, kl)) / kl)


def nl_F(nl: NonlinearitySpec, k):
    """N_F(k) = int_0^k q^2 N'(q) dq = k^2 N(k) - 2 k^2 N_{F,0}(k)."""
    k = _check_k(k)
    return -nl.strength * k**3 / (1.0 + k * k) + 2.0 * nl.strength * _k_minus_arctan(k)


def nl_energy_density(nl: NonlinearitySpec, k):
    """2 k^2 N_{F,0}(k) = 2 int_0^k q N(q) dq, the potential energy density."""
    k = _check_k(k)
    return -2.0 * nl.strength * _k_minus_arctan(k)
