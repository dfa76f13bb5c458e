"""Scattering diagnostics: cutoffs, channel amplitudes and bubble decompositions.

Conventions
-----------
``free_flow(f, tau)`` is exp(-i tau H0) f, so exp(+i t H0) psi is
``free_flow(psi, -t)``.  The phase-space cutoff F(|x - 2tP|/t^a <= 1) is
realised through the conjugation identity

    exp(itH0) F(|x - 2tP|/t^a <= 1) psi = F(|x|/t^a <= 1) exp(itH0) psi.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .dilation import apply_dilation
from .evolve import _COMPOSITION, System, free_flow
from .grid import RadialField, inner, sine_ortho
from .model import ScalingProfile, g_eval, time_map
from .spectral import BoundState, Hamiltonian, project_continuous

__all__ = [
    "CutoffSpec",
    "cutoff_apply",
    "channel_amplitude",
    "gauged_amplitude",
    "weakly_localized_part",
    "free_channel_projection",
    "weak_localization_norm",
    "bubble_coefficient",
    "bubble_decomposition",
    "second_bubble_overlap",
    "local_mass",
    "propagation_ledger",
    "propagation_sample",
    "assemble_propagation_ledger",
    "WeakLimitProbe",
    "loglog_slope",
    "AmplitudeSeries",
    "alpha_window",
    "beta_window",
]


# -- smooth cutoffs ---------------------------------------------------------


def _h(x):
    # exp(-1/x) for x > 0, else 0
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, np.exp(-1.0 / safe), 0.0)


def _h_prime(x):
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, np.exp(-1.0 / safe) / safe**2, 0.0)


@dataclass(frozen=True)
class CutoffSpec:
    """Smoothed indicator F(x <= 1) evaluated at x = |r| / (radius * t^exponent).

    shape
        ``"compact"``: C-infinity step equal to 1 for x <= 1 - width and 0
        for x >= 1 + width.  ``"tanh"``: (1 - tanh((x - 1)/width))/2.
    center
        ``"x"`` for F(|x|/t^a), ``"x-2tP"`` for the phase-space cutoff.
    """

    exponent: float = 0.0
    width: float = 0.1
    radius: float = 1.0
    shape: str = "compact"
    center: str = "x"

    def __post_init__(self):
        if self.shape not in ("compact", "tanh"):
            raise ValueError(f"unknown cutoff shape {self.shape!r}")
        if self.center not in ("x", "x-2tP"):
            raise ValueError(f"unknown cutoff center {self.center!r}")
        if not 0.0 < self.width < 1.0:
            raise ValueError("cutoff width must lie in (0, 1)")

    def profile(self, x):
        """F at the scaled argument ``x``."""
        x = np.asarray(x, dtype=float)
        w = self.width
        if self.shape == "tanh":
            return 0.5 * (1.0 - np.tanh((x - 1.0) / w))
        y = np.clip((x - (1.0 - w)) / (2.0 * w), 0.0, 1.0)
        a, b = _h(1.0 - y), _h(y)
        return a / (a + b)

    def profile_prime(self, x):
        """dF/dx (non-positive)."""
        x = np.asarray(x, dtype=float)
        w = self.width
        if self.shape == "tanh":
            return -0.5 / w / np.cosh((x - 1.0) / w) ** 2
        y = (x - (1.0 - w)) / (2.0 * w)
        inside = (y > 0) & (y < 1)
        yc = np.where(inside, y, 0.5)
        a, b = _h(1.0 - yc), _h(yc)
        da, db = -_h_prime(1.0 - yc), _h_prime(yc)
        d = (da * b - a * db) / (a + b) ** 2 / (2.0 * w)
        return np.where(inside, d, 0.0)

    def scale_at(self, t: float) -> float:
        if self.exponent == 0.0:
            return self.radius
        if not t > 0:
            raise ValueError("a t-power threshold needs t > 0")
        return self.radius * t**self.exponent

    def values(self, r, t: float, extra_scale: float = 1.0):
        return self.profile(np.asarray(r) / (self.scale_at(t) * extra_scale))

    def dt_values(self, r, t: float):
        """d/dt F(r / (radius t^a)) = -a (x/t) F'(x), x = r/(radius t^a)."""
        x = np.asarray(r) / self.scale_at(t)
        return -self.exponent * x / t * self.profile_prime(x)

    def with_exponent(self, exponent: float) -> "CutoffSpec":
        return CutoffSpec(exponent, self.width, self.radius, self.shape, self.center)


def cutoff_apply(spec: CutoffSpec, t: float, f: RadialField, *, complement: bool = False) -> RadialField:
    """Multiply by the smoothed indicator (or its complement 1 - F)."""
    grid = f.grid
    if spec.center == "x":
        F = spec.values(grid.r, t)
        return f.with_values(((1.0 - F) if complement else F) * f.v)
    w = free_flow(f, -t)
    F = spec.values(grid.r, t)
    out = free_flow(w.with_values(F * w.v), t)
    return f - out if complement else out


def alpha_window(n: int) -> tuple[float, float]:
    """Admissible open interval for the free-channel exponent alpha."""
    return (0.0, 1.0 / 3.0) if n == 3 else (0.0, 2.0 / n)


def beta_window(n: int, epsilon: float) -> tuple[float, float]:
    """Admissible open interval for the weak-localisation exponent beta."""
    return 0.0, 1.0 - 2.0 / n - 2.0 * (n - 2) * epsilon / n


def _check_window(name: str, value: float, window: tuple[float, float]) -> None:
    lo, hi = window
    if not lo < value < hi:
        warnings.warn(f"{name}={value} outside its window ({lo:.6g}, {hi:.6g})", stacklevel=3)
    elif min(value - lo, hi - value) < 1e-9:
        warnings.warn(f"{name}={value} at the edge of its window", stacklevel=3)


# -- amplitudes ------------------------------------------------------------------


def dilated_bound_state(b: BoundState, t: float, profile: ScalingProfile) -> RadialField:
    """exp(-i D ln g(t)) psi_b = g^{-n/2} psi_b(x/g).

    The exact dilation is unitary, so the resampled field is rescaled to
    the norm of psi_b; this removes the interpolation error in the norm.
    """
    g, _, _ = g_eval(profile, t)
    out = apply_dilation(b.state, g)
    return out * (b.state.norm() / out.norm())


def channel_amplitude(b: BoundState, psi: RadialField, t: float, profile: ScalingProfile) -> complex:
    """a~(t) = (exp(-i D ln g) psi_b, psi(t)); psi itself is never dilated."""
    return inner(dilated_bound_state(b, t, profile), psi)


def gauged_amplitude(a: complex, eigenvalue: float, s: float) -> complex:
    """A = exp(i lambda s) a~."""
    return complex(np.exp(1j * eigenvalue * s) * a)


def weakly_localized_part(psi: RadialField, t: float, alpha: float, spec: CutoffSpec = CutoffSpec()) -> RadialField:
    """psi - exp(-itH0) F(|x|/t^alpha <= 1) exp(itH0) psi."""
    _check_window("alpha", alpha, alpha_window(psi.grid.n))
    s = CutoffSpec(alpha, spec.width, spec.radius, spec.shape, "x-2tP")
    return cutoff_apply(s, t, psi, complement=True)


def free_channel_projection(psi: RadialField, t: float, alpha: float, spec: CutoffSpec = CutoffSpec()) -> RadialField:
    """F(|x|/t^alpha <= 1) exp(itH0) psi(t), the finite-t free channel estimate."""
    _check_window("alpha", alpha, alpha_window(psi.grid.n))
    w = free_flow(psi, -t)
    return w.with_values(spec.with_exponent(alpha).values(w.grid.r, t) * w.v)


def weak_localization_norm(
    psi: RadialField,
    t: float,
    beta: float,
    profile: ScalingProfile,
    spec: CutoffSpec = CutoffSpec(),
    *,
    variant: str = "single",
) -> float:
    """||F(|x|/t^beta <= 1) exp(i T(t) H0) exp(i D ln g(t)) psi(t)||.

    Uses exp(iT H0) exp(iD ln g) = exp(iD ln g) exp(i T g^2 H0): the state is
    only free-flowed, and the outer dilation becomes a cutoff radius g t^beta.
    ``variant="double"`` evaluates ||F(|x|/t^beta) exp(-iD ln a) exp(isH0)
    exp(iD ln a) psi|| with a = <t>, which equals the cutoff of
    exp(i s a^2 H0) psi.
    """
    _check_window("beta", beta, beta_window(psi.grid.n, profile.epsilon))
    s = time_map(profile, t)
    cut = spec.with_exponent(beta)
    if variant == "single":
        g, _, _ = g_eval(profile, t)
        w = free_flow(psi, -s * g * g)
        F = cut.values(psi.grid.r, t, extra_scale=g)
    elif variant == "double":
        a2 = 1.0 + t * t
        w = free_flow(psi, -s * a2)
        F = cut.values(psi.grid.r, t)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return w.with_values(F * w.v).norm()


def bubble_decomposition(
    b: BoundState, psi: RadialField, t: float, alpha: float, profile: ScalingProfile, spec: CutoffSpec = CutoffSpec()
):
    """Return (c(t), psi_wl, psi_c, dilated psi_b) with psi_c = psi_wl - c * dilated psi_b."""
    bub = dilated_bound_state(b, t, profile)
    wl = weakly_localized_part(psi, t, alpha, spec)
    c = inner(bub, wl)
    return c, wl, wl - c * bub, bub


def bubble_coefficient(
    b: BoundState, psi: RadialField, t: float, alpha: float, profile: ScalingProfile, spec: CutoffSpec = CutoffSpec()
) -> complex:
    """c(t) = (exp(-iD ln g) psi_b, psi_wl(t))."""
    return bubble_decomposition(b, psi, t, alpha, profile, spec)[0]


def second_bubble_overlap(
    d: BoundState,
    b: BoundState,
    psi: RadialField,
    t: float,
    alpha: float,
    profile: ScalingProfile,
    spec: CutoffSpec = CutoffSpec(),
) -> complex:
    """(psi_c(t), psi_d) with psi_c the weakly localised part minus the self-similar bubble."""
    _, _, psi_c, _ = bubble_decomposition(b, psi, t, alpha, profile, spec)
    return inner(psi_c, d.state)


def local_mass(psi: RadialField, M: float) -> float:
    """||chi(|x| <= M) psi|| with a sharp indicator."""
    inside = psi.grid.r <= M
    return float(math.sqrt(psi.grid.dr * np.sum(np.abs(psi.v[inside]) ** 2)))


# -- propagation estimate ---------------------------------------------------------


@dataclass
class PropagationLedger:
    t: np.ndarray
    B: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    int_A1: float
    int_abs_A2: float
    int_abs_A3: float
    balance: float

    def bound(self, mass0: float) -> float:
        """2 ||psi_0||^2 + ||A2||_1 + ||A3||_1."""
        return 2.0 * mass0 + self.int_abs_A2 + self.int_abs_A3


def propagation_sample(
    psi: RadialField, t: float, alpha: float, system: System, spec: CutoffSpec = CutoffSpec()
) -> tuple[float, float, complex]:
    """(<B>, A1, A2) at one time, with B = F(|x|/t^alpha <= 1) in the free-conjugated picture.

    A1 = <dB/dt> and A2 = -i(w, B e^{itH0} V_t psi), where w = e^{itH0} psi
    and V_t is everything in the equation beyond H0.
    """
    from .model import nl_value

    grid = psi.grid
    cut = spec.with_exponent(alpha)
    w = free_flow(psi, -t)
    pot = system.static_potential() - grid.centrifugal + system.scaled_potential(t)
    if system.nonlinearity is not None:
        pot = pot + nl_value(system.nonlinearity, np.abs(psi.v) / grid.reduction_factor)
    wv = free_flow(psi.with_values(pot * psi.v), -t)
    F = cut.values(grid.r, t)
    B = grid.dr * float(np.sum(F * np.abs(w.v) ** 2))
    A1 = grid.dr * float(np.sum(cut.dt_values(grid.r, t) * np.abs(w.v) ** 2))
    A2 = -1j * grid.dr * complex(np.vdot(w.v, F * wv.v))
    return B, A1, A2


def assemble_propagation_ledger(times, B, A1, A2) -> PropagationLedger:
    """Trapezoid integrals of the sampled terms on uniformly spaced ``times``."""
    times = np.asarray(times, dtype=float)
    if times.size > 2 and not np.allclose(np.diff(times), times[1] - times[0], rtol=1e-6, atol=1e-9):
        raise ValueError("propagation ledger needs uniformly spaced observations")
    B, A1, A2 = np.asarray(B, float), np.asarray(A1, float), np.asarray(A2, complex)
    A3 = np.conj(A2)
    if times.size < 2:
        return PropagationLedger(times, B, A1, A2, A3, 0.0, 0.0, 0.0, 0.0)
    int_A1 = float(np.trapezoid(A1, times))
    ia2 = float(np.trapezoid(np.abs(A2), times))
    total = A1 + (A2 + A3).real
    balance = float(B[-1] - B[0] - np.trapezoid(total, times))
    return PropagationLedger(times, B, A1, A2, A3, int_A1, ia2, ia2, balance)


def propagation_ledger(
    times: Sequence[float],
    fields: Sequence[RadialField],
    alpha: float,
    system: System,
    spec: CutoffSpec = CutoffSpec(),
) -> PropagationLedger:
    """<B(t)>, A1, A2 = conj(A3) along a trace, with their integrals.

    ``balance`` is <B>(T) - <B>(t0) - int (A1 + A2 + A3), which vanishes up
    to the quadrature error because d<B>/dt = A1 + A2 + A3.
    """
    rows = [propagation_sample(psi, t, alpha, system, spec) for t, psi in zip(times, fields)]
    B, A1, A2 = zip(*rows) if rows else ((), (), ())
    return assemble_propagation_ledger(times, B, A1, A2)


# -- weak limits ----------------------------------------------------------------


class WeakLimitProbe:
    """Overlaps (chi_j, exp(isH) exp(iD ln g) psi(T^{-1}(s))) for a test dictionary.

    Each overlap equals (exp(-iD ln g) exp(-isH) chi_j, psi(t)); the test
    fields are advanced in s under the autonomous H by splitting steps of
    at most ``ds`` (fourth order by default, so the phase error stays small
    over long s ranges) and only the evolved test fields are dilated.
    Observers must be called at increasing times.
    """

    def __init__(
        self,
        b: BoundState,
        V,
        profile: ScalingProfile,
        dictionary: Sequence[RadialField],
        *,
        ds: float = 0.02,
        dilation: str = "g",
        s_start: float = 0.0,
        order: int = 4,
    ):
        self.b = b
        self.profile = profile
        grid = b.grid
        self.H = Hamiltonian.from_spec(grid, V) if not isinstance(V, Hamiltonian) else V
        self.names = [f"test{j}" for j in range(len(dictionary))]
        self.batch = np.array([f.v for f in dictionary], dtype=complex)
        self.s = float(s_start)
        self.ds = ds
        self.dilation = dilation
        self.order = order
        self._k2 = grid.k**2
        self.records: list = []

    def _advance(self, s_target: float) -> None:
        remaining = s_target - self.s
        if remaining < 0:
            raise ValueError("weak-limit probe must be advanced forward in s")
        m = max(1, math.ceil(remaining / self.ds - 1e-12)) if remaining > 0 else 0
        if m == 0:
            return
        h = remaining / m
        stages = [
            (np.exp(-0.5j * w * h * self.H.diagonal), np.exp(-1j * w * h * self._k2)) for w in _COMPOSITION[self.order]
        ]
        v = self.batch
        for _ in range(m):
            for half, kin in stages:
                v = half * sine_ortho(kin * sine_ortho(half * v))
        self.batch = v
        self.s = s_target

    def __call__(self, psi: RadialField, t: float):
        s = time_map(self.profile, t)
        self._advance(s)
        factor = g_eval(self.profile, t)[0] if self.dilation == "g" else math.sqrt(1.0 + t * t)
        grid = psi.grid
        out = []
        for v in self.batch:
            if not np.any(v):
                out.append(0j)
                continue
            # content pushed past r_max cannot overlap psi, so truncation is exact here
            out.append(inner(apply_dilation(RadialField(grid, v), factor, overflow_tol=1.0), psi))
        row = (t, s, np.array(out))
        self.records.append(row)
        return row[2]


def gaussian_dictionary(b: BoundState, count: int = 8, seed: int = 0) -> list[RadialField]:
    """``count`` Gaussians, then psi_b, then one member of the P_c range."""
    grid = b.grid
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        c = rng.uniform(0.0, 6.0)
        w = rng.uniform(0.5, 2.5)
        u = np.exp(-0.5 * ((grid.r - c) / w) ** 2)
        out.append(RadialField(grid, grid.reduction_factor * u))
    out.append(b.state)
    u = np.exp(-0.5 * (grid.r / 2.0) ** 2) * (grid.r**2 - 3.0)
    pc = project_continuous(b, RadialField(grid, grid.reduction_factor * u))
    out.append(pc * (1.0 / pc.norm()))
    return out


# -- fits and output ------------------------------------------------------------------


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def cauchy_differences(s, A, *, ratio: float = 2.0, lo: float = 0.1, hi: float = 0.5, count: int = 24):
    """|A(ratio * s1) - A(s1)| on log-spaced s1 in [lo, hi] * s_end.

    A is interpolated by cubic splines in s (real and imaginary parts).
    """
    from scipy.interpolate import CubicSpline

    s, A = np.asarray(s, float), np.asarray(A, complex)
    spl_r, spl_i = CubicSpline(s, A.real), CubicSpline(s, A.imag)
    s_end = s[-1]
    s1 = np.geomspace(max(lo * s_end, s[0]), hi * s_end, count)
    s1 = s1[ratio * s1 <= s_end * (1 + 1e-12)]
    diff = np.hypot(spl_r(ratio * s1) - spl_r(s1), spl_i(ratio * s1) - spl_i(s1))
    return s1, diff


COLUMNS = (
    "t",
    "s",
    "re_a",
    "im_a",
    "re_A",
    "im_A",
    "abs_A",
    "re_c",
    "im_c",
    "abs_c",
    "wl_norm",
    "free_proj_norm",
    "bubble2_overlap",
    "local_mass_M",
    "mass",
    "h1",
    "E_h0",
    "E_vt",
    "E_w",
    "E_nl",
    "E_nl_f0",
    "E_G",
    "E_g0",
    "E_source",
)


@dataclass
class AmplitudeSeries:
    """Rows of channel diagnostics in the fixed column order ``COLUMNS``."""

    rows: list = field(default_factory=list)

    def append(self, **values) -> None:
        unknown = set(values) - set(COLUMNS)
        if unknown:
            raise KeyError(f"unknown columns {sorted(unknown)}")
        if self.rows and values["s"] <= self.rows[-1]["s"]:
            raise ValueError("s must be strictly increasing")
        self.rows.append({c: values.get(c, float("nan")) for c in COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([repr(float(r[c])) for c in COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "AmplitudeSeries":
        out = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != COLUMNS:
                raise ValueError("unexpected CSV header")
            for row in reader:
                out.rows.append({c: float(x) for c, x in zip(COLUMNS, row)})
        return out
