"""Bound states, solitons, the continuous-spectrum projection and the resolvent.

All operators act on reduced fields, where

    H = -d^2/dr^2 + (n-1)(n-3)/(4 r^2) + V(r)

with Dirichlet ends.  The kinetic part is applied exactly through the
orthonormal DST-I; the 3-point finite-difference version of the same
operator is used only as a (banded, SPD) preconditioner.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq
from scipy.linalg import cho_solve_banded, cholesky_banded, eigh_tridiagonal
from scipy.sparse.linalg import LinearOperator, cg

from .errors import NoBoundState, NoSoliton, SolveDiverged
from .grid import RadialField, RadialGrid, apply_kinetic, inner, sine_ortho
from .model import NonlinearitySpec, PotentialSpec, nl_F0, nl_F0_prime

__all__ = [
    "Hamiltonian",
    "BoundState",
    "solve_bound_state",
    "solve_soliton",
    "project_continuous",
    "apply_resolvent",
    "resolvent_probe",
    "localized_dilation_norm",
]


class Hamiltonian:
    """H = -d^2/dr^2 + centrifugal + ``potential`` on a radial grid.

    Parameters
    ----------
    grid : RadialGrid
    potential : array_like, optional
        Extra real potential sampled at ``grid.r`` (zero if omitted).
    """

    def __init__(self, grid: RadialGrid, potential=None):
        self.grid = grid
        pot = np.zeros(grid.N) if potential is None else np.asarray(potential, dtype=float)
        if pot.shape != (grid.N,):
            raise ValueError("potential must be sampled on the grid")
        self.potential = pot
        self.diagonal = grid.centrifugal + pot

    @classmethod
    def from_spec(cls, grid: RadialGrid, V: PotentialSpec | None) -> "Hamiltonian":
        return cls(grid, None if V is None else V(grid.r))

    def apply(self, v: np.ndarray) -> np.ndarray:
        return apply_kinetic(self.grid, v) + self.diagonal * v

    def __call__(self, f: RadialField) -> RadialField:
        return RadialField(self.grid, self.apply(f.v))

    def form(self, v: np.ndarray) -> float:
        """(v, H v) on the grid."""
        return float(self.grid.dr * np.vdot(v, self.apply(v)).real)

    def fd_eigenvalues(self, count: int = 2) -> np.ndarray:
        """The ``count`` lowest eigenvalues of the finite-difference analogue of H."""
        dr = self.grid.dr
        d = 2.0 / dr**2 + self.diagonal
        e = np.full(self.grid.N - 1, -1.0 / dr**2)
        return eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, count - 1))

    def fd_lowest(self) -> float:
        """Lowest eigenvalue of the finite-difference analogue of H."""
        return float(self.fd_eigenvalues(1)[0])

    def fd_preconditioner(self, shift: float) -> "BandedInverse":
        """Inverse of the finite-difference H - shift (must be SPD)."""
        dr = self.grid.dr
        return BandedInverse(2.0 / dr**2 + self.diagonal - shift, -1.0 / dr**2)


class BandedInverse:
    """Cholesky-factored symmetric tridiagonal matrix, applied as an inverse."""

    def __init__(self, diag: np.ndarray, off: float):
        ab = np.empty((2, diag.size))
        ab[0, 0] = 0.0
        ab[0, 1:] = off
        ab[1] = diag
        self._factor = cholesky_banded(ab)

    def __call__(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if np.iscomplexobj(b):
            return cho_solve_banded((self._factor, False), b.real) + 1j * cho_solve_banded(
                (self._factor, False), b.imag
            )
        return cho_solve_banded((self._factor, False), b)


@dataclass(frozen=True)
class BoundState:
    """Normalised real eigenpair; ``eigenvalue`` is E for a soliton."""

    state: RadialField
    eigenvalue: float
    residual: float

    @property
    def grid(self) -> RadialGrid:
        return self.state.grid

    @cached_property
    def real_values(self) -> np.ndarray:
        return self.state.v.real.copy()


def _fix_phase(v: np.ndarray) -> np.ndarray:
    j = int(np.argmax(np.abs(v)))
    return (v * (abs(v[j]) / v[j])).real


def _norm(grid: RadialGrid, v: np.ndarray) -> float:
    return float(np.sqrt(grid.dr * np.vdot(v, v).real))


def _imaginary_time(
    grid: RadialGrid,
    diag_of,
    v: np.ndarray,
    *,
    rayleigh,
    target_norm: float = 1.0,
    dtau: float = 0.1,
    max_steps: int = 20000,
    residual_tol: float = 1e-4,
    check_every: int = 10,
) -> np.ndarray:
    """Normalised imaginary-time flow, Lie-split as exp(-dtau K) exp(-dtau W).

    ``diag_of(v)`` returns the multiplicative part of the operator for the
    current iterate (it may depend on ``v``).  The flow stops once the
    Rayleigh residual drops below ``residual_tol`` or the Rayleigh quotient
    stalls (the splitting error then dominates and the caller polishes).
    """
    k2 = grid.k**2
    kin = np.exp(-dtau * k2)
    prev = np.inf
    for i in range(1, max_steps + 1):
        # kinetic factor last, so the iterate stays smooth even when the
        # potential is discontinuous
        v = sine_ortho(kin * sine_ortho(np.exp(-dtau * diag_of(v)) * v))
        v *= target_norm / _norm(grid, v)
        if i % check_every:
            continue
        mu, res = rayleigh(v)
        if res < residual_tol or abs(mu - prev) < 1e-9 * max(1.0, abs(mu)):
            break
        prev = mu
    return v


def solve_bound_state(
    grid: RadialGrid,
    V: PotentialSpec | np.ndarray,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> BoundState:
    """Ground state of H = H0 + V.

    An imaginary-time seed is polished by inverse iteration.  The shifted
    systems (H - sigma) x = v are solved by conjugate gradients with the
    finite-difference operator as preconditioner; sigma sits safely below
    the ground-state energy so every system is SPD.

    Raises
    ------
    NoBoundState
        if the Rayleigh quotient of the seed is not negative.
    """
    pot = V(grid.r) if isinstance(V, PotentialSpec) else np.asarray(V, dtype=float)
    H = Hamiltonian(grid, pot)

    def rayleigh(v):
        Hv = H.apply(v)
        mu = float(np.vdot(v, Hv).real / np.vdot(v, v).real)
        return mu, _norm(grid, Hv - mu * v) / _norm(grid, v)

    width = max(1.0, 4.0 * grid.dr)
    seed = grid.reduction_factor * np.exp(-0.5 * (grid.r / width) ** 2)
    seed /= _norm(grid, seed)
    v = _imaginary_time(grid, lambda _: H.diagonal, seed, rayleigh=rayleigh)
    mu, res = rayleigh(v)
    fd = H.fd_lowest()
    if mu >= 0.0 or fd >= 0.0:
        raise NoBoundState(f"Rayleigh quotient {mu:.6g} is not negative")

    base = min(mu, fd)
    sigma = base - 0.25 * abs(base)
    M = H.fd_preconditioner(sigma)
    A = LinearOperator((grid.N, grid.N), matvec=lambda x: H.apply(x) - sigma * x, dtype=float)
    Mop = LinearOperator((grid.N, grid.N), matvec=M, dtype=float)
    best, stalled = res, 0
    for _ in range(max_iter):
        # stop at tol, or once roundoff in the kinetic term sets a floor
        if res <= tol or stalled >= 3:
            break
        x, info = cg(A, v, x0=v / (mu - sigma), rtol=1e-13, atol=0.0, maxiter=2000, M=Mop)
        if info < 0:
            raise SolveDiverged("inner CG failed during inverse iteration")
        v = x / _norm(grid, x)
        mu, res = rayleigh(v)
        stalled = stalled + 1 if res > 0.5 * best else 0
        best = min(best, res)
    v = _fix_phase(v)
    mu, res = rayleigh(v)
    return BoundState(RadialField(grid, v), mu, res)


# -- solitons ------------------------------------------------------------------


def _soliton_operator(grid: RadialGrid, nl: NonlinearitySpec, v: np.ndarray) -> np.ndarray:
    k = np.abs(v) / grid.reduction_factor
    return grid.centrifugal + 2.0 * nl_F0(nl, k)


def _soliton_mass(
    grid: RadialGrid, nl: NonlinearitySpec, mass: float, tol: float, max_iter: int, seed_width: float
) -> BoundState:
    H0 = Hamiltonian(grid)
    norm = np.sqrt(mass)

    def rayleigh(v):
        Hv = H0.apply(v) + 2.0 * nl_F0(nl, np.abs(v) / grid.reduction_factor) * v
        mu = float(np.vdot(v, Hv).real / np.vdot(v, v).real)
        return mu, _norm(grid, Hv - mu * v) / _norm(grid, v)

    seed = grid.reduction_factor * np.exp(-0.5 * (grid.r / seed_width) ** 2)
    seed *= norm / _norm(grid, seed)
    v = _imaginary_time(
        grid,
        lambda x: _soliton_operator(grid, nl, x),
        seed,
        target_norm=norm,
        dtau=0.05,
        max_steps=4000,
        residual_tol=1e-3,
        rayleigh=rayleigh,
    )
    mu, res = rayleigh(v)
    if not mu < 0.0:
        raise NoSoliton(f"no negative nonlinear eigenvalue at mass {mass:g} (mu = {mu:.4g})")

    # constrained Newton polish on (H0 + 2 N_F0(|u|) - E) v = 0, ||v||^2 = mass
    v = _fix_phase(v)
    for _ in range(max_iter):
        mu, res = rayleigh(v)
        if res <= tol:
            break
        v = _newton_step(grid, nl, v, mu, norm)
    mu, res = rayleigh(v)
    if not (res <= tol and mu < 0.0):
        raise NoSoliton(f"soliton iteration did not converge (residual {res:.3e}, E = {mu:.4g})")
    return BoundState(RadialField(grid, v), mu, res)


def _newton_step(grid, nl, v, E, norm):
    """One constrained Newton step for the real soliton profile ``v``."""
    rho = grid.reduction_factor
    k = np.abs(v) / rho
    H0 = Hamiltonian(grid)
    jac_diag = grid.centrifugal + 2.0 * nl_F0(nl, k) + 2.0 * k * nl_F0_prime(nl, k) - E
    F = H0.apply(v) + 2.0 * nl_F0(nl, k) * v - E * v
    w = v / _norm(grid, v)

    def proj(x):
        return x - w * (grid.dr * np.dot(w, x))

    # J restricted to the tangent space of the mass sphere; for a ground
    # state it is positive there.  Solve P J P d = -P F, d orthogonal to v.
    lowest = min(0.0, float(np.min(jac_diag)))
    pre = BandedInverse(2.0 / grid.dr**2 + jac_diag - lowest + 1e-3, -1.0 / grid.dr**2)
    A = LinearOperator(
        (grid.N, grid.N), matvec=lambda x: proj(apply_kinetic(grid, proj(x)) + jac_diag * proj(x)), dtype=float
    )
    Mop = LinearOperator((grid.N, grid.N), matvec=lambda x: proj(pre(proj(x))), dtype=float)
    d, info = cg(A, -proj(F), rtol=1e-12, atol=0.0, maxiter=3000, M=Mop)
    if info < 0:
        raise NoSoliton("linear solve in the soliton Newton step broke down")
    new = v + d
    new *= norm / _norm(grid, new)
    return new


def solve_soliton(
    grid: RadialGrid,
    nl: NonlinearitySpec,
    *,
    mass: float | None = None,
    energy: float | None = None,
    tol: float = 1e-9,
    max_iter: int = 60,
    seed_width: float = 2.0,
) -> BoundState:
    """Real positive solution of (H0 + 2 N_F0(|u|)) v = E v.

    Exactly one of ``mass`` (L^2 mass of the profile) or ``energy`` (the
    eigenvalue E) is prescribed.  The profile at fixed mass is found by a
    normalised imaginary-time flow followed by a constrained Newton
    iteration; an energy target is met by a secant search on the mass.
    The returned ``state`` carries the prescribed mass (it is not
    normalised to one).

    Raises
    ------
    NoSoliton
        if no negative eigenvalue appears or the iteration stalls.
    """
    if (mass is None) == (energy is None):
        raise ValueError("prescribe exactly one of mass or energy")
    if nl.strength == 0.0:
        raise NoSoliton("zero nonlinearity: H0 has no bound state")
    if mass is not None:
        return _soliton_mass(grid, nl, float(mass), tol, max_iter, seed_width)
    if not energy < 0:
        raise NoSoliton("soliton energies are negative")

    def gap(log_m):
        # below the existence threshold there is no soliton; count it as E = 0
        try:
            E = _soliton_mass(grid, nl, float(np.exp(log_m)), tol, max_iter, seed_width).eigenvalue
        except NoSoliton:
            E = 0.0
        return E - energy

    # E(m) decreases with the mass: bracket the target on a doubling ladder
    lo, hi = 0.0, 0.0
    while gap(hi) > 0:
        lo, hi = hi, hi + np.log(2.0)
        if hi > 40 * np.log(2.0):
            raise NoSoliton(f"no soliton mass up to 2^40 reaches E = {energy}")
    while gap(lo) <= 0:
        lo -= np.log(2.0)
        if lo < -40 * np.log(2.0):
            raise NoSoliton(f"cannot bracket E = {energy}")
    log_m = brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14)
    sol = _soliton_mass(grid, nl, float(np.exp(log_m)), tol, max_iter, seed_width)
    if abs(sol.eigenvalue - energy) > 1e-8 * abs(energy):
        raise NoSoliton(f"E = {energy} lies in a gap of the soliton branch")
    return sol


# -- continuous spectrum -----------------------------------------------------


def project_continuous(b: BoundState, f: RadialField) -> RadialField:
    """P_c f = f - (psi_b, f) psi_b."""
    return f - inner(b.state, f) * b.state


def apply_resolvent(
    b: BoundState,
    f: RadialField,
    V: PotentialSpec | np.ndarray,
    *,
    rtol: float = 1e-10,
) -> RadialField:
    """x = (lambda - H)^{-1} P_c f with (psi_b, x) = 0.

    On the range of P_c the operator H - lambda is positive, so the system
    is solved by conjugate gradients on P_c (H - lambda) P_c with the
    finite-difference preconditioner and explicit deflation of psi_b.

    Raises
    ------
    SolveDiverged
        if CG does not reach ``rtol``.
    """
    grid = f.grid
    pot = V(grid.r) if isinstance(V, PotentialSpec) else np.asarray(V, dtype=float)
    H = Hamiltonian(grid, pot)
    lam = b.eigenvalue
    w = b.real_values

    def proj(x):
        return x - w * (grid.dr * np.dot(w, x))

    pre = H.fd_preconditioner(min(lam, H.fd_lowest()) - 0.05 * abs(lam))
    n = grid.N
    A = LinearOperator((n, n), matvec=lambda x: proj(H.apply(proj(x)) - lam * proj(x)), dtype=complex)
    M = LinearOperator((n, n), matvec=lambda x: proj(pre(proj(x))), dtype=complex)
    rhs = -proj(f.v)
    if not np.any(rhs):
        return RadialField.zeros(grid)
    x, info = cg(A, rhs, rtol=rtol, atol=0.0, maxiter=5000, M=M)
    x = proj(x)
    resid = _norm(grid, proj(H.apply(x) - lam * x) - rhs)
    if info != 0 or resid > 10 * rtol * _norm(grid, rhs):
        raise SolveDiverged(f"resolvent CG stopped with info={info}, residual {resid:.3e}")
    return RadialField(grid, x)


def resolvent_probe(
    b: BoundState,
    V: PotentialSpec | np.ndarray,
    *,
    samples: int = 100,
    seed: int = 0,
    width: float = 4.0,
) -> np.ndarray:
    """Ratios ||D (lambda - H)^{-1} P_c <x>^{-1} f|| / ||f|| over random smooth f."""
    from .dilation import apply_D

    grid = b.grid
    rng = np.random.default_rng(seed)
    weight = 1.0 / np.sqrt(1.0 + grid.r**2)
    ratios = np.empty(samples)
    for i in range(samples):
        f = _random_smooth(grid, rng, width)
        x = apply_resolvent(b, f.with_values(weight * f.v), V)
        ratios[i] = apply_D(x).norm() / f.norm()
    return ratios


def _random_smooth(grid: RadialGrid, rng, width: float) -> RadialField:
    # a few random Gaussian bumps in the physical profile
    u = np.zeros(grid.N, complex)
    for _ in range(4):
        c = rng.uniform(0.0, 2.0 * width)
        s = rng.uniform(0.3, 1.0) * width
        u += (rng.normal() + 1j * rng.normal()) * np.exp(-0.5 * ((grid.r - c) / s) ** 2)
    return RadialField(grid, grid.reduction_factor * u)


def localized_dilation_norm(b: BoundState) -> float:
    """Diagnostic ||<x> D psi_b|| (no threshold is imposed)."""
    from .dilation import apply_D

    Dpsi = apply_D(b.state)
    return Dpsi.with_values(np.sqrt(1.0 + b.grid.r**2) * Dpsi.v).norm()
