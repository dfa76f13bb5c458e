"""Scenario orchestration: setup, t0 selection, the observed run and its artifacts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..channels import (
    AmplitudeSeries,
    CutoffSpec,
    WeakLimitProbe,
    assemble_propagation_ledger,
    dilated_bound_state,
    free_channel_projection,
    gaussian_dictionary,
    gauged_amplitude,
    local_mass,
    propagation_sample,
    weak_localization_norm,
    weakly_localized_part,
)
from ..dilation import frame_residual, to_transformed_frame
from ..errors import GridMismatch, LadderExhausted, NoBoundState
from ..evolve import EnergyLedger, Propagator, PropagatorState, System, energy_ledger_update, evolve_with_observers, h1_norm
from ..grid import RadialField, RadialGrid, inner, make_grid, overflow_fraction, read_snapshot, reduce, write_snapshot
from ..model import f_eval, g_eval, time_map, time_map_inv
from ..spectral import BoundState, Hamiltonian, solve_bound_state, solve_soliton
from .config import ScenarioConfig, validate_config
from .criteria import evaluate

OBS, LEDGER, FRAME = 1, 2, 4
FRAME_DS = 0.02
UNITARITY_STEPS = 10_000


@dataclass
class Setup:
    """Grid, right-hand side and the stationary states a scenario is built from."""

    cfg: ScenarioConfig
    grid: RadialGrid
    system: System
    bound: Optional[BoundState] = None
    defect: Optional[BoundState] = None
    soliton: Optional[BoundState] = None


def build_setup(cfg: ScenarioConfig) -> Setup:
    """Solve for psi_b (of H0 + V), psi_d (of H0 + W) and the soliton as the recipe needs."""
    grid = make_grid(cfg.n, cfg.r_max, cfg.N)
    if cfg.kind == "free":
        system = System(grid, "free")
    elif cfg.kind == "calibration":
        system = System(grid, "linear", cfg.profile, cfg.V)
    else:
        system = System(grid, cfg.kind, cfg.profile, cfg.V, cfg.W, cfg.nonlinearity)
    setup = Setup(cfg, grid, system)
    if cfg.V is not None:
        setup.bound = solve_bound_state(grid, cfg.V)
    if cfg.kind == "mixture":
        setup.defect = solve_bound_state(grid, cfg.W)
    if cfg.recipe == "soliton-plus-dilated-bound-state":
        setup.soliton = solve_soliton(grid, cfg.nonlinearity, mass=cfg.soliton_mass)
    return setup


def initial_state(setup: Setup, t0: float) -> RadialField:
    """psi(t0) following the configured recipe."""
    cfg, grid = setup.cfg, setup.grid
    recipe = cfg.recipe
    if recipe == "snapshot":
        f, _, _ = read_snapshot(cfg.snapshot)
        if not f.grid.same_as(grid):
            raise GridMismatch("snapshot grid differs from the configured grid")
        return f
    if recipe == "gaussian":
        u = np.exp(-0.5 * (grid.r / cfg.gaussian_width) ** 2)
        f = reduce(grid, u)
        return f * (1.0 / f.norm())
    bubble = dilated_bound_state(setup.bound, t0, cfg.profile)
    if recipe == "dilated-bound-state":
        return bubble
    if recipe == "defect-plus-dilated-bound-state":
        return setup.defect.state + bubble
    if recipe == "soliton-plus-dilated-bound-state":
        return setup.soliton.state + bubble
    raise ValueError(f"unknown recipe {recipe!r}")


def _evolve(cfg: ScenarioConfig, system: System, psi0: RadialField, t0: float, t_end: float, schedule, observers):
    ps = PropagatorState(psi0, t0, cfg.dt, system)
    if cfg.stepping == "self-similar":
        return evolve_with_observers(
            ps, t_end, schedule, observers, order=cfg.order, self_similar=True, dt_max=cfg.dt_max
        )
    return evolve_with_observers(ps, t_end, schedule, observers, order=cfg.order)


def doubling_schedule(t0: float, t_end: float, per_doubling: int) -> np.ndarray:
    """t0 * 2^(j/m) for j = 0, 1, ... up to t_end, so that t -> 2t is exactly m samples."""
    if not t0 > 0:
        raise ValueError("observation schedule needs t0 > 0")
    count = int(math.floor(per_doubling * math.log2(t_end / t0) + 1e-9))
    return t0 * 2.0 ** (np.arange(count + 1) / per_doubling)


# -- t0 selection ---------------------------------------------------------------


@dataclass
class LadderStep:
    t0: float
    s0: float
    s_probe_end: float
    min_abs_A: float


def probe_min_amplitude(setup: Setup, t0: float) -> LadderStep:
    """min |A| over one s-decade [T(t0), 10 T(t0)] of a linear run started at t0."""
    cfg, b = setup.cfg, setup.bound
    p = cfg.profile
    s0 = time_map(p, t0)
    t1 = time_map_inv(p, 10.0 * s0)
    system = System(setup.grid, "linear", p, cfg.V)
    sched = doubling_schedule(t0, t1, max(8, cfg.per_doubling))
    amps = []

    def amp(psi, t):
        bub = dilated_bound_state(b, t, p)
        amps.append(abs(inner(bub, psi)))

    _evolve(cfg, system, initial_state(setup, t0), t0, t1, sched, [amp])
    return LadderStep(t0, s0, 10.0 * s0, float(min(amps)))


def choose_t0(cfg: ScenarioConfig, setup: Setup | None = None, *, threshold: float = 0.9):
    """The start time: ``cfg.t0`` if fixed, else the doubling ladder 1, 2, 4, ... <= t0_cap.

    Returns (t0, ladder) where ``ladder`` lists the probe outcomes.

    Raises
    ------
    LadderExhausted
        if no rung up to the cap keeps |A| >= ``threshold`` over its probe.
    """
    if cfg.t0 != "auto":
        return float(cfg.t0), []
    setup = setup or build_setup(cfg)
    ladder = []
    t0 = 1.0
    while t0 <= cfg.t0_cap:
        step = probe_min_amplitude(setup, t0)
        ladder.append(step)
        if step.min_abs_A >= threshold:
            return t0, ladder
        t0 *= 2.0
    raise LadderExhausted(f"no t0 <= {cfg.t0_cap:g} keeps |A| >= {threshold} over one s-decade")


# -- the observed run -----------------------------------------------------------------


def _merge_schedule(parts):
    """Sorted union of (times, role) pairs; coincident times share their role bits."""
    times = np.concatenate([np.asarray(t, float) for t, _ in parts])
    roles = np.concatenate([np.full(len(t), r, dtype=int) for t, r in parts])
    order = np.argsort(times, kind="stable")
    times, roles = times[order], roles[order]
    out_t, out_r = [], []
    for t, r in zip(times, roles):
        if out_t and abs(t - out_t[-1]) <= 1e-9 * max(1.0, t):
            out_r[-1] |= r
        else:
            out_t.append(float(t))
            out_r.append(int(r))
    return np.array(out_t), out_r


@dataclass
class RunRecord:
    """Everything observed during a run, before criteria are evaluated."""

    cfg: ScenarioConfig
    t0: float
    rows: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    projections: list = field(default_factory=list)
    free_cauchy: list = field(default_factory=list)
    ledger_rows: list = field(default_factory=list)
    energy: EnergyLedger = field(default_factory=EnergyLedger)
    frame: list = field(default_factory=list)
    probe: Optional[WeakLimitProbe] = None
    local_masses: dict = field(default_factory=dict)
    mass0: float = 0.0
    mass_final: float = 0.0


class _Observer:
    """Dispatches each scheduled time to the diagnostics its role asks for."""

    def __init__(self, setup: Setup, record: RunRecord, roles, frame_groups):
        self.setup = setup
        self.rec = record
        self.roles = roles
        self.i = 0
        self.frame_groups = frame_groups
        self.frame_buf: dict = {}
        cfg = setup.cfg
        self.crit = set(cfg.criteria)
        self.spec = CutoffSpec()
        self.want_energy = cfg.kind in ("mixture", "nonlinear") or "energy" in self.crit
        self.H = Hamiltonian.from_spec(setup.grid, cfg.V) if cfg.V is not None else None

    def __call__(self, psi: RadialField, t: float):
        role = self.roles[self.i]
        idx = self.i
        self.i += 1
        if self.want_energy:
            self.rec.energy.append(energy_ledger_update((psi, t), self.setup.system))
        if role & LEDGER and "free-channel" in self.crit:
            self.rec.ledger_rows.append((t, *propagation_sample(psi, t, self.setup.cfg.alpha, self.setup.system)))
        if role & FRAME:
            self._frame(psi, t, idx)
        if role & OBS:
            self._observe(psi, t)

    def _frame(self, psi, t, idx):
        cfg = self.setup.cfg
        key, pos = self.frame_groups[idx]
        pair = to_transformed_frame(psi, t, cfg.profile)
        self.frame_buf.setdefault(key, {})[pos] = (pair.transformed, pair.s)
        group = self.frame_buf[key]
        if len(group) == 3:
            phis = [group[k][0] for k in range(3)]
            ss = [group[k][1] for k in range(3)]
            window = CutoffSpec(radius=cfg.frame_window).values(self.setup.grid.r, 1.0)
            res = frame_residual(phis, ss, self.H.apply, float(f_eval(cfg.profile, ss[1])), window)
            self.rec.frame.append({"t": key, "s": ss[1], "residual": res})
            del self.frame_buf[key]

    def _observe(self, psi, t):
        setup, cfg, rec = self.setup, self.setup.cfg, self.rec
        p = cfg.profile
        s = time_map(p, t)
        row = {"t": t, "s": s, "mass": psi.mass(), "h1": h1_norm(psi)}
        b = setup.bound
        if b is not None and cfg.kind != "free":
            bub = dilated_bound_state(b, t, p)
            a = inner(bub, psi)
            A = gauged_amplitude(a, b.eigenvalue, s)
            row.update(re_a=a.real, im_a=a.imag, re_A=A.real, im_A=A.imag, abs_A=abs(A))
            wl = weakly_localized_part(psi, t, cfg.alpha, self.spec)
            c = inner(bub, wl)
            psi_c = wl - c * bub
            row.update(re_c=c.real, im_c=c.imag, abs_c=abs(c))
            rec.extras.setdefault("orthogonality", []).append(abs(inner(bub, psi_c)))
            if setup.defect is not None:
                d = setup.defect.state
                row["bubble2_overlap"] = abs(inner(psi_c, d)) / d.norm()
        row["wl_norm"] = weak_localization_norm(psi, t, cfg.beta, p, self.spec)
        proj = free_channel_projection(psi, t, cfg.alpha, self.spec)
        row["free_proj_norm"] = proj.norm()
        rec.projections.append(proj)
        m = cfg.per_doubling
        if len(rec.projections) > m:
            old = rec.projections[-m - 1]
            rec.free_cauchy.append((rec.rows[-m]["t"], (proj - old).norm()))
            rec.projections[-m - 1] = None
        for M in cfg.M:
            rec.local_masses.setdefault(M, []).append(local_mass(psi, M))
        if self.want_energy and rec.energy.t:
            e = rec.energy
            row.update(
                E_h0=e.h0[-1], E_vt=e.vt[-1], E_w=e.w[-1], E_nl=e.nl[-1], E_nl_f0=e.nl_f0[-1],
                E_G=e.G[-1], E_g0=e.g0[-1], E_source=e.source[-1],
            )
        if rec.probe is not None:
            rec.extras.setdefault("probe", []).append(rec.probe(psi, t))
        rec.rows.append(row)


def observe_run(cfg: ScenarioConfig, setup: Setup, t0: float) -> RunRecord:
    """Evolve from t0 to t_end with every diagnostic attached."""
    p = cfg.profile
    psi0 = initial_state(setup, t0)
    rec = RunRecord(cfg, t0, mass0=psi0.mass())
    obs_t = doubling_schedule(t0, cfg.t_end, cfg.per_doubling)
    parts = [(obs_t, OBS)]
    if cfg.ledger_end is not None:
        n_led = int(round((min(cfg.ledger_end, cfg.t_end) - t0) / cfg.ledger_step))
        parts.append((t0 + cfg.ledger_step * np.arange(n_led + 1), LEDGER))
    frame_times = []
    for tc in cfg.checkpoints:
        sc = time_map(p, tc)
        frame_times.append((tc, [time_map_inv(p, sc - FRAME_DS), tc, time_map_inv(p, sc + FRAME_DS)]))
        parts.append((np.array(frame_times[-1][1]), FRAME))
    times, roles = _merge_schedule(parts)
    frame_groups = {}
    for tc, triple in frame_times:
        for pos, tt in enumerate(triple):
            j = int(np.argmin(np.abs(times - tt)))
            frame_groups[j] = (tc, pos)
    if "weak-limit" in cfg.criteria:
        dictionary = gaussian_dictionary(setup.bound, cfg.dictionary_size, cfg.seed)
        rec.probe = WeakLimitProbe(setup.bound, cfg.V, p, dictionary, ds=cfg.probe_ds)
        rec.extras["probe_names"] = [f"gauss{j}" for j in range(cfg.dictionary_size)] + ["psi_b", "continuum"]
    observer = _Observer(setup, rec, roles, frame_groups)
    trace = _evolve(cfg, setup.system, psi0, t0, cfg.t_end, times, [observer])
    rec.mass_final = trace.final.field.mass()
    rec.extras["final"] = trace.final.field
    rec.extras["initial"] = psi0
    if "unitarity" in cfg.criteria:
        rec.extras["unitarity_drift"] = unitarity_drift(cfg, setup, psi0, t0)
    return rec


def unitarity_drift(cfg: ScenarioConfig, setup: Setup, psi0: RadialField, t0: float, steps: int = UNITARITY_STEPS):
    """Relative mass drift of ``steps`` propagator steps from (psi0, t0).

    The step is the one the run starts with: ``dt``, or ``dt g(t0)^2`` (capped
    by ``dt_max``) for self-similar stepping.
    """
    h = cfg.dt
    if cfg.stepping == "self-similar":
        h = cfg.dt * g_eval(cfg.profile, t0)[0] ** 2
        if cfg.dt_max is not None:
            h = min(h, cfg.dt_max)
    v, _ = Propagator(setup.system, h, cfg.order).advance(psi0.v, t0, steps)
    m0 = psi0.mass()
    return abs(RadialField(psi0.grid, v).mass() - m0) / m0


# -- artifacts ---------------------------------------------------------------------------


@dataclass
class RunResult:
    summary: dict
    series: AmplitudeSeries
    exit_code: int
    record: Optional[RunRecord] = None


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def describe(cfg: ScenarioConfig, setup: Setup | None = None, t0: float | None = None) -> dict:
    """Derived quantities of a validated config (solves included when ``setup`` is given)."""
    out = {"config": cfg.to_dict()}
    rep = validate_config(cfg)
    out.update(rep.notes)
    if setup is not None:
        if setup.bound is not None:
            out["bound_state"] = {"eigenvalue": setup.bound.eigenvalue, "residual": setup.bound.residual}
            if t0 is not None:
                g_max = g_eval(cfg.profile, cfg.t_end)[0]
                out["overflow_budget"] = {
                    "g_max": g_max,
                    "bubble_mass_beyond_grid": overflow_fraction(setup.bound.state, cfg.r_max / g_max),
                }
        if setup.defect is not None:
            out["defect_state"] = {"eigenvalue": setup.defect.eigenvalue, "residual": setup.defect.residual}
        if setup.soliton is not None:
            out["soliton"] = {
                "energy": setup.soliton.eigenvalue,
                "mass": setup.soliton.state.mass(),
                "residual": setup.soliton.residual,
            }
    return out


def build_series(rec: RunRecord, M_star: Optional[float]) -> AmplitudeSeries:
    series = AmplitudeSeries()
    lm = rec.local_masses.get(M_star) if M_star is not None else None
    for i, row in enumerate(rec.rows):
        row = dict(row)
        if lm is not None:
            row["local_mass_M"] = lm[i]
        series.append(**row)
    return series


def run(cfg: ScenarioConfig, *, out_dir=None, write: bool = True) -> RunResult:
    """Execute a scenario and (optionally) write CSV, JSON and RSSL artifacts.

    The exit code is 0 iff every enabled criterion passed.
    """
    validate_config(cfg)
    setup = build_setup(cfg)
    t0, ladder = choose_t0(cfg, setup)
    rec = observe_run(cfg, setup, t0)
    summary = describe(cfg, setup, t0)
    summary["t0"] = t0
    summary["ladder"] = [vars(step) for step in ladder]
    results, M_star = evaluate(rec, setup)
    summary["criteria"] = results
    summary["mass"] = {
        "initial": rec.mass0,
        "final": rec.mass_final,
        "relative_drift": abs(rec.mass_final - rec.mass0) / rec.mass0,
    }
    if rec.frame:
        summary["frame_residuals"] = rec.frame
    series = build_series(rec, M_star)
    passed = all(r["passed"] for r in results.values())
    summary["passed"] = passed
    summary = _jsonable(summary)
    if write:
        out = Path(out_dir or cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        series.to_csv(out / "series.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        write_snapshot(out / "initial.rssl", rec.extras["initial"], t0)
        write_snapshot(out / "final.rssl", rec.extras["final"], cfg.t_end)
        for name, state in (("bound_state", setup.bound), ("defect_state", setup.defect), ("soliton", setup.soliton)):
            if state is not None:
                write_snapshot(out / f"{name}.rssl", state.state, state.eigenvalue, eigenvalue=True)
    return RunResult(summary, series, 0 if passed else 1, rec)


# -- calibration -------------------------------------------------------------------------


def calibrate_potential(cfg: ScenarioConfig, *, depth_hi: float = 200.0, tol: float = 1e-10) -> dict:
    """Tune the depth of the Gaussian well V so that H0 + V has exactly one bound state.

    Returns the depth window (d_lo, d_hi) with exactly one negative
    finite-difference eigenvalue, and, if ``cfg.target_eigenvalue`` is set,
    the depth in that window whose spectral ground state hits the target.
    """
    from scipy.optimize import brentq

    V = cfg.V
    if V is None or V.kind != "gaussian-well":
        raise ValueError("calibration tunes the depth of a gaussian-well V")
    grid = make_grid(cfg.n, cfg.r_max, cfg.N)

    def fd(depth):
        pot = V.__class__(kind=V.kind, depth=depth, width=V.width)(grid.r)
        return Hamiltonian(grid, pot).fd_eigenvalues(2)

    def count(depth):
        return int(np.sum(fd(depth) < 0))

    def edge(k, lo, hi):
        # smallest depth with at least k bound states, by bisection
        while hi - lo > tol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if count(mid) >= k:
                hi = mid
            else:
                lo = mid
        return hi

    if count(depth_hi) < 1:
        raise NoBoundState(f"no bound state up to depth {depth_hi}")
    d_lo = edge(1, 0.0, depth_hi)
    d_hi = edge(2, d_lo, depth_hi) if count(depth_hi) >= 2 else depth_hi
    out = {"width": V.width, "single_bound_state_depths": [d_lo, d_hi]}
    target = cfg.target_eigenvalue
    if target is not None:

        def gap(depth):
            # just above the threshold the state is too shallow to resolve; its energy is ~0
            try:
                lam = solve_bound_state(grid, V.__class__(kind=V.kind, depth=depth, width=V.width)).eigenvalue
            except NoBoundState:
                lam = 0.0
            return lam - target

        lo = d_lo * (1 + 1e-6)
        hi = d_hi * (1 - 1e-6)
        if gap(lo) * gap(hi) > 0:
            raise NoBoundState(f"target eigenvalue {target} not reachable with a single bound state")
        depth = brentq(gap, lo, hi, xtol=1e-12, rtol=1e-12)
        b = solve_bound_state(grid, V.__class__(kind=V.kind, depth=depth, width=V.width))
        out.update(depth=depth, eigenvalue=b.eigenvalue, residual=b.residual)
    return _jsonable(out)
