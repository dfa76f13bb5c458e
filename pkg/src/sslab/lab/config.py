"""Scenario configuration: TOML parsing and window validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import tomli

from ..channels import alpha_window, beta_window
from ..errors import ConfigError, FailsConditions
from ..model import NonlinearitySpec, PotentialSpec, ScalingProfile, check_g_conditions

KINDS = ("linear", "mixture", "nonlinear", "free", "calibration")
RECIPES = {
    "linear": ("dilated-bound-state", "snapshot"),
    "mixture": ("defect-plus-dilated-bound-state", "snapshot"),
    "nonlinear": ("soliton-plus-dilated-bound-state", "snapshot"),
    "free": ("gaussian", "dilated-bound-state", "snapshot"),
    "calibration": ("dilated-bound-state",),
}
STEPPING = ("fixed", "self-similar")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one run.

    Times are lab times t; ``t0`` is a number or ``"auto"`` (doubling
    ladder, see :func:`sslab.lab.runner.choose_t0`).  ``stepping =
    "self-similar"`` makes ``dt`` a step in s, so the lab step grows like
    g(t)^2 up to ``dt_max``.
    """

    kind: str
    n: int
    r_max: float
    N: int
    epsilon: float = 0.3
    form: str = "bracket"
    V: Optional[PotentialSpec] = None
    W: Optional[PotentialSpec] = None
    nl_strength: Optional[float] = None
    recipe: str = "dilated-bound-state"
    snapshot: Optional[str] = None
    soliton_mass: Optional[float] = None
    gaussian_width: float = 2.0
    t0: Union[float, str] = "auto"
    t0_cap: float = 64.0
    dt: float = 0.01
    dt_max: Optional[float] = None
    stepping: str = "fixed"
    order: int = 2
    t_end: float = 100.0
    per_doubling: int = 24
    checkpoints: tuple = ()
    frame_window: float = 20.0
    ledger_end: Optional[float] = None
    ledger_step: float = 0.5
    alpha: float = 0.2
    beta: float = 0.1
    M: tuple = ()
    dictionary_size: int = 8
    probe_ds: float = 0.05
    criteria: tuple = ()
    override_windows: bool = False
    target_eigenvalue: Optional[float] = None
    out_dir: str = "out"
    seed: int = 0

    @property
    def profile(self) -> ScalingProfile:
        return ScalingProfile(self.epsilon, self.form)

    @property
    def nonlinearity(self) -> Optional[NonlinearitySpec]:
        return None if self.nl_strength is None else NonlinearitySpec(self.nl_strength)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("V", "W"):
            if out[key] is not None:
                out[key] = {k: v for k, v in out[key].items() if v is not None}
        return out

    def with_overrides(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


def _potential(block: Optional[dict]) -> Optional[PotentialSpec]:
    if block is None:
        return None
    block = dict(block)
    kind = block.pop("kind", "gaussian-well")
    if kind == "tabulated":
        path = block.pop("file")
        return PotentialSpec.from_text(Path(path).read_text())
    try:
        return PotentialSpec(kind=kind, **block)
    except TypeError as exc:
        raise ConfigError(f"bad potential block: {exc}") from None


def parse_config(text: str, *, base_dir: Path | None = None) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from TOML text.

    Sections: ``[scenario]`` (kind, n, seed), ``[grid]``, ``[profile]``,
    ``[potential.V]``, ``[potential.W]``, ``[nonlinearity]``,
    ``[initial]``, ``[time]``, ``[diagnostics]``, ``[output]``.
    """
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    sc = raw.get("scenario", {})
    grid = raw.get("grid", {})
    prof = raw.get("profile", {})
    pots = raw.get("potential", {})
    init = raw.get("initial", {})
    time = raw.get("time", {})
    diag = raw.get("diagnostics", {})
    out = raw.get("output", {})
    for name in ("kind", "n"):
        if name not in sc:
            raise ConfigError(f"[scenario] needs '{name}'")
    for name in ("r_max", "N"):
        if name not in grid:
            raise ConfigError(f"[grid] needs '{name}'")
    snapshot = init.get("snapshot")
    if snapshot is not None and base_dir is not None:
        snapshot = str((base_dir / snapshot).resolve())
    out_dir = out.get("dir", "out")
    if base_dir is not None and not Path(out_dir).is_absolute():
        out_dir = str((base_dir / out_dir).resolve())
    t0 = time.get("t0", "auto")
    if isinstance(t0, str) and t0 != "auto":
        raise ConfigError(f"t0 must be a number or 'auto', got {t0!r}")
    return ScenarioConfig(
        kind=sc["kind"],
        n=int(sc["n"]),
        seed=int(sc.get("seed", 0)),
        r_max=float(grid["r_max"]),
        N=int(grid["N"]),
        epsilon=float(prof.get("epsilon", 0.3)),
        form=prof.get("form", "bracket"),
        V=_potential(pots.get("V")),
        W=_potential(pots.get("W")),
        nl_strength=raw.get("nonlinearity", {}).get("strength"),
        recipe=init.get("recipe", "dilated-bound-state"),
        snapshot=snapshot,
        soliton_mass=init.get("soliton_mass"),
        gaussian_width=float(init.get("gaussian_width", 2.0)),
        t0=t0 if t0 == "auto" else float(t0),
        t0_cap=float(time.get("t0_cap", 64.0)),
        dt=float(time.get("dt", 0.01)),
        dt_max=time.get("dt_max"),
        stepping=time.get("stepping", "fixed"),
        order=int(time.get("order", 2)),
        t_end=float(time.get("t_end", 100.0)),
        per_doubling=int(time.get("per_doubling", 24)),
        checkpoints=tuple(float(x) for x in time.get("checkpoints", ())),
        frame_window=float(diag.get("frame_window", 20.0)),
        ledger_end=time.get("ledger_end"),
        ledger_step=float(time.get("ledger_step", 0.5)),
        alpha=float(diag.get("alpha", 0.2)),
        beta=float(diag.get("beta", 0.1)),
        M=tuple(float(x) for x in diag.get("M", ())),
        dictionary_size=int(diag.get("dictionary_size", 8)),
        probe_ds=float(diag.get("probe_ds", 0.05)),
        criteria=tuple(diag.get("criteria", ())),
        override_windows=bool(diag.get("override_windows", False)),
        target_eigenvalue=diag.get("target_eigenvalue"),
        out_dir=out_dir,
    )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


@dataclass
class ValidationReport:
    """Outcome of :func:`check_config`: the violated clauses plus notes."""

    violations: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_config(cfg: ScenarioConfig, *, override_windows: bool = False) -> ValidationReport:
    """Check static invariants of ``cfg`` without any numerical solve."""
    rep = ValidationReport()
    bad = rep.violations.append
    override = override_windows or cfg.override_windows
    if cfg.kind not in KINDS:
        bad(f"unknown scenario kind {cfg.kind!r}")
        return rep
    if cfg.n < 3:
        bad(f"n = {cfg.n}: the dispersive estimates need n >= 3")
    if cfg.kind in ("mixture", "nonlinear"):
        if cfg.n < 5:
            bad(f"{cfg.kind} scenario needs n >= 5 (two-bubble theorem), got n = {cfg.n}")
        lo = 2.0 / cfg.n
        if not lo < cfg.epsilon < 0.5:
            bad(f"{cfg.kind} scenario needs epsilon in (2/n, 1/2) = ({lo:.4g}, 0.5), got {cfg.epsilon}")
    try:
        rep.notes["c_g"] = check_g_conditions(cfg.profile).c_g
    except FailsConditions as exc:
        bad(f"scaling profile fails the growth conditions: {exc.clause}")
    except ValueError as exc:
        bad(str(exc))
    if cfg.N < 2 or cfg.N & (cfg.N - 1):
        bad(f"N = {cfg.N} is not a power of two")
    if not cfg.r_max > 0:
        bad("r_max must be positive")
    if cfg.recipe not in RECIPES[cfg.kind]:
        bad(f"recipe {cfg.recipe!r} does not fit a {cfg.kind} scenario (allowed: {', '.join(RECIPES[cfg.kind])})")
    if cfg.recipe == "snapshot" and not cfg.snapshot:
        bad("snapshot recipe needs [initial] snapshot = <path>")
    if cfg.kind in ("linear", "mixture", "nonlinear", "calibration") and cfg.V is None:
        bad(f"{cfg.kind} scenario needs [potential.V]")
    if cfg.kind == "mixture" and cfg.W is None:
        bad("mixture scenario needs a static defect potential [potential.W]")
    if cfg.kind == "nonlinear":
        if cfg.nl_strength is None or cfg.nl_strength <= 0:
            bad("nonlinear scenario needs [nonlinearity] strength > 0")
        if cfg.recipe == "soliton-plus-dilated-bound-state" and not cfg.soliton_mass:
            bad("soliton recipe needs [initial] soliton_mass > 0")
    if cfg.stepping not in STEPPING:
        bad(f"stepping must be one of {STEPPING}")
    if cfg.order not in (2, 4):
        bad("splitting order must be 2 or 4")
    if not cfg.dt > 0:
        bad("dt must be positive")
    if cfg.t0 != "auto":
        if not cfg.t0 >= 0:
            bad("t0 must be >= 0")
        elif not cfg.t_end > cfg.t0:
            bad(f"t_end = {cfg.t_end} must exceed t0 = {cfg.t0}")
    elif cfg.kind not in ("linear", "calibration"):
        bad("automatic t0 is only defined for the linear scenario")
    a_lo, a_hi = alpha_window(cfg.n)
    if not a_lo < cfg.alpha < a_hi and not override:
        bad(f"alpha = {cfg.alpha} outside the free-channel window ({a_lo:.4g}, {a_hi:.4g}) for n = {cfg.n}")
    b_lo, b_hi = beta_window(cfg.n, cfg.epsilon)
    if cfg.kind != "calibration" and not b_lo < cfg.beta < b_hi and not override:
        bad(f"beta = {cfg.beta} outside the weak-localisation window ({b_lo:.4g}, {b_hi:.4g})")
    rep.notes["alpha_window"] = [a_lo, a_hi]
    rep.notes["beta_window"] = [b_lo, b_hi]
    if cfg.dictionary_size < 8 and "weak-limit" in cfg.criteria:
        bad("the weak-limit probe needs at least 8 dictionary fields")
    return rep


def validate_config(cfg: ScenarioConfig, *, override_windows: bool = False) -> ValidationReport:
    """:func:`check_config`, raising :class:`ConfigError` on the first violation."""
    rep = check_config(cfg, override_windows=override_windows)
    if not rep.ok:
        raise ConfigError("; ".join(rep.violations))
    return rep
