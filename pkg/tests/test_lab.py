import json
from dataclasses import replace
from pathlib import Path

import pytest

from sslab.channels import dilated_bound_state
from sslab.errors import ConfigError, LadderExhausted
from sslab.grid import read_snapshot
from sslab.lab import check_config, choose_t0, parse_config, run, validate_config
from sslab.lab.cli import main
from sslab.lab.runner import build_setup, doubling_schedule, initial_state

SMALL = """
[scenario]
kind = "linear"
n = 3

[grid]
r_max = 100.0
N = 512

[profile]
epsilon = 0.3

[potential.V]
depth = 3.0
width = 1.5

[time]
t0 = 2.0
dt = 0.02
stepping = "self-similar"
dt_max = 0.05
t_end = 12.0
per_doubling = 8
checkpoints = [6.0]

[diagnostics]
alpha = 0.2
beta = 0.1
criteria = ["ionization", "bubble", "frame"]
"""

MIXTURE = """
[scenario]
kind = "mixture"
n = {n}

[grid]
r_max = 100.0
N = 512

[profile]
epsilon = 0.45

[potential.V]
depth = 15.0
[potential.W]
depth = 10.0

[initial]
recipe = "defect-plus-dilated-bound-state"

[time]
t0 = 10.0

[diagnostics]
beta = 0.02
"""

NONLINEAR = """
[scenario]
kind = "nonlinear"
n = 5

[grid]
r_max = 100.0
N = 512

[profile]
epsilon = 0.45

[potential.V]
depth = 15.0

[nonlinearity]
strength = 20.0

[initial]
recipe = "soliton-plus-dilated-bound-state"
soliton_mass = 20.0

[time]
t0 = 20.0

[diagnostics]
beta = 0.02
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_linear_window_notes():
    rep = check_config(parse_config(SMALL))
    assert rep.ok
    assert rep.notes["beta_window"][1] == pytest.approx(0.1333, abs=1e-4)
    assert rep.notes["alpha_window"][1] == pytest.approx(1 / 3)


def test_beta_outside_window_is_rejected_unless_overridden():
    cfg = parse_config(SMALL.replace("beta = 0.1", "beta = 0.2"))
    assert any("beta" in v for v in check_config(cfg).violations)
    assert check_config(cfg, override_windows=True).ok
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_mixture_needs_five_dimensions():
    bad = check_config(parse_config(MIXTURE.format(n=4)))
    assert any("n >= 5" in v for v in bad.violations)
    assert check_config(parse_config(MIXTURE.format(n=5))).ok


def test_nonlinear_example_validates():
    cfg = parse_config(NONLINEAR)
    assert check_config(cfg).ok
    assert cfg.nonlinearity.strength == 20.0


@pytest.mark.parametrize(
    "edit, fragment",
    [
        (("N = 512", "N = 500"), "power of two"),
        (("n = 3", "n = 2"), "n >= 3"),
        (("dt = 0.02", "dt = -0.02"), "dt"),
        (("t_end = 12.0", "t_end = 1.0"), "t_end"),
        (('stepping = "self-similar"', 'stepping = "adaptive"'), "stepping"),
    ],
)
def test_static_violations(edit, fragment):
    rep = check_config(parse_config(SMALL.replace(*edit)))
    assert any(fragment in v for v in rep.violations)


def test_malformed_configs():
    with pytest.raises(ConfigError):
        parse_config("[scenario\n")
    with pytest.raises(ConfigError):
        parse_config("[scenario]\nkind='linear'\n")
    with pytest.raises(ConfigError):
        parse_config(SMALL.replace("t0 = 2.0", 't0 = "soon"'))


def test_doubling_schedule():
    t = doubling_schedule(1.0, 16.0, 4)
    assert len(t) == 17
    assert t[4] == pytest.approx(2.0) and t[-1] == pytest.approx(16.0)
    with pytest.raises(ValueError):
        doubling_schedule(0.0, 1.0, 4)


def test_fixed_t0_is_used_as_is():
    cfg = parse_config(SMALL)
    assert choose_t0(cfg) == (2.0, [])


def test_ladder_exhausted():
    cfg = parse_config(SMALL.replace("t0 = 2.0", 't0 = "auto"\nt0_cap = 0.5'))
    with pytest.raises(LadderExhausted):
        choose_t0(cfg)


def test_initial_state_recipes():
    cfg = parse_config(MIXTURE.format(n=5))
    setup = build_setup(cfg)
    psi = initial_state(setup, 10.0)
    bub = dilated_bound_state(setup.bound, 10.0, cfg.profile)
    assert (psi - setup.defect.state - bub).norm() <= 1e-14
    assert bub.norm() == pytest.approx(1.0)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    cfg = replace(parse_config(SMALL), out_dir=str(out))
    return cfg, run(cfg)


def test_run_writes_artifacts(small_run):
    cfg, result = small_run
    out = result.summary
    assert set(out["criteria"]) == {"ionization", "bubble", "frame"}
    assert result.exit_code in (0, 1)
    d = Path(cfg.out_dir)
    for name in ("series.csv", "summary.json", "initial.rssl", "final.rssl", "bound_state.rssl"):
        assert (d / name).exists()
    f, t, is_eig = read_snapshot(d / "bound_state.rssl")
    assert is_eig and t == pytest.approx(out["bound_state"]["eigenvalue"])
    assert json.loads((d / "summary.json").read_text())["t0"] == 2.0
    assert abs(out["mass"]["relative_drift"]) <= 1e-11


def test_run_is_deterministic(small_run, tmp_path):
    cfg, _ = small_run
    again = replace(cfg, out_dir=str(tmp_path))
    run(again)
    for name in ("series.csv", "final.rssl"):
        assert (Path(cfg.out_dir) / name).read_bytes() == (tmp_path / name).read_bytes()
    # summaries differ only in the recorded output directory
    a, b = (json.loads((d / "summary.json").read_text()) for d in (Path(cfg.out_dir), tmp_path))
    a["config"].pop("out_dir"), b["config"].pop("out_dir")
    assert a == b


def test_cli_dry_run_writes_nothing(tmp_path, capsys):
    path = write(tmp_path, SMALL.replace("[diagnostics]", '[output]\ndir = "never"\n\n[diagnostics]'))
    assert main(["run", str(path), "--dry-run"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["config"]["n"] == 3
    assert not (tmp_path / "never").exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, SMALL.replace("beta = 0.1", "beta = 0.5"), "bad.toml")
    assert main(["validate", str(bad)]) == 2
    assert "beta" in capsys.readouterr().err
    good = write(tmp_path, SMALL, "good.toml")
    assert main(["validate", str(good)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["bound_state"]["eigenvalue"] < 0
    assert main(["run", str(bad), "--override-windows", "--dry-run"]) == 0
    broken = write(tmp_path, "[scenario]\n", "broken.toml")
    assert main(["run", str(broken)]) == 2


def test_cli_accept_dry_run(tmp_path, capsys):
    write(tmp_path, SMALL, "a.toml")
    assert main(["accept", str(tmp_path), "--dry-run"]) == 0
    assert "would run a.toml" in capsys.readouterr().out
    assert main(["accept", str(tmp_path / "empty")]) == 2


def test_calibrate_potential(tmp_path, capsys):
    text = SMALL.replace("[diagnostics]", "[diagnostics]\ntarget_eigenvalue = -0.5")
    path = write(tmp_path, text)
    assert main(["calibrate-potential", str(path), "--out", str(tmp_path / "cal")]) == 0
    out = json.loads((tmp_path / "cal" / "calibration.json").read_text())
    lo, hi = out["single_bound_state_depths"]
    assert lo < out["depth"] < hi
    assert out["eigenvalue"] == pytest.approx(-0.5, abs=1e-8)
    assert main(["calibrate-potential", str(path), "--dry-run"]) == 0
