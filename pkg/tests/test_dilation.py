import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sslab.dilation import (
    apply_D,
    apply_dilation,
    frame_residual,
    from_transformed_frame,
    to_transformed_frame,
)
from sslab.errors import ContentOverflow
from sslab.evolve import Propagator, System, apply_H
from sslab.grid import RadialField, inner, make_grid, reduce
from sslab.model import PotentialSpec, ScalingProfile, f_eval, g_eval, time_map
from sslab.spectral import Hamiltonian, solve_bound_state

from .helpers import random_field

PROFILE = ScalingProfile(0.3)


def gauss(grid, width=2.0, center=0.0):
    f = reduce(grid, np.exp(-0.5 * ((grid.r - center) / width) ** 2))
    return f * (1.0 / f.norm())


@pytest.fixture(scope="module")
def grid():
    return make_grid(3, 200.0, 4096)


def test_identity(grid):
    f = gauss(grid)
    np.testing.assert_array_equal(apply_dilation(f, 1.0).v, f.v)


@pytest.mark.parametrize("g", [0.5, 2.0, 7.0])
@pytest.mark.parametrize("n", [3, 5])
def test_unitarity(g, n):
    grid = make_grid(n, 200.0, 4096)
    f = gauss(grid, width=3.0)
    assert abs(apply_dilation(f, g).norm() - 1.0) <= 1e-6


def test_exact_action_on_gaussian(grid):
    f = gauss(grid, width=2.0)
    g = 3.0
    out = apply_dilation(f, g)
    exact = gauss(grid, width=2.0 * g)
    assert np.max(np.abs(out.v - exact.v)) <= 1e-6 * np.max(np.abs(exact.v))


def test_group_law_within_twice_interpolation_error(grid):
    f = gauss(grid, width=2.0, center=3.0)
    g1, g2 = 1.7, 2.3
    exact = gauss(grid, width=2.0 * g1 * g2, center=3.0 * g1 * g2)
    one = apply_dilation(f, g1 * g2)
    err_single = max(
        (apply_dilation(f, g1) - gauss(grid, 2.0 * g1, 3.0 * g1)).norm(),
        (one - exact).norm(),
    )
    two = apply_dilation(apply_dilation(f, g1), g2)
    assert (two - one).norm() <= 2.0 * max(err_single, 1e-15) + 1e-12


def test_inverse_pair(grid):
    f = gauss(grid, width=2.0, center=4.0)
    back = apply_dilation(apply_dilation(f, 2.5), 1 / 2.5)
    assert (back - f).norm() <= 1e-6


def test_spectral_method_agrees_with_spline(grid):
    f = gauss(grid, width=2.0, center=3.0)
    a = apply_dilation(f, 1.6, method="spline")
    b = apply_dilation(f, 1.6, method="spectral")
    assert (a - b).norm() <= 1e-6


def test_overflow_is_reported():
    grid = make_grid(3, 20.0, 256)
    f = gauss(grid, width=2.0, center=10.0)
    with pytest.raises(ContentOverflow):
        apply_dilation(f, 3.0)
    with pytest.raises(ValueError):
        apply_dilation(f, -1.0)


def test_generator_on_gaussian(grid):
    # D = -i (r d/dr + 1/2) on v; for v = r exp(-r^2/2w^2): r v' + v/2 = (3/2 - r^2/w^2) v
    w = 2.0
    f = gauss(grid, width=w)
    expected = -1j * (1.5 - grid.r**2 / w**2) * f.v
    assert np.max(np.abs(apply_D(f).v - expected)) <= 1e-8


def test_generator_matches_derivative_of_group(grid):
    f = gauss(grid, width=2.0, center=3.0)
    h = 1e-4
    fd = (apply_dilation(f, math.exp(h)).v - apply_dilation(f, math.exp(-h)).v) / (2 * h)
    # d/dh exp(-iDh) f = -i D f
    ref = -1j * apply_D(f).v
    assert np.linalg.norm(fd - ref) <= 1e-5 * np.linalg.norm(ref)


@given(seed=st.integers(0, 2**16))
def test_generator_is_hermitian(seed):
    grid = make_grid(5, 40.0, 256)
    rng = np.random.default_rng(seed)
    f, g = random_field(grid, rng, width=2.0), random_field(grid, rng, width=2.0)
    assert abs(inner(f, apply_D(g)) - inner(apply_D(f), g)) <= 1e-10


def test_bound_state_expectation_of_D_vanishes():
    grid = make_grid(3, 40.0, 1024)
    b = solve_bound_state(grid, PotentialSpec(depth=3.0, width=1.5))
    assert abs(inner(b.state, apply_D(b.state))) <= 1e-8


def test_frame_round_trip(grid):
    f = gauss(grid, width=2.0, center=3.0)
    t = 5.0
    pair = to_transformed_frame(f, t, PROFILE)
    assert pair.s == pytest.approx(time_map(PROFILE, t))
    back, t_back = from_transformed_frame(pair.transformed, pair.s, PROFILE)
    assert t_back == pytest.approx(t, rel=1e-10)
    g = g_eval(PROFILE, t)[0]
    narrow = gauss(grid, 2.0 / g, 3.0 / g)
    leg = max((pair.transformed - narrow).norm(), (apply_dilation(narrow, g) - f).norm())
    assert leg <= 1e-4
    assert (back - f).norm() <= 2.0 * leg


def test_frame_initial_condition_at_t0(grid):
    # g(0) = 1, so the frames coincide at t = 0
    f = gauss(grid, width=1.0)
    pair = to_transformed_frame(f, 0.0, PROFILE)
    assert g_eval(PROFILE, 0.0)[0] == pytest.approx(1.0)
    assert (pair.transformed - f).norm() <= 1e-12
    assert pair.s == pytest.approx(0.0, abs=1e-14)


def test_frame_equation_residual():
    grid = make_grid(3, 80.0, 2048)
    V = PotentialSpec(depth=3.0, width=1.5)
    system = System(grid, "linear", PROFILE, V=V)
    H = Hamiltonian.from_spec(grid, V)
    psi = gauss(grid, width=1.5)
    t1, h = 2.0, 0.01
    prop = Propagator(system, 0.0005, 4)
    v0, _ = prop.advance(psi.v, 1.0, int(round((t1 - h - 1.0) / 0.0005)))
    v1, _ = prop.advance(v0, t1 - h, int(round(h / 0.0005)))
    v2, _ = prop.advance(v1, t1, int(round(h / 0.0005)))
    pairs = [to_transformed_frame(RadialField(grid, v), t, PROFILE) for v, t in ((v0, t1 - h), (v1, t1), (v2, t1 + h))]
    res = frame_residual(
        [p.transformed for p in pairs],
        [p.s for p in pairs],
        H.apply,
        float(f_eval(PROFILE, pairs[1].s)),
    )
    assert res <= 1e-3
    # the lab-frame operator is consistent with the same data
    dv = (v2 - v0) / (2 * h)
    lab = np.linalg.norm(dv + 1j * apply_H(system, t1, v1)) / np.linalg.norm(dv)
    assert lab <= 1e-3
