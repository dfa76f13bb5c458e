import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from sslab.errors import ContentOverflow, DimensionTooLow, GridMismatch, NonPowerOfTwo, SnapshotFormatError
from sslab.grid import (
    RadialField,
    angular_constant,
    dst,
    idst,
    inner,
    make_grid,
    mass,
    read_snapshot,
    reduce,
    resample,
    sine_ortho,
    write_snapshot,
)

from .helpers import random_field


def sine_sum(v):
    """Direct O(N^2) type-I sine sum."""
    N = len(v)
    j = np.arange(1, N + 1)
    return np.sin(np.pi * np.outer(j, j) / (N + 1)) @ v


def test_make_grid_layout():
    g = make_grid(3, 10.0, 16)
    assert g.dr == pytest.approx(10 / 17, rel=0, abs=1e-15)
    assert g.r[0] == pytest.approx(10 / 17, abs=1e-15)
    assert g.dr * (g.N + 1) == 10.0
    assert np.all(g.r > 0) and g.r[-1] < g.r_max


def test_make_grid_rejects():
    with pytest.raises(NonPowerOfTwo):
        make_grid(3, 10.0, 17)
    with pytest.raises(DimensionTooLow):
        make_grid(2, 10.0, 16)
    with pytest.raises(ValueError):
        make_grid(3, -1.0, 16)


def test_reduce_gaussian_norm_matches_quadrature():
    g = make_grid(3, 20.0, 4096)
    f = reduce(g, np.exp(-0.5 * g.r**2))
    oracle = 4 * math.pi * quad(lambda r: r * r * math.exp(-r * r), 0, np.inf)[0]
    assert oracle == pytest.approx(math.pi**1.5, rel=1e-12)
    assert f.mass() == pytest.approx(oracle, rel=1e-10)


def test_reduce_constant_and_zero():
    g = make_grid(3, 5.0, 16)
    assert np.all(reduce(g, np.zeros(16)).v == 0)
    # the exponent (n-1)/2 vanishes only at n = 1; check the formula directly
    assert angular_constant(3) == pytest.approx(math.sqrt(4 * math.pi))
    assert angular_constant(5) == pytest.approx(math.sqrt(8 * math.pi**2 / 3))
    u = np.ones(16)
    np.testing.assert_allclose(reduce(g, u).v, angular_constant(3) * g.r)


@pytest.mark.parametrize("N", [16, 32, 64])
def test_dst_matches_direct_sum(N, rng):
    g = make_grid(3, 7.0, N)
    v = rng.normal(size=N) + 1j * rng.normal(size=N)
    np.testing.assert_allclose(dst(RadialField(g, v)), sine_sum(v), atol=1e-12 * np.abs(v).sum())
    # Parseval with the 2/(N+1) factor
    X = sine_sum(v)
    assert abs(np.sum(np.abs(X) ** 2) * 2 / (N + 1) - np.sum(np.abs(v) ** 2)) <= 1e-12 * np.sum(np.abs(v) ** 2)


def test_dst_single_mode_is_delta():
    g = make_grid(3, 1.0, 32)
    k = 5
    v = np.sin(np.pi * (np.arange(32) + 1) * (k + 1) / 33)
    X = dst(RadialField(g, v))
    expected = np.zeros(32)
    expected[k] = 33 / 2
    np.testing.assert_allclose(X, expected, atol=1e-12)


@pytest.mark.parametrize("N", [64, 1024, 8192])
def test_dst_involution(N, rng):
    g = make_grid(3, 10.0, N)
    f = RadialField(g, rng.normal(size=N) + 1j * rng.normal(size=N))
    back = idst(g, dst(f))
    np.testing.assert_allclose(back.v, f.v, atol=1e-12 * np.abs(f.v).max())


@given(st.integers(min_value=0, max_value=2**32 - 1), st.sampled_from([16, 256, 4096, 8192]))
def test_parseval_property(seed, N):
    r = np.random.default_rng(seed)
    v = r.normal(size=N) + 1j * r.normal(size=N)
    X = sine_ortho(v)
    m = np.sum(np.abs(v) ** 2)
    assert abs(np.sum(np.abs(X) ** 2) - m) <= 1e-12 * m


def test_sine_ortho_unitary_over_many_round_trips(rng):
    # the transform pair is applied tens of thousands of times per run
    v = rng.normal(size=8192) + 1j * rng.normal(size=8192)
    m0 = np.sum(np.abs(v) ** 2)
    w = v
    for _ in range(500):
        w = sine_ortho(sine_ortho(w))
    assert abs(np.sum(np.abs(w) ** 2) / m0 - 1) < 5e-13


def test_inner_properties(rng):
    g = make_grid(3, 10.0, 64)
    f, h = random_field(g, rng), random_field(g, rng)
    assert inner(f, f).real == pytest.approx(mass(f))
    assert abs(inner(f, f).imag) < 1e-15
    assert inner(f, h) == pytest.approx(np.conj(inner(h, f)), abs=1e-15)
    assert inner(f, 2j * h) == pytest.approx(2j * inner(f, h))
    assert inner(2j * f, h) == pytest.approx(-2j * inner(f, h))


def test_sine_modes_orthogonal():
    g = make_grid(3, 3.0, 64)
    j = np.arange(64) + 1
    a = RadialField(g, np.sin(np.pi * j * 3 / 65))
    b = RadialField(g, np.sin(np.pi * j * 7 / 65))
    assert abs(inner(a, b)) < 1e-14


def test_inner_grid_mismatch():
    a = RadialField.zeros(make_grid(3, 1.0, 16))
    b = RadialField.zeros(make_grid(3, 2.0, 16))
    with pytest.raises(GridMismatch):
        inner(a, b)


def test_resample_identity_and_contract(rng):
    g = make_grid(3, 40.0, 256)
    f = random_field(g, rng, width=1.0)
    np.testing.assert_allclose(resample(f, 1.0).v, f.v, atol=1e-14)
    with pytest.raises(ValueError):
        resample(f, 0.0)


def test_resample_gaussian_doubles_width():
    g = make_grid(3, 60.0, 4096)
    f = reduce(g, np.exp(-0.5 * g.r**2))
    out = resample(f, 2.0)
    exact = reduce(g, np.exp(-0.5 * (g.r / 2) ** 2))
    assert np.max(np.abs(out.u - exact.u)) < 1e-8


def test_resample_overflow():
    g = make_grid(3, 10.0, 256)
    f = reduce(g, np.exp(-0.5 * ((g.r - 7.0) / 0.5) ** 2))
    with pytest.raises(ContentOverflow):
        resample(f, 3.0)


@given(st.floats(min_value=0.4, max_value=2.5))
def test_resample_round_trip(scale):
    g = make_grid(3, 80.0, 2048)

    def profile(x):
        return np.exp(-0.5 * ((x - 4.0) / 1.5) ** 2) * np.exp(0.7j * x)

    def err(f, x):
        return np.sqrt(g.dr) * np.linalg.norm(f.u - profile(x))

    f = reduce(g, profile(g.r))
    back = resample(resample(f, scale), 1.0 / scale)
    # single-resample errors of each leg against the analytic profile
    fwd = err(resample(f, scale), g.r / scale)
    bwd = err(resample(reduce(g, profile(g.r / scale)), 1.0 / scale), g.r)
    assert err(back, g.r) <= 2 * max(fwd, bwd) + 1e-12


def test_snapshot_round_trip(tmp_path, rng):
    g = make_grid(5, 12.5, 64)
    f = random_field(g, rng)
    write_snapshot(tmp_path / "a.rssl", f, 3.25)
    back, t, flag = read_snapshot(tmp_path / "a.rssl")
    assert back.grid.same_as(g) and t == 3.25 and not flag
    assert np.array_equal(back.v, f.v)
    write_snapshot(tmp_path / "b.rssl", f, -0.5, eigenvalue=True)
    _, lam, flag = read_snapshot(tmp_path / "b.rssl")
    assert flag and lam == -0.5
    raw = (tmp_path / "a.rssl").read_bytes()
    assert raw[:4] == b"RSSL" and len(raw) == 36 + 16 * 64


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "bad.rssl"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(SnapshotFormatError):
        read_snapshot(p)
    p.write_bytes(b"RS")
    with pytest.raises(SnapshotFormatError):
        read_snapshot(p)
