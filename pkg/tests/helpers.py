import numpy as np


def random_field(grid, rng, width=None):
    """Smooth random field: a few Gaussian bumps times random phases."""
    from sslab.grid import reduce

    width = width or grid.r_max / 20
    u = np.zeros(grid.N, complex)
    for _ in range(4):
        c = rng.uniform(0.0, grid.r_max / 4)
        u += (rng.normal() + 1j * rng.normal()) * np.exp(-0.5 * ((grid.r - c) / width) ** 2)
    f = reduce(grid, u)
    return f * (1.0 / f.norm())


ACCEPTANCE_LINES = []


def report(number, name, passed, detail):
    """Record and print one acceptance verdict line."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
