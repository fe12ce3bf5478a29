import itertools
import math

import numpy as np
import pytest

from harnacklab.geometry import build_interval, build_torus


@pytest.fixture
def t1():
    return build_torus(1, [64], [2 * math.pi])


@pytest.fixture
def t2():
    return build_torus(2, [32, 32], [2 * math.pi, 2 * math.pi])


@pytest.fixture
def iv():
    return build_interval(129, math.pi)


def random_trig(g, seed, band):
    """Seeded trigonometric polynomial with modes up to ``band``, scaled to max |f| = 1."""
    rng = np.random.default_rng(seed)
    f = np.zeros(g.shape)
    for m in itertools.product(range(-band, band + 1), repeat=g.n):
        phase = sum(mi * 2 * math.pi / L * x for mi, L, x in zip(m, g.lengths, g.coords))
        f += rng.normal() * np.cos(phase + rng.uniform(0, 2 * math.pi))
    return f / np.max(np.abs(f))
