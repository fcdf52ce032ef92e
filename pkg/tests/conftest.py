import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: dict = {}


def random_spd(rng, d, cond_floor=0.05):
    a = rng.standard_normal((d, d))
    return a @ a.T + cond_floor * d * np.eye(d)


def random_partition_sizes(rng, d):
    sizes, left = [], d
    while left:
        r = int(rng.integers(1, min(3, left) + 1))
        sizes.append(r)
        left -= r
    return sizes


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def brute_project(v, eps, n0=20, final=2e-5, half_width=8):
    """Nearest point of the contracted simplex by grid search refined around the incumbent.

    The grid is the lattice ``eps + (1 - (s+1) eps) k / N`` with integer ``k >= 0`` and
    ``sum(k) <= N``, so faces of the feasible set carry grid points exactly.
    """
    import itertools

    v = np.asarray(v, dtype=float)
    s = v.size
    span = 1.0 - (s + 1) * eps
    n = n0
    ks = np.array(list(itertools.product(range(n + 1), repeat=s)))
    while True:
        ks = ks[(ks.min(axis=1) >= 0) & (ks.sum(axis=1) <= n)]
        pts = eps + span * ks / n
        best = ks[np.argmin(((pts - v) ** 2).sum(axis=1))]
        if span / n < final:
            return eps + span * best / n
        n *= 4
        offs = np.array(list(itertools.product(range(-half_width, half_width + 1), repeat=s)))
        ks = 4 * best + offs


def enumerate_project(v, eps):
    """Exact nearest point by trying every set of active constraints."""
    import itertools

    v = np.asarray(v, dtype=float)
    s = v.size
    best, best_val = None, np.inf
    for floor_mask in itertools.product((False, True), repeat=s):
        floor = np.array(floor_mask)
        for sum_active in (False, True):
            w = np.where(floor, eps, v)
            if sum_active:
                free = ~floor
                if not free.any():
                    continue
                w[free] -= (w.sum() - (1.0 - eps)) / free.sum()
            if np.all(w >= eps - 1e-12) and w.sum() <= 1.0 - eps + 1e-12:
                val = float(((w - v) ** 2).sum())
                if val < best_val:
                    best, best_val = w, val
    return best


def msm_regime_marginals(y, a1, a2, s0, s1, b2):
    """Exact P(r_j = 1 | Y) by enumerating regime paths with the latent path integrated out."""
    import itertools
    import math

    y = np.asarray(y, dtype=float)
    n = y.size
    trans = np.array([[1 - a1, a1], [a2, 1 - a2]])

    def log_evidence(r):
        prec = np.eye(n) / b2
        lin = y / b2
        const = 0.5 * y @ y / b2 + 0.5 * n * math.log(2 * math.pi * b2)
        lp = math.log([a2, a1][r[0]] / (a1 + a2))
        for i in range(1, n):
            lp += math.log(trans[r[i - 1], r[i]])
            v = (s0, s1)[r[i]]
            e = np.zeros(n)
            e[i], e[i - 1] = 1.0, -1.0
            prec += np.outer(e, e) / v
            const += 0.5 * math.log(2 * math.pi * v)
        _, logdet = np.linalg.slogdet(prec)
        return lp - const + 0.5 * lin @ np.linalg.solve(prec, lin) + 0.5 * n * math.log(2 * math.pi) - 0.5 * logdet

    paths = list(itertools.product((0, 1), repeat=n))
    lw = np.array([log_evidence(r) for r in paths])
    w = np.exp(lw - lw.max())
    w /= w.sum()
    return np.array([sum(w[k] for k, r in enumerate(paths) if r[j] == 1) for j in range(n)])
