"""Acceptance criteria, one test per criterion.

Every test records its criterion name; the session summary prints one
``PASS <name>`` or ``FAIL <name>`` line per criterion.
"""
import itertools
import math
import time

import numpy as np
import pytest

from framenet.constructions import (
    MultiIndexSet,
    legendre_eval,
    legendre_net,
    legendre_tensor_eval,
    mult_net_relu,
    mult_net_repu,
    poly_net,
    prod_net_relu,
    prod_net_repu,
    tensor_legendre_net,
)
from framenet.darcy import TorusGrid, energy_identity, make_darcy_problem, manufactured_rhs, solve_darcy
from framenet.erm import (
    OperatorProblem,
    RegressionProblem,
    TrainConfig,
    fit_loglog_slope,
    rate_study,
    surrogate_study,
)
from framenet.model import (
    ArchitectureConfig,
    CoefficientTable,
    allocate_truncations,
    brute_force_allocation,
    entropy_bound,
    weighted_tail,
)
from framenet.network import (
    REPU2,
    cube_corners,
    eval_net,
    metrics,
    perturb_params,
    perturbation_bound,
    random_masked_net,
)
from framenet.rates import predict_delta_n, rate_exponent, torus_rate


@pytest.fixture
def criterion(record_property):
    def register(name):
        record_property("criterion", name)
        print(f"\ncriterion: {name}")

    return register


def report(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
    assert ok, detail


def test_multiplication_certificate(criterion):
    name = "relu multiplication certificate"
    criterion(name)
    lines = []
    ok = True
    for delta, D in ((1e-2, 2.0), (1e-3, 4.0)):
        t0 = time.perf_counter()
        cert = mult_net_relu(delta, D, verify=False)
        axis = np.linspace(-D, D, 201)
        X, Y = np.meshgrid(axis, axis, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        err = float(np.max(np.abs(eval_net(cert.net, pts)[:, 0] - pts[:, 0] * pts[:, 1])))
        elapsed = time.perf_counter() - t0
        mpar = metrics(cert.net).mpar
        ok &= err <= delta and mpar <= 1 and elapsed < 5
        lines.append(f"(delta={delta:g}, D={D:g}): err={err:.2e} mpar={mpar:g} t={elapsed:.2f}s")
    report(name, ok, "; ".join(lines))


def test_repu_exactness(criterion):
    name = "repu2 exactness"
    criterion(name)
    rng = np.random.default_rng(0)
    worst = 0.0
    pts = rng.uniform(-2, 2, (10_000, 2))
    worst = max(worst, np.max(np.abs(eval_net(mult_net_repu(verify=False).net, pts)[:, 0] - pts.prod(axis=1))))
    for N in range(2, 9):
        pts = rng.uniform(-2, 2, (10_000, N))
        net = prod_net_repu(N, verify=False).net
        worst = max(worst, np.max(np.abs(eval_net(net, pts)[:, 0] - pts.prod(axis=1))))
    for deg in range(0, 7):
        coeffs = rng.uniform(-1, 1, deg + 1)
        x = rng.uniform(-1, 1, (10_000, 1))
        net = poly_net(coeffs, 0.0, 1.0, REPU2, verify=False).net
        worst = max(worst, np.max(np.abs(eval_net(net, x)[:, 0] - np.polynomial.polynomial.polyval(x[:, 0], coeffs))))
    report(name, worst <= 1e-10, f"max error {worst:.2e}")


def test_legendre_certificates(criterion):
    name = "legendre certificates"
    criterion(name)
    x = np.linspace(-1, 1, 2001)
    ok = True
    worst = 0.0
    mpars = []
    for j in range(9):
        net = legendre_net(j, 1e-3, verify=False).net
        err = float(np.max(np.abs(eval_net(net, x[:, None])[:, 0] - legendre_eval(j, x))))
        worst = max(worst, err)
        mpars.append(metrics(net).mpar)
    ok &= worst <= 1e-3
    lam = MultiIndexSet.from_dense([[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [2, 1]], downward_closed=True)
    assert (len(lam), lam.d(), lam.m()) == (6, 2, 3)
    tnet = tensor_legendre_net(lam, 1e-2, verify=False).net
    Y = np.random.default_rng(1).uniform(-1, 1, (10_000, 2))
    terr = float(np.max(np.abs(eval_net(tnet, Y) - legendre_tensor_eval(lam, Y))))
    ok &= terr <= 1e-2
    mpars.append(metrics(tnet).mpar)
    mpars.append(metrics(mult_net_relu(1e-2, 2.0, verify=False).net).mpar)
    mpars.append(metrics(prod_net_relu(4, 1e-2, 1.0, verify=False).net).mpar)
    ok &= max(mpars) <= 1
    report(name, ok, f"univariate {worst:.2e}, tensor {terr:.2e}, max mpar {max(mpars):g}")


def test_perturbation_property(criterion):
    name = "relu perturbation bound"
    criterion(name)
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    violations = 0
    worst_ratio = 0.0
    for trial in range(100):
        L = int(rng.integers(1, 4))
        width = int(rng.integers(1, 7))
        n_in = int(rng.integers(1, width + 1))
        n_out = int(rng.integers(1, width + 1))
        net = random_masked_net(rng, L, width, n_in, n_out, M=1.0)
        m = metrics(net)
        pts = np.vstack([rng.uniform(-1, 1, (2000, n_in)), cube_corners(n_in)])
        base = eval_net(net, pts)
        for eps in (1e-3, 1e-2):
            pert = perturb_params(net, eps, 1.0, rng)
            gap = float(np.max(np.abs(eval_net(pert, pts) - base)))
            bound = perturbation_bound(m.depth, m.width, 1.0, eps)
            worst_ratio = max(worst_ratio, gap / bound)
            violations += gap > bound
    elapsed = time.perf_counter() - t0
    report(name, violations == 0 and elapsed < 30,
           f"violations {violations}, worst gap/bound {worst_ratio:.3f}, t={elapsed:.1f}s")


# (L, p, s, M, Lambda, 1/delta) -> value, from exact integer products
ENTROPY_TABLE = [
    ("relu", (1, 2, 2, 1, 1, 2), 27.032740041837865),
    ("relu", (2, 3, 10, 1, 1, 1), 148.75460091368922),
    ("relu", (3, 4, 20, 2, 1, 10), 487.5104544544246),
    ("relu", (1, 1, 1, 1, 2, 100), 20.300695260935306),
    ("relu", (4, 6, 50, 1, 3, 1000), 1634.26969631501),
    ("repu2", (1, 1, 1, 1, 1, 1), 92.88172219503267),
    ("repu2", (1, 2, 3, 1, 1, 1), 363.20912261341135),
    ("repu2", (2, 1, 2, 1, 1, 10), 549.6419976574193),
    ("repu2", (1, 3, 5, 2, 2, 1), 970.8396858520309),
    ("repu2", (2, 2, 4, 1, 1, 100), 1814.811312677399),
]


def test_entropy_formulas(criterion):
    name = "entropy formulas"
    criterion(name)
    worst = 0.0
    for act, (L, p, s, M, lam, k), expected in ENTROPY_TABLE:
        value = entropy_bound((L, p, s, M), lam, 1.0 / k, act)
        worst = max(worst, abs(value - expected) / expected)
    ok = worst <= 1e-9 and round(ENTROPY_TABLE[0][2], 2) == 27.03 and round(ENTROPY_TABLE[5][2], 2) == 92.88
    report(name, ok, f"max relative error {worst:.1e}")


def _manufactured(n):
    fine = 256
    p = TorusGrid(2, fine).points()
    x, y = p[..., 0], p[..., 1]
    a = 2 + 0.5 * np.exp(np.sin(2 * np.pi * x) - 1) * np.cos(2 * np.pi * y)
    u = np.exp(np.cos(2 * np.pi * x) + np.sin(2 * np.pi * y))
    f = manufactured_rhs(u, a)
    step = fine // n
    a, u, f = a[::step, ::step], u[::step, ::step], f[::step, ::step]
    return a, u - u.mean(), f - f.mean()


def test_darcy_solver(criterion):
    name = "darcy spectral solver"
    criterion(name)
    errors, times = {}, []
    for n in (16, 32, 64):
        a, u_star, f = _manufactured(n)
        t0 = time.perf_counter()
        u = solve_darcy(a, f)
        times.append(time.perf_counter() - t0)
        errors[n] = float(np.linalg.norm(u - u_star) / np.linalg.norm(u_star))
        if n == 64:
            lhs, rhs = energy_identity(a, u, f)
            energy = abs(lhs - rhs) / abs(rhs)
    ratio = errors[16] / errors[32]
    ok = errors[64] <= 1e-7 and energy <= 1e-6 and ratio >= 10 and max(times) < 2
    report(name, ok, f"err64 {errors[64]:.1e}, energy {energy:.1e}, ratio16/32 {ratio:.1f}, "
                     f"max solve {max(times):.2f}s")


# (s, d, t0) -> (r0, kappa) with tau2 = 0
TORUS_TABLE = [
    ((4, 2, 0.0), (1.0, 1.0)),
    ((5, 2, 0.0), (1.0, 1.0)),
    ((3.5, 2, 0.0), (1.0, 1.0)),
    ((6, 2, 0.0), (2.5, 2.5)),
    ((8, 2, 0.0), (3.5, 3.5)),
    ((3.5, 2, 1.0), (1.0, 0.0)),
    ((5, 2, 1.0), (2.5, 1.5)),
    ((4, 2, 0.5), (1.0, 0.5)),
    ((6, 2, 0.5), (2.75, 2.25)),
    ((5, 3, 0.0), (1.5, 2 / 3)),
    ((9, 3, 0.0), (4.0, 7 / 3)),
    ((7, 4, 0.0), (2.0, 0.5)),
]


def test_rate_calculators(criterion):
    name = "torus rate table"
    criterion(name)
    t0 = time.perf_counter()
    bad = []
    for (s, d, t0_), (r0, kappa) in TORUS_TABLE:
        got = torus_rate(s, d, t0_)
        if abs(got[0] - r0) > 1e-12 or abs(got[1] - kappa) > 1e-12 or not rate_exponent(got[1]) < 1:
            bad.append((s, d, t0_, got))
    elapsed = time.perf_counter() - t0
    report(name, not bad and elapsed < 1, f"mismatches {bad}")


def test_delta_n_scaling(criterion):
    name = "critical radius scaling"
    criterion(name)
    t0 = time.perf_counter()
    ns = [10 ** k for k in range(2, 7)]
    slopes = {}
    for alpha in (0.5, 1.0):
        rows = [(n, predict_delta_n(1, n, regime="alpha_entropy", alpha=alpha) ** 2) for n in ns]
        slopes[alpha] = fit_loglog_slope(rows)
    rows = [(n, predict_delta_n(10, n, regime="entropy_count") ** 2) for n in ns]
    slope_ii = fit_loglog_slope(rows)
    elapsed = time.perf_counter() - t0
    ok = all(abs(slopes[a] + 2 / (2 + a)) <= 0.05 for a in slopes) and -1.0 <= slope_ii <= -0.8 and elapsed < 10
    report(name, ok, f"alpha slopes {slopes}, entropy-count slope {slope_ii:.3f}, t={elapsed:.2f}s")


def _decreasing_with_inversions(means, allowed):
    return sum(b >= a for a, b in zip(means, means[1:])) <= allowed


@pytest.mark.slow
def test_regression_trend(criterion):
    name = "regression rate trend"
    criterion(name)
    t0 = time.perf_counter()
    study = rate_study(RegressionProblem(sigma=1.0), [128, 256, 512, 1024, 2048, 4096], reps=5, kappa=3.0,
                       cfg=TrainConfig(lr=0.01, epochs=2000, restarts=2),
                       arch=ArchitectureConfig(C_L=1, C_p=4), mc_samples=4000, seed=0)
    elapsed = time.perf_counter() - t0
    means = [m for _, _, m, _ in study.summary_rows()]
    slope = study.slope()
    ok = _decreasing_with_inversions(means, 1) and slope <= -0.4 and elapsed < 600
    report(name, ok, f"means {np.round(means, 5).tolist()}, slope {slope:.3f}, t={elapsed:.0f}s")


@pytest.mark.slow
def test_operator_trend(criterion):
    name = "operator rate trend and surrogate"
    criterion(name)
    t0 = time.perf_counter()
    darcy = make_darcy_problem(d=2, n_per_dim=32, s=4.0, t0=0.0, n_in=13, n_out=13, rhs_amplitude=80.0)
    problem = OperatorProblem(darcy, sigma=0.1)
    kappa = torus_rate(4.0, 2, 0.0)[1]
    study = rate_study(problem, [100, 400, 1600], reps=3, kappa=kappa,
                       cfg=TrainConfig(lr=0.01, epochs=2000, restarts=2),
                       arch=ArchitectureConfig(C_L=1, C_p=1), mc_samples=1000, seed=0)
    means = [m for _, _, m, _ in study.summary_rows()]
    Ns = [N for _, N, _, _ in study.summary_rows()]
    sur = surrogate_study(problem, [4, 8, 16], t=1.0, mc_samples=1000, seed=0)
    elapsed = time.perf_counter() - t0
    ok = (Ns == [10, 20, 40] and _decreasing_with_inversions(means, 0) and means[-1] <= means[0] / 3
          and sur.nonincreasing(2.0) and elapsed < 3600)
    report(name, ok, f"means {np.round(means, 5).tolist()}, surrogate "
                     f"{[round(r[2], 6) for r in sur.rows]}, t={elapsed:.0f}s")


def test_allocation_oracle(criterion):
    name = "allocation matches exhaustive search"
    criterion(name)
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    mismatches = 0
    cases = 0
    for n, J in itertools.product(range(1, 4), range(1, 5)):
        lam = MultiIndexSet.from_dense([[i] for i in range(n)])
        for trial in range(25):
            c = rng.normal(size=(n, J))
            if trial % 5 == 0:
                c = np.round(c)  # ties and zeros
            table = CoefficientTable(lam, c, 0.0)
            for budget in range(5):
                m = allocate_truncations(table, budget)
                _, best = brute_force_allocation(table, budget)
                cases += 1
                if m.sum() > budget or abs(weighted_tail(table, m) - best) > 1e-12 * max(1.0, best):
                    mismatches += 1
    example = CoefficientTable(MultiIndexSet(((), ((0, 1),))), [[3, 1, 0], [2 / math.sqrt(3), 0, 0]], 0.0)
    ok_example = allocate_truncations(example, 2).tolist() == [1, 1]
    elapsed = time.perf_counter() - t0
    report(name, mismatches == 0 and ok_example and elapsed < 5,
           f"{cases} cases, {mismatches} mismatches, t={elapsed:.2f}s")
