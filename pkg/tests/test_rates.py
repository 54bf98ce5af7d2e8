import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from framenet.errors import InputError, UnsupportedError
from framenet.model import ArchitectureConfig, make_architecture
from framenet.network import NetMetrics
from framenet.rates import (
    architecture_entropy,
    chaining_psi,
    kappa_general,
    predict_delta_n,
    rate_exponent,
    sample_schedule,
    torus_rate,
)

# (s, d, t0) -> kappa, tabulated by hand from the two branches
TORUS_TABLE = [
    ((4, 2, 0.0), 1.0),
    ((5, 2, 0.0), 1.0),
    ((3.5, 2, 0.0), 1.0),
    ((6, 2, 0.0), 2.5),
    ((8, 2, 0.0), 3.5),
    ((3.5, 2, 1.0), 0.0),
    ((5, 2, 1.0), 1.5),
    ((4, 2, 0.5), 0.5),
    ((6, 2, 0.5), 2.25),
    ((5, 3, 0.0), 2 / 3),
    ((9, 3, 0.0), 7 / 3),
    ((7, 4, 0.0), 0.5),
]


def test_kappa_general_examples():
    assert kappa_general(2, 1, True) == 2
    assert kappa_general(2, 1, False) == 2
    assert kappa_general(1.25, 3, True) == 1.5
    with pytest.raises(InputError):
        kappa_general(1.0, 1.0)


@pytest.mark.parametrize("case,kappa", TORUS_TABLE)
def test_torus_rate_table(case, kappa):
    s, d, t0 = case
    assert torus_rate(s, d, t0)[1] == pytest.approx(kappa, abs=1e-12)
    assert rate_exponent(kappa) < 1


def test_torus_rate_examples():
    r0, kappa = torus_rate(4, 2, 0, tau2=0.05)
    assert (r0, kappa) == (pytest.approx(1.05), 1.0)
    assert rate_exponent(kappa) == 0.5
    r0, kappa = torus_rate(8, 2, 0)
    assert (r0, kappa) == (3.5, 3.5)
    assert rate_exponent(kappa) == pytest.approx(7 / 9)
    assert rate_exponent(torus_rate(5, 3, 0)[1]) == pytest.approx(0.4)


def test_torus_rate_linf_variant():
    assert torus_rate(3.5, 2, 0, tau2=0.1, linf_variant=True) == (pytest.approx(1.1), pytest.approx(0.5))
    assert torus_rate(6, 2, 0, linf_variant=True) == (pytest.approx(2.0), pytest.approx(2.0))


def test_torus_rate_outside_theorem():
    with pytest.raises(UnsupportedError):
        torus_rate(3, 2)
    with pytest.raises(InputError):
        torus_rate(4, 1)


@given(st.floats(3.01, 30), st.integers(2, 6), st.floats(0, 1), st.booleans())
def test_rates_are_subparametric(s, d, t0, linf):
    if s <= 1.5 * d:
        with pytest.raises(UnsupportedError):
            torus_rate(s, d, t0, linf_variant=linf)
        return
    kappa = torus_rate(s, d, t0, linf_variant=linf)[1]
    assert rate_exponent(kappa) < 1


def test_sample_schedule():
    assert sample_schedule(100, 1.0) == 10
    assert sample_schedule(1000, 2.0) == 10
    assert sample_schedule(101, 1.0) == 11
    assert sample_schedule(1, 3.0) == 1


def test_chaining_example():
    delta = predict_delta_n(10, 1000)
    assert delta == pytest.approx(0.242, abs=1e-3)
    lhs = math.sqrt(1000) * delta ** 2
    assert lhs == pytest.approx(chaining_psi(delta, 10), rel=1e-8)


def test_chaining_ratio_in_asymptotic_regime():
    # the log factor makes the ratio approach 1/2 only for large n
    ratio = predict_delta_n(10, 4 * 10 ** 8) / predict_delta_n(10, 10 ** 8)
    assert 0.45 < ratio < 0.55


def test_alpha_entropy_closed_form():
    for alpha in (0.5, 1.0, 1.5):
        delta = predict_delta_n(1, 10_000, regime="alpha_entropy", alpha=alpha)
        assert delta == pytest.approx(10_000 ** (-1 / (2 + alpha)), rel=1e-8)


def test_alpha_entropy_needs_alpha():
    with pytest.raises(InputError):
        predict_delta_n(1, 10, regime="alpha_entropy")


def test_unknown_regime():
    with pytest.raises(InputError):
        predict_delta_n(1, 10, regime="nope")


def test_zero_noise_gives_zero_radius():
    assert predict_delta_n(5, 100, sigma=0.0) == 0.0


@given(st.integers(1, 50), st.integers(10, 10 ** 6), st.sampled_from(["chaining", "entropy_count",
                                                                        "subgaussian_no_chaining"]))
def test_delta_shrinks_with_n(N, n, regime):
    assert predict_delta_n(N, 4 * n, regime=regime) <= predict_delta_n(N, n, regime=regime) + 1e-12


def test_architecture_entropy_feeds_delta():
    L, p, s = make_architecture(ArchitectureConfig(C_L=1, C_p=1, family="sparse"), 8)
    H = architecture_entropy(NetMetrics(L, p, s, 1.0))
    delta = predict_delta_n(8, 10 ** 6, regime="entropy_count", entropy=H)
    assert 0 < delta < 1
    assert 10 ** 6 * delta ** 2 >= H(delta)
    assert predict_delta_n(8, 10 ** 7, regime="entropy_count", entropy=H) < delta
