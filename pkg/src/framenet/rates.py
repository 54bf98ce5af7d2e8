"""Closed-form rate calculators and critical radii ``delta_n``."""
from __future__ import annotations

import math
from typing import Callable, Optional

from .errors import InputError, UnsupportedError

REGIMES = ("chaining", "alpha_entropy", "entropy_count", "subgaussian_no_chaining")


def kappa_general(r: float, t: float, riesz_and_product_measure: bool = True) -> float:
    """``2 min{r - 1/2, t}`` for Riesz bases with product measure, else ``2 min{r - 1, t}``."""
    if not r > 1 or not t > 0:
        raise InputError("need r > 1 and t > 0")
    return 2.0 * min(r - 0.5 if riesz_and_product_measure else r - 1.0, t)


def torus_rate(s: float, d: int, t0: float = 0.0, tau2: float = 0.0,
               linf_variant: bool = False) -> tuple[float, float]:
    """``(r0, kappa)`` for learning the torus Darcy operator from ``H^s`` balls.

    ``tau2`` is the small positive offset in ``r0`` on the low-smoothness
    branch; the reported ``kappa`` is its ``tau2 -> 0`` limit.  With
    ``linf_variant`` the uniform-approximation pipeline is used instead.
    """
    if d < 2:
        raise InputError("the torus rate requires d >= 2")
    if not 0.0 <= t0 <= 1.0:
        raise InputError("t0 must lie in [0, 1]")
    if s <= 1.5 * d:
        raise UnsupportedError(f"s = {s} is outside the theorem (needs s > 3d/2 = {1.5 * d})")
    if linf_variant:
        if s <= 1.5 * d + 1 - t0:
            return d / 2 + tau2, 2 * s / d - 3
        return (s + t0 - d / 2 - 1) / 2, (s + 1 - t0) / d - 1.5
    if s <= 2 * d + 1 - t0:
        return d / 2 + tau2, 2 * min(s / d - 1, (1 - t0) / d)
    return (s + t0 - 1) / 2, (s + 1 - t0) / d - 1


def rate_exponent(kappa: float) -> float:
    """``kappa / (kappa + 1)``, the exponent of ``n`` in the MSE bound."""
    return kappa / (kappa + 1.0)


def sample_schedule(n: int, kappa: float) -> int:
    """``N(n) = ceil(n^(1/(kappa+1)))`` with a guard against float round-up."""
    value = n ** (1.0 / (kappa + 1.0))
    nearest = round(value)
    if abs(value - nearest) < 1e-9 * max(1.0, value):
        return max(1, int(nearest))
    return max(1, math.ceil(value))


def chaining_psi(delta: float, N: float) -> float:
    """``sqrt(N) delta (1 + log(1/delta))``."""
    return math.sqrt(N) * delta * (1.0 + math.log(1.0 / delta))


def _bisect(satisfied: Callable[[float], bool], tol: float) -> float:
    lo, hi = 1e-300, 1.0
    while not satisfied(hi):
        lo, hi = hi, hi * 2.0
        if hi > 1e300:
            raise InputError("no delta satisfies the condition")
    # geometric phase down to a bracket of comparable endpoints, then linear
    while hi / lo > 2.0:
        mid = math.sqrt(lo * hi)
        if satisfied(mid):
            hi = mid
        else:
            lo = mid
    while hi - lo > tol * max(1.0, hi) * 1e-3:
        mid = 0.5 * (lo + hi)
        if satisfied(mid):
            hi = mid
        else:
            lo = mid
    return hi


def predict_delta_n(N: int, n: int, sigma: float = 1.0, C: float = 1.0, regime: str = "chaining",
                    alpha: Optional[float] = None, F_inf: float = 1.0,
                    entropy: Optional[Callable[[float], float]] = None, tol: float = 1e-10) -> float:
    """Smallest ``delta`` satisfying the selected critical-radius condition.

    Regimes:

    ``chaining``
        ``sqrt(n) delta^2 >= C sigma sqrt(N) delta (1 + log(1/delta))``.
    ``alpha_entropy``
        ``sqrt(n) delta^2 >= C sigma delta^(1 - alpha/2)`` with ``0 < alpha < 2``.
    ``entropy_count``
        ``n delta^2 >= C F_inf^2 H(delta)``.
    ``subgaussian_no_chaining``
        ``n delta^4 >= C^2 sigma^2 F_inf^2 H(delta^2 / (8 sigma^2 + delta^2))``.

    ``H`` defaults to ``N log(max{1, 1/delta})``; any nonincreasing entropy
    bound may be passed, e.g. one built with :func:`architecture_entropy`.
    Each residual changes sign once, so bisection finds the root.
    """
    if N < 1 or n < 1:
        raise InputError("need N, n >= 1")
    if sigma < 0 or C <= 0:
        raise InputError("need sigma >= 0 and C > 0")
    if regime not in REGIMES:
        raise InputError(f"unknown regime {regime!r}")
    H = entropy if entropy is not None else (lambda dl: N * max(0.0, math.log(1.0 / dl)))
    root_n = math.sqrt(n)

    if regime == "chaining":
        if sigma == 0:
            return 0.0

        def ok(dl):
            psi = chaining_psi(dl, N)
            return psi <= 0 or root_n * dl * dl >= C * sigma * psi
    elif regime == "alpha_entropy":
        if alpha is None or not 0 < alpha < 2:
            raise InputError("alpha_entropy needs 0 < alpha < 2")
        if sigma == 0:
            return 0.0
        # closed form of the bisection target, kept as a consistency anchor
        def ok(dl):
            return root_n * dl * dl >= C * sigma * dl ** (1.0 - alpha / 2.0)
    elif regime == "entropy_count":
        def ok(dl):
            return n * dl * dl >= C * F_inf ** 2 * H(dl)
    else:
        if sigma == 0:
            return 0.0

        def ok(dl):
            arg = dl * dl / (8 * sigma ** 2 + dl * dl)
            return n * dl ** 4 >= C ** 2 * sigma ** 2 * F_inf ** 2 * H(arg)
    return _bisect(ok, tol)


def architecture_entropy(metrics, Lambda_Y: float = 1.0, activation: str = "relu") -> Callable[[float], float]:
    """Entropy bound ``delta -> H`` of a network class with metrics ``(L, p, s, M)``.

    ``metrics`` may be a tuple or a :class:`NetMetrics`; each entry is raised
    to at least 1 as the bound requires.
    """
    from .model import entropy_bound

    if hasattr(metrics, "depth"):
        metrics = (metrics.depth, metrics.width, metrics.size, metrics.mpar)
    metrics = tuple(max(1, v) for v in metrics)
    return lambda dl: entropy_bound(metrics, Lambda_Y, dl, activation)
