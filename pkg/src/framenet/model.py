"""The FrameNet operator class ``G = D_Y o g o S_r o E_X`` and its constructive surrogate.

Also holds the architecture schedules, the closed-form entropy bounds,
Legendre coefficient estimation and the truncation allocation used to
assemble the constructive surrogate network.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .constructions import (
    CertifiedNet,
    MultiIndexSet,
    legendre_tensor_eval,
    tensor_legendre_net,
)
from .errors import InputError
from .frames import (
    Frame,
    ScalingMap,
    analysis,
    frame_from_dict,
    frame_to_dict,
    scale_Sr,
    scaling_from_dict,
    scaling_to_dict,
    synthesis,
)
from .network import (
    Activation,
    NeuralNet,
    _plain_concat,
    affine_net,
    eval_net,
    extend_depth,
    mran_estimate,
    net_from_dict,
    net_to_dict,
    parallelize,
    scalar_mult_net,
    sparse_concat,
    zero_net,
)

#: Relative slack allowed when comparing a sampled range with ``B``.
RANGE_MARGIN = 0.05


@dataclass(frozen=True, eq=False)
class FrameNetModel:
    """Encoder (dual frame of X), scaling, coefficient network and decoder frame of Y.

    Parameters
    ----------
    encoder : Frame
        Frame whose analysis gives the network input (the dual of ``Psi_X``).
    p0 : int
        Number of retained input coefficients.
    scaling : ScalingMap
        ``S_r`` applied to the retained coefficients.
    net : NeuralNet
        Coefficient map with ``p0`` inputs and ``out_dim`` outputs.
    decoder : Frame
        Frame of Y; outputs are synthesized with its first ``out_dim`` vectors.
    B : float
        Range bound for the network on the unit cube.
    """

    encoder: Frame
    p0: int
    scaling: ScalingMap
    net: NeuralNet
    decoder: Frame
    out_dim: int
    B: float = math.inf
    certificate: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.net, CertifiedNet):
            object.__setattr__(self, "net", self.net.net)
        if self.net.input_dim != self.p0:
            raise InputError(f"network input {self.net.input_dim} differs from p0 = {self.p0}")
        if self.net.output_dim != self.out_dim:
            raise InputError(f"network output {self.net.output_dim} differs from out_dim = {self.out_dim}")
        if self.p0 > self.encoder.size or self.out_dim > self.decoder.size:
            raise InputError("truncation exceeds the number of frame vectors")

    def __call__(self, x):
        return framenet_apply(self, x)


def encode(model: FrameNetModel, x) -> np.ndarray:
    return analysis(model.encoder, x)[..., : model.p0]


def decode(model: FrameNetModel, c) -> np.ndarray:
    return synthesis(model.decoder, c)


def framenet_apply(model: FrameNetModel, x, return_clamped: bool = False):
    """``D_Y(g(S_r(E_X x)))`` in Y reference coordinates."""
    u, clamped = scale_Sr(model.scaling, encode(model, x))
    y = decode(model, eval_net(model.net, u))
    return (y, clamped) if return_clamped else y


def check_range(model: FrameNetModel, samples: int = 2048, rng_seed=0) -> tuple[float, bool]:
    """Sampled network range and whether it respects ``B`` up to the safety margin."""
    est = mran_estimate(model.net, samples, rng_seed)
    return est, bool(est <= model.B * (1.0 + RANGE_MARGIN))


def model_to_dict(model: FrameNetModel) -> dict:
    return {
        "encoder": frame_to_dict(model.encoder),
        "p0": model.p0,
        "scaling": scaling_to_dict(model.scaling),
        "net": net_to_dict(model.net),
        "decoder": frame_to_dict(model.decoder),
        "out_dim": model.out_dim,
        "B": None if math.isinf(model.B) else model.B,
        "certificate": model.certificate,
    }


def model_from_dict(data: dict) -> FrameNetModel:
    return FrameNetModel(
        encoder=frame_from_dict(data["encoder"]), p0=int(data["p0"]),
        scaling=scaling_from_dict(data["scaling"]), net=net_from_dict(data["net"]),
        decoder=frame_from_dict(data["decoder"]), out_dim=int(data["out_dim"]),
        B=math.inf if data.get("B") is None else float(data["B"]),
        certificate=dict(data.get("certificate") or {}))


def model_to_json(model: FrameNetModel) -> str:
    return json.dumps(model_to_dict(model))


def model_from_json(text: str) -> FrameNetModel:
    return model_from_dict(json.loads(text))


# --------------------------------------------------------------------------
# architectures and entropy


@dataclass(frozen=True)
class ArchitectureConfig:
    """Constants of the depth/width/size schedules."""

    C_L: float = 2.0
    C_p: float = 4.0
    C_s: float = 4.0
    M: float = 1.0
    B: float = 1.0
    activation: str = "relu"
    family: str = "fully_connected"

    def __post_init__(self):
        for name in ("C_L", "C_p", "C_s", "M", "B"):
            if not getattr(self, name) >= 1:
                raise InputError(f"{name} must be at least 1")
        if self.family not in ("sparse", "fully_connected"):
            raise InputError(f"unknown family {self.family!r}")
        Activation.parse(self.activation)


def make_architecture(cfg: ArchitectureConfig, N: int) -> tuple[int, int, int]:
    """``(depth, width, size budget)`` for budget parameter ``N``.

    Examples
    --------
    >>> make_architecture(ArchitectureConfig(C_L=2), 10)[0]
    5
    """
    if N < 1:
        raise InputError("N must be at least 1")
    depth = max(1, math.ceil(cfg.C_L * math.log(N) - 1e-12))
    width = math.ceil(cfg.C_p * N - 1e-12)
    if cfg.family == "sparse":
        size = math.ceil(cfg.C_s * N - 1e-12)
    else:
        size = (depth + 1) * (width + width * width)
    return depth, width, size


def log_entropy_argument(L: int, p: int, M: float, Lambda_Y: float, delta: float,
                         activation="relu") -> float:
    """Log of the argument of the logarithm in the entropy bound."""
    act = Activation.parse(activation)
    log_inv = math.log(max(1.0, 1.0 / delta))
    if act.kind == "relu":
        return ((L + 6) * math.log(2) + math.log(Lambda_Y) + 2 * math.log(L)
                + (L + 1) * math.log(M) + (L + 4) * math.log(p) + log_inv)
    q = act.q
    return (math.log(Lambda_Y) + math.log(L) + (L + q) * math.log(q)
            + 4 * q ** (2 * L + 2) * math.log(2 * p * M) + log_inv)


def entropy_bound(metrics: Sequence[float], Lambda_Y: float, delta: float, activation="relu") -> float:
    """Metric entropy bound for networks with depth, width, size, mpar ``(L, p, s, M)``.

    ReLU: ``(s+1) log(2^(L+6) Lambda L^2 M^(L+1) p^(L+4) max{1, 1/delta})``.
    RePU(q): ``(s+1) log(Lambda L q^(L+q) (2pM)^(4 q^(2L+2)) max{1, 1/delta})``.
    Evaluated in log space.
    """
    L, p, s, M = metrics
    if min(L, p, s, M) < 1 or not delta > 0:
        raise InputError("need L, p, s, M >= 1 and delta > 0")
    return (s + 1) * log_entropy_argument(L, p, M, Lambda_Y, delta, activation)


# --------------------------------------------------------------------------
# Legendre coefficients


@dataclass(eq=False)
class CoefficientTable:
    """Estimated ``c_{nu,j}`` with one row per ``nu`` and one column per output mode."""

    lam: MultiIndexSet
    c: np.ndarray
    estimation_error: np.ndarray

    def __post_init__(self):
        self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
        self.estimation_error = np.broadcast_to(
            np.asarray(self.estimation_error, dtype=float), self.c.shape).copy()
        if self.c.shape[0] != len(self.lam):
            raise InputError("one row per multi-index required")
        if not np.all(np.isfinite(self.c)):
            raise InputError("coefficients must be finite")

    @property
    def omega(self) -> np.ndarray:
        """``omega_nu = prod_j (1 + 2 nu_j)``."""
        return np.array([float(np.prod([1 + 2 * v for _, v in nu])) for nu in self.lam])

    def proxy(self) -> np.ndarray:
        """Weighted row mass ``omega^(1/2) ||c_nu||_2`` used to order the rows."""
        return np.sqrt(self.omega) * np.linalg.norm(self.c, axis=1)

    def sorted_by_proxy(self) -> "CoefficientTable":
        order = sorted(range(len(self.lam)), key=lambda i: (-self.proxy()[i], i))
        return CoefficientTable(MultiIndexSet(tuple(self.lam.indices[i] for i in order)),
                                self.c[order], self.estimation_error[order])

    def to_dict(self) -> dict:
        return {"lam": self.lam.to_list(), "c": self.c.tolist(),
                "estimation_error": self.estimation_error.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "CoefficientTable":
        return cls(MultiIndexSet.from_list(data["lam"]), np.asarray(data["c"]),
                   np.asarray(data["estimation_error"]))


def estimate_legendre_coeffs(target_sampler: Callable[[np.ndarray], np.ndarray], lam: MultiIndexSet,
                             out_modes: int, n_dims: int, quadrature=("mc", 4096),
                             rng_seed=0) -> CoefficientTable:
    """Estimate ``c_{nu,j} = E[L_nu(y) u_j(y)]`` for ``y`` uniform on ``[-1,1]^n_dims``.

    Parameters
    ----------
    target_sampler : callable
        Maps points ``(Q, n_dims)`` to output coefficients ``(Q, >= out_modes)``.
    quadrature : tuple
        ``("mc", Q)`` for Monte Carlo with standard errors, ``("lsq", Q)``
        for a discrete least-squares projection onto ``lam`` from ``Q``
        random points, or ``("gauss", order)`` for a tensor Gauss-Legendre rule (``n_dims <= 4``).
    """
    if lam.n_dims > n_dims:
        raise InputError("index set uses more coordinates than the target provides")
    kind, amount = quadrature
    if kind == "mc":
        Q = int(amount)
        if Q < 2:
            raise InputError("need at least two Monte Carlo points")
        Y = np.random.default_rng(rng_seed).uniform(-1.0, 1.0, size=(Q, n_dims))
        U = np.asarray(target_sampler(Y), dtype=float)[:, :out_modes]
        Lv = legendre_tensor_eval(lam, Y)
        prod = Lv[:, :, None] * U[:, None, :]
        c = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / math.sqrt(Q)
        return CoefficientTable(lam, c, se)
    if kind == "lsq":
        Q = int(amount)
        if Q < 2 * len(lam):
            raise InputError("least squares needs at least twice as many points as indices")
        Y = np.random.default_rng(rng_seed).uniform(-1.0, 1.0, size=(Q, n_dims))
        U = np.asarray(target_sampler(Y), dtype=float)[:, :out_modes]
        Lv = legendre_tensor_eval(lam, Y)
        c, *_ = np.linalg.lstsq(Lv, U, rcond=None)
        # standard errors from the residual variance and the Gram inverse
        resid = U - Lv @ c
        dof = max(Q - len(lam), 1)
        var = np.sum(resid ** 2, axis=0) / dof
        ginv = np.diag(np.linalg.pinv(Lv.T @ Lv))
        se = np.sqrt(np.outer(ginv, var))
        return CoefficientTable(lam, c, se)
    if kind == "gauss":
        if n_dims > 4:
            raise InputError("tensor Gauss rules are limited to 4 dimensions")
        nodes, weights = np.polynomial.legendre.leggauss(int(amount))
        weights = weights / 2.0
        grid = np.array(list(itertools.product(nodes, repeat=n_dims)))
        w = np.prod(np.array(list(itertools.product(weights, repeat=n_dims))), axis=1)
        U = np.asarray(target_sampler(grid), dtype=float)[:, :out_modes]
        Lv = legendre_tensor_eval(lam, grid)
        c = np.einsum("q,qi,qj->ij", w, Lv, U)
        return CoefficientTable(lam, c, np.zeros_like(c))
    raise InputError(f"unknown quadrature {kind!r}")


# --------------------------------------------------------------------------
# allocation


def weighted_tail(table: CoefficientTable, m: Sequence[int]) -> float:
    """``sum_i omega_i^(1/2) (sum_{j > m_i} c_{i,j}^2)^(1/2)``."""
    c2 = table.c ** 2
    w = np.sqrt(table.omega)
    return float(sum(w[i] * math.sqrt(c2[i, m_i:].sum()) for i, m_i in enumerate(m)))


def allocate_truncations(table: CoefficientTable, budget: int, monotone: bool = False) -> np.ndarray:
    """Per-row output-mode counts minimizing the weighted tail with ``sum m_i <= budget``.

    Solved exactly by dynamic programming over rows (a multiple-choice
    knapsack).  Ties prefer fewer modes, then earlier rows.  With
    ``monotone=True`` the counts are additionally required to be
    nonincreasing in the order of :meth:`CoefficientTable.proxy`.
    """
    if budget < 0:
        raise InputError("budget must be nonnegative")
    n, J = table.c.shape
    c2 = table.c ** 2
    suffix = np.concatenate([np.cumsum(c2[:, ::-1], axis=1)[:, ::-1], np.zeros((n, 1))], axis=1)
    cost = np.sqrt(table.omega)[:, None] * np.sqrt(suffix)   # cost[i, m] for m = 0..J
    order = list(range(n))
    if monotone:
        proxy = table.proxy()
        order = sorted(range(n), key=lambda i: (-proxy[i], i))
    B = min(int(budget), n * J)
    tol = 1e-14 * max(1.0, float(cost[:, 0].sum()))
    # value[k][b][cap]: best cost for rows order[k:] with budget b and cap on m
    caps = J + 1 if monotone else 1
    INF = math.inf
    value = np.full((n + 1, B + 1, caps), 0.0)
    choice = np.zeros((n, B + 1, caps), dtype=int)
    for k in range(n - 1, -1, -1):
        i = order[k]
        for b in range(B + 1):
            for cap in range(caps):
                limit = min(J, b, cap if monotone else J)
                best, arg = INF, 0
                for mi in range(limit + 1):
                    nxt = value[k + 1, b - mi, mi if monotone else 0]
                    v = cost[i, mi] + nxt
                    if v < best - tol:
                        best, arg = v, mi
                value[k, b, cap] = best
                choice[k, b, cap] = arg
    m = np.zeros(n, dtype=int)
    b, cap = B, (J if monotone else 0)
    for k in range(n):
        mi = choice[k, b, cap]
        m[order[k]] = mi
        b -= mi
        if monotone:
            cap = mi
    return m


def brute_force_allocation(table: CoefficientTable, budget: int) -> tuple[np.ndarray, float]:
    """Exhaustive minimizer of the weighted tail (small tables only)."""
    n, J = table.c.shape
    best, best_m = math.inf, None
    for m in itertools.product(range(J + 1), repeat=n):
        if sum(m) > budget:
            continue
        v = weighted_tail(table, m)
        if v < best - 1e-14:
            best, best_m = v, np.array(m)
    return best_m, best


# --------------------------------------------------------------------------
# constructive surrogate


def rho_schedule(N: int, r: float, t: float) -> float:
    """Accuracy ``N^(-min{r - 1/2, t})`` capped below 1/2."""
    return min(0.49, float(N) ** (-min(r - 0.5, t)))


def build_constructive_surrogate(table: CoefficientTable, m: Sequence[int], rho: float,
                                 activation, encoder: Frame, scaling: ScalingMap,
                                 decoder: Frame, p0: Optional[int] = None,
                                 out_dim: Optional[int] = None, verify: bool = False) -> FrameNetModel:
    """Assemble ``gamma~`` from approximate tensor Legendre outputs.

    Output mode ``j`` is ``sum_{i : m_i > j} c_{nu_i, j} L~_{nu_i}``, realized as
    scalar-multiplication networks on duplicated Legendre outputs followed
    by a summation layer.
    """
    act = Activation.parse(activation)
    m = np.asarray(m, dtype=int)
    if m.size != len(table.lam):
        raise InputError("one truncation per multi-index required")
    p0 = table.lam.n_dims if p0 is None else int(p0)
    p0 = max(p0, 1)
    J = int(m.max()) if m.size else 0
    out_dim = max(J, 1) if out_dim is None else int(out_dim)
    if J > out_dim or J > table.c.shape[1]:
        raise InputError("allocation exceeds the available output modes")
    used = [i for i in range(m.size) if m[i] > 0]
    pairs = [(k, j) for k, i in enumerate(used) for j in range(m[i]) if table.c[i, j] != 0.0]
    info = {"rho": rho, "allocation": m.tolist(), "terms": len(pairs)}
    if not pairs:
        net = zero_net(p0, out_dim, act)
        return FrameNetModel(encoder.dual, p0, scaling, net, decoder, out_dim, certificate=info)
    lam_used = MultiIndexSet(tuple(table.lam.indices[i] for i in used))
    legendre = tensor_legendre_net(lam_used, rho, act, n_inputs=p0, verify=verify)
    sms = [scalar_mult_net(table.c[used[k], j], 1, act) for k, j in pairs]
    top = max(f.depth for f in sms)
    stage = parallelize([extend_depth(f, top - f.depth) for f in sms])
    fan = np.zeros((len(used), len(pairs)))
    for col, (k, _) in enumerate(pairs):
        fan[k, col] = 1.0
    stage = _plain_concat(stage, affine_net(fan, np.zeros(len(pairs)), act))
    total = np.zeros((len(pairs), out_dim))
    for row, (_, j) in enumerate(pairs):
        total[row, j] = 1.0
    stage = _plain_concat(affine_net(total, np.zeros(out_dim), act), stage)
    net = sparse_concat(stage, legendre.net)
    info["legendre_certificate"] = {"certified_sup_error": legendre.certified_sup_error,
                                    "verified_error": legendre.verified_error}
    # |L_nu| <= omega_nu^(1/2) on the cube, plus the approximation error rho
    sup_l = np.sqrt(table.omega[used]) + rho
    col = np.zeros(out_dim)
    for i, mi in zip(used, m[used]):
        col[:mi] += np.abs(table.c[i, :mi]) * sup_l[used.index(i)]
    bound = float(np.linalg.norm(col))
    info["range_bound"] = bound
    return FrameNetModel(encoder.dual, p0, scaling, net, decoder, out_dim,
                         B=max(1.0, bound), certificate=info)


def surrogate_reference(table: CoefficientTable, m: Sequence[int], Y: np.ndarray, out_dim: int) -> np.ndarray:
    """Exact truncated expansion ``sum_i sum_{j<m_i} c_{i,j} L_{nu_i}(y)`` at points ``Y``."""
    Lv = legendre_tensor_eval(table.lam, Y)
    out = np.zeros((Y.shape[0], out_dim))
    for i, mi in enumerate(m):
        if mi:
            out[:, :mi] += Lv[:, [i]] * table.c[i, :mi]
    return out
