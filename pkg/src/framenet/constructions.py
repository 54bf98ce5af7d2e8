"""Certified constructive networks: products, polynomials and Legendre systems.

ReLU builders return approximations with an explicit error budget and
all parameters in ``[-1, 1]``; RePU(2) builders realize the same maps
exactly.  Each builder wraps its network in a :class:`CertifiedNet` and,
unless ``verify=False``, checks the certificate on a verification set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import InfeasibleBudgetError, InputError, UnsupportedError
from .network import (
    RELU,
    REPU2,
    Activation,
    Layer,
    NeuralNet,
    _plain_concat,
    affine_net,
    eval_net,
    extend_depth,
    identity_net,
    metrics,
    net_from_dict,
    net_to_dict,
    parallelize,
    scalar_mult_net,
    sparse_concat,
    structural_layer,
)

EPS = np.finfo(float).eps

#: Largest number of tensor-grid points used in a verification sweep.
GRID_POINT_LIMIT = 50_000
#: Monte Carlo points for verification in higher effective dimension.
MC_POINTS = 10_000

#: Parameter bounds of the RePU(2) constructions, measured on this
#: implementation's wiring and frozen (the existence proofs give no values).
REPU_MPAR_CONSTANT = 4.0


# --------------------------------------------------------------------------
# Legendre polynomials and multi-index sets


def legendre_eval(j: int, x) -> np.ndarray:
    """Normalized Legendre polynomial ``L_j = sqrt(2j+1) P_j`` by recurrence.

    ``L_j`` has unit norm for the uniform probability measure on ``[-1, 1]``.
    """
    if j < 0:
        raise InputError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if j == 0:
        return p_prev
    p = x.copy()
    for n in range(1, j):
        p_prev, p = p, ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
    return np.sqrt(2 * j + 1) * p


def legendre_monomial_coeffs(j: int) -> np.ndarray:
    """Monomial coefficients ``a_0..a_j`` of ``L_j``."""
    e = np.zeros(j + 1)
    e[j] = 1.0
    return np.sqrt(2 * j + 1) * npleg.leg2poly(e)


@dataclass(frozen=True)
class MultiIndexSet:
    """Finite set of finitely supported multi-indices.

    Each index is a tuple of ``(position, value)`` pairs with positive
    values, sorted by position; the zero index is the empty tuple.
    """

    indices: tuple
    downward_closed: bool = False

    def __post_init__(self):
        clean = []
        for nu in self.indices:
            pairs = tuple(sorted((int(p), int(v)) for p, v in nu if int(v) != 0))
            if any(p < 0 or v < 0 for p, v in pairs):
                raise InputError("positions and values must be nonnegative")
            if len({p for p, _ in pairs}) != len(pairs):
                raise InputError("repeated position in a multi-index")
            clean.append(pairs)
        if len(set(clean)) != len(clean):
            raise InputError("duplicate multi-index")
        object.__setattr__(self, "indices", tuple(clean))
        if self.downward_closed and not self.is_downward_closed():
            raise InputError("set flagged downward closed is not")

    @classmethod
    def from_dense(cls, rows: Iterable[Sequence[int]], downward_closed: bool = False) -> "MultiIndexSet":
        return cls(tuple(tuple((k, v) for k, v in enumerate(r) if v) for r in rows), downward_closed)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    @property
    def n_dims(self) -> int:
        """Smallest ambient dimension containing every support."""
        return max((p + 1 for nu in self.indices for p, _ in nu), default=0)

    def d(self) -> int:
        """Effective dimension: largest support size."""
        return max((len(nu) for nu in self.indices), default=0)

    def m(self) -> int:
        """Maximal order: largest ``|nu|_1``."""
        return max((sum(v for _, v in nu) for nu in self.indices), default=0)

    def dense(self, n_dims: Optional[int] = None) -> np.ndarray:
        n = self.n_dims if n_dims is None else n_dims
        out = np.zeros((len(self.indices), n), dtype=int)
        for i, nu in enumerate(self.indices):
            for p, v in nu:
                out[i, p] = v
        return out

    def is_downward_closed(self) -> bool:
        members = set(self.indices)
        for nu in self.indices:
            for k, (p, v) in enumerate(nu):
                lower = list(nu)
                if v == 1:
                    del lower[k]
                else:
                    lower[k] = (p, v - 1)
                if tuple(lower) not in members:
                    return False
        return True

    def to_list(self) -> list:
        return [[list(pair) for pair in nu] for nu in self.indices]

    @classmethod
    def from_list(cls, data, downward_closed: bool = False) -> "MultiIndexSet":
        return cls(tuple(tuple(tuple(pair) for pair in nu) for nu in data), downward_closed)


def anisotropic_set(n_dims: int, g: float, level: float) -> MultiIndexSet:
    """All ``nu`` with ``sum_k (1+k)^g nu_k <= level`` over ``n_dims`` coordinates.

    Indices are returned sorted by their weight (ties lexicographic), so every
    prefix of the list is again downward closed.
    """
    if n_dims < 1 or level < 0:
        raise InputError("need n_dims >= 1 and level >= 0")
    w = (1.0 + np.arange(n_dims)) ** g
    found = []

    def rec(k, rest, current):
        if k == n_dims:
            found.append(tuple(current))
            return
        v = 0
        while v * w[k] <= rest + 1e-12:
            current.append(v)
            rec(k + 1, rest - v * w[k], current)
            current.pop()
            v += 1

    rec(0, float(level), [])
    found.sort(key=lambda r: (float(np.dot(w, r)), tuple(-v for v in r)))
    return MultiIndexSet.from_dense(found, downward_closed=True)


def first_indices(n_dims: int, g: float, count: int) -> MultiIndexSet:
    """The ``count`` lowest-weight indices of the anisotropic family."""
    level = 1.0
    while True:
        full = anisotropic_set(n_dims, g, level)
        if len(full) >= count:
            return MultiIndexSet(full.indices[:count], downward_closed=True)
        level *= 1.5


def legendre_tensor_eval(lam: MultiIndexSet, Y: np.ndarray) -> np.ndarray:
    """``L_nu(y)`` for every ``nu`` in ``lam`` at points ``Y`` of shape ``(n, dims)``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    out = np.ones((Y.shape[0], len(lam)))
    cache: dict = {}
    for i, nu in enumerate(lam):
        for p, v in nu:
            if (p, v) not in cache:
                cache[(p, v)] = legendre_eval(v, Y[:, p])
            out[:, i] *= cache[(p, v)]
    return out


# --------------------------------------------------------------------------
# certificates


@dataclass(eq=False)
class CertifiedNet:
    """A network together with its sup-error certificate on ``[-D, D]^p0``."""

    net: NeuralNet
    certified_sup_error: float
    domain_bound: float
    certificate_notes: dict = field(default_factory=dict)
    verified_error: Optional[float] = None

    def __call__(self, x):
        return eval_net(self.net, x)

    def to_dict(self) -> dict:
        return {
            "net": net_to_dict(self.net),
            "certificate": {
                "certified_sup_error": self.certified_sup_error,
                "domain_bound": self.domain_bound,
                "verified_error": self.verified_error,
                "notes": self.certificate_notes,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CertifiedNet":
        cert = data["certificate"]
        return cls(net_from_dict(data["net"]), cert["certified_sup_error"], cert["domain_bound"],
                   dict(cert.get("notes", {})), cert.get("verified_error"))


def verification_points(dim: int, D: float, rng_seed=0, grid_points: int = 201,
                        mc_points: int = MC_POINTS) -> np.ndarray:
    """Verification set on ``[-D, D]^dim``.

    A full tensor grid with ``grid_points`` per axis is used while its total
    size stays below :data:`GRID_POINT_LIMIT` (the per-axis count is reduced
    otherwise, down to 11).  Beyond that, Monte Carlo points plus all cube
    corners are used.
    """
    per_axis = grid_points
    while per_axis ** dim > GRID_POINT_LIMIT and per_axis > 11:
        per_axis = per_axis // 2 + 1 if per_axis > 21 else per_axis - 2
    if per_axis ** dim <= GRID_POINT_LIMIT and per_axis >= 11:
        axis = np.linspace(-D, D, per_axis)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)
    rng = np.random.default_rng(rng_seed)
    pts = rng.uniform(-D, D, size=(mc_points, dim))
    if dim <= 14:
        corners = np.array(np.meshgrid(*([[-D, D]] * dim), indexing="ij")).reshape(dim, -1).T
        pts = np.vstack([pts, corners])
    return pts


def _check(cert: CertifiedNet, points: np.ndarray, reference: np.ndarray) -> CertifiedNet:
    vals = eval_net(cert.net, points).reshape(reference.shape)
    err = float(np.max(np.abs(vals - reference))) if reference.size else 0.0
    cert.verified_error = err
    tol = cert.certified_sup_error if cert.certified_sup_error > 0 else 1e-10 * max(1.0, float(np.max(np.abs(reference))))
    if not err <= tol:
        raise AssertionError(f"certificate violated: measured {err:.3e} > {tol:.3e}")
    return cert


def _require_relu_delta(delta: float):
    if not 0 < delta < 0.5:
        raise InputError("delta must lie in (0, 1/2)")


def _require_q2(q: int):
    if q != 2:
        raise UnsupportedError("exact RePU constructions are implemented for q = 2 only")


# --------------------------------------------------------------------------
# two-number multiplication


def _sawtooth_levels(delta: float, D: float) -> int:
    # interpolation error of the squaring net is 4^{-(m+1)}, scaled by D^2
    m = 1
    while D * D * 4.0 ** (-(m + 1)) > 0.9 * delta:
        m += 1
    return m


def _mult_relu_net(delta: float, D: float) -> tuple[NeuralNet, dict]:
    m = _sawtooth_levels(delta, D)
    c = 1.0 / (2.0 * D)
    # hidden layer 1: sigma(+-u), sigma(+-v) with u = (x+y)/2D, v = (x-y)/2D
    W1 = np.array([[c, -c, c, -c], [c, -c, -c, c]])
    layers = [structural_layer(W1, np.zeros(4))]
    # per branch neurons: h1 (x2), h2 (x4), S
    nb = 7
    W2 = np.zeros((4, 2 * nb))
    b2 = np.zeros(2 * nb)
    for br in range(2):
        rows = [2 * br, 2 * br + 1]          # |t| = sigma(t) + sigma(-t)
        off = br * nb
        for k in range(nb):
            W2[rows, off + k] = 1.0
        b2[off + 2: off + 6] = -0.5
    layers.append(structural_layer(W2, b2))
    g_coef = np.array([1.0, 1.0, -1.0, -1.0, -1.0, -1.0])   # g = 2 sigma(t) - 4 sigma(t - 1/2)
    for k in range(1, m):
        Wk = np.zeros((2 * nb, 2 * nb))
        bk = np.zeros(2 * nb)
        for br in range(2):
            off = br * nb
            for col in range(6):
                Wk[off:off + 6, off + col] = g_coef
            bk[off + 2: off + 6] = -0.5
            Wk[off:off + 6, off + 6] = -g_coef / 4.0 ** k
            Wk[off + 6, off + 6] = 1.0
        layers.append(structural_layer(Wk, bk))
    # w = f_m(|u|) - f_m(|v|) with f_m = S_{m-1} - g_m / 4^m
    w = np.zeros(2 * nb)
    for br, sign in ((0, 1.0), (1, -1.0)):
        off = br * nb
        w[off:off + 6] = -sign * g_coef / 4.0 ** m
        w[off + 6] = sign
    K = max(0, math.ceil(math.log2(D * D) - 1e-12))
    rest = D * D / 2.0 ** K
    if K == 0:
        layers.append(structural_layer(rest * w[:, None], np.zeros(1)))
    else:
        pm = np.array([1.0, 1.0, -1.0, -1.0])
        layers.append(structural_layer(np.outer(w, pm), np.zeros(4)))
        for _ in range(K - 1):
            layers.append(structural_layer(np.outer(pm, pm), np.zeros(4)))
        layers.append(structural_layer(rest * pm[:, None], np.zeros(1)))
    notes = {"sawtooth_levels": m, "doublings": K, "interpolation_bound": D * D * 4.0 ** (-(m + 1))}
    return NeuralNet(tuple(layers), RELU), notes


def mult_net_relu(delta: float, D: float, verify: bool = True) -> CertifiedNet:
    """ReLU approximation of ``(x, y) -> xy`` on ``[-D, D]^2`` within ``delta``.

    Squaring by the sawtooth expansion applied to ``|x+y|/2D`` and
    ``|x-y|/2D``, then rescaling by ``D^2`` through doubling layers.
    """
    _require_relu_delta(delta)
    if not D >= 1:
        raise InputError("D must be at least 1")
    net, notes = _mult_relu_net(delta, float(D))
    cert = CertifiedNet(net, float(delta), float(D), notes)
    if verify:
        pts = verification_points(2, D)
        _check(cert, pts, pts[:, 0] * pts[:, 1])
    return cert


def _mult_repu_net() -> NeuralNet:
    W1 = np.array([[1.0, -1.0, 1.0, -1.0], [1.0, -1.0, -1.0, 1.0]])
    W2 = 0.25 * np.array([[1.0], [1.0], [-1.0], [-1.0]])
    return NeuralNet((structural_layer(W1, np.zeros(4)), structural_layer(W2, np.zeros(1))), REPU2)


def mult_net_repu(q: int = 2, verify: bool = True) -> CertifiedNet:
    """Exact depth-1 RePU(2) multiplier via polarization."""
    _require_q2(q)
    cert = CertifiedNet(_mult_repu_net(), 0.0, math.inf, {"identity": "polarization"})
    if verify:
        pts = verification_points(2, 10.0)
        _check(cert, pts, pts[:, 0] * pts[:, 1])
    return cert


# --------------------------------------------------------------------------
# products of N numbers


def _pad_affine(N: int, Nt: int) -> NeuralNet:
    W = np.zeros((N, Nt))
    W[:, :N] = np.eye(N)
    b = np.zeros(Nt)
    b[N:] = 1.0
    return affine_net(W, b)


def _tree(N: int, level_mult, activation: Activation, sparse: bool) -> tuple[NeuralNet, int]:
    Nt = 1 << max(1, math.ceil(math.log2(N)))
    levels = int(math.log2(Nt))
    net = None
    width = Nt
    for lev in range(levels):
        mult = level_mult(lev)
        level_net = parallelize([mult] * (width // 2))
        if net is None:
            pad = NeuralNet(_pad_affine(N, Nt).layers, activation)
            net = _plain_concat(level_net, pad)
        else:
            net = sparse_concat(level_net, net) if sparse else _plain_concat(level_net, net)
        width //= 2
    return net, Nt


def prod_net_relu(N: int, delta: float, D: float, verify: bool = True) -> CertifiedNet:
    """ReLU approximation of ``prod_i y_i`` on ``[-D, D]^N`` within ``delta``.

    Binary tree of approximate multipliers with accuracy
    ``delta' = delta / (Nt^2 D^(2 Nt))`` where ``Nt`` is the next power of
    two; padded inputs are fixed to 1 through biases.
    """
    if N < 2:
        raise InputError("N must be at least 2")
    _require_relu_delta(delta)
    if not D >= 1:
        raise InputError("D must be at least 1")
    Nt = 1 << math.ceil(math.log2(N))
    levels = int(math.log2(Nt))
    log_dp = math.log(delta) - 2 * math.log(Nt) - 2 * Nt * math.log(D)
    if log_dp < math.log(EPS):
        raise InfeasibleBudgetError(f"product budget delta' = exp({log_dp:.1f}) below machine epsilon")
    dp = math.exp(log_dp)
    D_lev = [2.0 ** l * D ** (2 ** l) for l in range(levels)]
    # propagate the worst-case error through the tree and check the level bounds
    err = 0.0
    for l in range(levels):
        exact = D ** (2 ** l)
        if exact + err > D_lev[l] * (1 + 1e-12):
            raise AssertionError(f"level {l} values may exceed D_l = {D_lev[l]}")
        err = dp + 2 * exact * err + err * err
    if err > delta:
        raise AssertionError(f"tree error bound {err:.3e} exceeds delta")
    mults = [_mult_relu_net(dp, D_lev[l])[0] for l in range(levels)]
    net, _ = _tree(N, lambda l: mults[l], RELU, sparse=True)
    notes = {"N_padded": Nt, "delta_prime": dp, "D_levels": D_lev, "tree_error_bound": err}
    cert = CertifiedNet(net, float(delta), float(D), notes)
    if verify:
        pts = verification_points(N, D)
        _check(cert, pts, np.prod(pts, axis=1))
    return cert


def prod_net_repu(N: int, q: int = 2, verify: bool = True, domain: float = 2.0) -> CertifiedNet:
    """Exact RePU(2) product of ``N`` numbers (binary tree of exact multipliers)."""
    if N < 2:
        raise InputError("N must be at least 2")
    _require_q2(q)
    mult = _mult_repu_net()
    net, Nt = _tree(N, lambda l: mult, REPU2, sparse=False)
    cert = CertifiedNet(net, 0.0, math.inf, {"N_padded": Nt})
    if verify:
        pts = verification_points(N, domain)
        _check(cert, pts, np.prod(pts, axis=1))
    return cert


# --------------------------------------------------------------------------
# polynomials


def _horner_stage(mult: NeuralNet, coef: float, first: Optional[float], activation: Activation) -> NeuralNet:
    """Map ``(x, h) -> (x, coef + mult(x, h))``; for the first stage ``x -> (x, coef + mult(x, first))``."""
    ident = identity_net(1, mult.depth, activation)
    core = parallelize([ident, mult])
    if first is None:
        pre = affine_net(np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), np.zeros(3), activation)
    else:
        pre = affine_net(np.array([[1.0, 1.0, 0.0]]), np.array([0.0, 0.0, first]), activation)
    post = affine_net(np.eye(2), np.array([0.0, coef]), activation)
    return _plain_concat(post, _plain_concat(core, pre))


def poly_net(coeffs: Sequence[float], delta: float, D: float, activation=RELU,
             verify: bool = True) -> CertifiedNet:
    """Network for ``x -> sum_i a_i x^i`` on ``[-D, D]``.

    Horner's scheme on the coefficients divided by ``a_inf = max{1, max|a_i|}``,
    followed by exact multiplication by ``a_inf``.  For ReLU each step uses
    an approximate multiplier with budget ``delta / (a_inf sum_{i<m} D^i)``;
    for RePU(2) every step is exact.
    """
    act = Activation.parse(activation)
    a = np.asarray(coeffs, dtype=float).reshape(-1)
    if a.size == 0:
        raise InputError("need at least one coefficient")
    if not D >= 1:
        raise InputError("D must be at least 1")
    relu = act.kind == "relu"
    if relu:
        _require_relu_delta(delta)
    else:
        _require_q2(act.q)
    m = a.size - 1
    a_inf = max(1.0, float(np.max(np.abs(a))))
    s = a / a_inf
    notes: dict = {"degree": m, "a_inf": a_inf}
    if m == 0:
        net = affine_net(np.zeros((1, 1)), np.array([s[0]]), act)
    else:
        geo = sum(D ** i for i in range(m))
        if relu:
            d_step = delta / (a_inf * geo)
            if d_step < 1e3 * EPS:
                raise InfeasibleBudgetError(f"per-step budget {d_step:.2e} too small")
            D_mult = max(D, geo + 1.0)
            mult, mnotes = _mult_relu_net(d_step, D_mult)
            notes.update({"step_budget": d_step, "mult_domain": D_mult, "mult": mnotes})
        else:
            mult = _mult_repu_net()
        net = _horner_stage(mult, s[m - 1], s[m], act)
        for k in range(m - 2, -1, -1):
            stage = _horner_stage(mult, s[k], None, act)
            net = sparse_concat(stage, net) if relu else _plain_concat(stage, net)
        net = _plain_concat(affine_net(np.array([[0.0], [1.0]]), np.zeros(1), act), net)
    if a_inf > 1.0:
        sm = scalar_mult_net(a_inf, 1, act)
        net = sparse_concat(sm, net) if (relu or net.depth == 0) else _plain_concat(sm, net)
    cert = CertifiedNet(net, float(delta) if relu else 0.0, float(D), notes)
    if verify:
        pts = np.linspace(-D, D, 2001)[:, None]
        _check(cert, pts, np.polynomial.polynomial.polyval(pts[:, 0], a)[:, None])
    return cert


def legendre_net(j: int, delta: float, activation=RELU, verify: bool = True) -> CertifiedNet:
    """Univariate ``L_j`` on ``[-1, 1]`` within ``delta`` (exact for RePU(2))."""
    act = Activation.parse(activation)
    cert = poly_net(legendre_monomial_coeffs(j), delta, 1.0, act, verify=False)
    cert.certificate_notes["legendre_degree"] = j
    if verify:
        x = np.linspace(-1.0, 1.0, 2001)
        _check(cert, x[:, None], legendre_eval(j, x)[:, None])
    return cert


# --------------------------------------------------------------------------
# tensorized Legendre polynomials


def _routing(n_in: int, sources: Sequence[int], bias: Optional[np.ndarray] = None,
             activation=RELU) -> NeuralNet:
    W = np.zeros((n_in, len(sources)))
    for col, src in enumerate(sources):
        if src is not None:
            W[src, col] = 1.0
    b = np.zeros(len(sources)) if bias is None else bias
    return affine_net(W, b, activation)


def tensor_legendre_net(lam: MultiIndexSet, delta: float, activation=RELU,
                        n_inputs: Optional[int] = None, verify: bool = True,
                        rng_seed=0) -> CertifiedNet:
    """One network with an output ``L_nu`` for every ``nu`` in ``lam`` (in order).

    Stage one evaluates univariate Legendre polynomials ``L_k(y_j)`` for every
    pair ``(j, k)`` occurring in ``lam``; stage two multiplies them with
    product networks of accuracy ``delta/2`` on ``[-M_nu, M_nu]``,
    ``M_nu = 2|nu|_1 + 2``.  The univariate budget is
    ``delta / (2 d (2m+2)^(d-1))``.
    """
    act = Activation.parse(activation)
    relu = act.kind == "relu"
    if relu:
        _require_relu_delta(delta)
    else:
        _require_q2(act.q)
    n_in = max(lam.n_dims, 1) if n_inputs is None else int(n_inputs)
    if n_in < lam.n_dims:
        raise InputError("n_inputs smaller than the support of the index set")
    d, m = lam.d(), lam.m()
    pairs = sorted({pair for nu in lam for pair in nu})
    pos = {pair: i for i, pair in enumerate(pairs)}
    notes: dict = {"d": d, "m": m, "size_Lambda": len(lam), "univariate_pairs": len(pairs)}
    zero_out = np.array([1.0 if len(nu) == 0 else 0.0 for nu in lam])
    if not pairs:
        net = affine_net(np.zeros((n_in, len(lam))), zero_out, act)
        cert = CertifiedNet(net, float(delta) if relu else 0.0, 1.0, notes)
        return _verify_tensor(cert, lam, n_in, rng_seed) if verify else cert
    d_uni = delta / (2 * d * (2 * m + 2) ** (d - 1)) if relu else 0.0
    notes["delta_univariate"] = d_uni
    uni_cache: dict = {}
    uni = []
    for _, k in pairs:
        if k not in uni_cache:
            uni_cache[k] = legendre_net(k, d_uni, act, verify=False).net if relu else \
                legendre_net(k, 0.0, act, verify=False).net
        uni.append(uni_cache[k])
    top = max(f.depth for f in uni)
    stage1 = parallelize([extend_depth(f, top - f.depth) for f in uni])
    stage1 = _plain_concat(stage1, _routing(n_in, [j for j, _ in pairs], activation=act))

    # stage two: products over supports of size >= 2, identities otherwise
    comps, sources, outputs = [], [], []
    nonzero = [nu for nu in lam if len(nu) > 0]
    M_nu = {}
    for nu in nonzero:
        if len(nu) == 1:
            comps.append(None)
        else:
            M = 2 * sum(v for _, v in nu) + 2
            M_nu[str(list(nu))] = M
            comps.append(prod_net_relu(len(nu), delta / 2, M, verify=False).net if relu
                         else prod_net_repu(len(nu), verify=False).net)
        sources.extend(pos[pair] for pair in nu)
    notes["M_nu"] = M_nu
    depth2 = max((c.depth for c in comps if c is not None), default=0)
    blocks = []
    for nu, c in zip(nonzero, comps):
        if c is None:
            blocks.append(identity_net(1, depth2, act))
        else:
            blocks.append(extend_depth(c, depth2 - c.depth))
    stage2 = parallelize(blocks)
    stage2 = _plain_concat(stage2, _routing(len(pairs), sources, activation=act))
    # outputs in the order of lam; the zero index is the constant 1
    out_src = []
    it = iter(range(len(nonzero)))
    for nu in lam:
        out_src.append(None if len(nu) == 0 else next(it))
    out = _routing(len(nonzero), out_src, zero_out, act)
    if stage2.depth == 0:
        net = _plain_concat(stage2, stage1)
    else:
        net = sparse_concat(stage2, stage1)
    net = _plain_concat(out, net)
    cert = CertifiedNet(net, float(delta) if relu else 0.0, 1.0, notes)
    return _verify_tensor(cert, lam, n_in, rng_seed) if verify else cert


def _verify_tensor(cert: CertifiedNet, lam: MultiIndexSet, n_in: int, rng_seed) -> CertifiedNet:
    rng = np.random.default_rng(rng_seed)
    pts = rng.uniform(-1.0, 1.0, size=(MC_POINTS, n_in))
    active = sorted({p for nu in lam for p, _ in nu})
    if 0 < len(active) <= 12:
        corners = np.array(np.meshgrid(*([[-1.0, 1.0]] * len(active)), indexing="ij"))
        corners = corners.reshape(len(active), -1).T
        extra = np.zeros((corners.shape[0], n_in))
        extra[:, active] = corners
        pts = np.vstack([pts, extra])
    return _check(cert, pts, legendre_tensor_eval(lam, pts))
