"""Empirical risk, approximate ERM training, error metrics and rate studies."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .darcy import Dataset, DarcyProblem, add_noise, solve_parallel
from .errors import InputError, TrainingError
from .frames import Frame, ScalingMap, SmoothnessWeights, sample_gamma, scale_Sr
from .model import (
    ArchitectureConfig,
    FrameNetModel,
    encode,
    framenet_apply,
    make_architecture,
)
from .network import (
    Activation,
    Layer,
    NeuralNet,
    dense_net,
    eval_net,
    params_of,
    with_params,
)
from .rates import rate_exponent, sample_schedule


# --------------------------------------------------------------------------
# risks and norms


def _outputs(model, X) -> np.ndarray:
    if isinstance(model, FrameNetModel):
        return framenet_apply(model, X)
    return np.atleast_2d(np.asarray(model(X), dtype=float))


def _match(G: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    G = np.atleast_2d(G)
    Y = np.atleast_2d(Y)
    if G.shape[1] < Y.shape[1]:
        G = np.pad(G, ((0, 0), (0, Y.shape[1] - G.shape[1])))
    elif Y.shape[1] < G.shape[1]:
        Y = np.pad(Y, ((0, 0), (0, G.shape[1] - Y.shape[1])))
    return G, Y


def risk_from_outputs(G: np.ndarray, Y: np.ndarray) -> float:
    """``(1/n) sum_i (-2 <G_i, y_i> + ||G_i||^2)``."""
    G, Y = _match(G, Y)
    return float(np.mean(-2.0 * np.sum(G * Y, axis=1) + np.sum(G * G, axis=1)))


def empirical_risk(model, dataset: Dataset) -> float:
    """``I_n(G)``, finite under white noise; may be negative."""
    return risk_from_outputs(_outputs(model, dataset.design), dataset.obs)


def empirical_risk_ls(model, dataset: Dataset) -> float:
    """Least-squares risk ``(1/n) sum_i ||y_i - G(x_i)||^2``."""
    G, Y = _match(_outputs(model, dataset.design), dataset.obs)
    return float(np.mean(np.sum((Y - G) ** 2, axis=1)))


def empirical_norm(map_a, map_b, X) -> float:
    """``||A - B||_n``, the root mean square of output distances on the design."""
    A, B = _match(_outputs(map_a, X), _outputs(map_b, X))
    return float(np.sqrt(np.mean(np.sum((A - B) ** 2, axis=1))))


def l2_gamma_error(model, truth: Callable | np.ndarray, x_frame: Optional[Frame] = None,
                   mc_samples: int = 1000, rng_seed=0, x: Optional[np.ndarray] = None) -> tuple[float, float]:
    """Monte Carlo ``||model - truth||^2_{L^2(gamma)}`` and its standard error.

    Either ``x`` (precomputed samples of ``gamma``) is given, in which case
    ``truth`` may be the array of true outputs, or samples are drawn through
    the model's scaling and ``x_frame``.
    """
    if x is None:
        if mc_samples < 2:
            raise InputError("need at least two Monte Carlo samples")
        if x_frame is None:
            # gamma is pushed forward through Psi_X, the dual of the encoder
            x_frame = model.encoder.dual
        x = sample_gamma(model.scaling, x_frame, rng_seed, n=mc_samples)
    T = truth if isinstance(truth, np.ndarray) else truth(x)
    G, T = _match(_outputs(model, x), T)
    err = np.sum((G - T) ** 2, axis=1)
    if err.size < 2:
        raise InputError("need at least two Monte Carlo samples")
    return float(err.mean()), float(err.std(ddof=1) / math.sqrt(err.size))


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Full-batch projected Adam with a monotone acceptance rule."""

    lr: float = 1e-2
    epochs: int = 2000
    restarts: int = 2
    init_scale: float = 1.0
    seed: int = 0
    grad_clip: float = 10.0
    lr_growth: float = 1.05
    min_lr: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.restarts < 1 or self.epochs < 1:
            raise InputError("restarts and epochs must be at least 1")
        if not self.lr > 0 or not self.init_scale > 0 or not self.grad_clip > 0:
            raise InputError("lr, init_scale and grad_clip must be positive")


@dataclass
class TrainLog:
    """Risks per restart: initial, final and the accepted-step trace of the best run."""

    initial_risk: list = field(default_factory=list)
    final_risk: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    best_restart: int = -1
    trace: list = field(default_factory=list)


def _project(params, M):
    return [(np.clip(W, -M, M), np.clip(b, -M, M)) for W, b in params]


def _forward(net: NeuralNet, U: np.ndarray, V: Optional[np.ndarray]):
    """Outputs in Y coordinates plus the cached layer inputs and pre-activations."""
    act = net.activation
    inputs, pre = [], []
    z = U
    for layer in net.layers[:-1]:
        inputs.append(z)
        a = z @ layer.W + layer.b
        pre.append(a)
        z = act(a)
    inputs.append(z)
    last = net.layers[-1]
    C = z @ last.W + last.b
    return (C if V is None else C @ V.T), (inputs, pre)


def _backward(net: NeuralNet, cache, G: np.ndarray, Y: np.ndarray, V: Optional[np.ndarray]):
    inputs, pre = cache
    G, Yp = _match(G, Y)
    delta = 2.0 * (G - Yp) / G.shape[0]
    if V is not None:
        delta = delta @ V
    grads: list = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        grads[k] = (np.where(layer.mask, inputs[k].T @ delta, 0.0), delta.sum(axis=0))
        if k > 0:
            delta = (delta @ layer.W.T) * net.activation.derivative(pre[k - 1])
    return grads


def _risk(net, U, Y, V) -> float:
    return risk_from_outputs(_forward(net, U, V)[0], Y)


def _decoder_matrix(decoder: Frame, out_dim: int) -> Optional[np.ndarray]:
    V = decoder.vectors[:, :out_dim]
    if V.shape[0] == V.shape[1] and np.array_equal(V, np.eye(V.shape[0])):
        return None
    return V


def fit_network(net: NeuralNet, U: np.ndarray, Y: np.ndarray, cfg: TrainConfig, M: float,
                V: Optional[np.ndarray] = None, trace: Optional[list] = None) -> tuple[NeuralNet, float, int, int]:
    """Minimize ``I_n`` over the unmasked parameters of ``net``.

    Each step proposes a projected Adam update and accepts it only when the
    risk does not increase; rejected steps halve the learning rate.
    Returns the final network, its risk and the accepted/rejected counts.
    """
    params = _project(params_of(net), M)
    net = with_params(net, params)
    masks = [layer.mask for layer in net.layers]
    G, cache = _forward(net, U, V)
    risk = risk_from_outputs(G, Y)
    grads = _backward(net, cache, G, Y, V)
    if not math.isfinite(risk):
        raise TrainingError("initial risk is not finite")
    m1 = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    m2 = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    lr = cfg.lr
    accepted = rejected = 0
    t = 0
    for _ in range(cfg.epochs):
        norm = math.sqrt(sum(float(np.sum(gW * gW) + np.sum(gb * gb)) for gW, gb in grads))
        if not math.isfinite(norm):
            raise TrainingError(f"gradient is not finite (risk {risk})")
        scale = min(1.0, cfg.grad_clip / norm) if norm > 0 else 1.0
        t += 1
        step = []
        for k, (gW, gb) in enumerate(grads):
            gW, gb = gW * scale, gb * scale
            m1[k] = (cfg.beta1 * m1[k][0] + (1 - cfg.beta1) * gW, cfg.beta1 * m1[k][1] + (1 - cfg.beta1) * gb)
            m2[k] = (cfg.beta2 * m2[k][0] + (1 - cfg.beta2) * gW * gW,
                     cfg.beta2 * m2[k][1] + (1 - cfg.beta2) * gb * gb)
            c1, c2 = 1 - cfg.beta1 ** t, 1 - cfg.beta2 ** t
            dW = (m1[k][0] / c1) / (np.sqrt(m2[k][0] / c2) + 1e-8)
            db = (m1[k][1] / c1) / (np.sqrt(m2[k][1] / c2) + 1e-8)
            step.append((np.where(masks[k], dW, 0.0), db))
        cand = _project([(W - lr * dW, b - lr * db) for (W, b), (dW, db) in zip(params, step)], M)
        cand_net = with_params(net, cand)
        G, cache = _forward(cand_net, U, V)
        cand_risk = risk_from_outputs(G, Y)
        if math.isnan(cand_risk):
            raise TrainingError(f"risk became NaN at step {t} (lr {lr:g}, last risk {risk:.6g})")
        if cand_risk <= risk:
            params, net, risk = cand, cand_net, cand_risk
            accepted += 1
            lr = min(lr * cfg.lr_growth, cfg.lr * 10)
            if trace is not None:
                trace.append(risk)
            grads = _backward(net, cache, G, Y, V)
        else:
            rejected += 1
            lr *= 0.5
            if lr < cfg.min_lr:
                break
    return net, risk, accepted, rejected


def train_erm(arch: ArchitectureConfig, N: int, dataset: Dataset, cfg: TrainConfig,
              x_frame: Frame, scaling: ScalingMap, decoder: Frame, p0: Optional[int] = None,
              out_dim: Optional[int] = None, return_log: bool = False):
    """Approximate empirical risk minimizer over the fully connected class of budget ``N``.

    Inputs are encoded with the dual of ``x_frame`` and scaled by ``S_r``;
    the network is trained on ``I_n`` with parameters boxed in ``[-M, M]``.
    Independent restarts are run and the lowest-risk model is returned.
    """
    if len(dataset) == 0:
        raise InputError("dataset is empty")
    p0 = dataset.design.shape[1] if p0 is None else int(p0)
    out_dim = min(dataset.obs.shape[1], decoder.size) if out_dim is None else int(out_dim)
    depth, width, _ = make_architecture(arch, N)
    act = Activation.parse(arch.activation)
    encoder = x_frame.dual
    U, _ = scale_Sr(scaling, encode_with(encoder, p0, dataset.design))
    V = _decoder_matrix(decoder, out_dim)
    Y = dataset.obs
    log = TrainLog()
    best = None
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    for k, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        net0 = dense_net([p0] + [width] * depth + [out_dim], rng, cfg.init_scale, act)
        net0 = with_params(net0, _project(params_of(net0), arch.M))
        r0 = _risk(net0, U, Y, V)
        trace: list = []
        net, risk, acc, rej = fit_network(net0, U, Y, cfg, arch.M, V, trace)
        log.initial_risk.append(r0)
        log.final_risk.append(risk)
        log.accepted.append(acc)
        log.rejected.append(rej)
        if best is None or risk < best[1]:
            best = (net, risk, k, trace)
    net, risk, k, trace = best
    log.best_restart, log.trace = k, trace
    model = FrameNetModel(encoder, p0, scaling, net, decoder, out_dim, B=math.inf,
                          certificate={"train_risk": risk, "N": N, "depth": depth, "width": width})
    return (model, log) if return_log else model


def encode_with(encoder: Frame, p0: int, X: np.ndarray) -> np.ndarray:
    from .frames import analysis

    return analysis(encoder, X)[..., :p0]


# --------------------------------------------------------------------------
# problems


@dataclass(eq=False)
class RegressionProblem:
    """Scalar regression ``y = G_0(x) + sigma e`` with ``x`` uniform on ``[0, 1]``."""

    func: Callable[[np.ndarray], np.ndarray] = None
    sigma: float = 1.0
    noise_model: str = "white"

    def __post_init__(self):
        if self.func is None:
            self.func = lambda x: np.sin(2 * np.pi * x)
        self.x_frame = Frame.orthonormal(1, {"kind": "identity"})
        self.decoder = Frame.orthonormal(1, {"kind": "identity"})
        # R theta^r = 1 maps [0, 1] into the unit cube unchanged
        self.scaling = ScalingMap(1.0, 1.0, SmoothnessWeights(np.ones(1)))
        self.p0 = 1
        self.out_dim = 1

    def truth(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(np.asarray(X)[:, :1]), dtype=float).reshape(-1, 1)

    def design(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(n, 1))

    def sample(self, n: int, rng_seed) -> Dataset:
        d_seed, e_seed = np.random.SeedSequence(rng_seed).spawn(2) if not isinstance(
            rng_seed, np.random.SeedSequence) else rng_seed.spawn(2)
        X = self.design(n, np.random.default_rng(d_seed))
        clean = self.truth(X)
        obs = add_noise(clean, self.sigma, self.noise_model, np.random.default_rng(e_seed))
        return Dataset(X, obs, self.noise_model, self.sigma, None, clean)

    def eval_set(self, mc: int, rng_seed) -> tuple[np.ndarray, np.ndarray]:
        X = self.design(mc, np.random.default_rng(rng_seed))
        return X, self.truth(X)


@dataclass(eq=False)
class OperatorProblem:
    """Darcy coefficient-to-solution map observed with noise in output coordinates."""

    darcy: DarcyProblem
    sigma: float = 0.01
    noise_model: str = "white"
    threads: int = 1

    def __post_init__(self):
        self.x_frame = self.darcy.x_frame
        self.decoder = self.darcy.y_frame
        self.scaling = self.darcy.scaling
        self.p0 = self.darcy.p0
        self.out_dim = self.darcy.J
        self._eval_cache: dict = {}

    def truth(self, X: np.ndarray) -> np.ndarray:
        return solve_parallel(self.darcy, X, self.threads)

    def sample(self, n: int, rng_seed) -> Dataset:
        ss = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
        d_seed, e_seed = ss.spawn(2)
        X, _ = self.darcy.sample_inputs(n, np.random.default_rng(d_seed))
        clean = self.truth(X)
        obs = add_noise(clean, self.sigma, self.noise_model, np.random.default_rng(e_seed))
        return Dataset(X, obs, self.noise_model, self.sigma, None, clean)

    def eval_set(self, mc: int, rng_seed) -> tuple[np.ndarray, np.ndarray]:
        key = (mc, rng_seed)
        if key not in self._eval_cache:
            X, _ = self.darcy.sample_inputs(mc, np.random.default_rng(rng_seed))
            self._eval_cache[key] = (X, self.truth(X))
        return self._eval_cache[key]


# --------------------------------------------------------------------------
# rate studies


@dataclass
class RateStudy:
    """Per-run rows ``(n, N, rep, mse, se)`` and their per-``n`` aggregates."""

    n_grid: list
    reps: int
    kappa: float
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise InputError("n_grid must be strictly increasing")
        if self.reps < 1:
            raise InputError("reps must be at least 1")

    def summary_rows(self) -> list[tuple]:
        """``(n, N, mean mse, sd)`` per grid point."""
        out = []
        for n in self.n_grid:
            sel = [r for r in self.rows if r[0] == n]
            if not sel:
                continue
            mse = np.array([r[3] for r in sel])
            sd = float(mse.std(ddof=1)) if mse.size > 1 else 0.0
            out.append((n, sel[0][1], float(mse.mean()), sd))
        return out

    def slope(self) -> float:
        return fit_loglog_slope([(n, m) for n, _, m, _ in self.summary_rows()])

    @property
    def theoretical_slope(self) -> float:
        return -rate_exponent(self.kappa)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "N", "rep", "mse", "se"])
        for n, N, rep, mse, se in self.rows:
            w.writerow([n, N, rep, repr(float(mse)), repr(float(se))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"n_grid": list(self.n_grid), "reps": self.reps, "kappa": self.kappa,
                "means": [[n, N, m, s] for n, N, m, s in self.summary_rows()],
                "fitted_slope": self.slope() if len(self.summary_rows()) >= 2 else None,
                "theoretical_slope": self.theoretical_slope}


def rate_study(problem, n_grid: Sequence[int], reps: int, kappa: float, cfg: TrainConfig,
               arch: Optional[ArchitectureConfig] = None, mc_samples: int = 2000, seed: int = 0,
               threads: int = 1, schedule: Optional[Callable[[int], int]] = None) -> RateStudy:
    """Train on fresh data for each ``n`` and replication and record the ``L^2(gamma)`` MSE.

    The budget follows ``N(n) = ceil(n^(1/(kappa+1)))`` unless ``schedule`` is
    given.  Cells run on ``threads`` workers; each owns its seed stream
    ``(seed, grid index, rep)``, so results do not depend on scheduling.
    """
    arch = ArchitectureConfig() if arch is None else arch
    study = RateStudy(list(n_grid), reps, kappa)
    schedule = schedule or (lambda n: sample_schedule(n, kappa))
    X_eval, T_eval = problem.eval_set(mc_samples, np.random.SeedSequence(seed, spawn_key=(2 ** 31,)))

    def cell(args):
        i, n, rep = args
        ss = np.random.SeedSequence(seed, spawn_key=(i, rep))
        data_ss, train_ss = ss.spawn(2)
        data = problem.sample(n, data_ss)
        N = schedule(n)
        run_cfg = TrainConfig(**{**asdict(cfg), "seed": int(train_ss.generate_state(1)[0])})
        model = train_erm(arch, N, data, run_cfg, problem.x_frame, problem.scaling, problem.decoder,
                          problem.p0, problem.out_dim)
        mse, se = l2_gamma_error(model, T_eval, x=X_eval)
        return (n, N, rep, mse, se)

    jobs = [(i, n, rep) for i, n in enumerate(study.n_grid) for rep in range(reps)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            study.rows = list(pool.map(cell, jobs))
    else:
        study.rows = [cell(j) for j in jobs]
    return study


def fit_loglog_slope(rows: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ``log mse`` against ``log n``."""
    if len(rows) < 2:
        raise InputError("need at least two rows")
    n = np.array([r[0] for r in rows], dtype=float)
    m = np.array([r[1] for r in rows], dtype=float)
    if np.any(n <= 0) or np.any(m <= 0):
        raise InputError("n and mse must be positive")
    x, y = np.log(n), np.log(m)
    x = x - x.mean()
    return float(np.dot(x, y - y.mean()) / np.dot(x, x))


def write_study(study: RateStudy, out_dir) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "study.csv"), "w") as fh:
        fh.write(study.to_csv())
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(study.summary(), fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# constructive surrogate trend


@dataclass
class SurrogateStudy:
    """Rows ``(N, terms, mse, se)`` for constructive surrogates of growing budget."""

    rows: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "terms", "mse", "se"])
        for N, terms, mse, se in self.rows:
            w.writerow([N, terms, repr(float(mse)), repr(float(se))])
        return buf.getvalue()

    def nonincreasing(self, noise_factor: float = 2.0) -> bool:
        """Whether each error is at most the previous one plus ``noise_factor`` standard errors."""
        return all(b[2] <= a[2] + noise_factor * max(a[3], b[3]) for a, b in zip(self.rows, self.rows[1:]))


def surrogate_study(problem, N_grid: Sequence[int], t: float = 1.0, g: float = 2.0,
                    pool_size: Optional[int] = None, coeff_samples: int = 2000,
                    mc_samples: int = 2000, activation: str = "relu", seed: int = 0) -> SurrogateStudy:
    """Errors of constructive FrameNet surrogates with ``N`` coefficient terms.

    Legendre coefficients over a fixed anisotropic pool of multi-indices are
    estimated once by discrete least squares; for each ``N`` the allocation picks at most
    ``N`` terms and the networks use accuracy ``rho_schedule(N, r, t)``.
    """
    from .constructions import first_indices
    from .model import (CoefficientTable, allocate_truncations, build_constructive_surrogate,
                        estimate_legendre_coeffs, rho_schedule)
    from .frames import sigma_Rr

    N_grid = list(N_grid)
    pool_size = pool_size or 2 * max(N_grid)
    lam = first_indices(problem.p0, g, pool_size)
    smap, x_frame = problem.scaling, problem.x_frame
    coeff_ss, eval_ss = np.random.SeedSequence(seed).spawn(2)
    table = estimate_legendre_coeffs(lambda Y: problem.truth(sigma_Rr(smap, x_frame, Y)), lam,
                                     problem.out_dim, problem.p0, ("lsq", coeff_samples),
                                     np.random.default_rng(coeff_ss))
    X_eval, T_eval = problem.eval_set(mc_samples, eval_ss)
    study = SurrogateStudy(notes={"pool": len(lam), "coeff_samples": coeff_samples, "t": t, "g": g,
                                  "r": smap.r})
    for N in N_grid:
        m = allocate_truncations(table, N)
        rho = rho_schedule(N, smap.r, t)
        model = build_constructive_surrogate(table, m, rho, activation, x_frame, smap, problem.decoder,
                                             problem.p0, problem.out_dim)
        mse, se = l2_gamma_error(model, T_eval, x=X_eval)
        study.rows.append((N, int(m.sum()), mse, se))
    return study
