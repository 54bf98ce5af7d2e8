"""Spectral Darcy flow on the torus and noisy operator-learning datasets.

Solves ``-div((abar + a) grad u) = f`` with zero mean on ``[0,1)^d`` by
preconditioned conjugate gradients, with derivatives taken spectrally and
the inverse Laplacian as preconditioner.  Solves are vectorized over a
leading batch axis.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import GenerationError, InputError, SolverError
from .frames import (
    Frame,
    ScalingMap,
    SmoothnessWeights,
    coefficients_from_csv,
    coefficients_to_csv,
    frame_from_dict,
    frame_to_dict,
    scaling_from_dict,
    scaling_to_dict,
    sigma_Rr,
    torus_basis,
    torus_mode_weights,
    xi_eval,
    xi_sup_norm,
)

#: Radius of the uniform ball used for sub-Gaussian noise.  For this radius
#: ``P(||e|| >= t) <= 2 exp(-t^2/2)`` holds for every ``t``.
SUBGAUSSIAN_RADIUS = math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class TorusGrid:
    d: int
    n_per_dim: int

    def __post_init__(self):
        if self.d < 1:
            raise InputError("d must be at least 1")
        n = self.n_per_dim
        if n < 4 or n & (n - 1):
            raise InputError("n_per_dim must be a power of two, at least 4")

    @property
    def shape(self) -> tuple:
        return (self.n_per_dim,) * self.d

    def points(self) -> np.ndarray:
        """Grid points of shape ``(n, ..., n, d)``."""
        axis = np.arange(self.n_per_dim) / self.n_per_dim
        mesh = np.meshgrid(*([axis] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def wavenumbers(self) -> list:
        """Angular wavenumbers per axis, broadcastable, with the Nyquist mode zeroed."""
        n = self.n_per_dim
        k = 2 * np.pi * np.fft.fftfreq(n, d=1.0 / n)
        k[n // 2] = 0.0
        out = []
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = n
            out.append(k.reshape(shape))
        return out

    @cached_property
    def laplace_symbol(self) -> np.ndarray:
        """Symbol of ``-sum_k D_k D_k`` for the discrete derivatives used here.

        It vanishes on the ``2^d`` modes built from zero and Nyquist
        frequencies, which span the kernel of the discrete operator.
        """
        sym = np.zeros(self.shape)
        for k in self.wavenumbers:
            sym = sym + k ** 2
        return sym

    def project_range(self, v: np.ndarray) -> np.ndarray:
        """Remove the kernel modes (mean and Nyquist checkerboards)."""
        axes = tuple(range(-self.d, 0))
        vh = np.fft.fftn(v, axes=axes)
        vh = vh * (self.laplace_symbol > 0)
        return np.real(np.fft.ifftn(vh, axes=axes))


def _axes(grid: TorusGrid) -> tuple:
    return tuple(range(-grid.d, 0))


def _grid_of(field: np.ndarray, d: Optional[int]) -> TorusGrid:
    d = field.ndim if d is None else d
    return TorusGrid(d, field.shape[-1])


def gradient(u: np.ndarray, grid: TorusGrid) -> list:
    """Spectral gradient; one array per axis."""
    uh = np.fft.fftn(u, axes=_axes(grid))
    return [np.real(np.fft.ifftn(1j * k * uh, axes=_axes(grid))) for k in grid.wavenumbers]


def divergence(vec: list, grid: TorusGrid) -> np.ndarray:
    out = 0.0
    for v, k in zip(vec, grid.wavenumbers):
        out = out + np.real(np.fft.ifftn(1j * k * np.fft.fftn(v, axes=_axes(grid)), axes=_axes(grid)))
    return out


def apply_operator(a_total: np.ndarray, u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """``-div(a grad u)`` with spectral derivatives."""
    return -divergence([a_total * g for g in gradient(u, grid)], grid)


def _grid_mean(v: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return v.mean(axis=_axes(grid), keepdims=True)


def manufactured_rhs(u: np.ndarray, a_total: np.ndarray, d: Optional[int] = None) -> np.ndarray:
    """``-div(a grad u)`` with the grid mean removed."""
    u = np.asarray(u, dtype=float)
    grid = _grid_of(u, d)
    f = apply_operator(np.asarray(a_total, dtype=float), u, grid)
    return f - _grid_mean(f, grid)


@dataclass
class SolveInfo:
    iterations: int
    residual: np.ndarray


def solve_darcy(a_total: np.ndarray, f: np.ndarray, tol: float = 1e-10, maxiter: Optional[int] = None,
                d: Optional[int] = None, return_info: bool = False):
    """Zero-mean solution of ``-div(a grad u) = f``.

    ``a_total`` and ``f`` may carry leading batch axes (``d`` then gives the
    spatial dimension).  Convergence means
    ``||-div(a grad u) - f||_2 <= tol ||f||_2`` for every batch member.
    """
    a = np.asarray(a_total, dtype=float)
    f = np.asarray(f, dtype=float)
    grid = _grid_of(f, d)
    f, a = np.broadcast_arrays(f, a)
    if not np.all(np.isfinite(a)) or np.min(a) <= 0:
        raise InputError("coefficient must be strictly positive (coercivity)")
    axes = _axes(grid)
    scale = np.max(np.abs(f), axis=axes, keepdims=True)
    mean_f = _grid_mean(f, grid)
    if np.any(np.abs(mean_f) > 1e-8 * np.maximum(scale, 1e-300) + 1e-14):
        raise InputError("right-hand side must have zero mean")
    f = grid.project_range(f)
    if maxiter is None:
        maxiter = 10 * grid.n_per_dim ** grid.d
    sym = grid.laplace_symbol
    inv = np.zeros_like(sym)
    inv[sym > 0] = 1.0 / sym[sym > 0]
    abar = _grid_mean(a, grid)

    def precond(r):
        return np.real(np.fft.ifftn(np.fft.fftn(r, axes=axes) * inv, axes=axes)) / abar

    def dot(x, y):
        return np.sum(x * y, axis=axes, keepdims=True)

    fnorm = np.sqrt(dot(f, f))
    safe = np.where(fnorm > 0, fnorm, 1.0)
    u = np.zeros_like(f)
    r = f.copy()
    z = precond(r)
    p = z.copy()
    rz = dot(r, z)
    it = 0
    rel = np.sqrt(dot(r, r)) / safe
    while np.any(rel > tol) and it < maxiter:
        Ap = apply_operator(a, p, grid)
        pAp = dot(p, Ap)
        active = rel > tol
        alpha = np.where(active & (pAp > 0), rz / np.where(pAp > 0, pAp, 1.0), 0.0)
        u = u + alpha * p
        r = r - alpha * Ap
        z = precond(r)
        rz_new = dot(r, z)
        beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        p = z + beta * p
        rz = rz_new
        rel = np.sqrt(dot(r, r)) / safe
        it += 1
    if np.any(rel > tol):
        raise SolverError(f"CG did not reach tol {tol:g} in {maxiter} iterations (residual {rel.max():.2e})")
    u = u - _grid_mean(u, grid)
    # report the true residual, not the recursive one
    true_res = np.sqrt(dot(apply_operator(a, u, grid) - f, apply_operator(a, u, grid) - f)) / safe
    info = SolveInfo(it, np.squeeze(true_res))
    return (u, info) if return_info else u


def energy_identity(a_total: np.ndarray, u: np.ndarray, f: np.ndarray) -> tuple[float, float]:
    """``(int a |grad u|^2, int f u)`` by grid quadrature."""
    grid = _grid_of(u, None)
    grad_u = gradient(u, grid)
    lhs = float(np.mean(a_total * sum(g * g for g in grad_u)))
    rhs = float(np.mean(f * u))
    return lhs, rhs


# --------------------------------------------------------------------------
# fields and torus-basis coefficients


def _basis_matrix(frame: Frame, grid: TorusGrid) -> np.ndarray:
    idx = frame.metadata["indices"]
    top = max(max(j) for j in idx)
    if (top + 1) // 2 >= grid.n_per_dim // 2:
        raise InputError(f"grid with {grid.n_per_dim} points cannot resolve mode index {top}")
    pts = grid.points().reshape(-1, grid.d)
    return np.stack([xi_eval(j, pts) for j in idx], axis=1)


def field_to_coeffs(field: np.ndarray, frame: Frame) -> np.ndarray:
    """Reference coordinates (in the ``H^shift`` orthonormal basis) of a grid field.

    ``field`` may have leading batch axes.
    """
    d = frame.metadata["d"]
    grid = TorusGrid(d, field.shape[-1])
    Phi = _basis_matrix(frame, grid)
    flat = field.reshape(field.shape[: field.ndim - d] + (-1,))
    l2 = flat @ Phi / Phi.shape[0]
    return l2 * torus_mode_weights(frame) ** frame.metadata.get("shift", 0.0)


def coeffs_to_field(c: np.ndarray, frame: Frame, grid: TorusGrid) -> np.ndarray:
    """Grid values of ``sum_j c_j psi_j`` with ``psi_j = max{1,|j|}^(-shift) xi_j``."""
    c = np.asarray(c, dtype=float)
    k = c.shape[-1]
    Phi = _basis_matrix(frame, grid)[:, :k]
    l2 = c * torus_mode_weights(frame)[:k] ** (-frame.metadata.get("shift", 0.0))
    return (l2 @ Phi.T).reshape(c.shape[:-1] + grid.shape)


def default_rhs(grid: TorusGrid, amplitude: float = 1.0) -> np.ndarray:
    """``f = amplitude (sin(2 pi x_1) + sin(2 pi x_2))`` (only ``x_1`` when ``d = 1``)."""
    pts = grid.points()
    f = np.sin(2 * np.pi * pts[..., 0])
    if grid.d > 1:
        f = f + np.sin(2 * np.pi * pts[..., 1])
    return amplitude * f


# --------------------------------------------------------------------------
# the learning problem


@dataclass(eq=False)
class DarcyProblem:
    """Coefficient-to-solution map with its input measure and output truncation.

    Inputs are reference coordinates of ``a`` in the ``H^r0`` basis (``p0``
    modes); outputs are coordinates of ``u`` in the ``H^t0`` basis (``J`` modes).
    """

    grid: TorusGrid
    x_frame: Frame
    scaling: ScalingMap
    y_frame: Frame
    abar: float = 2.0
    a_min: float = 0.5
    rhs_amplitude: float = 1.0
    tol: float = 1e-10

    def __post_init__(self):
        bound = coercivity_margin(self.scaling, self.x_frame)
        if bound > self.abar - self.a_min + 1e-12:
            raise InputError(
                f"R sum theta^r ||psi||_inf = {bound:.4f} exceeds abar - a_min = {self.abar - self.a_min:.4f}")
        self.f = default_rhs(self.grid, self.rhs_amplitude)
        _basis_matrix(self.x_frame, self.grid)
        _basis_matrix(self.y_frame, self.grid)

    @property
    def p0(self) -> int:
        return self.x_frame.size

    @property
    def J(self) -> int:
        return self.y_frame.size

    def coefficient_fields(self, x: np.ndarray) -> np.ndarray:
        return self.abar + coeffs_to_field(x, self.x_frame, self.grid)

    def solve(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        """Output coordinates ``G_0(x)`` for a batch of input coordinates."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], self.J))
        for start in range(0, x.shape[0], batch):
            a = self.coefficient_fields(x[start:start + batch])
            bad = np.min(a.reshape(a.shape[0], -1), axis=1) < self.a_min - 1e-12
            if np.any(bad):
                i = start + int(np.argmax(bad))
                raise GenerationError(f"sample {i} violates coercivity (min a < a_min)")
            u = solve_darcy(a, np.broadcast_to(self.f, a.shape), self.tol, d=self.grid.d)
            out[start:start + batch] = field_to_coeffs(u, self.y_frame)
        return out

    def sample_inputs(self, n: int, rng_seed) -> tuple[np.ndarray, np.ndarray]:
        """``(x, u)`` with ``u`` uniform on the cube and ``x = sigma_R^r(u)``."""
        u = np.random.default_rng(rng_seed).uniform(-1.0, 1.0, size=(n, self.p0))
        return sigma_Rr(self.scaling, self.x_frame, u), u

    def to_dict(self) -> dict:
        return {"d": self.grid.d, "n_per_dim": self.grid.n_per_dim,
                "x_frame": frame_to_dict(self.x_frame), "scaling": scaling_to_dict(self.scaling),
                "y_frame": frame_to_dict(self.y_frame), "abar": self.abar, "a_min": self.a_min,
                "rhs_amplitude": self.rhs_amplitude, "tol": self.tol}

    @classmethod
    def from_dict(cls, data: dict) -> "DarcyProblem":
        return cls(TorusGrid(data["d"], data["n_per_dim"]), frame_from_dict(data["x_frame"]),
                   scaling_from_dict(data["scaling"]), frame_from_dict(data["y_frame"]),
                   data["abar"], data["a_min"], data["rhs_amplitude"], data["tol"])


def coercivity_margin(scaling: ScalingMap, x_frame: Frame) -> float:
    """Worst-case ``R sum_j theta_j^r ||psi_j||_inf`` over the cube."""
    w = torus_mode_weights(x_frame)
    shift = x_frame.metadata.get("shift", 0.0)
    sup = np.array([xi_sup_norm(j) for j in x_frame.metadata["indices"]]) * w ** (-shift)
    return float(np.sum(scaling.radii(x_frame.size) * sup))


def make_darcy_problem(d: int = 2, n_per_dim: int = 32, s: float = 4.0, t0: float = 0.0,
                       tau2: float = 0.05, n_in: int = 13, n_out: int = 13, R: Optional[float] = None,
                       abar: float = 2.0, a_min: float = 0.5, rhs_amplitude: float = 1.0,
                       tol: float = 1e-10) -> DarcyProblem:
    """Darcy problem with ``r0`` from the rate theorem and ``r = (s - r0)/d``.

    When ``R`` is None the largest radius allowed by the coercivity bound is used.
    """
    from .rates import torus_rate

    r0, _ = torus_rate(s, d, t0, tau2) if d >= 2 else (d / 2 + tau2, None)
    r = (s - r0) / d
    cutoff = 1.0
    while len(_count_modes(d, cutoff)) < max(n_in, n_out):
        cutoff += 1.0
    x_frame, theta = torus_basis(d, cutoff, r0, n_modes=n_in)
    y_frame, _ = torus_basis(d, cutoff, t0, n_modes=n_out)
    unit = ScalingMap(1.0, r, theta)
    margin = coercivity_margin(unit, x_frame)
    if R is None:
        R = (abar - a_min) / margin
    scaling = ScalingMap(float(R), r, theta)
    return DarcyProblem(TorusGrid(d, n_per_dim), x_frame, scaling, y_frame, abar, a_min, rhs_amplitude, tol)


def _count_modes(d, cutoff):
    from .frames import torus_multi_indices
    return torus_multi_indices(d, cutoff)


# --------------------------------------------------------------------------
# datasets


@dataclass(eq=False)
class Dataset:
    """Design coordinates with noisy observation coordinates."""

    design: np.ndarray
    obs: np.ndarray
    noise_model: str = "white"
    sigma: float = 0.0
    seed: Optional[int] = None
    clean: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=float))
        if self.design.shape[0] != self.obs.shape[0]:
            raise InputError("design and observations differ in length")
        if self.noise_model not in ("white", "subgaussian"):
            raise InputError(f"unknown noise model {self.noise_model!r}")
        if self.sigma < 0:
            raise InputError("sigma must be nonnegative")

    def __len__(self):
        return self.design.shape[0]

    def save(self, path) -> None:
        os.makedirs(path, exist_ok=True)
        meta = dict(self.meta)
        meta.update({"noise_model": self.noise_model, "sigma": self.sigma, "seed": self.seed,
                     "n": len(self), "J": self.obs.shape[1], "p0": self.design.shape[1]})
        with open(os.path.join(path, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        coefficients_to_csv(self.design, os.path.join(path, "design.csv"), "x")
        coefficients_to_csv(self.obs, os.path.join(path, "obs.csv"), "y")
        if self.clean is not None:
            coefficients_to_csv(self.clean, os.path.join(path, "clean.csv"), "g")

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(os.path.join(path, "meta.json")) as fh:
            meta = json.load(fh)
        clean_path = os.path.join(path, "clean.csv")
        clean = coefficients_from_csv(clean_path) if os.path.exists(clean_path) else None
        extra = {k: v for k, v in meta.items() if k not in ("noise_model", "sigma", "seed", "n", "J", "p0")}
        return cls(coefficients_from_csv(os.path.join(path, "design.csv")),
                   coefficients_from_csv(os.path.join(path, "obs.csv")),
                   meta["noise_model"], meta["sigma"], meta["seed"], clean, extra)


def sample_noise(n: int, J: int, noise_model: str, rng: np.random.Generator) -> np.ndarray:
    """Unit-parameter noise on the ``J`` retained modes."""
    if noise_model == "white":
        return rng.standard_normal((n, J))
    if noise_model == "subgaussian":
        g = rng.standard_normal((n, J))
        direction = g / np.linalg.norm(g, axis=1, keepdims=True)
        radius = rng.uniform(size=(n, 1)) ** (1.0 / J)
        return SUBGAUSSIAN_RADIUS * radius * direction
    raise InputError(f"unknown noise model {noise_model!r}")


def add_noise(clean: np.ndarray, sigma: float, noise_model: str, rng_seed) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    return clean + sigma * sample_noise(clean.shape[0], clean.shape[1], noise_model, rng)


def generate_dataset(n: int, problem: DarcyProblem, sigma: float, noise_model: str = "white",
                     rng_seed: int = 0, threads: int = 1) -> Dataset:
    """``x_i ~ gamma`` and ``y_i = G_0(x_i) + sigma e_i`` in truncated coordinates.

    The seed is split into independent streams for the design and the noise.
    """
    if sigma < 0:
        raise InputError("sigma must be nonnegative")
    design_seed, noise_seed = np.random.SeedSequence(rng_seed).spawn(2)
    x, _ = problem.sample_inputs(n, np.random.default_rng(design_seed))
    clean = solve_parallel(problem, x, threads)
    obs = add_noise(clean, sigma, noise_model, np.random.default_rng(noise_seed)) if sigma > 0 else clean.copy()
    meta = {"problem": problem.to_dict()}
    return Dataset(x, obs, noise_model, float(sigma), rng_seed, clean, meta)


def solve_parallel(problem: DarcyProblem, x: np.ndarray, threads: int = 1, chunk: int = 128) -> np.ndarray:
    """``problem.solve`` over chunks, optionally on a thread pool (order preserved)."""
    chunks = [x[i:i + chunk] for i in range(0, x.shape[0], chunk)]
    if threads <= 1 or len(chunks) <= 1:
        parts = [problem.solve(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(problem.solve, chunks))
    return np.vstack(parts) if parts else np.zeros((0, problem.J))
