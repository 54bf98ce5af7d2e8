"""Finite truncations of Hilbert spaces: frames, duals and the cube scaling.

Every element of a space is stored through its coefficients in a fixed
reference orthonormal basis.  A :class:`Frame` is a matrix whose columns are
frame vectors written in that reference basis, so analysis and synthesis
reduce to matrix products.  Functions accept a single coefficient vector of
shape ``(J,)`` or a batch of shape ``(n, J)``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional, Sequence

import numpy as np

from .errors import DegenerateFrameError, InputError

#: Frame operators with a larger condition number are reported as degenerate.
COND_THRESHOLD = 1e12


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """Coefficients of an element in the reference orthonormal basis."""

    coeffs: np.ndarray
    space_tag: str = "X"

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise InputError("coefficient vector has non-finite entries")
        object.__setattr__(self, "coeffs", arr)

    def __len__(self):
        return self.coeffs.size

    def __array__(self, dtype=None, copy=None):
        return self.coeffs if dtype is None else self.coeffs.astype(dtype)


def _as_array(x) -> np.ndarray:
    if isinstance(x, CoefficientVector):
        return x.coeffs
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class Frame:
    """Indexed vector family in a ``J``-dimensional reference space.

    Parameters
    ----------
    vectors : ndarray, shape (J, K)
        Column ``k`` holds the reference coordinates of the ``k``-th frame
        vector.
    riesz : bool
        Whether the family is flagged as a Riesz basis.
    metadata : dict
        Enumeration data (for instance torus multi-indices).
    """

    vectors: np.ndarray
    riesz: bool = False
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.size == 0:
            raise InputError("a frame needs at least one vector")
        if not np.all(np.isfinite(v)):
            raise InputError("frame vectors must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        if self.riesz and np.linalg.matrix_rank(v) < v.shape[1]:
            raise InputError("Riesz flag set but frame vectors are dependent")

    @property
    def ref_dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def orthonormal(cls, dim: int, metadata: Optional[dict] = None) -> "Frame":
        """The reference basis itself."""
        return cls(np.eye(dim), riesz=True, metadata=dict(metadata or {}))

    @cached_property
    def frame_operator(self) -> np.ndarray:
        """``T = F'F`` acting on the reference space."""
        return self.vectors @ self.vectors.T

    @cached_property
    def dual(self) -> "Frame":
        return _compute_dual(self)


def analysis(frame: Frame, x) -> np.ndarray:
    """Frame coefficients ``(<x, psi_k>)_k``.

    Examples
    --------
    >>> analysis(Frame(np.array([[1.0, 1.0]])), [3.0])
    array([3., 3.])
    """
    x = _as_array(x)
    if x.shape[-1] != frame.ref_dim:
        raise InputError(
            f"vector has length {x.shape[-1]}, frame lives in dimension {frame.ref_dim}")
    return x @ frame.vectors


def synthesis(frame: Frame, c) -> np.ndarray:
    """Reference coordinates of ``sum_k c_k psi_k``; short ``c`` uses the first vectors."""
    c = _as_array(c)
    k = c.shape[-1]
    if k > frame.size:
        raise InputError(f"{k} coefficients for a frame of {frame.size} vectors")
    return c @ frame.vectors[:, :k].T


def _compute_dual(frame: Frame) -> Frame:
    T = frame.frame_operator
    cond = np.linalg.cond(T)
    if not np.isfinite(cond) or cond > COND_THRESHOLD:
        raise DegenerateFrameError(f"frame operator condition number {cond:.3e}")
    # T is symmetric positive definite; a Cholesky solve is the direct factorization
    chol = np.linalg.cholesky(T)
    y = np.linalg.solve(chol, frame.vectors)
    dual_vecs = np.linalg.solve(chol.T, y)
    return Frame(dual_vecs, riesz=frame.riesz, metadata=dict(frame.metadata))


def dual_frame(frame: Frame) -> Frame:
    """Canonical dual ``T^{-1} Psi`` (cached on the frame)."""
    return frame.dual


def frame_bounds(frame: Frame) -> tuple[float, float]:
    """Smallest and largest singular value of the analysis operator.

    When the frame has fewer vectors than the reference dimension the
    analysis operator has a kernel and the lower bound is zero.
    """
    s = np.linalg.svd(frame.vectors, compute_uv=False)
    lam_max = float(s[0])
    lam_min = float(s[-1]) if frame.size >= frame.ref_dim else 0.0
    return lam_min, lam_max


# --------------------------------------------------------------------------
# smoothness weights and the cube scaling


@dataclass(frozen=True, eq=False)
class SmoothnessWeights:
    """Strictly positive, nonincreasing weights ``theta``."""

    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float).reshape(-1)
        if t.size == 0 or np.any(t <= 0) or not np.all(np.isfinite(t)):
            raise InputError("theta must be finite and strictly positive")
        if np.any(np.diff(t) > 1e-15 * t[:-1]):
            raise InputError("theta must be nonincreasing")
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    def __len__(self):
        return self.theta.size

    def decay_constant(self) -> tuple[float, float]:
        """Range of ``theta_i * i`` (1-based), used to check ``i^{-1}`` decay."""
        prod = self.theta * np.arange(1, self.theta.size + 1)
        return float(prod.min()), float(prod.max())


@dataclass(frozen=True, eq=False)
class ScalingMap:
    """Data of ``sigma_R^r`` and ``S_r``: radius ``R``, exponent ``r`` and ``theta``."""

    R: float
    r: float
    theta: SmoothnessWeights

    def __post_init__(self):
        if not self.R > 0:
            raise InputError("R must be positive")
        if not self.r > 0.5:
            raise InputError("r must exceed 1/2")
        if not isinstance(self.theta, SmoothnessWeights):
            object.__setattr__(self, "theta", SmoothnessWeights(self.theta))

    def radii(self, k: int) -> np.ndarray:
        """Cube half-widths ``R theta_j^r`` for the first ``k`` modes."""
        if k > len(self.theta):
            raise InputError(f"need {k} weights, only {len(self.theta)} available")
        return self.R * self.theta.theta[:k] ** self.r


def sigma_Rr(smap: ScalingMap, frame: Frame, u) -> np.ndarray:
    """``R sum_j theta_j^r u_j psi_j`` for ``u`` in the unit cube."""
    u = _as_array(u)
    if np.any(np.abs(u) > 1.0):
        raise InputError("sigma_Rr needs all components in [-1, 1]")
    return synthesis(frame, u * smap.radii(u.shape[-1]))


def scale_Sr(smap: ScalingMap, c) -> tuple[np.ndarray, np.ndarray]:
    """Scaled coefficients ``c_j / (R theta_j^r)`` clamped to ``[-1, 1]``.

    Returns
    -------
    u : ndarray
        Scaled and clamped coefficients.
    clamped : bool or ndarray of bool
        Whether clamping was active (per row for batches).
    """
    c = _as_array(c)
    u = c / smap.radii(c.shape[-1])
    clamped = np.any(np.abs(u) > 1.0, axis=-1)
    return np.clip(u, -1.0, 1.0), clamped


def inverse_Sr(smap: ScalingMap, u) -> np.ndarray:
    """Inverse of the scaling on the unit cube."""
    u = _as_array(u)
    return u * smap.radii(u.shape[-1])


def in_cube(c, smap: ScalingMap, dual: Frame, rtol: float = 1e-12) -> bool:
    """Whether every retained dual coefficient obeys ``|<c, dual_j>| <= R theta_j^r``."""
    a = analysis(dual, c)
    return bool(np.all(np.abs(a) <= smap.radii(a.shape[-1]) * (1.0 + rtol)))


def sample_cube(k: int, n: Optional[int], rng_seed) -> np.ndarray:
    """Uniform samples on ``[-1, 1]^k``; a single vector when ``n`` is None."""
    rng = np.random.default_rng(rng_seed)
    shape = (k,) if n is None else (n, k)
    return rng.uniform(-1.0, 1.0, size=shape)


def sample_gamma(smap: ScalingMap, frame: Frame, rng_seed, n: Optional[int] = None,
                 return_u: bool = False):
    """Draw from ``gamma``, the push-forward of the uniform cube measure."""
    u = sample_cube(frame.size, n, rng_seed)
    x = sigma_Rr(smap, frame, u)
    return (x, u) if return_u else x


def smooth_norm(c, exponent: float, theta: SmoothnessWeights, dual: Frame) -> float:
    """Truncated ``X_r`` norm ``(sum_j <c, dual_j>^2 theta_j^{-2r})^{1/2}``."""
    a = analysis(dual, c)
    w = theta.theta[: a.shape[-1]] ** (-exponent)
    return float(np.sqrt(np.sum((a * w) ** 2)))


# --------------------------------------------------------------------------
# torus basis


def torus_multi_indices(d: int, cutoff: float, n_modes: Optional[int] = None) -> list[tuple]:
    """Multi-indices ``j`` with Euclidean length at most ``cutoff``.

    Sorted by nondecreasing ``|j|`` with a lexicographic tie-break.
    """
    if d < 1:
        raise InputError("d must be at least 1")
    if cutoff < 1:
        raise InputError("cutoff must be at least 1")
    top = int(np.floor(cutoff))
    idx = [j for j in itertools.product(range(top + 1), repeat=d)
           if sum(v * v for v in j) <= cutoff * cutoff + 1e-12]
    idx.sort(key=lambda j: (sum(v * v for v in j), j))
    if n_modes is not None:
        if n_modes > len(idx):
            raise InputError(f"cutoff {cutoff} yields only {len(idx)} modes, asked for {n_modes}")
        idx = idx[:n_modes]
    return idx


def torus_basis(d: int, cutoff: float, sobolev_shift: float = 0.0,
                n_modes: Optional[int] = None) -> tuple[Frame, SmoothnessWeights]:
    """Truncated orthonormal basis of ``H^shift`` on the torus and its weights.

    The reference basis is the basis itself, so the returned frame is the
    identity; the enumeration is stored in ``frame.metadata``.  Index ``j_k``
    selects ``xi_0 = 1``, ``xi_{2m} = sqrt(2) cos(2 pi m x)`` and
    ``xi_{2m-1} = sqrt(2) sin(2 pi m x)`` in coordinate ``k``.
    """
    if sobolev_shift < 0:
        raise InputError("sobolev_shift must be nonnegative")
    idx = torus_multi_indices(d, cutoff, n_modes)
    w = np.array([max(1.0, float(np.sqrt(sum(v * v for v in j)))) for j in idx])
    meta = {"kind": "torus", "d": d, "cutoff": cutoff, "shift": sobolev_shift,
            "indices": [list(j) for j in idx]}
    return Frame.orthonormal(len(idx), meta), SmoothnessWeights(w ** (-float(d)))


def torus_mode_weights(frame: Frame) -> np.ndarray:
    """``max{1, |j|}`` for each enumerated torus mode."""
    idx = frame.metadata["indices"]
    return np.array([max(1.0, float(np.sqrt(sum(v * v for v in j)))) for j in idx])


def xi_1d(index: int, x: np.ndarray) -> np.ndarray:
    """Univariate real Fourier function ``xi_index`` on ``[0, 1)``."""
    x = np.asarray(x, dtype=float)
    if index == 0:
        return np.ones_like(x)
    m = (index + 1) // 2
    if index % 2 == 0:
        return np.sqrt(2.0) * np.cos(2 * np.pi * m * x)
    return np.sqrt(2.0) * np.sin(2 * np.pi * m * x)


def xi_eval(j: Sequence[int], points: np.ndarray) -> np.ndarray:
    """Tensor product ``xi_j`` at points of shape ``(..., d)``."""
    points = np.asarray(points, dtype=float)
    out = np.ones(points.shape[:-1])
    for k, jk in enumerate(j):
        out = out * xi_1d(jk, points[..., k])
    return out


def xi_sup_norm(j: Sequence[int]) -> float:
    """``||xi_j||_inf`` (each nonconstant factor contributes sqrt 2)."""
    return float(np.sqrt(2.0) ** sum(1 for v in j if v > 0))


# --------------------------------------------------------------------------
# serialization


def frame_to_dict(frame: Frame) -> dict[str, Any]:
    return {
        "ref_dim": frame.ref_dim,
        "size": frame.size,
        "riesz": frame.riesz,
        "vectors": frame.vectors.reshape(-1).tolist(),
        "metadata": frame.metadata,
    }


def frame_from_dict(data: dict[str, Any]) -> Frame:
    v = np.asarray(data["vectors"], dtype=float).reshape(data["ref_dim"], data["size"])
    return Frame(v, riesz=bool(data.get("riesz", False)), metadata=dict(data.get("metadata", {})))


def frame_to_json(frame: Frame) -> str:
    return json.dumps(frame_to_dict(frame))


def frame_from_json(text: str) -> Frame:
    return frame_from_dict(json.loads(text))


def scaling_to_dict(smap: ScalingMap) -> dict[str, Any]:
    return {"R": smap.R, "r": smap.r, "theta": smap.theta.theta.tolist()}


def scaling_from_dict(data: dict[str, Any]) -> ScalingMap:
    return ScalingMap(float(data["R"]), float(data["r"]), SmoothnessWeights(data["theta"]))


def coefficients_to_csv(rows: np.ndarray, path, prefix: str = "c") -> None:
    """Write a batch of coefficient vectors, one column per mode."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    header = ",".join(f"{prefix}{k}" for k in range(rows.shape[1]))
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")


def coefficients_from_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))
