"""Feedforward networks with exact metric accounting and the network calculus.

A network is an explicit list of layers ``(W, mask, b)``.  Weights are
stored with shape ``(p_in, p_out)`` so a batch of row vectors is propagated
by ``z @ W + b``.  Every layer except the last applies the activation; the
last layer is affine.  ``depth`` counts hidden layers, so an affine map has
depth 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import InputError, UnsupportedError


@dataclass(frozen=True)
class Activation:
    """ReLU (``kind='relu'``) or RePU ``max{0, x}^q`` (``kind='repu'``)."""

    kind: str = "relu"
    q: int = 1

    def __post_init__(self):
        if self.kind == "relu":
            object.__setattr__(self, "q", 1)
        elif self.kind == "repu":
            if int(self.q) != self.q or self.q < 2:
                raise InputError("RePU needs an integer q >= 2")
            object.__setattr__(self, "q", int(self.q))
        else:
            raise InputError(f"unknown activation {self.kind!r}")

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        return np.maximum(z, 0.0) ** self.q

    def derivative(self, z: np.ndarray) -> np.ndarray:
        # the ReLU subgradient at 0 is taken as 0
        if self.kind == "relu":
            return (z > 0).astype(float)
        return self.q * np.maximum(z, 0.0) ** (self.q - 1)

    @property
    def tag(self) -> str:
        return "relu" if self.kind == "relu" else f"repu{self.q}"

    @classmethod
    def parse(cls, tag) -> "Activation":
        if isinstance(tag, Activation):
            return tag
        tag = str(tag).lower()
        if tag == "relu":
            return cls("relu")
        if tag.startswith("repu"):
            return cls("repu", int(tag[4:] or 2))
        raise InputError(f"unknown activation {tag!r}")


RELU = Activation("relu")
REPU2 = Activation("repu", 2)


@dataclass(frozen=True, eq=False)
class Layer:
    """Affine map ``z -> z @ W + b`` with a sparsity mask on ``W``."""

    W: np.ndarray
    b: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.size != W.shape[1]:
            raise InputError(f"bias of length {b.size} for a layer with {W.shape[1]} outputs")
        mask = np.ones(W.shape, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != W.shape:
            raise InputError("mask shape differs from weight shape")
        W = np.where(mask, W, 0.0)
        for arr in (W, b, mask):
            arr.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "mask", mask)

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]


def structural_layer(W, b) -> Layer:
    """Layer whose mask is the nonzero pattern of ``W``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return Layer(W, b, W != 0)


@dataclass(frozen=True, eq=False)
class NeuralNet:
    layers: tuple
    activation: Activation = RELU

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InputError("a network needs at least one layer")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.n_out != b.n_in:
                raise InputError(f"layer dimensions do not chain: {a.n_out} -> {b.n_in}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "activation", Activation.parse(self.activation))

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    def __call__(self, x) -> np.ndarray:
        return eval_net(self, x)


@dataclass(frozen=True)
class NetMetrics:
    depth: int
    width: int
    size: int
    mpar: float


def eval_net(net: NeuralNet, x) -> np.ndarray:
    """Forward pass for a single input ``(p0,)`` or a batch ``(n, p0)``."""
    z = np.asarray(x, dtype=float)
    if z.shape[-1] != net.input_dim:
        raise InputError(f"input has length {z.shape[-1]}, network expects {net.input_dim}")
    act = net.activation
    for layer in net.layers[:-1]:
        z = act(z @ layer.W + layer.b)
    last = net.layers[-1]
    return z @ last.W + last.b


def metrics(net: NeuralNet) -> NetMetrics:
    """Depth, width (including input and output), nonzero-parameter count and mpar."""
    dims = [net.input_dim] + [layer.n_out for layer in net.layers]
    size = 0
    mpar = 0.0
    for layer in net.layers:
        size += int(np.count_nonzero(layer.W)) + int(np.count_nonzero(layer.b))
        if layer.W.size:
            mpar = max(mpar, float(np.max(np.abs(layer.W))))
        if layer.b.size:
            mpar = max(mpar, float(np.max(np.abs(layer.b))))
    return NetMetrics(depth=net.depth, width=max(dims), size=size, mpar=mpar)


def backprop(net: NeuralNet, X: np.ndarray, upstream: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradient of ``sum_i <upstream_i, f(x_i)>`` with respect to all layers.

    Returns one ``(dW, db)`` pair per layer; masked entries of ``dW`` are 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = np.atleast_2d(np.asarray(upstream, dtype=float))
    act = net.activation
    inputs = []
    pre = []
    z = X
    for layer in net.layers[:-1]:
        inputs.append(z)
        a = z @ layer.W + layer.b
        pre.append(a)
        z = act(a)
    inputs.append(z)
    grads: list = [None] * len(net.layers)
    delta = G
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dW = inputs[k].T @ delta
        grads[k] = (np.where(layer.mask, dW, 0.0), delta.sum(axis=0))
        if k > 0:
            delta = (delta @ layer.W.T) * act.derivative(pre[k - 1])
    return grads


def grad(net: NeuralNet, x, upstream) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reverse-mode gradient of ``<upstream, f(x)>`` at a single input."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    u = np.asarray(upstream, dtype=float).reshape(1, -1)
    if x.shape[1] != net.input_dim or u.shape[1] != net.output_dim:
        raise InputError("input or upstream dimension does not match the network")
    return backprop(net, x, u)


def with_params(net: NeuralNet, params: Sequence[tuple[np.ndarray, np.ndarray]]) -> NeuralNet:
    """Copy of ``net`` with new weight values and the same masks."""
    layers = tuple(Layer(W, b, layer.mask) for (W, b), layer in zip(params, net.layers))
    return NeuralNet(layers, net.activation)


def params_of(net: NeuralNet) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(layer.W.copy(), layer.b.copy()) for layer in net.layers]


# --------------------------------------------------------------------------
# simple builders


def affine_net(W, b, activation=RELU) -> NeuralNet:
    """Depth-0 network ``x -> x @ W + b``."""
    return NeuralNet((structural_layer(W, b),), activation)


def zero_net(n_in: int, n_out: int, activation=RELU) -> NeuralNet:
    return NeuralNet((Layer(np.zeros((n_in, n_out)), np.zeros(n_out)),), activation)


def dense_net(dims: Sequence[int], rng: np.random.Generator, scale: float = 1.0,
              activation=RELU) -> NeuralNet:
    """Fully connected network with layer sizes ``dims`` and He-type init."""
    layers = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        W = rng.normal(0.0, scale * np.sqrt(2.0 / n_in), size=(n_in, n_out))
        layers.append(Layer(W, np.zeros(n_out)))
    return NeuralNet(tuple(layers), activation)


# --------------------------------------------------------------------------
# calculus


def parallelize(nets: Sequence[NeuralNet]) -> NeuralNet:
    """Block-diagonal network evaluating each component on its own input slice."""
    nets = list(nets)
    if not nets:
        raise InputError("need at least one network")
    depth = nets[0].depth
    act = nets[0].activation
    for f in nets[1:]:
        if f.depth != depth:
            raise InputError(f"depth mismatch in parallelization: {depth} vs {f.depth}")
        if f.activation != act:
            raise InputError("activation mismatch in parallelization")
    if len(nets) == 1:
        return nets[0]
    layers = []
    for k in range(depth + 1):
        blocks = [f.layers[k] for f in nets]
        n_in = sum(bl.n_in for bl in blocks)
        n_out = sum(bl.n_out for bl in blocks)
        W = np.zeros((n_in, n_out))
        mask = np.zeros((n_in, n_out), dtype=bool)
        i = j = 0
        for bl in blocks:
            W[i:i + bl.n_in, j:j + bl.n_out] = bl.W
            mask[i:i + bl.n_in, j:j + bl.n_out] = bl.mask
            i += bl.n_in
            j += bl.n_out
        layers.append(Layer(W, np.concatenate([bl.b for bl in blocks]), mask))
    return NeuralNet(tuple(layers), act)


def _plain_concat(f: NeuralNet, g: NeuralNet) -> NeuralNet:
    """Realize ``f o g`` by merging the last layer of g into the first of f.

    Depth is ``depth(f) + depth(g)``.  Parameters of the merged layer are
    products, so mpar is not controlled in general; callers use it only for
    0/1 routing maps or where the product structure is known.
    """
    if g.output_dim != f.input_dim:
        raise InputError(f"cannot compose: g outputs {g.output_dim}, f expects {f.input_dim}")
    lg, lf = g.layers[-1], f.layers[0]
    W = lg.W @ lf.W
    b = lg.b @ lf.W + lf.b
    mask = (lg.mask.astype(int) @ lf.mask.astype(int)) > 0
    merged = Layer(W, b, mask)
    act = f.activation if f.depth > 0 else g.activation
    return NeuralNet(g.layers[:-1] + (merged,) + f.layers[1:], act)


def sparse_concat(f: NeuralNet, g: NeuralNet) -> NeuralNet:
    """``f o g = f . Id . g`` with a depth-1 identity between the networks.

    Depth is ``depth(f) + depth(g) + 1``.
    """
    if g.output_dim != f.input_dim:
        raise InputError(f"cannot compose: g outputs {g.output_dim}, f expects {f.input_dim}")
    act = _common_activation(f, g)
    ident = identity_net(g.output_dim, 1, act)
    f = NeuralNet(f.layers, act)
    g = NeuralNet(g.layers, act)
    return _plain_concat(f, _plain_concat(ident, g))


def _common_activation(f: NeuralNet, g: NeuralNet) -> Activation:
    # depth-0 networks carry no activation, so they adopt the other one
    if f.depth == 0:
        return g.activation
    if g.depth == 0:
        return f.activation
    if f.activation != g.activation:
        raise InputError("activation mismatch in composition")
    return f.activation


def identity_net(dim: int, depth: int, activation=RELU) -> NeuralNet:
    """Exact identity on ``R^dim`` with ``depth`` hidden layers.

    ReLU uses ``x = sigma(x) - sigma(-x)``.  RePU(2) uses
    ``x = ((x+1)^2 - (x-1)^2) / 4`` with each square written as
    ``sigma_2(t) + sigma_2(-t)``.
    """
    act = Activation.parse(activation)
    if depth < 0:
        raise InputError("depth must be nonnegative")
    eye = np.eye(dim)
    if depth == 0:
        return NeuralNet((structural_layer(eye, np.zeros(dim)),), act)
    if act.kind == "relu":
        layers = [structural_layer(np.hstack([eye, -eye]), np.zeros(2 * dim))]
        for _ in range(depth - 1):
            layers.append(structural_layer(np.eye(2 * dim), np.zeros(2 * dim)))
        layers.append(structural_layer(np.vstack([eye, -eye]), np.zeros(dim)))
        return NeuralNet(tuple(layers), act)
    if act.q != 2:
        raise UnsupportedError("RePU identity networks are implemented for q = 2 only")
    block = _repu_identity_block(dim)
    net = block
    for _ in range(depth - 1):
        net = _plain_concat(block, net)
    return net


def _repu_identity_block(dim: int) -> NeuralNet:
    eye = np.eye(dim)
    W1 = np.hstack([eye, -eye, eye, -eye])
    b1 = np.concatenate([np.ones(dim), -np.ones(dim), -np.ones(dim), np.ones(dim)])
    W2 = 0.25 * np.vstack([eye, eye, -eye, -eye])
    return NeuralNet((structural_layer(W1, b1), structural_layer(W2, np.zeros(dim))), REPU2)


def extend_depth(net: NeuralNet, extra: int) -> NeuralNet:
    """Prepend an identity so the map is unchanged and depth grows by ``extra``.

    The identity's last layer is merged into the first layer of ``net``,
    which yields weights ``+-W`` (ReLU) or ``+-W/4`` (RePU), so mpar does
    not grow.
    """
    if extra <= 0:
        return net
    return _plain_concat(net, identity_net(net.input_dim, extra, net.activation))


def summation_net(m: int, dim: int, activation=RELU) -> NeuralNet:
    """Depth-0 map ``(x_1, ..., x_m) -> sum_i x_i`` for blocks of size ``dim``."""
    if m < 1:
        raise InputError("m must be at least 1")
    W = np.vstack([np.eye(dim)] * m)
    return NeuralNet((structural_layer(W, np.zeros(dim)),), activation)


def scalar_mult_net(alpha: float, dim: int, activation=RELU) -> NeuralNet:
    """Exact multiplication by ``alpha`` with parameters bounded by 1.

    For ``|alpha| <= 1`` this is a depth-1 identity with scaled output
    weights.  Otherwise ``K = ceil(log2 |alpha|)`` doubling layers are
    stacked and the remaining factor ``alpha / 2^K`` sits in the output layer.
    """
    act = Activation.parse(activation)
    alpha = float(alpha)
    if abs(alpha) <= 1.0:
        ident = identity_net(dim, 1, act)
        last = ident.layers[-1]
        scaled = structural_layer(alpha * last.W, alpha * last.b)
        return NeuralNet(ident.layers[:-1] + (scaled,), act)
    K = int(math.ceil(math.log2(abs(alpha))))
    rest = alpha / 2.0 ** K
    eye = np.eye(dim)
    if act.kind == "relu":
        # neurons sigma(y), sigma(y), sigma(-y), sigma(-y); their signed sum is 2y
        first = np.hstack([eye, eye, -eye, -eye])
        out = np.vstack([eye, eye, -eye, -eye])
        layers = [structural_layer(first, np.zeros(4 * dim))]
        for _ in range(K - 1):
            layers.append(structural_layer(out @ first, np.zeros(4 * dim)))
        layers.append(structural_layer(rest * out, np.zeros(dim)))
        return NeuralNet(tuple(layers), act)
    if act.q != 2:
        raise UnsupportedError("RePU scalar multiplication is implemented for q = 2 only")
    # hidden layer encodes y through sigma_2(+-(y+1)), sigma_2(+-(y-1)); the
    # signed combination with weights 1/4 returns y, with weights 1/2 returns 2y
    first = np.hstack([eye, -eye, eye, -eye])
    shift = np.concatenate([np.ones(dim), -np.ones(dim), -np.ones(dim), np.ones(dim)])
    half = 0.5 * np.vstack([eye, eye, -eye, -eye])
    layers = [structural_layer(first, shift)]
    for _ in range(K - 1):
        layers.append(structural_layer(half @ first, shift))
    layers.append(structural_layer(rest * half, np.zeros(dim)))
    return NeuralNet(tuple(layers), act)


def pad_to_depth(nets: Sequence[NeuralNet]) -> list[NeuralNet]:
    """Extend every network to the largest depth among them."""
    top = max(f.depth for f in nets)
    return [extend_depth(f, top - f.depth) for f in nets]


# --------------------------------------------------------------------------
# ranges and perturbations


def mran_estimate(net: NeuralNet, samples: int = 1024, rng_seed=0) -> float:
    """Sampled lower bound of ``sup_{x in [-1,1]^p0} ||f(x)||_2``.

    Uses a Latin hypercube design plus every cube corner when ``p0 <= 12``.
    """
    if samples < 1:
        raise InputError("samples must be positive")
    p0 = net.input_dim
    pts = 2.0 * qmc.LatinHypercube(d=p0, seed=np.random.default_rng(rng_seed)).random(samples) - 1.0
    if p0 <= 12:
        pts = np.vstack([pts, cube_corners(p0)])
    vals = eval_net(net, pts)
    return float(np.max(np.linalg.norm(vals, axis=1)))


def cube_corners(p0: int) -> np.ndarray:
    """All ``2^p0`` vertices of ``[-1, 1]^p0``."""
    grid = np.array(np.meshgrid(*([[-1.0, 1.0]] * p0), indexing="ij"))
    return grid.reshape(p0, -1).T


def perturbation_bound(L: int, p: int, M: float, eps: float) -> float:
    """``eps (L+1) M^L (p+1)^(L+1)`` for ReLU networks."""
    return eps * (L + 1) * M ** L * (p + 1) ** (L + 1)


def log_perturbation_bound_repu(L: int, p: int, M: float, eps: float, q: int = 2) -> float:
    """Natural log of the RePU perturbation bound.

    The bound is ``eps L q^(L+q) (2pM)^(4 q^(2L+2)) / (2 M sqrt(p) (p^2+p) (L+1))``,
    which overflows quickly, so it is returned in log form.
    """
    return (math.log(eps) + math.log(L) + (L + q) * math.log(q)
            + 4 * q ** (2 * L + 2) * math.log(2 * p * M)
            - math.log(2 * M * math.sqrt(p) * (p * p + p) * (L + 1)))


def perturb_params(net: NeuralNet, eps: float, M: float, rng: np.random.Generator) -> NeuralNet:
    """Shift every unmasked parameter by at most ``eps`` and clip to ``[-M, M]``."""
    params = []
    for layer in net.layers:
        dW = rng.uniform(-eps, eps, size=layer.W.shape)
        db = rng.uniform(-eps, eps, size=layer.b.shape)
        params.append((np.clip(layer.W + dW, -M, M), np.clip(layer.b + db, -M, M)))
    return with_params(net, params)


# --------------------------------------------------------------------------
# serialization


def _bits(mask: np.ndarray) -> str:
    return "".join("1" if v else "0" for v in mask.reshape(-1))


def net_to_dict(net: NeuralNet) -> dict:
    return {
        "activation": net.activation.tag,
        "shape": [net.input_dim] + [layer.n_out for layer in net.layers],
        "layers": [
            {"W": layer.W.reshape(-1).tolist(), "b": layer.b.tolist(), "mask": _bits(layer.mask)}
            for layer in net.layers
        ],
    }


def net_from_dict(data: dict) -> NeuralNet:
    shape = data["shape"]
    layers = []
    for k, entry in enumerate(data["layers"]):
        n_in, n_out = shape[k], shape[k + 1]
        W = np.asarray(entry["W"], dtype=float).reshape(n_in, n_out)
        mask = np.frombuffer(entry["mask"].encode(), dtype=np.uint8).reshape(n_in, n_out) == ord("1")
        layers.append(Layer(W, entry["b"], mask))
    return NeuralNet(tuple(layers), Activation.parse(data["activation"]))


def net_to_json(net: NeuralNet) -> str:
    return json.dumps(net_to_dict(net))


def net_from_json(text: str) -> NeuralNet:
    return net_from_dict(json.loads(text))


def random_masked_net(rng: np.random.Generator, depth: int, width: int, n_in: int, n_out: int,
                      M: float = 1.0, density: float = 0.7, activation=RELU) -> NeuralNet:
    """Random network with entries uniform in ``[-M, M]`` and a random mask."""
    dims = [n_in] + [width] * depth + [n_out]
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        mask = rng.random((a, b)) < density
        W = rng.uniform(-M, M, size=(a, b))
        layers.append(Layer(W, rng.uniform(-M, M, size=b), mask))
    return NeuralNet(tuple(layers), activation)


def iter_params(net: NeuralNet) -> Iterable[np.ndarray]:
    for layer in net.layers:
        yield layer.W
        yield layer.b
