import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from framenet.errors import InputError
from framenet.network import (
    RELU,
    REPU2,
    Activation,
    Layer,
    NeuralNet,
    affine_net,
    cube_corners,
    eval_net,
    extend_depth,
    grad,
    identity_net,
    log_perturbation_bound_repu,
    metrics,
    mran_estimate,
    net_from_json,
    net_to_json,
    parallelize,
    params_of,
    perturb_params,
    perturbation_bound,
    random_masked_net,
    scalar_mult_net,
    sparse_concat,
    summation_net,
    with_params,
    zero_net,
)

seeds = st.integers(0, 2**32 - 1)


def rand_net(seed, depth=2, width=4, n_in=3, n_out=2, act=RELU):
    return random_masked_net(np.random.default_rng(seed), depth, width, n_in, n_out, activation=act)


# evaluation and metrics


def test_zero_net_outputs_zero():
    np.testing.assert_array_equal(eval_net(zero_net(3, 2), np.ones(3)), 0)


def test_single_neuron_examples():
    relu = NeuralNet((Layer([[1.0]], [0.0]), Layer([[1.0]], [0.0])), RELU)
    assert eval_net(relu, [-1.0])[0] == 0.0
    assert eval_net(relu, [2.0])[0] == 2.0
    repu = NeuralNet(relu.layers, REPU2)
    assert eval_net(repu, [3.0])[0] == 9.0


def test_eval_dimension_mismatch():
    with pytest.raises(InputError):
        eval_net(zero_net(3, 1), np.ones(2))


def test_activation_rejects_q_below_two():
    with pytest.raises(InputError):
        Activation("repu", 1)
    assert Activation.parse("repu3").q == 3


def test_metric_examples():
    empty = NeuralNet((Layer(np.ones((2, 2)), np.zeros(2), np.zeros((2, 2))),))
    assert metrics(empty).size == 0
    net = NeuralNet((Layer([[0.5, -0.9, 0.2]], [0.3, 0.0, 0.0]), Layer([[0.0], [0.0], [0.0]], [0.1])))
    m = metrics(net)
    assert m.size == 5
    assert m.depth == 1 and m.width == 3
    mp = NeuralNet((Layer([[0.5, -0.9]], [0.3, 0.0]),))
    assert metrics(mp).mpar == 0.9


def test_masked_weights_are_zero():
    layer = Layer(np.ones((2, 2)), np.zeros(2), np.eye(2, dtype=bool))
    np.testing.assert_array_equal(layer.W, np.eye(2))


def test_mran_examples():
    assert mran_estimate(zero_net(2, 1), 64) == 0.0
    assert mran_estimate(affine_net([[1.0]], [0.0]), 16) == 1.0


def test_mran_attains_corner_for_monotone_net():
    net = affine_net([[1.0, 2.0], [0.5, -1.0], [0.25, 0.0]], [0.1, 0.0])
    corners = eval_net(net, cube_corners(3))
    assert mran_estimate(net, 32) == pytest.approx(np.max(np.linalg.norm(corners, axis=1)))


def test_cube_corners_count():
    c = cube_corners(3)
    assert c.shape == (8, 3) and set(np.unique(c)) == {-1.0, 1.0}


# calculus


@given(seeds, seeds)
def test_parallelize_evaluates_blockwise(s1, s2):
    f, g = rand_net(s1), rand_net(s2, n_in=2, n_out=3)
    x, y = np.random.default_rng(s1 ^ s2).uniform(-1, 1, (2, 5))[:, :3], np.ones(2)
    h = parallelize([f, g])
    # equal up to BLAS summation order on the zero blocks
    np.testing.assert_allclose(
        eval_net(h, np.concatenate([x[0], y])),
        np.concatenate([eval_net(f, x[0]), eval_net(g, y)]),
        rtol=1e-14, atol=1e-15,
    )


@given(seeds, seeds)
def test_parallelize_metrics(s1, s2):
    f, g = rand_net(s1, width=3), rand_net(s2, width=3)
    mf, mg, mh = metrics(f), metrics(g), metrics(parallelize([f, g]))
    assert mh.size == mf.size + mg.size
    assert mh.width == 6
    assert mh.mpar == max(mf.mpar, mg.mpar)
    assert mh.depth == mf.depth


def test_parallelize_depth_mismatch():
    with pytest.raises(InputError):
        parallelize([rand_net(0, depth=1), rand_net(1, depth=2)])


def test_sparse_concat_of_identities_is_identity():
    h = sparse_concat(identity_net(3, 1), identity_net(3, 2))
    x = np.array([0.3, -2.0, 5.0])
    np.testing.assert_array_equal(eval_net(h, x), x)


@given(seeds, seeds, st.sampled_from([RELU, REPU2]))
def test_sparse_concat_composition_and_metrics(s1, s2, act):
    f = rand_net(s1, depth=1, n_in=2, n_out=1, act=act)
    g = rand_net(s2, depth=2, n_in=3, n_out=2, act=act)
    h = sparse_concat(f, g)
    x = np.random.default_rng(s1).uniform(-1, 1, (10, 3))
    np.testing.assert_allclose(eval_net(h, x), eval_net(f, eval_net(g, x)), rtol=1e-12, atol=1e-12)
    mf, mg, mh = metrics(f), metrics(g), metrics(h)
    assert mh.depth == mf.depth + mg.depth + 1
    if act is RELU:
        assert mh.size <= 2 * mf.size + 2 * mg.size
        assert mh.mpar <= max(mf.mpar, mg.mpar) + 1e-15


def test_sparse_concat_dimension_mismatch():
    with pytest.raises(InputError):
        sparse_concat(rand_net(0, n_in=4), rand_net(1, n_out=2))


@given(st.integers(1, 5), st.integers(1, 4), seeds)
def test_identity_net(dim, depth, seed):
    net = identity_net(dim, depth)
    x = np.random.default_rng(seed).normal(size=(5, dim))
    np.testing.assert_allclose(eval_net(net, x), x, atol=1e-14)
    m = metrics(net)
    assert m.size <= 2 * dim * (depth + 1)
    assert m.width <= 2 * dim
    assert m.mpar <= 1


def test_repu_identity_is_exact():
    x = np.random.default_rng(0).uniform(-3, 3, (20, 2))
    np.testing.assert_allclose(eval_net(identity_net(2, 3, REPU2), x), x, atol=1e-12)


def test_extend_depth_keeps_map():
    f = rand_net(3)
    g = extend_depth(f, 2)
    x = np.random.default_rng(1).uniform(-1, 1, (8, 3))
    assert g.depth == f.depth + 2
    np.testing.assert_allclose(eval_net(g, x), eval_net(f, x), atol=1e-12)
    assert metrics(g).mpar <= max(metrics(f).mpar, 1.0)


def test_summation_examples():
    s2 = summation_net(2, 2)
    np.testing.assert_array_equal(eval_net(s2, [1, 2, 3, 4]), [4, 6])
    np.testing.assert_array_equal(eval_net(summation_net(3, 2), np.zeros(6)), [0, 0])
    m = metrics(summation_net(4, 3))
    assert (m.depth, m.size, m.mpar) == (0, 12, 1.0)


def test_scalar_mult_examples():
    np.testing.assert_array_equal(eval_net(scalar_mult_net(0.0, 2), [1.0, -4.0]), [0, 0])
    assert eval_net(scalar_mult_net(2.0, 1), [3.0])[0] == 6.0
    x = np.random.default_rng(0).normal(size=(10, 3))
    for act in (RELU, REPU2):
        net = scalar_mult_net(-5.5, 3, act)
        np.testing.assert_allclose(eval_net(net, x), -5.5 * x, atol=1e-12)
        # frozen construction constant
        assert metrics(net).mpar <= 1.0


@given(st.floats(-1e3, 1e3, allow_nan=False), seeds)
def test_scalar_mult_property(alpha, seed):
    x = np.random.default_rng(seed).normal(size=(4, 2))
    net = scalar_mult_net(alpha, 2)
    np.testing.assert_allclose(eval_net(net, x), alpha * x, rtol=1e-12, atol=1e-12)
    assert metrics(net).mpar <= 1.0


# gradients


def test_linear_gradient_is_outer_product():
    W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    net = affine_net(W, np.zeros(2))
    x, u = np.array([1.0, -1.0, 2.0]), np.array([0.5, 2.0])
    (dW, db), = grad(net, x, u)
    np.testing.assert_array_equal(dW, np.outer(x, u))
    np.testing.assert_array_equal(db, u)


def test_masked_gradient_entries_are_zero():
    net = rand_net(5)
    for layer, (dW, _) in zip(net.layers, grad(net, np.ones(3) * 0.3, np.ones(2))):
        assert np.all(dW[~layer.mask] == 0)


def _min_abs_preactivation(net, x):
    z, out = np.asarray(x, float), np.inf
    for layer in net.layers[:-1]:
        a = z @ layer.W + layer.b
        out = min(out, np.min(np.abs(a)))
        z = net.activation(a)
    return out


@given(seeds, st.sampled_from([RELU, REPU2]))
def test_gradient_matches_central_differences(seed, act):
    rng = np.random.default_rng(seed)
    net = rand_net(seed, act=act)
    x, u = rng.uniform(-1, 1, 3), rng.normal(size=2)
    assume(_min_abs_preactivation(net, x) > 1e-3)
    g = grad(net, x, u)
    h = 1e-6
    for k in range(len(net.layers)):
        for idx in zip(*np.nonzero(net.layers[k].mask)):
            p, m = params_of(net), params_of(net)
            p[k][0][idx] += h
            m[k][0][idx] -= h
            fd = (eval_net(with_params(net, p), x) @ u - eval_net(with_params(net, m), x) @ u) / (2 * h)
            assert abs(fd - g[k][0][idx]) <= 1e-5 * max(1.0, abs(fd))


def test_gradient_fd_on_smooth_point():
    rng = np.random.default_rng(11)
    net = NeuralNet((Layer(rng.normal(size=(2, 3)), rng.normal(size=3)), Layer(rng.normal(size=(3, 1)), [0.0])), REPU2)
    x, u = np.array([0.2, -0.4]), np.array([1.0])
    g = grad(net, x, u)
    h = 1e-6
    params = params_of(net)
    for k in range(2):
        for idx in np.ndindex(params[k][0].shape):
            p, m = params_of(net), params_of(net)
            p[k][0][idx] += h
            m[k][0][idx] -= h
            fd = (eval_net(with_params(net, p), x)[0] - eval_net(with_params(net, m), x)[0]) / (2 * h)
            assert abs(fd - g[k][0][idx]) <= 1e-5 * max(1.0, abs(fd))


# perturbation


def test_perturbation_bound_examples():
    assert perturbation_bound(1, 2, 1, 0.01) == pytest.approx(0.18)
    assert perturbation_bound(1, 2, 1, 0.0) == 0.0
    assert perturbation_bound(1, 1, 2, 1.0) == 16.0


def test_repu_bound_grows_with_eps():
    assert log_perturbation_bound_repu(1, 2, 1, 1e-2) > log_perturbation_bound_repu(1, 2, 1, 1e-3)


@given(seeds, st.sampled_from([1e-3, 1e-2]))
def test_relu_perturbation_within_bound(seed, eps):
    rng = np.random.default_rng(seed)
    net = random_masked_net(rng, 2, 4, 2, 2)
    pert = perturb_params(net, eps, 1.0, rng)
    x = 2 * rng.random((256, 2)) - 1
    gap = np.max(np.abs(eval_net(net, x) - eval_net(pert, x)))
    m = metrics(net)
    assert gap <= perturbation_bound(m.depth, m.width, 1.0, eps)


# serialization


@given(seeds, st.sampled_from([RELU, REPU2]))
def test_json_round_trip(seed, act):
    net = rand_net(seed, act=act)
    back = net_from_json(net_to_json(net))
    assert back.activation == net.activation
    for a, b in zip(net.layers, back.layers):
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.b, b.b)
        np.testing.assert_array_equal(a.mask, b.mask)
