import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bopinn import field as nf
from bopinn.field import (
    Jet2, MlpParams, NumericError, PointwiseLoss, dropout_masks, forward, forward_jet2, init_params,
    load_params, loss_grad, save_params,
)
from bopinn.pinn import PinnLoss, sample_collocation
from oracles import central_diff

SMALL = (2, 6, 5, 1)


def rel(a, b, floor):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def random_params(sizes=SMALL, seed=0, scale=1.0):
    p = init_params(sizes, seed=seed)
    rng = np.random.default_rng(seed + 100)
    theta = p.flatten() * scale + 0.3 * rng.standard_normal(p.n_params)
    return p.unflatten(theta)


def linear(w1, w2, b):
    return MlpParams((2, 1), (np.array([[w1, w2]]),), (np.array([b]),), "identity")


def zero_net(sizes=SMALL):
    p = init_params(sizes)
    return p.unflatten(np.zeros(p.n_params))


# -- construction -------------------------------------------------------------------

def test_init_shapes():
    p = init_params([2, 4, 1], "tanh", 0.0, seed=0)
    assert [w.shape for w in p.weights] == [(4, 2), (1, 4)]
    assert [b.shape for b in p.biases] == [(4,), (1,)]
    assert all(np.all(b == 0) for b in p.biases)


def test_init_deterministic_and_glorot_bounded():
    a, b = init_params(SMALL, seed=3), init_params(SMALL, seed=3)
    assert np.array_equal(a.flatten(), b.flatten())
    for w in a.weights:
        assert np.max(np.abs(w)) <= np.sqrt(6.0 / sum(w.shape))


def test_paper_architecture():
    p = init_params([2, 64, 128, 128, 128, 128, 64, 1], "tanh", 0.1, seed=1)
    assert p.n_layers - 1 == 6 and p.dropout_rate == 0.1


@pytest.mark.parametrize("sizes", [(3, 4, 1), (2, 4, 2), (2,), (2, 0, 1)])
def test_invalid_architecture(sizes):
    with pytest.raises(ValueError):
        init_params(sizes)


@given(st.integers(0, 2**31 - 1))
def test_flatten_round_trip(seed):
    p = init_params(SMALL, seed=seed)
    theta = p.flatten()
    q = p.unflatten(theta)
    assert np.array_equal(q.flatten(), theta)
    assert all(np.array_equal(a, b) for a, b in zip(p.weights, q.weights))


def test_flat_order_is_documented_layout():
    p = init_params((2, 3, 1), seed=0)
    theta = p.flatten()
    assert np.array_equal(theta[:6], p.weights[0].ravel())
    assert np.array_equal(theta[6:9], p.biases[0])
    assert np.array_equal(theta[9:12], p.weights[1].ravel())


# -- forward ------------------------------------------------------------------------

def test_zero_network():
    assert forward(zero_net(), 0.3, 0.9) == 0.0
    jet = forward_jet2(zero_net(), [0.1, 0.5], [0.2, 0.3])
    assert np.all(jet.stack() == 0)


def test_linear_layer_hand_value():
    assert forward(linear(0.3, 0.5, 0.1), 1.0, 2.0) == pytest.approx(1.4, abs=1e-15)


def test_linear_layer_jet():
    jet = forward_jet2(linear(0.3, 0.5, 0.1), [0.2, 0.9], [0.4, 0.1])
    assert np.allclose(jet.d_x, 0.3) and np.allclose(jet.d_t, 0.5)
    assert np.all(jet.d_xx == 0) and np.all(jet.d_tt == 0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_output_bounded_by_saturated_last_layer(x, t, seed):
    p = random_params(seed=seed)
    bound = np.sum(np.abs(p.weights[-1])) + abs(p.biases[-1][0])
    assert abs(forward(p, x, t)) <= bound + 1e-12


def test_jet_value_matches_forward():
    p = random_params()
    x, t = np.random.default_rng(1).uniform(0, 1, (2, 50))
    assert np.allclose(forward_jet2(p, x, t).value, forward(p, x, t), rtol=0, atol=1e-14)


def test_jet_against_finite_differences_100_points():
    rng = np.random.default_rng(5)
    h1, h2 = 1e-4, 1e-3
    worst = 0.0
    for i in range(100):
        p = random_params(seed=i)
        x, t = rng.uniform(0, 1, 2)
        u = lambda x, t: forward(p, x, t)
        jet = forward_jet2(p, x, t)
        fd_x = (u(x + h1, t) - u(x - h1, t)) / (2 * h1)
        fd_t = (u(x, t + h1) - u(x, t - h1)) / (2 * h1)
        # fourth-order stencil keeps rounding error of the second difference small
        fd2 = lambda f: (-f(2) + 16 * f(1) - 30 * f(0) + 16 * f(-1) - f(-2)) / (12 * h2**2)
        fd_xx = fd2(lambda k: u(x + k * h2, t))
        fd_tt = fd2(lambda k: u(x, t + k * h2))
        got = np.array([jet.d_x[0], jet.d_t[0], jet.d_xx[0], jet.d_tt[0]])
        ref = np.array([fd_x, fd_t, fd_xx, fd_tt])
        worst = max(worst, float(np.max(rel(got, ref, 1e-3))))
    assert worst < 1e-5


def test_output_scaling_is_linear():
    p = random_params()
    x, t = np.array([0.1, 0.7]), np.array([0.3, 0.8])
    a = forward_jet2(p, x, t).stack()
    b = forward_jet2(p.scaled_output(2.5), x, t).stack()
    assert np.allclose(b, 2.5 * a, rtol=1e-13, atol=1e-15)


def test_non_finite_raises_numeric_error():
    p = random_params()
    theta = p.flatten()
    theta[0] = np.nan
    with pytest.raises(NumericError) as info:
        forward(p.unflatten(theta), 0.5, 0.5)
    assert info.value.term == "forward"


# -- gradients ----------------------------------------------------------------------

def test_zero_network_gradient_pattern():
    p = zero_net()
    loss = PointwiseLoss(np.array([0.5]), np.array([0.5]),
                         lambda jet: (float(jet.value[0]), Jet2(np.ones(1), *(np.zeros(1) for _ in range(4)))))
    value, grad = loss_grad(p, loss)
    assert value == 0.0
    nonzero = np.flatnonzero(grad)
    assert list(nonzero) == [p.n_params - 1]  # only the output bias
    assert grad[-1] == 1.0


def test_direct_parameter_penalty():
    p = random_params()
    empty = PointwiseLoss(np.empty(0), np.empty(0), None,
                          direct=lambda th: (float(th @ th), 2 * th))
    value, grad = loss_grad(p, empty)
    assert value == pytest.approx(float(p.flatten() @ p.flatten()))
    assert np.array_equal(grad, 2 * p.flatten())


def _pinn_objective(sizes, n=10, c=0.55, seed=0):
    from bopinn.wave import WaveDomain

    colloc = sample_collocation(WaveDomain(), n, n, n, seed=seed)
    p = random_params(sizes, seed=seed)
    loss = PinnLoss(colloc, c)
    return p, loss.objective(p)


def test_full_pinn_loss_gradient_small_net():
    p, f = _pinn_objective((2, 4, 1))
    theta = p.flatten()
    _, grad = f(theta)
    fd = np.array([central_diff(lambda th: f(th)[0], theta, i) for i in range(theta.size)])
    assert np.max(rel(grad, fd, 1e-6)) < 1e-5


def test_full_pinn_loss_gradient_20_random_coordinates():
    p, f = _pinn_objective((2, 8, 8, 1), n=20, seed=2)
    theta = p.flatten()
    _, grad = f(theta)
    idx = np.random.default_rng(0).choice(theta.size, 20, replace=False)
    fd = np.array([central_diff(lambda th: f(th)[0], theta, i) for i in idx])
    assert np.max(rel(grad[idx], fd, 1e-6)) < 1e-5


def test_gradient_length_and_non_finite_loss():
    p, f = _pinn_objective((2, 4, 1))
    assert f(p.flatten())[1].shape == (p.n_params,)
    bad = p.flatten()
    bad[:] = 1e200
    with pytest.raises(NumericError):
        f(bad)


# -- dropout and serialization --------------------------------------------------------

def test_dropout_masks_are_inverted():
    p = init_params((2, 50, 50, 1), dropout_rate=0.1, seed=0)
    masks = dropout_masks(p, 4000, np.random.default_rng(0))
    assert len(masks) == 2
    vals = np.unique(masks[0])
    assert np.allclose(vals, [0.0, 1 / 0.9])
    assert abs(masks[0].mean() - 1.0) < 0.01
    assert dropout_masks(init_params((2, 3, 1)), 10, np.random.default_rng(0)) is None


def test_forward_ignores_dropout():
    p = init_params((2, 8, 1), dropout_rate=0.5, seed=0)
    assert forward(p, 0.3, 0.4) == forward(p, 0.3, 0.4)


def test_serialization_round_trip(tmp_path):
    p = random_params()
    save_params(p, tmp_path / "net.npy", {"c": 0.55})
    q, meta = load_params(tmp_path / "net.npy")
    assert np.array_equal(q.flatten(), p.flatten())
    assert q.layer_sizes == p.layer_sizes and meta == {"c": 0.55}


def test_workspace_reuse_matches_fresh():
    p = random_params()
    x, t = np.random.default_rng(0).uniform(0, 1, (2, 30))
    ws = nf.JetWorkspace.full(p.layer_sizes, x, t)
    nf._jet_forward(p, ws)
    q = random_params(seed=9)
    out = nf._jet_forward(q, ws)[0]
    assert np.array_equal(out, forward_jet2(q, x, t).stack())


def test_channel_subset_blocks_match_full_jets():
    p = random_params()
    rng = np.random.default_rng(3)
    pts = [rng.uniform(0, 1, (2, n)) for n in (7, 5, 4, 3)]
    chans = [nf.FULL, (nf.VALUE, nf.DT), (nf.VALUE, nf.DX), (nf.VALUE,)]
    blocks = [nf.JetBlock(x, t, ch) for (x, t), ch in zip(pts, chans)]
    outs = nf._jet_forward(p, nf.JetWorkspace(p.layer_sizes, blocks))
    for (x, t), ch, out in zip(pts, chans, outs):
        full = forward_jet2(p, x, t).stack()
        assert np.allclose(out, full[list(ch)], rtol=1e-13, atol=1e-14)


def test_channel_subset_gradient_matches_full_path():
    """Same loss through a (u, u_t) block and through a full-jet PointwiseLoss."""
    p = random_params()
    x, t = np.random.default_rng(4).uniform(0, 1, (2, 9))

    def block_fn(outs):
        u, ut = outs[0]
        return float(np.sum(u**2 + u * ut)), [np.stack([2 * u + ut, u])]

    def full_fn(jet):
        u, ut = jet.value, jet.d_t
        z = np.zeros_like(u)
        return float(np.sum(u**2 + u * ut)), Jet2(2 * u + ut, z, u, z, z)

    ws = nf.JetWorkspace(p.layer_sizes, [nf.JetBlock(x, t, (nf.VALUE, nf.DT))])
    v1, g1 = loss_grad(p, nf.BlockLoss(ws, block_fn))
    v2, g2 = loss_grad(p, PointwiseLoss(x, t, full_fn))
    assert v1 == pytest.approx(v2, rel=1e-13) and np.allclose(g1, g2, rtol=1e-12, atol=1e-14)


def test_unsupported_channel_set():
    with pytest.raises(ValueError):
        nf.JetBlock([0.1], [0.2], (nf.DX,))


def test_pinn_gradient_with_dropout_masks_fixed():
    from bopinn.wave import WaveDomain

    colloc = sample_collocation(WaveDomain(), 15, 6, 6, seed=1)
    p = init_params((2, 6, 6, 1), dropout_rate=0.2, seed=1)
    pl = PinnLoss(colloc, 0.7)
    masks = dropout_masks(p, pl.n_points, np.random.default_rng(0))

    def f(theta):
        q = p.unflatten(theta)
        return loss_grad(q, nf.BlockLoss(pl.workspace(q), pl._block_loss, masks))

    theta = p.flatten()
    _, grad = f(theta)
    fd = np.array([central_diff(lambda th: f(th)[0], theta, i) for i in range(0, theta.size, 3)])
    assert np.max(rel(grad[::3], fd, 1e-6)) < 1e-5
