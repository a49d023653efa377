import numpy as np
import pytest

from tgoffload.autodiff import Tensor
from tgoffload.env import N_FEATURES
from tgoffload.timegnn import (Forecast, GraphSnapshot, PairStore, PreconditionError, Predictor,
                               TemporalBuffer, augment_observation, build_graph, edge_weights,
                               normalize_adjacency)


def snap(v=3, d=4, fill=0.0, seed=None):
    feats = np.full((v, d), fill) if seed is None else np.random.default_rng(seed).uniform(size=(v, d))
    return build_graph(np.random.default_rng(0).uniform(-1, 1, (v, 2)), feats)


# ---- graphs --------------------------------------------------------------

def test_single_server_graph():
    g = build_graph(np.zeros((1, 2)), np.ones((1, 4)))
    assert g.adjacency.tolist() == [[1.0]]


def test_two_servers_symmetric():
    g = build_graph(np.array([[0.0, 0.0], [3.0, 4.0]]), np.ones((2, 4)))
    A = g.adjacency
    assert A[0, 1] == A[1, 0] == pytest.approx((1 / 6) / (1 + 1 / 6))
    assert np.allclose(A.sum(1), 1)


def test_three_server_hand_computed():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    d01, d02, d12 = 1.0, 2.0, np.sqrt(5.0)
    w = np.array([[1, 1 / (1 + d01), 1 / (1 + d02)],
                  [1 / (1 + d01), 1, 1 / (1 + d12)],
                  [1 / (1 + d02), 1 / (1 + d12), 1]])
    assert np.allclose(edge_weights(pos), w, rtol=1e-15)
    hand = np.array([[w[i, j] / (w[i, 0] + w[i, 1] + w[i, 2]) for j in range(3)] for i in range(3)])
    A = build_graph(pos, np.zeros((3, 4))).adjacency
    assert np.allclose(A, hand, rtol=1e-15)
    assert np.allclose(A.sum(1), 1, rtol=1e-15) and np.all(np.diag(A) > 0)
    assert np.allclose(edge_weights(pos), edge_weights(pos).T)


def test_build_graph_rejects_empty():
    with pytest.raises(PreconditionError):
        build_graph(np.zeros((0, 2)), np.zeros((0, 4)))


# ---- buffer --------------------------------------------------------------

def test_buffer_fifo():
    buf = TemporalBuffer(5)
    snaps = [snap(fill=float(i)) for i in range(12)]
    for i, s in enumerate(snaps):
        buf.append(s)
        assert len(buf) == min(i + 1, 5)
    assert buf.snapshots() == snaps[-5:]
    seq = buf.sequence()
    assert seq.shape == (5, 3, 4) and seq[:, 0, 0].tolist() == [7, 8, 9, 10, 11]


def test_buffer_warm_pads():
    buf = TemporalBuffer(5)
    buf.append(snap(fill=9.0))
    s = snap(fill=1.0)
    buf.warm(s)
    assert buf.full and all(x is s for x in buf.snapshots())


# ---- encoder and layers --------------------------------------------------

def _gru_numpy(cell, x, h):
    k = cell.n_hidden
    sg = lambda v: 1 / (1 + np.exp(-v))
    xs = x @ cell.Wx.data + cell.b.data
    hs = h @ cell.Wh.data
    z = sg(xs[..., :k] + hs[..., :k])
    r = sg(xs[..., k:2 * k] + hs[..., k:])
    n = np.tanh(xs[..., 2 * k:] + (r * h) @ cell.Wn.data)
    return z * n + (1 - z) * h


def test_constant_history_matches_direct_iteration():
    p = Predictor(seed=3)
    x = np.random.default_rng(1).uniform(size=(3, 4))
    for k in (1, 5, 12):
        seq = np.broadcast_to(x, (k, 3, 4))
        h = np.zeros((3, p.hidden))
        for _ in range(k):
            h = _gru_numpy(p.gru, x, h)
        assert np.allclose(p.temporal_encoding(seq).data, h, atol=1e-13)
    # long constant input settles on a fixed point of the cell
    h = p.temporal_encoding(np.broadcast_to(x, (200, 3, 4))).data
    assert np.allclose(_gru_numpy(p.gru, x, h), h, atol=1e-9)


def test_encoding_needs_history():
    with pytest.raises(PreconditionError):
        Predictor().temporal_encoding(np.zeros((0, 3, 4)))


def test_degenerate_layer_is_relu():
    p = Predictor(n_features=3, hidden=3, n_layers=1)
    p.Ws[0].data = np.eye(3)
    H = Tensor(np.array([[0.5, -1.0, 2.0]]))
    out = p.layer_forward(H, np.ones((1, 1)), Tensor(np.zeros((1, 3))), 0)
    assert np.array_equal(out.data, np.maximum(H.data, 0))


def test_temporal_ablation_removes_history():
    p = Predictor(seed=1)
    for w in p.Wt:
        w.data = np.zeros_like(w.data)
    rng = np.random.default_rng(2)
    seq = rng.uniform(size=(5, 4, 4))
    A = normalize_adjacency(edge_weights(rng.uniform(size=(4, 2))))
    base = p.forward(seq, A).data
    seq2 = seq.copy()
    seq2[:-1] = rng.uniform(size=(4, 4, 4))
    assert np.array_equal(p.forward(seq2, A).data, base)


def test_spatial_ablation_removes_cross_node():
    p = Predictor(seed=2)
    for w in p.Ws:
        w.data = np.zeros_like(w.data)
    rng = np.random.default_rng(3)
    seq = rng.uniform(size=(5, 4, 4))
    A = np.eye(4)
    base = p.forward(seq, A).data
    seq2 = seq.copy()
    seq2[:, 2] = rng.uniform(size=(5, 4))
    out = p.forward(seq2, A).data
    keep = [0, 1, 3]
    assert np.array_equal(out[keep], base[keep])
    assert not np.array_equal(out[2], base[2])


def test_permutation_equivariance():
    p = Predictor(seed=4)
    rng = np.random.default_rng(4)
    pos = rng.uniform(-1, 1, (6, 2))
    seq = rng.uniform(size=(5, 6, 4))
    A = normalize_adjacency(edge_weights(pos))
    perm = rng.permutation(6)
    out = p.forward(seq, A).data
    out_p = p.forward(seq[:, perm], normalize_adjacency(edge_weights(pos[perm]))).data
    assert np.allclose(out_p, out[perm], rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("v", [3, 5, 10, 15])
def test_forecast_shapes(v):
    buf = TemporalBuffer(5)
    buf.warm(snap(v=v, seed=v))
    fc = Predictor(seed=0).predict(buf)
    assert isinstance(fc, Forecast) and fc.states.shape == (v, N_FEATURES) and fc.horizon == 1
    assert np.all((fc.states >= 0) & (fc.states <= 1))


def test_zero_head_gives_zero_forecast():
    p = Predictor(seed=0)
    for name in ("head2.W", "head2.b"):
        p.ps[name].data = np.zeros_like(p.ps[name].data)
    buf = TemporalBuffer(5)
    buf.warm(snap(seed=1))
    assert np.array_equal(p.predict(buf).states, np.zeros((3, 4)))


def test_predict_needs_full_buffer():
    buf = TemporalBuffer(5)
    buf.append(snap())
    with pytest.raises(PreconditionError):
        Predictor().predict(buf)


def test_predict_deterministic():
    buf = TemporalBuffer(5)
    for i in range(5):
        buf.append(snap(seed=i))
    p = Predictor(seed=7)
    assert np.array_equal(p.predict(buf).states, p.predict(buf).states)


# ---- training ----------------------------------------------------------

def test_train_step_reduces_loss_on_tiny_set():
    rng = np.random.default_rng(0)
    seqs = rng.uniform(size=(8, 5, 3, 4))
    adjs = np.broadcast_to(normalize_adjacency(edge_weights(rng.uniform(size=(3, 2)))), (8, 3, 3))
    tgts = rng.uniform(size=(8, 3, 4))
    p = Predictor(seed=0)
    losses = [p.train_step(seqs, adjs, tgts, 1e-3) for _ in range(200)]
    assert all(l >= 0 for l in losses)
    assert float(p.loss(seqs, adjs, tgts).data) < 0.5 * losses[0]


def test_perfect_predictor_zero_loss_and_grads():
    p = Predictor(seed=0)
    p.ps["head2.W"].data = np.zeros_like(p.ps["head2.W"].data)
    p.ps["head2.b"].data = np.array([0.1, 0.2, 0.3, 0.4])
    seqs = np.random.default_rng(0).uniform(size=(2, 5, 3, 4))
    adjs = np.broadcast_to(np.eye(3), (2, 3, 3))
    tgts = np.broadcast_to([0.1, 0.2, 0.3, 0.4], (2, 3, 4))
    p.ps.zero_grad()
    loss = p.loss(seqs, adjs, tgts)
    loss.backward()
    assert float(loss.data) == 0.0
    assert all(np.all(t.grad == 0) for _, t in p.ps)


def test_pair_store_bounded():
    store = PairStore(4)
    for i in range(10):
        store.add(np.full((5, 3, 4), i), np.eye(3), np.full((3, 4), i))
    assert len(store) == 4
    seqs, adjs, tgts = store.sample(np.random.default_rng(0), 16)
    # draws are capped at the store size
    assert seqs.shape == (4, 5, 3, 4) and set(np.unique(tgts)) <= {6, 7, 8, 9}


# ---- augmentation ------------------------------------------------------

def test_augment_observation():
    obs = np.arange(10.0)
    fc = Forecast(states=np.arange(12.0).reshape(3, 4) / 12)
    out = augment_observation(obs, fc)
    assert out.shape == (22,)
    assert np.array_equal(out[10:], fc.states.ravel())
    assert np.array_equal(augment_observation(obs, np.zeros((3, 4)))[10:], np.zeros(12))
    assert np.array_equal(out, augment_observation(obs, fc))
