"""Temporal graph predictor for next-slot server state.

A shared GRU encodes each server's recent history into Phi; stacked layers
mix it with neighbour aggregation,

    H' = relu(A @ H @ W_s + Phi * (H @ W_t)),

and a two-layer head maps the last H to the forecast.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, mse, relu
from .nn import Dense, GRUCell, ParamSet, adam_step, fan_in_uniform


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class GraphSnapshot:
    node_features: np.ndarray  # (V, d)
    adjacency: np.ndarray  # (V, V) row-normalised, self loops included


@dataclass(frozen=True)
class Forecast:
    states: np.ndarray  # (V, d), clamped to [0, 1]
    horizon: int = 1


def edge_weights(positions_km: np.ndarray) -> np.ndarray:
    pos = np.asarray(positions_km, dtype=float)
    diff = pos[:, None, :] - pos[None, :, :]
    w = 1.0 / (1.0 + np.hypot(diff[..., 0], diff[..., 1]))
    np.fill_diagonal(w, 1.0)
    return w


def normalize_adjacency(w: np.ndarray) -> np.ndarray:
    return w / w.sum(axis=1, keepdims=True)


def build_graph(positions_km, node_features) -> GraphSnapshot:
    feats = np.asarray(node_features, dtype=float)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise PreconditionError("need a (V, d) feature matrix with V >= 1")
    return GraphSnapshot(node_features=feats, adjacency=normalize_adjacency(edge_weights(positions_km)))


class TemporalBuffer:
    """FIFO of the last `k_hist` snapshots, oldest first."""

    def __init__(self, k_hist: int = 5):
        self.k_hist = k_hist
        self._items: deque[GraphSnapshot] = deque(maxlen=k_hist)

    def append(self, snap: GraphSnapshot):
        self._items.append(snap)

    def clear(self):
        self._items.clear()

    def warm(self, snap: GraphSnapshot):
        """Restart from a single observation, padded to full length."""
        self.clear()
        for _ in range(self.k_hist):
            self._items.append(snap)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    @property
    def full(self) -> bool:
        return len(self._items) == self.k_hist

    def snapshots(self) -> list[GraphSnapshot]:
        return list(self._items)

    def sequence(self) -> np.ndarray:
        """(K, V, d) feature history."""
        return np.stack([s.node_features for s in self._items])


class Predictor:
    def __init__(self, n_features: int = 4, hidden: int = 32, n_layers: int = 3, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.n_features, self.hidden, self.n_layers = n_features, hidden, n_layers
        self.ps = ParamSet()
        self.gru = GRUCell(self.ps, "gru", n_features, hidden, rng)
        self.Ws, self.Wt = [], []
        d_in = n_features
        for l in range(n_layers):
            self.Ws.append(self.ps.add(f"layer{l}.Ws", fan_in_uniform(rng, d_in, (d_in, hidden))))
            self.Wt.append(self.ps.add(f"layer{l}.Wt", fan_in_uniform(rng, d_in, (d_in, hidden))))
            d_in = hidden
        self.head1 = Dense(self.ps, "head1", hidden, hidden, rng)
        self.head2 = Dense(self.ps, "head2", hidden, n_features, rng)

    def temporal_encoding(self, seq) -> Tensor:
        """seq: (..., K, V, d) history -> Phi (..., V, hidden)."""
        seq = np.asarray(seq, dtype=float)
        if seq.shape[-3] == 0:
            raise PreconditionError("temporal encoding needs at least one snapshot")
        h = Tensor(np.zeros(seq.shape[:-3] + seq.shape[-2:-1] + (self.hidden,)))
        for k in range(seq.shape[-3]):
            h = self.gru(Tensor(seq[..., k, :, :]), h)
        return h

    def layer_forward(self, H, adjacency, phi: Tensor, l: int) -> Tensor:
        A = Tensor(adjacency)
        return relu(A @ H @ self.Ws[l] + phi * (H @ self.Wt[l]))

    def forward(self, seq, adjacency) -> Tensor:
        """Unclamped forecast (..., V, d) from history `seq` and the newest graph."""
        seq = np.asarray(seq, dtype=float)
        phi = self.temporal_encoding(seq)
        H = Tensor(seq[..., -1, :, :])
        for l in range(self.n_layers):
            H = self.layer_forward(H, adjacency, phi, l)
        return self.head2(relu(self.head1(H)))

    def predict(self, buffer: TemporalBuffer) -> Forecast:
        if not buffer.full:
            raise PreconditionError(f"buffer holds {len(buffer)} of {buffer.k_hist} snapshots")
        out = self.forward(buffer.sequence(), buffer[-1].adjacency)
        return Forecast(states=np.clip(out.data, 0.0, 1.0))

    def loss(self, seqs, adjs, targets) -> Tensor:
        return mse(self.forward(seqs, adjs), Tensor(targets))

    def train_step(self, seqs, adjs, targets, lr: float) -> float:
        """One Adam step on the batch MSE; returns the loss before the step."""
        self.ps.zero_grad()
        loss = self.loss(np.asarray(seqs), np.asarray(adjs), np.asarray(targets))
        loss.backward()
        adam_step(self.ps, lr)
        return float(loss.data)


class PairStore:
    """Bounded store of matured (history, adjacency, realised next state) examples."""

    def __init__(self, capacity: int):
        self.items: deque = deque(maxlen=capacity)

    def add(self, seq, adjacency, target):
        self.items.append((np.array(seq), np.array(adjacency), np.array(target)))

    def __len__(self):
        return len(self.items)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, len(self.items), min(n, len(self.items)))
        seqs, adjs, tgts = zip(*(self.items[i] for i in idx))
        return np.stack(seqs), np.stack(adjs), np.stack(tgts)


def augment_observation(local_obs, forecast) -> np.ndarray:
    """[local obs, forecast flattened in (server, feature) order]."""
    states = forecast.states if isinstance(forecast, Forecast) else np.asarray(forecast)
    return np.concatenate([np.asarray(local_obs, dtype=float).ravel(), states.ravel()])
