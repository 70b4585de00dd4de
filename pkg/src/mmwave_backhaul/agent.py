"""Value learning: numpy Q-network with analytic backprop, replay, target copy.

The network is a plain fully-connected rectifier stack trained by stochastic
gradient descent on the squared TD error against a periodically synced target
copy. Everything is explicit numpy so gradients can be checked against finite
differences. A tabular Q-learning update is kept alongside as the small-scale
verification oracle.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np


class NumericalError(Exception):
    """Non-finite loss or Q-values during training."""


class QNetwork:
    """Fully-connected ReLU network mapping features to per-action values.

    Weights are (fan_in, fan_out) matrices applied as x @ W + b; hidden
    layers are rectified, the output layer is affine. The DQN configuration
    uses exactly two hidden layers (see ``make_qnetwork``); the class itself
    accepts any layer list so degenerate rigs can be built in tests.
    """

    def __init__(self, layer_sizes, rng: np.random.Generator | None = None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / math.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def num_actions(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values for one feature vector or a batch of them."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"input width {h.shape[1]} does not match layer_sizes[0]={self.layer_sizes[0]}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                np.maximum(h, 0.0, out=h)
        return h[0] if squeeze else h

    def hidden_activations(self, x: np.ndarray) -> list[np.ndarray]:
        """Post-activation values per layer (input included, output excluded)."""
        h = np.asarray(x, dtype=float)
        acts = [h]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        return acts

    def q_selected(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Q(s_i, a_i) without materializing the full output layer."""
        acts = self.hidden_activations(states)
        h = acts[-1]
        w, b = self.weights[-1], self.biases[-1]
        return np.einsum("bh,hb->b", h, w[:, actions]) + b[actions]

    def copy(self) -> "QNetwork":
        dup = QNetwork(self.layer_sizes, rng=None)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup


def make_qnetwork(num_features: int, num_actions: int, hidden: tuple[int, int],
                  rng: np.random.Generator) -> QNetwork:
    """The DQN shape: two rectified hidden layers, one value per action."""
    if len(hidden) != 2:
        raise ValueError(f"the DQN uses exactly two hidden layers, got {hidden}")
    return QNetwork((num_features, hidden[0], hidden[1], num_actions), rng)


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray


@dataclass
class DqnHyper:
    gamma: float = 0.9
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int | None = None   # defaults to train_steps // 2
    batch_size: int = 64
    target_sync_period: int = 500
    buffer_capacity: int = 50000
    train_steps: int = 20000
    seed: int = 0
    hidden: tuple[int, int] = (128, 128)

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0,1), got {self.gamma}")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ValueError(
                f"need 0 <= eps_end <= eps_start <= 1, got {self.eps_end}, {self.eps_start}")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size cannot exceed buffer_capacity")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.train_steps < 1 or self.target_sync_period < 1:
            raise ValueError("train_steps and target_sync_period must be >= 1")

    def decay_steps(self) -> int:
        return self.eps_decay_steps if self.eps_decay_steps is not None else self.train_steps // 2


class ReplayBuffer:
    """Fixed-capacity ring of transitions; sampling is uniform with replacement."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.empty((capacity, state_dim))
        self.actions = np.empty(capacity, dtype=np.int64)
        self.rewards = np.empty(capacity)
        self.next_states = np.empty((capacity, state_dim))
        self.size = 0
        self._head = 0

    def add(self, s, a, r, s_next) -> int:
        """Store one transition, overwriting the oldest; returns the slot."""
        i = self._head
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s_next
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=batch_size)


def epsilon_at(t: int, hyper: DqnHyper) -> float:
    """Linear decay from eps_start to eps_end over decay_steps, then flat."""
    decay = hyper.decay_steps()
    if decay <= 0:
        return hyper.eps_end
    frac = min(1.0, t / decay)
    return hyper.eps_start + (hyper.eps_end - hyper.eps_start) * frac


def select_action(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Greedy with probability 1-eps (ties to the lowest index), else uniform."""
    if len(q) == 0:
        raise ValueError("empty Q vector")
    if rng.random() < eps:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def td_targets(batch: list[Transition], target: QNetwork, gamma: float) -> np.ndarray:
    """y_i = r_i + gamma * max_a' Q_target(s'_i, a'); no terminal masking."""
    if not batch:
        raise ValueError("empty batch")
    next_states = np.stack([t.s_next for t in batch])
    rewards = np.array([t.r for t in batch], dtype=float)
    return rewards + gamma * target.forward(next_states).max(axis=1)


def loss_and_grads(net: QNetwork, states: np.ndarray, actions: np.ndarray,
                   targets: np.ndarray):
    """Mean squared TD error and its full analytic gradient.

    Gradient flows only through the selected action's output unit per sample;
    every other output column receives exactly zero. Returns
    (loss, [dW...], [db...]) with dense arrays matching the parameter shapes.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=float)
    b = states.shape[0]
    acts = net.hidden_activations(states)
    h = acts[-1]
    w_out, b_out = net.weights[-1], net.biases[-1]
    q_sel = np.einsum("bh,hb->b", h, w_out[:, actions]) + b_out[actions]
    err = q_sel - targets
    loss = float(np.mean(err ** 2))

    g = (2.0 / b) * err                            # dL/dq_sel
    dw = [np.zeros_like(w) for w in net.weights]
    db = [np.zeros_like(bb) for bb in net.biases]
    # output layer: scatter into the selected columns only
    np.add.at(dw[-1].T, actions, g[:, None] * h)
    np.add.at(db[-1], actions, g)
    dh = g[:, None] * w_out[:, actions].T          # (b, H_last)
    # hidden layers
    for layer in range(len(net.weights) - 2, -1, -1):
        dz = dh * (acts[layer + 1] > 0.0)          # ReLU mask
        dw[layer] = acts[layer].T @ dz
        db[layer] = dz.sum(axis=0)
        if layer > 0:
            dh = dz @ net.weights[layer].T
    return loss, dw, db


def train_step(net: QNetwork, states: np.ndarray, actions: np.ndarray,
               targets: np.ndarray, lr: float) -> float:
    """One SGD descent step on the squared TD error; returns the loss.

    The last-layer update touches only the selected actions' columns (their
    gradient is the only nonzero part), so the step cost is independent of
    the action-space width.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=float)
    b = states.shape[0]
    acts = net.hidden_activations(states)
    h = acts[-1]
    w_out, b_out = net.weights[-1], net.biases[-1]
    q_sel = np.einsum("bh,hb->b", h, w_out[:, actions]) + b_out[actions]
    err = q_sel - targets
    loss = float(np.mean(err ** 2))
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite training loss {loss}")

    g = (2.0 / b) * err
    dh = g[:, None] * w_out[:, actions].T
    np.add.at(w_out.T, actions, -lr * (g[:, None] * h))
    np.add.at(b_out, actions, -lr * g)
    for layer in range(len(net.weights) - 2, -1, -1):
        dz = dh * (acts[layer + 1] > 0.0)
        if layer > 0:
            dh = dz @ net.weights[layer].T
        net.weights[layer] -= lr * (acts[layer].T @ dz)
        net.biases[layer] -= lr * dz.sum(axis=0)
    return loss


def sync_target(net: QNetwork) -> QNetwork:
    """Fresh deep copy of the online weights to serve as the target network."""
    return net.copy()


def tabular_q_update(q_table: np.ndarray, s: int, a: int, r: float, s_next: int,
                     alpha: float, gamma: float) -> np.ndarray:
    """Classic one-step Q-learning update on a dense (states x actions) table."""
    q_table[s, a] += alpha * (r + gamma * np.max(q_table[s_next]) - q_table[s, a])
    return q_table


@dataclass
class TrainLog:
    rewards: np.ndarray
    losses: np.ndarray
    epsilons: np.ndarray
    sync_count: int


@dataclass
class TrainResult:
    net: QNetwork
    log: TrainLog


def train(env, hyper: DqnHyper) -> TrainResult:
    """Interact, store, replay, descend; fully reproducible from hyper.seed.

    The environment must expose reset() -> state, observe() -> features,
    step(action) -> StepOutcome, and an ``actions`` list (see BackhaulEnv).
    Target syncs happen every ``target_sync_period`` environment steps, so a
    run fires exactly floor(train_steps / target_sync_period) of them.

    The max_a' Q_target(s') factor of each TD target is cached per transition
    and invalidated on sync: the target network only changes then, so cached
    values are exact, and recomputing lazily keeps full-width forward passes
    off the per-step path.
    """
    hyper.validate()
    rng = np.random.default_rng(hyper.seed)
    env.reset()
    state_dim = env.observe().shape[0]
    num_actions = len(env.actions)
    net = make_qnetwork(state_dim, num_actions, hyper.hidden, rng)
    target = sync_target(net)
    buf = ReplayBuffer(hyper.buffer_capacity, state_dim)
    # target-max cache: value + target-version stamp per buffer slot
    cached_max = np.zeros(hyper.buffer_capacity)
    cached_version = np.full(hyper.buffer_capacity, -1, dtype=np.int64)
    version = 0

    rewards = np.zeros(hyper.train_steps)
    losses = np.full(hyper.train_steps, np.nan)
    epsilons = np.zeros(hyper.train_steps)
    sync_count = 0

    obs = env.observe()
    for t in range(hyper.train_steps):
        eps = epsilon_at(t, hyper)
        epsilons[t] = eps
        if rng.random() < eps:
            a = int(rng.integers(num_actions))
        else:
            q = net.forward(obs)
            if not np.all(np.isfinite(q)):
                raise NumericalError("non-finite Q-values during action selection")
            a = int(np.argmax(q))
        outcome = env.step(env.actions[a])
        next_obs = env.observe()
        rewards[t] = outcome.reward
        slot = buf.add(obs, a, outcome.reward, next_obs)
        cached_version[slot] = -1
        obs = next_obs

        if buf.size >= hyper.batch_size:
            idx = buf.sample_indices(hyper.batch_size, rng)
            stale = idx[cached_version[idx] != version]
            if stale.size:
                stale = np.unique(stale)
                cached_max[stale] = target.forward(buf.next_states[stale]).max(axis=1)
                cached_version[stale] = version
            y = buf.rewards[idx] + hyper.gamma * cached_max[idx]
            losses[t] = train_step(net, buf.states[idx], buf.actions[idx], y, hyper.lr)

        if (t + 1) % hyper.target_sync_period == 0:
            target = sync_target(net)
            version += 1
            sync_count += 1

    return TrainResult(net=net, log=TrainLog(rewards, losses, epsilons, sync_count))


CHECKPOINT_VERSION = 1


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(path: str, net: QNetwork, cfg_hash: str = "") -> None:
    """Versioned npz container: layer sizes plus row-major weight/bias arrays."""
    payload = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "layer_sizes": np.array(net.layer_sizes, dtype=np.int64),
        "config_hash": np.array(cfg_hash),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload[f"w{i}"] = np.ascontiguousarray(w)
        payload[f"b{i}"] = np.ascontiguousarray(b)
    np.savez(path, **payload)


def load_checkpoint(path: str) -> tuple[QNetwork, str]:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sizes = tuple(int(s) for s in data["layer_sizes"])
        net = QNetwork(sizes, rng=None)
        for i in range(len(sizes) - 1):
            w, b = data[f"w{i}"], data[f"b{i}"]
            if w.shape != net.weights[i].shape or b.shape != net.biases[i].shape:
                raise ValueError(f"checkpoint layer {i} has shape {w.shape}, "
                                 f"expected {net.weights[i].shape}")
            net.weights[i] = w.astype(float)
            net.biases[i] = b.astype(float)
        return net, str(data["config_hash"])
