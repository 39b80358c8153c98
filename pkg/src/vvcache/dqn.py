"""Deep Q-network caching agent.

A four-layer fully connected network maps the ``2C + 2kC + 2`` features to
one Q-value per flat action (``1 + C + kC``).  Training uses experience
replay, a fixed target network and Adam, all written directly in numpy.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cache import feature_length, num_actions
from .env import VIDEO, Policy


@dataclass
class TrainerConfig:
    learning_rate: float = 1e-3
    epsilon: float = 0.05
    epsilon_offline: float = 1.0
    gamma: float = 0.6
    batch_size: int = 32
    train_period: int = 200  # decisions between minibatch updates
    target_period: int = 200  # decisions between target syncs
    buffer_size: int = 2000
    offline_epochs: int = 100
    warmup_sets: int = 1500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    reward_scale: float = 1.0  # learner sees reward / reward_scale

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1 or not 0 <= self.epsilon_offline <= 1:
            raise ValueError("epsilon must be in [0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        for name in ("batch_size", "train_period", "target_period", "buffer_size",
                     "offline_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")


class QNetwork:
    """Affine -> ReLU -> affine -> ReLU -> affine.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of row
    vectors is multiplied from the left.
    """

    def __init__(self, widths, rng: np.random.Generator | None = None):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) != 4:
            raise ValueError("expected widths [input, hidden, hidden, output]")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @classmethod
    def for_cache(cls, capacity: int, k: int, rng=None) -> QNetwork:
        n_in, n_out = feature_length(capacity, k), num_actions(capacity, k)
        return cls([n_in, n_out, n_out, n_out], rng)

    def __call__(self, s):
        return self.forward(s)

    def forward(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape[-1] != self.widths[0]:
            raise ValueError(f"input has width {s.shape[-1]}, network expects {self.widths[0]}")
        w1, b1, w2, b2, w3, b3 = self.params
        h = np.maximum(s @ w1 + b1, 0.0)
        h = np.maximum(h @ w2 + b2, 0.0)
        return h @ w3 + b3

    def loss_and_grads(self, x, actions, targets):
        """Mean squared TD error on the taken actions and its parameter gradients."""
        w1, b1, w2, b2, w3, b3 = self.params
        z1 = x @ w1 + b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ w2 + b2
        h2 = np.maximum(z2, 0.0)
        q = h2 @ w3 + b3
        n = len(x)
        rows = np.arange(n)
        err = q[rows, actions] - targets
        loss = float(np.mean(err ** 2))
        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * err / n
        g_w3 = h2.T @ dq
        g_b3 = dq.sum(axis=0)
        d2 = (dq @ w3.T) * (z2 > 0)
        g_w2 = h1.T @ d2
        g_b2 = d2.sum(axis=0)
        d1 = (d2 @ w2.T) * (z1 > 0)
        g_w1 = x.T @ d1
        g_b1 = d1.sum(axis=0)
        return loss, [g_w1, g_b1, g_w2, g_b2, g_w3, g_b3]

    def copy_from(self, other: QNetwork) -> None:
        if other.widths != self.widths:
            raise ValueError(f"architecture mismatch {other.widths} vs {self.widths}")
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def clone(self) -> QNetwork:
        net = QNetwork.__new__(QNetwork)
        net.widths = self.widths
        net.params = [p.copy() for p in self.params]
        return net

    def save(self, path) -> None:
        """JSON dump: layer shapes followed by flat parameter lists."""
        doc = {"widths": list(self.widths),
               "shapes": [list(p.shape) for p in self.params],
               "params": [p.ravel().tolist() for p in self.params]}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> QNetwork:
        doc = json.loads(Path(path).read_text())
        net = cls.__new__(cls)
        net.widths = tuple(doc["widths"])
        net.params = [np.asarray(flat, dtype=float).reshape(shape)
                      for flat, shape in zip(doc["params"], doc["shapes"])]
        return net


def forward(net: QNetwork, s) -> np.ndarray:
    return net.forward(s)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._tmp = [np.empty_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        """One bias-corrected update, computed in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v, tmp in zip(self.params, grads, self.m, self.v, self._tmp):
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=tmp)
            m += tmp
            v *= self.beta2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - self.beta2
            v += tmp
            # p -= lr * (m / c1) / (sqrt(v / c2) + eps)
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / np.sqrt(c2)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / c1
            p -= tmp


class ReplayBuffer:
    """Fixed-capacity ring of (s, a, r, s', legal mask of s')."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.next_masks = np.zeros((capacity, n_actions), dtype=bool)
        self.size = 0
        self._pos = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s_next, mask_next) -> None:
        i = self._pos
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s_next
        self.next_masks[i] = mask_next
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.size, size=n, replace=False)

    def batch(self, idx):
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.next_masks[idx])


def select_action(net: QNetwork, s, mask, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice restricted to ``mask``; greedy ties go to the lowest index."""
    legal = np.flatnonzero(mask)
    if legal.size == 0:
        raise ValueError("no legal action")
    if legal.size == 1:
        return int(legal[0])
    if rng.random() < epsilon:
        return int(legal[rng.integers(legal.size)])
    q = net.forward(s)
    return int(legal[np.argmax(q[legal])])


def td_targets(batch, target_net: QNetwork, gamma: float) -> np.ndarray:
    """r + gamma * max over the next state's legal actions of the target network."""
    _, _, rewards, next_states, next_masks = batch
    q_next = target_net.forward(next_states)
    q_next = np.where(next_masks, q_next, -np.inf).max(axis=1)
    return rewards + gamma * q_next


def train_minibatch(net: QNetwork, target_net: QNetwork, buffer: ReplayBuffer,
                    cfg: TrainerConfig, optimizer: Adam, rng: np.random.Generator):
    """One Adam step on a uniform minibatch; returns the pre-step loss.

    Returns None without touching anything when the buffer holds fewer than
    ``cfg.batch_size`` transitions.
    """
    if len(buffer) < cfg.batch_size:
        return None
    batch = buffer.batch(buffer.sample_indices(cfg.batch_size, rng))
    y = td_targets(batch, target_net, cfg.gamma)
    loss, grads = net.loss_and_grads(batch[0], batch[1], y)
    optimizer.step(grads)
    return loss


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    target_net.copy_from(net)


class DQNAgent(Policy):
    """Epsilon-greedy masked DQN policy with replay and a fixed target network."""

    name = "dqn"
    learns = True

    def __init__(self, capacity: int, k: int, cfg: TrainerConfig | None = None, seed: int = 0):
        self.cfg = cfg or TrainerConfig()
        self.capacity, self.k = capacity, k
        self.rng = np.random.default_rng(seed)
        self.net = QNetwork.for_cache(capacity, k, self.rng)
        self.target = self.net.clone()
        self.optimizer = Adam(self.net.params, self.cfg.learning_rate, self.cfg.adam_beta1,
                              self.cfg.adam_beta2, self.cfg.adam_eps)
        self.buffer = ReplayBuffer(self.cfg.buffer_size, self.net.widths[0], self.net.widths[-1])
        self.epsilon = self.cfg.epsilon
        self.training = True
        self._acting = None  # float32 copy of the online weights, for speed
        self._legal_video = np.arange(capacity + 1)
        self._legal_tile = [np.concatenate(([0], np.arange(1 + capacity + i * k,
                                                            1 + capacity + (i + 1) * k)))
                            for i in range(capacity)]
        self.decisions = 0
        self.updates = 0
        self.syncs = 0
        self.losses: list[tuple[str, int, float]] = []  # (phase, epoch or step, loss)

    def q_values(self, s) -> np.ndarray:
        """Online-network Q-values, evaluated in single precision."""
        if self._acting is None:
            self._acting = [p.astype(np.float32) for p in self.net.params]
        w1, b1, w2, b2, w3, b3 = self._acting
        h = np.maximum(s.astype(np.float32) @ w1 + b1, 0.0)
        h = np.maximum(h @ w2 + b2, 0.0)
        return h @ w3 + b3

    def train_step(self):
        loss = train_minibatch(self.net, self.target, self.buffer, self.cfg,
                               self.optimizer, self.rng)
        if loss is not None:
            self._acting = None
        return loss

    def decide(self, ctx) -> int:
        legal = self._legal_video if ctx.kind == VIDEO else self._legal_tile[ctx.slot]
        if self.rng.random() < self.epsilon:
            a = int(legal[self.rng.integers(legal.size)])
        else:
            q = self.q_values(ctx.features)
            a = int(legal[np.argmax(q[legal])])
        self.decisions += 1
        if self.training:
            if self.decisions % self.cfg.train_period == 0:
                loss = self.train_step()
                if loss is not None:
                    self.updates += 1
                    self.losses.append(("online", self.updates, loss))
            if self.decisions % self.cfg.target_period == 0:
                sync_target(self.net, self.target)
                self.syncs += 1
        return a

    def shape_reward(self, r: float) -> float:
        return r / self.cfg.reward_scale

    def observe(self, transitions) -> None:
        for t in transitions:
            self.buffer.push(t.state, t.action, self.shape_reward(t.reward),
                             t.next_state, t.next_mask)

    def fit_offline(self) -> list[float]:
        """Epochs of minibatch updates over the replay buffer; returns per-epoch mean loss."""
        if len(self.buffer) < self.cfg.batch_size:
            raise ValueError(
                f"replay buffer holds {len(self.buffer)} transitions, "
                f"need at least {self.cfg.batch_size}")
        per_epoch = max(1, len(self.buffer) // self.cfg.batch_size)
        history = []
        for epoch in range(1, self.cfg.offline_epochs + 1):
            losses = [self.train_step() for _ in range(per_epoch)]
            sync_target(self.net, self.target)
            history.append(float(np.mean(losses)))
            self.losses.append(("offline", epoch, history[-1]))
        return history


def run_sets(env, policy, requests, sink=None) -> None:
    """Feed ``requests`` through ``env`` under ``policy``; events go to ``sink``."""
    for req in requests:
        transitions, events = env.process_request_set(req, policy)
        if transitions:
            policy.observe(transitions)
        if sink is not None:
            sink(events)


def offline_phase(env_factory, requests, agent: DQNAgent) -> list[float]:
    """Pure-exploration warm-up to fill the replay buffer, then offline epochs.

    Args:
      env_factory: zero-argument callable returning a fresh environment.
      requests: the warm-up request sets (historic demand).
      agent: the agent whose network is trained in place.

    Returns:
      Mean loss per offline epoch.
    """
    requests = list(requests)
    if not requests:
        raise ValueError("offline phase needs at least one warm-up request set")
    env = env_factory()
    agent.epsilon, agent.training = agent.cfg.epsilon_offline, False
    try:
        run_sets(env, agent, requests)
    finally:
        agent.epsilon, agent.training = agent.cfg.epsilon, True
    history = agent.fit_offline()
    agent.decisions = 0
    return history


def online_phase(env, agent: Policy, requests):
    """Yield the event list of every request set while acting and training online."""
    for req in requests:
        transitions, events = env.process_request_set(req, agent)
        if transitions:
            agent.observe(transitions)
        yield events


def trainer_config_dict(cfg: TrainerConfig) -> dict:
    return asdict(cfg)
