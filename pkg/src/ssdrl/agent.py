"""Deep Q-learning localisation agent with an optional VAE backbone.

The state fed to the Q-function is the three featurised scans of the episode
followed by the agent's cell normalised to [0, 1]^2. In supervised mode a
plain dense net reads that vector directly. In semi-supervised mode the scans
are averaged and passed through the first (frozen by default) hidden layer of
the VAE classifier, then a small head maps ``[hidden, position]`` to the eight
action values.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .environment import (
    N_ACTIONS,
    READINGS_PER_SAMPLE,
    FingerprintSample,
    GridWorld,
    reset,
    step,
)
from .features import FeatureConfig, feature_dim, featurize_array
from .nn_core import Adam, DenseNet, ShapeError, make_optimizer
from . import vae as vae_mod

log = logging.getLogger(__name__)

SUPERVISED = "supervised"
SEMI_SUPERVISED = "semi_supervised"
MODES = (SUPERVISED, SEMI_SUPERVISED)


@dataclass
class TrainConfig:
    mode: str = SUPERVISED
    epochs: int = 200
    horizon: int = 10
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_fraction: float = 0.5
    batch_size: int = 32
    warmup: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    replay_capacity: int = 10_000
    hidden: tuple = (64, 32)
    head_hidden: int = 32
    freeze_encoder: bool = True
    latent_dim: int = 8
    vae_hidden: int = 64
    vae_epochs: int = 30
    vae_batch_size: int = 64
    vae_learning_rate: float = 1e-3
    vae_inputs: str = "mean"
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must satisfy 0 <= gamma < 1")
        if self.epochs < 0 or self.horizon < 0:
            raise ValueError("epochs and horizon must be non-negative")
        if self.batch_size < 1 or self.replay_capacity < 1:
            raise ValueError("batch_size and replay_capacity must be positive")
        if not (0.0 <= self.epsilon_end <= 1.0 and 0.0 <= self.epsilon_start <= 1.0):
            raise ValueError("epsilon bounds must lie in [0, 1]")
        self.hidden = tuple(self.hidden)

    def epsilon(self, episode: int, total_episodes: int) -> float:
        """Linear decay over the first ``epsilon_decay_fraction`` of episodes."""
        span = self.epsilon_decay_fraction * total_episodes
        if span <= 0:
            return self.epsilon_end
        frac = min(episode / span, 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


def encode_state(world: GridWorld, observation, position) -> np.ndarray:
    pos = np.array(
        [
            position[0] / max(world.rows - 1, 1),
            position[1] / max(world.cols - 1, 1),
        ]
    )
    return np.concatenate([np.asarray(observation, dtype=np.float64).reshape(-1), pos])


class QFunction:
    """Action-value network over encoded states.

    Parameters
    ----------
    head : DenseNet
        Maps the backbone output (or the raw state when there is no encoder)
        to ``N_ACTIONS`` values.
    obs_dim : int
        Length of one featurised scan.
    encoder : DenseNet, optional
        Applied to the mean of the three scans; its output is concatenated
        with the position before ``head``.
    """

    def __init__(self, head: DenseNet, obs_dim: int, encoder: Optional[DenseNet] = None, freeze_encoder=True):
        self.head = head
        self.encoder = encoder
        self.obs_dim = int(obs_dim)
        self.freeze_encoder = freeze_encoder
        self.state_dim = READINGS_PER_SAMPLE * self.obs_dim + 2
        expected = self.state_dim if encoder is None else encoder.output_dim + 2
        if encoder is not None and encoder.input_dim != self.obs_dim:
            raise ShapeError(f"encoder expects {encoder.input_dim} inputs, scans have {self.obs_dim}")
        if head.input_dim != expected:
            raise ShapeError(f"head expects {head.input_dim} inputs, backbone gives {expected}")
        if head.output_dim != N_ACTIONS:
            raise ShapeError(f"Q head must output {N_ACTIONS} values")

    @property
    def mode(self):
        return SUPERVISED if self.encoder is None else SEMI_SUPERVISED

    def params(self):
        if self.encoder is None or self.freeze_encoder:
            return self.head.params()
        return self.encoder.params() + self.head.params()

    @property
    def compact_dim(self) -> int:
        """Length of the stored state: backbone output when the encoder is frozen."""
        if self.encoder is None or not self.freeze_encoder:
            return self.state_dim
        return self.head.input_dim

    def _backbone(self, s):
        obs = s[:, :-2].reshape(len(s), READINGS_PER_SAMPLE, self.obs_dim).mean(axis=1)
        h = self.encoder.forward(obs, cache=not self.freeze_encoder)
        return np.hstack([h, s[:, -2:]])

    def compact(self, states) -> np.ndarray:
        """Map encoded states to what the replay buffer needs to keep.

        With a frozen encoder the backbone output never changes, so it can be
        computed once per state instead of on every minibatch.
        """
        states = np.asarray(states, dtype=np.float64)
        if self.compact_dim == self.state_dim or states.shape[-1] == self.compact_dim:
            return states
        single = states.ndim == 1
        out = self._backbone(states[None, :] if single else states)
        return out[0] if single else out

    def forward(self, states, cache: bool = True) -> np.ndarray:
        """Q-values for full encoded states or, with a frozen encoder, compact ones."""
        states = np.asarray(states, dtype=np.float64)
        if self.encoder is None:
            if states.shape[-1] != self.state_dim:
                raise ShapeError(f"expected encoded states of length {self.state_dim}, got {states.shape}")
            return self.head.forward(states, cache=cache)
        if states.shape[-1] == self.compact_dim and self.compact_dim != self.state_dim:
            return self.head.forward(states, cache=cache)
        if states.shape[-1] != self.state_dim:
            raise ShapeError(f"expected encoded states of length {self.state_dim}, got {states.shape}")
        single = states.ndim == 1
        s = states[None, :] if single else states
        if self.freeze_encoder:
            out = self.head.forward(self._backbone(s), cache=cache)
        else:
            obs = s[:, :-2].reshape(len(s), READINGS_PER_SAMPLE, self.obs_dim).mean(axis=1)
            h = self.encoder.forward(obs, cache=cache)
            out = self.head.forward(np.hstack([h, s[:, -2:]]), cache=cache)
        return out[0] if single else out

    def backward(self, output_grad) -> list:
        g = self.head.backward(output_grad)
        if self.encoder is None or self.freeze_encoder:
            return g.params
        gin = g.input if g.input.ndim == 2 else g.input[None, :]
        enc = self.encoder.backward(gin[:, :-2])
        return enc.params + g.params


def build_q_function(config: TrainConfig, obs_dim: int, rng, vae: Optional[vae_mod.VaeModel] = None) -> QFunction:
    if config.mode == SUPERVISED:
        sizes = [READINGS_PER_SAMPLE * obs_dim + 2, *config.hidden, N_ACTIONS]
        acts = ["relu"] * len(config.hidden) + ["identity"]
        return QFunction(DenseNet(sizes, acts, rng), obs_dim)
    if vae is None:
        raise ValueError("semi-supervised Q-function needs a VAE")
    encoder = DenseNet.from_layers([vae.encoder_y.layers[0]])
    if encoder.layers[0].activation == "identity":
        raise ValueError("VAE classifier needs a hidden layer to share with the Q-head")
    head = DenseNet([encoder.output_dim + 2, config.head_hidden, N_ACTIONS], ["relu", "identity"], rng)
    return QFunction(head, obs_dim, encoder, config.freeze_encoder)


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


@dataclass
class TransitionBatch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray

    def __len__(self):
        return len(self.a)

    @classmethod
    def from_transitions(cls, transitions):
        transitions = list(transitions)
        return cls(
            np.array([t.s for t in transitions], dtype=np.float64),
            np.array([t.a for t in transitions], dtype=int),
            np.array([t.r for t in transitions], dtype=np.float64),
            np.array([t.s_next for t in transitions], dtype=np.float64),
            np.array([t.terminal for t in transitions], dtype=bool),
        )


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int = 10_000, rng=None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.rng = rng
        self._s = self._s_next = None
        self._a = np.zeros(self.capacity, dtype=int)
        self._r = np.zeros(self.capacity)
        self._terminal = np.zeros(self.capacity, dtype=bool)
        self._next = 0
        self._size = 0
        self.inserted = 0

    def __len__(self):
        return self._size

    def add(self, transition: Transition):
        s = np.asarray(transition.s, dtype=np.float64)
        if not 0 <= transition.a < N_ACTIONS:
            raise ValueError(f"action {transition.a} outside 0..{N_ACTIONS - 1}")
        if not np.isfinite(transition.r):
            raise ValueError("reward must be finite")
        if self._s is None:
            self._s = np.zeros((self.capacity, s.size))
            self._s_next = np.zeros((self.capacity, s.size))
        i = self._next
        self._s[i] = s
        self._s_next[i] = transition.s_next
        self._a[i] = transition.a
        self._r[i] = transition.r
        self._terminal[i] = transition.terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.inserted += 1

    def sample(self, n: int, rng=None) -> TransitionBatch:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        rng = rng if rng is not None else self.rng
        idx = rng.integers(0, self._size, size=n)
        return self._take(idx)

    def _take(self, idx):
        return TransitionBatch(
            self._s[idx], self._a[idx], self._r[idx], self._s_next[idx], self._terminal[idx]
        )

    def contents(self) -> TransitionBatch:
        """Stored transitions, oldest first."""
        start = self._next if self._size == self.capacity else 0
        idx = (start + np.arange(self._size)) % self.capacity
        return self._take(idx)


def select_action(q: QFunction, state, epsilon: float, rng) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(q.forward(state, cache=False)))


def q_target(r, s_next, terminal, q: QFunction, gamma: float):
    """Bellman target: ``r`` on terminal transitions, else ``r + gamma * max Q(s_next)``.

    Works on scalars or on aligned batches.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must satisfy 0 <= gamma < 1")
    r = np.asarray(r, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    if r.ndim == 0:
        if terminal or gamma == 0.0:
            return float(r)
        return float(r + gamma * np.max(q.forward(s_next, cache=False)))
    xi = r.copy()
    live = ~terminal
    if gamma > 0.0 and live.any():
        s_next = np.asarray(s_next, dtype=np.float64)
        xi[live] += gamma * q.forward(s_next[live], cache=False).max(axis=1)
    return xi


def td_loss_and_grads(q: QFunction, batch, gamma: float):
    """Mean squared TD error with the target held fixed, plus its gradient."""
    if not isinstance(batch, TransitionBatch):
        batch = TransitionBatch.from_transitions(batch)
    n = len(batch)
    if n == 0:
        raise ValueError("minibatch is empty")
    xi = q_target(batch.r, batch.s_next, batch.terminal, q, gamma)
    values = q.forward(batch.s)
    rows = np.arange(n)
    err = values[rows, batch.a] - xi
    grad_out = np.zeros_like(values)
    grad_out[rows, batch.a] = 2.0 * err / n
    return float(np.mean(err * err)), q.backward(grad_out)


def td_update(q: QFunction, minibatch, opt, gamma: float) -> float:
    """One gradient step on the TD loss; returns the loss before the step."""
    loss, grads = td_loss_and_grads(q, minibatch, gamma)
    opt.step(q.params(), grads)
    return loss


def infer_label(vae: Optional[vae_mod.VaeModel], state, world: GridWorld):
    """Most probable cell under q(y|x) for the mean of the episode's scans."""
    if vae is None:
        raise RuntimeError("label inference needs a VAE (semi-supervised mode)")
    obs = np.asarray(state.observation if hasattr(state, "observation") else state)
    probs = vae_mod.classify(vae, obs.reshape(READINGS_PER_SAMPLE, -1).mean(axis=0))
    return world.index_cell(int(np.argmax(probs)))


@dataclass
class EpisodeStats:
    total_reward: float = 0.0
    final_reward: float = 0.0
    start_distance: float = 0.0
    final_distance: float = 0.0
    mean_distance: float = 0.0  # over the start cell and every visited cell
    steps: int = 0
    labeled: bool = True
    reached: bool = False


def run_episode(
    world: GridWorld,
    sample: FingerprintSample,
    q: QFunction,
    vae,
    config: TrainConfig,
    replay: Optional[ReplayBuffer],
    opt,
    rng,
    epsilon: float = 0.0,
    feature_config: Optional[FeatureConfig] = None,
    learn: bool = True,
) -> EpisodeStats:
    """Play one episode; with ``learn`` every step is stored and followed by a
    TD update once the buffer holds ``config.warmup`` transitions.

    Unlabeled samples are rewarded against the VAE's inferred cell, and their
    distances are measured against that cell as well.
    """
    if config.horizon == 0:
        return EpisodeStats(labeled=sample.label is not None)
    state = reset(world, sample, rng, feature_config, horizon=config.horizon)
    goal = state.target
    if goal is None:
        goal = infer_label(vae, state, world)
    start_d = world.cell_distance(state.position, goal)
    stats = EpisodeStats(start_distance=start_d, final_distance=start_d, labeled=sample.label is not None)
    if state.position == tuple(goal):
        cap = world.cap_reward()
        stats.total_reward = stats.final_reward = cap
        stats.reached = True
        return stats
    s = q.compact(encode_state(world, state.observation, state.position))
    dist_sum = start_d
    while not state.terminal:
        a = select_action(q, s, epsilon, rng)
        res = step(world, state, a, inferred=goal)
        state = res.next_state
        s_next = q.compact(encode_state(world, state.observation, state.position))
        stats.total_reward += res.reward
        stats.final_reward = res.reward
        stats.steps += 1
        dist_sum += world.cell_distance(state.position, goal)
        if learn:
            # horizon cut-offs are not terminal states; only reaching the goal is
            replay.add(Transition(s, a, res.reward, s_next, res.reached))
            if len(replay) >= max(config.warmup, 1):
                td_update(q, replay.sample(config.batch_size, rng), opt, config.gamma)
        s = s_next
        stats.reached = res.reached
    stats.final_distance = world.cell_distance(state.position, goal)
    stats.mean_distance = dist_sum / (stats.steps + 1)
    return stats


@dataclass
class EpochMetrics:
    epoch: int
    mode: str
    mean_reward: float
    mean_distance_m: float
    epsilon: float
    labeled_fraction: float

    def row(self):
        return [self.epoch, self.mode, repr(self.mean_reward), repr(self.mean_distance_m), repr(self.epsilon), repr(self.labeled_fraction)]


METRICS_HEADER = ["epoch", "mode", "mean_reward", "mean_distance_m", "epsilon", "labeled_fraction"]


@dataclass
class TrainedAgent:
    q: Optional[QFunction]
    vae: Optional[vae_mod.VaeModel]
    world: GridWorld
    feature_config: FeatureConfig
    config: TrainConfig
    metrics: list = field(default_factory=list)
    vae_history: list = field(default_factory=list)


def _default_alpha(n_labeled: int, n_total: int) -> float:
    # 0.1 scaled up by how rare labels are in a batch
    return 0.1 * n_total / max(n_labeled, 1)


def _vae_inputs(samples, feature_config, how, obs_dim):
    if not samples:
        return np.empty((0, obs_dim))
    feats = featurize_array(feature_config, np.array([s.readings for s in samples]))
    if how == "scans":
        return feats.reshape(-1, obs_dim)
    if how == "mean":
        return feats.mean(axis=1)
    raise ValueError(f"vae_inputs must be 'scans' or 'mean', got {how!r}")


def pretrain_vae(samples, world, feature_config, config: TrainConfig, rng):
    """Fit the M2 model on the samples, labels where known.

    ``config.vae_inputs`` picks the training rows: "mean" uses one averaged
    scan per bundle (what ``infer_label`` classifies), "scans" every scan.
    """
    obs_dim = feature_dim(feature_config)
    lab = [s for s in samples if s.label is not None]
    unl = [s for s in samples if s.label is None]
    x_lab = _vae_inputs(lab, feature_config, config.vae_inputs, obs_dim)
    x_unl = _vae_inputs(unl, feature_config, config.vae_inputs, obs_dim)
    per = READINGS_PER_SAMPLE if config.vae_inputs == "scans" else 1
    y_lab = np.repeat([world.cell_index(s.label) for s in lab], per).astype(int)
    alpha = config.alpha if config.alpha is not None else _default_alpha(len(x_lab), len(x_lab) + len(x_unl))
    n_gauss = feature_config.n_beacons if feature_config.use_raw else 0
    model = vae_mod.VaeModel(
        obs_dim,
        world.n_cells,
        latent_dim=config.latent_dim,
        hidden=(config.vae_hidden,),
        n_gaussian=n_gauss,
        alpha=alpha,
        rng=rng,
    )
    if feature_config.use_s1:
        # S1 differences lie in [-1, 1]; treat them as Gaussian too
        model.n_gaussian = feature_config.n_beacons * feature_config.use_raw + len(feature_config.pairs())
    opt = Adam(config.vae_learning_rate)
    history = vae_mod.fit(model, x_lab, y_lab, x_unl, config.vae_epochs, opt, rng, config.vae_batch_size)
    return model, history


def train(
    dataset,
    config: TrainConfig,
    rng,
    world: Optional[GridWorld] = None,
    feature_config: Optional[FeatureConfig] = None,
    on_epoch: Optional[Callable] = None,
    metrics_path=None,
) -> TrainedAgent:
    """Run the full training loop.

    Semi-supervised mode first fits the VAE on all samples, then plays an
    episode for every sample each epoch (unlabeled ones use inferred cells).
    Supervised mode only ever touches labeled samples. ``on_epoch(epoch,
    agent)`` is called after each epoch; ``metrics_path`` gets the per-epoch
    metrics CSV, flushed as it grows.
    """
    world = world or GridWorld()
    feature_config = feature_config or FeatureConfig(n_beacons=world.n_beacons)
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    obs_dim = feature_dim(feature_config)

    vae = None
    history = []
    if config.mode == SUPERVISED:
        samples = [s for s in dataset if s.label is not None]
        if not samples:
            raise ValueError("supervised training needs labeled samples")
    else:
        samples = dataset
    agent = TrainedAgent(None, None, world, feature_config, config)
    if config.epochs == 0:
        return agent
    if config.mode == SEMI_SUPERVISED:
        vae, history = pretrain_vae(samples, world, feature_config, config, rng)
        agent.vae, agent.vae_history = vae, history

    q = build_q_function(config, obs_dim, rng, vae)
    agent.q = q
    opt = make_optimizer(config.optimizer, config.learning_rate)
    replay = ReplayBuffer(config.replay_capacity, rng)
    labeled_fraction = sum(s.label is not None for s in samples) / len(samples)
    total_episodes = config.epochs * len(samples)

    fh = writer = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
    try:
        episode = 0
        for epoch in range(1, config.epochs + 1):
            rewards, dists = [], []
            eps = config.epsilon(episode, total_episodes)
            for i in rng.permutation(len(samples)):
                eps = config.epsilon(episode, total_episodes)
                stats = run_episode(world, samples[i], q, vae, config, replay, opt, rng, eps, feature_config)
                rewards.append(stats.final_reward)
                dists.append(stats.final_distance)
                episode += 1
            m = EpochMetrics(epoch, config.mode, float(np.mean(rewards)), float(np.mean(dists)), eps, labeled_fraction)
            agent.metrics.append(m)
            if writer is not None:
                writer.writerow(m.row())
                fh.flush()
            log.debug("epoch %d mode=%s reward=%.3f dist=%.3f eps=%.3f", epoch, config.mode, m.mean_reward, m.mean_distance_m, eps)
            if on_epoch is not None:
                on_epoch(epoch, agent)
    finally:
        if fh is not None:
            fh.close()
    return agent


def evaluate(agent: TrainedAgent, samples, rng) -> list:
    """Greedy, non-learning episodes on labeled ``samples``."""
    out = []
    for s in samples:
        if s.label is None:
            raise ValueError("evaluation needs labeled samples")
        out.append(
            run_episode(agent.world, s, agent.q, agent.vae, agent.config, None, None, rng, 0.0, agent.feature_config, learn=False)
        )
    return out


def write_metrics(path, metrics) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for m in metrics:
            writer.writerow(m.row())
