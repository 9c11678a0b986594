"""Multi-agent actor-critic trainer: centralized critics, decentralized actors."""

from __future__ import annotations

import csv
import os

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..neural import Adam, CriticStack, DenseStack, load_checkpoint, save_checkpoint, soft_update


# ---- state packing ---------------------------------------------------------
def joint_state(obs) -> np.ndarray:
    """Pack an (I, 1 + S) observation matrix into [own column of every agent, shared part].

    Observation rows differ only in column 0, so nothing is lost.
    """
    obs = np.asarray(obs)
    return np.concatenate([obs[..., :, 0], obs[..., 0, 1:]], axis=-1)


def agent_observations(state, n_agents: int) -> np.ndarray:
    """Inverse of :func:`joint_state`: (B, D) states -> (I, B, 1 + S) observations."""
    state = np.atleast_2d(state)
    own = state[:, :n_agents].T[:, :, None]
    shared = np.broadcast_to(state[None, :, n_agents:], (n_agents,) + state[:, n_agents:].shape)
    return np.concatenate([own, shared], axis=-1)


# ---- replay ----------------------------------------------------------------
class ReplayBuffer:
    """Fixed-capacity ring of joint transitions; the oldest record is overwritten first.

    ``active[i]`` is False where agent ``i`` had no decision to make; its action
    row is then all zeros and it is left out of that agent's actor update.
    """

    def __init__(self, capacity, state_dim, n_agents, n_servers, dtype=np.float64):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.state = np.zeros((capacity, state_dim), dtype)
        self.next_state = np.zeros((capacity, state_dim), dtype)
        self.actions = np.zeros((capacity, n_agents, n_servers), dtype)
        self.rewards = np.zeros((capacity, n_agents), dtype)
        self.active = np.zeros((capacity, n_agents), bool)
        self.size = 0
        self.ptr = 0

    def __len__(self):
        return self.size

    def push(self, state, actions, rewards, next_state, active=None) -> None:
        k = self.ptr
        self.state[k] = state
        self.actions[k] = actions
        self.rewards[k] = rewards
        self.next_state[k] = next_state
        self.active[k] = True if active is None else active
        self.ptr = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_index(self) -> int:
        return self.ptr if self.size == self.capacity else 0

    def get(self, age: int) -> dict:
        """Record number ``age`` counted from the oldest one still stored."""
        if not 0 <= age < self.size:
            raise IndexError(age)
        return self._rows(np.array([(self.oldest_index() + age) % self.capacity]), squeeze=True)

    def sample(self, m: int, rng) -> dict | None:
        """``m`` distinct records drawn uniformly; None when fewer than ``m`` are stored."""
        if m < 1 or self.size < m:
            return None
        return self._rows(rng.choice(self.size, size=m, replace=False))

    def _rows(self, idx, squeeze=False):
        out = {
            "state": self.state[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_state": self.next_state[idx],
            "active": self.active[idx],
        }
        return {k: v[0] for k, v in out.items()} if squeeze else out


# ---- exploration -------------------------------------------------------------
class GaussianNoise:
    """i.i.d. N(mu, sigma^2) per score; sigma decays per episode down to 1% of its start."""

    def __init__(self, mu=0.15, sigma2=np.exp(-2.0), decay=0.9995):
        if not sigma2 > 0:
            raise ValueError("sigma2 must be > 0")
        self.mu = mu
        self.sigma0 = self.sigma = float(np.sqrt(sigma2))
        self.decay = decay

    def sample(self, shape, rng):
        return self.mu + self.sigma * rng.standard_normal(shape)

    def end_episode(self) -> None:
        self.sigma = max(self.sigma * self.decay, 0.01 * self.sigma0)

    def reset(self) -> None:
        pass


class OUNoise(GaussianNoise):
    """Mean-reverting Ornstein-Uhlenbeck noise; ``mu`` is read as the reversion rate."""

    def __init__(self, mu=0.15, sigma2=np.exp(-2.0), decay=0.9995):
        super().__init__(mu, sigma2, decay)
        self.theta = mu
        self.x = None

    def sample(self, shape, rng):
        if self.x is None or self.x.shape != tuple(shape):
            self.x = np.zeros(shape)
        self.x = self.x - self.theta * self.x + self.sigma * rng.standard_normal(shape)
        return self.x.copy()

    def reset(self) -> None:
        self.x = None


def make_noise(kind, mu, sigma2, decay):
    if kind == "gaussian":
        return GaussianNoise(mu, sigma2, decay)
    if kind == "ou":
        return OUNoise(mu, sigma2, decay)
    raise ValueError(f"unknown noise kind {kind!r}")


def select_action(scores, feasible) -> int | None:
    """Index of the best feasible score (ties go to the lowest index), or None."""
    scores = np.asarray(scores, dtype=float)
    mask = np.zeros(scores.shape, bool)
    mask[list(feasible)] = True
    if not mask.any():
        return None
    return int(np.argmax(np.where(mask, scores, -np.inf)))


def masked_argmax(scores, mask) -> np.ndarray:
    """Row-wise :func:`select_action`; -1 where a row has no feasible entry."""
    choice = np.argmax(np.where(mask, scores, -np.inf), axis=-1)
    return np.where(mask.any(axis=-1), choice, -1)


# ---- networks ---------------------------------------------------------------
class AgentNets:
    """Actors, critics and their targets for ``n`` agents, stored as stacks.

    Row ``i`` of each stack's ``params`` belongs to agent ``i``;
    ``actor.nets[i]`` is agent ``i``'s actor as a standalone view.
    """

    def __init__(self, n_agents, obs_dim, n_servers, actor_hidden, critic_hidden, rng, dtype=np.float64):
        I, J = n_agents, n_servers
        self.n_agents, self.obs_dim, self.n_servers = I, obs_dim, J
        self.state_dim = I + (obs_dim - 1)
        self.action_dim = I * J
        a_sizes = [obs_dim, actor_hidden, actor_hidden, J]
        self.actor = DenseStack(I, a_sizes, ["sigmoid"] * 3, rng, dtype)
        self.critic = CriticStack(I, self.state_dim, self.action_dim, critic_hidden, rng, dtype)
        self.target_actor = DenseStack(I, a_sizes, ["sigmoid"] * 3, None, dtype)
        self.target_critic = CriticStack(I, self.state_dim, self.action_dim, critic_hidden, None, dtype)
        self.target_actor.params[...] = self.actor.params
        self.target_critic.params[...] = self.critic.params


def critic_targets(nets: AgentNets, next_state, rewards, gamma) -> np.ndarray:
    """y_i = r_i + gamma * Q'_i(s', a') with every next action from the target actors; shape (I, B)."""
    I, J = nets.n_agents, nets.n_servers
    dt = nets.actor.params.dtype
    S2 = np.asarray(next_state, dt)
    B = S2.shape[0]
    A2 = nets.target_actor.forward(agent_observations(S2, I))  # (I, B, J)
    A2 = np.transpose(A2, (1, 0, 2)).reshape(B, I * J)
    q2 = nets.target_critic.forward(S2, A2)[..., 0]
    return np.asarray(rewards, dt).T + gamma * q2


def train_step(nets: AgentNets, buffer: ReplayBuffer, gamma, tau, m, rng, actor_opt: Adam, critic_opt: Adam,
               update_actor=True):
    """One centralized update of every agent on a shared minibatch.

    Returns per-agent (critic_loss, actor_loss) arrays, or None when the
    buffer holds fewer than ``m`` records (nothing changes then).
    """
    batch = buffer.sample(m, rng)
    if batch is None:
        return None
    I, J = nets.n_agents, nets.n_servers
    dt = nets.actor.params.dtype
    S = batch["state"].astype(dt)
    A = batch["actions"].astype(dt)  # (B, I, J)
    act = batch["active"]
    B = S.shape[0]
    y = critic_targets(nets, batch["next_state"], batch["rewards"], gamma)

    # critic regression
    q = nets.critic.forward(S, A.reshape(B, I * J))[..., 0]
    diff = q - y
    critic_loss = np.mean(diff**2, axis=1)
    nets.critic.backward((2.0 / B) * diff[..., None])
    critic_opt.step(nets.critic.params, nets.critic.grads)

    actor_loss = np.full(I, np.nan)
    if update_actor:
        # each agent's own action slot is replaced by its current policy output
        idx = np.arange(I)
        P = nets.actor.forward(agent_observations(S, I))  # (I, B, J)
        Ai = np.broadcast_to(A, (I,) + A.shape).copy()  # (I, B, I, J)
        Ai[idx, :, idx, :] = P
        qa = nets.critic.forward(S, Ai.reshape(I, B, I * J))[..., 0]
        w = act.T.astype(dt)
        w = w / np.maximum(w.sum(axis=1, keepdims=True), 1.0)
        actor_loss = -np.sum(w * qa, axis=1)
        _, ga = nets.critic.backward(-w[..., None], param_grads=False)
        g_own = ga.reshape(I, B, I, J)[idx, :, idx, :]
        nets.actor.backward(g_own)
        actor_opt.step(nets.actor.params, nets.actor.grads)

    soft_update(nets.target_critic, nets.critic, tau)
    soft_update(nets.target_actor, nets.actor, tau)
    return critic_loss, actor_loss


# ---- estimator --------------------------------------------------------------
class _Pending:
    __slots__ = ("state", "actions", "rewards", "next_state", "active", "open")

    def __init__(self, state, actions, rewards, next_state, active, open_):
        self.state, self.actions, self.rewards = state, actions, rewards
        self.next_state, self.active, self.open = next_state, active, open_


class MADDPGOffloader(BaseEstimator):
    """Learned destination selection, one actor per device.

    ``fit(env)`` runs training episodes on an :class:`~vecmec.env.OffloadingEnv`.
    A task's reward (its bits, if it finishes in time) is credited to the
    transition in which its destination was chosen, so records enter replay
    once all of their tasks are resolved.
    """

    def __init__(
        self,
        episodes=100,
        actor_hidden=64,
        critic_hidden=64,
        lr_actor=1e-3,
        lr_critic=2e-3,
        gamma=0.99,
        tau=0.005,
        batch_size=64,
        buffer_size=100_000,
        noise_kind="gaussian",
        noise_mu=0.15,
        noise_sigma2=float(np.exp(-2.0)),
        noise_decay=0.9995,
        train_every=2,
        warmup=64,
        reward_scale=5e5,
        dtype="float32",
        random_state=0,
        log_path=None,
    ):
        self.episodes = episodes
        self.actor_hidden = actor_hidden
        self.critic_hidden = critic_hidden
        self.lr_actor = lr_actor
        self.lr_critic = lr_critic
        self.gamma = gamma
        self.tau = tau
        self.batch_size = batch_size
        self.buffer_size = buffer_size
        self.noise_kind = noise_kind
        self.noise_mu = noise_mu
        self.noise_sigma2 = noise_sigma2
        self.noise_decay = noise_decay
        self.train_every = train_every
        self.warmup = warmup
        self.reward_scale = reward_scale
        self.dtype = dtype
        self.random_state = random_state
        self.log_path = log_path

    @classmethod
    def from_config(cls, cfg, **overrides):
        keys = (
            "episodes", "actor_hidden", "critic_hidden", "lr_actor", "lr_critic", "gamma", "tau", "batch_size",
            "buffer_size", "noise_kind", "noise_mu", "noise_sigma2", "noise_decay", "train_every", "warmup",
            "reward_scale",
        )
        params = {k: getattr(cfg, k) for k in keys}
        params["random_state"] = cfg.seed
        params.update(overrides)
        return cls(**params)

    # -- setup
    def _init(self, n_agents, obs_dim, n_servers):
        ss = np.random.SeedSequence(int(self.random_state))
        init_rng, self._noise_rng, self._sample_rng = (np.random.default_rng(s) for s in ss.spawn(3))
        dt = np.dtype(self.dtype)
        self.nets_ = AgentNets(n_agents, obs_dim, n_servers, self.actor_hidden, self.critic_hidden, init_rng, dt)
        self.actor_opt_ = Adam(self.nets_.actor.params.shape, self.lr_actor, dtype=dt)
        self.critic_opt_ = Adam(self.nets_.critic.params.shape, self.lr_critic, dtype=dt)
        self.buffer_ = ReplayBuffer(self.buffer_size, self.nets_.state_dim, n_agents, n_servers)
        self.noise_ = make_noise(self.noise_kind, self.noise_mu, self.noise_sigma2, self.noise_decay)
        self.n_agents_, self.obs_dim_, self.n_servers_ = n_agents, obs_dim, n_servers
        self.log_ = []

    # -- acting
    def scores(self, obs) -> np.ndarray:
        """Actor outputs (I, J) for an (I, obs_dim) observation matrix."""
        check_is_fitted(self, "nets_")
        obs = np.asarray(obs, dtype=float)
        if obs.shape != (self.n_agents_, self.obs_dim_):
            raise ValueError(f"expected observations of shape {(self.n_agents_, self.obs_dim_)}, got {obs.shape}")
        return self.nets_.actor.forward(obs[:, None, :])[:, 0, :].astype(float)

    def predict(self, obs, mask=None) -> np.ndarray:
        """Greedy server index per agent; -1 where nothing is feasible."""
        s = self.scores(obs)
        mask = np.ones(s.shape, bool) if mask is None else np.asarray(mask, bool)
        return masked_argmax(s, mask)

    def _decide(self, env, explore):
        s = self.scores(env.observations())
        if explore:
            s = s + self.noise_.sample(s.shape, self._noise_rng)
        active = env.active_agents() & env.feasible_mask().any(axis=1)
        choice = masked_argmax(s, env.feasible_mask())
        actions = [int(c) if a else None for c, a in zip(choice, active)]
        return actions, s * active[:, None], active

    def act(self, env, explore=False):
        return self._decide(env, explore)[0]

    # -- training
    def fit(self, env, y=None, episodes=None, seed_offset=0):
        self._init(env.n_agents, env.obs_dim, env.n_servers)
        n_ep = self.episodes if episodes is None else episodes
        for ep in range(n_ep):
            self._run_episode(env, ep, seed_offset + ep)
        if self.log_path:
            self.write_log(self.log_path)
        return self

    def _run_episode(self, env, ep, seed):
        cfg = env.config
        obs = env.reset(seed=seed)
        self.noise_.reset()
        pending: dict[int, _Pending] = {}
        losses = []
        ep_reward = np.zeros(self.n_agents_)
        for t in range(cfg.n_slots):
            actions, a_vec, active = self._decide(env, explore=True)
            n_tasks = int(env.active_agents().sum())
            res = env.step(actions)
            ep_reward += res.rewards
            pending[t] = _Pending(
                joint_state(obs), a_vec, np.zeros(self.n_agents_), joint_state(res.observations), active, n_tasks
            )
            for task in res.outcome.completed:
                rec = pending[task.birth_slot]
                rec.rewards[task.owner] += task.size / self.reward_scale
                rec.open -= 1
            for task in res.outcome.expired:
                pending[task.birth_slot].open -= 1
            for k in sorted(k for k, r in pending.items() if r.open == 0):
                self._store(pending.pop(k))
            obs = res.observations
            if (t + 1) % self.train_every == 0 and len(self.buffer_) >= max(self.warmup, self.batch_size):
                out = train_step(
                    self.nets_, self.buffer_, self.gamma, self.tau, self.batch_size, self._sample_rng,
                    self.actor_opt_, self.critic_opt_,
                )
                if out is not None:
                    losses.append(out)
            if res.done:
                break
        for k in sorted(pending):
            self._store(pending.pop(k))
        self.noise_.end_episode()
        if losses:
            cl = np.mean([l[0] for l in losses], axis=0)
            al = np.mean([l[1] for l in losses], axis=0)
        else:
            cl = al = np.full(self.n_agents_, np.nan)
        for i in range(self.n_agents_):
            self.log_.append((ep, i, float(cl[i]), float(al[i]), float(ep_reward[i])))

    def _store(self, rec: _Pending):
        self.buffer_.push(rec.state, rec.actions, rec.rewards, rec.next_state, rec.active)

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "agent", "critic_loss", "actor_loss", "episode_reward"])
            for ep, i, cl, al, r in self.log_:
                w.writerow([ep, i, repr(cl), repr(al), repr(r)])

    # -- persistence
    def save(self, directory) -> None:
        """One checkpoint file per agent with its four parameter sets."""
        check_is_fitted(self, "nets_")
        os.makedirs(directory, exist_ok=True)
        n = self.nets_
        for i in range(self.n_agents_):
            save_checkpoint(
                os.path.join(directory, f"agent_{i:03d}.json"),
                {
                    "agent": i,
                    "n_agents": self.n_agents_,
                    "obs_dim": self.obs_dim_,
                    "n_servers": self.n_servers_,
                    "estimator": self.get_params(),
                    "actor": n.actor.params[i].tolist(),
                    "critic": n.critic.params[i].tolist(),
                    "target_actor": n.target_actor.params[i].tolist(),
                    "target_critic": n.target_critic.params[i].tolist(),
                },
            )

    @classmethod
    def load(cls, directory) -> "MADDPGOffloader":
        first = load_checkpoint(os.path.join(directory, "agent_000.json"))
        est = cls(**first["estimator"])
        est._init(first["n_agents"], first["obs_dim"], first["n_servers"])
        n = est.nets_
        for i in range(first["n_agents"]):
            data = first if i == 0 else load_checkpoint(os.path.join(directory, f"agent_{i:03d}.json"))
            n.actor.params[i] = data["actor"]
            n.critic.params[i] = data["critic"]
            n.target_actor.params[i] = data["target_actor"]
            n.target_critic.params[i] = data["target_critic"]
        return est
