"""Two-level goal-conditioned control loop.

The high level emits a relative subgoal every ``k`` steps; in between the
subgoal is carried along by :func:`~agile_hrl.envs.goal_transition` so its
absolute target stays put. The low level is rewarded for reaching it. Stored
high-level transitions keep their low-level segment so the subgoal can be
relabeled against the *current* low-level policy when sampled.

Passing ``high=None`` everywhere turns the same code into flat TD3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import envs
from .adversarial import AdversarialCtx, discriminate, discriminator_update, generator_action_grad
from .exceptions import ContractError
from .nn_core import MlpParams, adam_step, mlp_predict
from .td3 import Batch, Td3Agent, actor_due, actor_gradient, critic_update, select_action, td3_update, update_targets


def intrinsic_reward(s, g, s_next) -> float:
    """``-||s + g - s_next||`` over the goal dimensions."""
    s, g, s_next = (np.asarray(v, dtype=np.float64)[: envs.GOAL_DIM] for v in (s, g, s_next))
    return -float(np.linalg.norm(s + g - s_next))


def accumulate_high_reward(env_rewards, scale: float) -> float:
    if len(env_rewards) == 0:
        raise ContractError("a high-level segment has at least one environment reward")
    return scale * float(np.sum(env_rewards))


class ReplayBuffer:
    """Fixed-capacity FIFO ring of records with named, fixed-shape fields."""

    def __init__(self, capacity: int, fields: dict):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.data = {k: np.zeros((self.capacity, *shape)) for k, shape in fields.items()}
        self.inserted = 0

    def __len__(self):
        return min(self.inserted, self.capacity)

    def add(self, **record):
        i = self.inserted % self.capacity
        for k, arr in self.data.items():
            arr[i] = record[k]
        self.inserted += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if len(self) == 0:
            raise ContractError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self), size=batch_size)
        return {k: arr[idx] for k, arr in self.data.items()}

    def oldest_index(self) -> int:
        """Insertion number of the oldest record still stored."""
        return max(0, self.inserted - self.capacity)


def low_buffer(capacity, obs_dim):
    return ReplayBuffer(
        capacity,
        {"obs": (obs_dim,), "action": (envs.ACTION_DIM,), "reward": (), "next_obs": (obs_dim,), "done": ()},
    )


def high_buffer(capacity, k):
    return ReplayBuffer(
        capacity,
        {
            "obs": (envs.OBS_DIM,),
            "goal": (envs.GOAL_DIM,),
            "reward": (),
            "next_obs": (envs.OBS_DIM,),
            "done": (),
            "seg_obs": (k, envs.OBS_DIM),
            "seg_action": (k, envs.ACTION_DIM),
            "seg_len": (),
        },
    )


# -- relabeling -------------------------------------------------------------

def _as_policy(low_policy):
    if isinstance(low_policy, MlpParams):
        return lambda x: mlp_predict(low_policy, x)
    return low_policy


def relabel_candidates(g_orig, s_start, s_end, goal_bound, rng, n_samples=8, std_frac=0.5):
    """Candidate subgoals, shape ``(B, 2 + n_samples, goal_dim)``, clipped to the box.

    Order: original subgoal, achieved displacement, Gaussian samples around it.
    """
    g_orig = np.atleast_2d(g_orig)
    disp = np.atleast_2d(s_end)[:, : envs.GOAL_DIM] - np.atleast_2d(s_start)[:, : envs.GOAL_DIM]
    parts = [g_orig[:, None, :], disp[:, None, :]]
    if n_samples:
        noise = rng.normal(0.0, std_frac * goal_bound, size=(len(disp), n_samples, disp.shape[1]))
        parts.append(disp[:, None, :] + noise)
    return np.clip(np.concatenate(parts, axis=1), -goal_bound, goal_bound)


def relabel_scores(low_policy, seg_obs, seg_action, seg_len, candidates):
    """Log-likelihood surrogate ``sum_i -0.5 ||a_i - pi_l(s_i, g_i)||^2`` per candidate.

    Each candidate is rolled forward along the stored states, i.e.
    ``g_i = s_0 + g - s_i``. Shapes: ``seg_obs (B, k, obs)``, ``seg_action
    (B, k, act)``, ``seg_len (B,)``, ``candidates (B, C, goal)``; returns ``(B, C)``.
    """
    policy = _as_policy(low_policy)
    B, k, obs_dim = seg_obs.shape
    C = candidates.shape[1]
    pos = seg_obs[:, :, : envs.GOAL_DIM]
    # (B, C, k, goal)
    goals = candidates[:, :, None, :] + (pos[:, None, :1, :] - pos[:, None, :, :])
    obs = np.broadcast_to(seg_obs[:, None], (B, C, k, obs_dim))
    x = np.concatenate([obs, goals], axis=-1).reshape(B * C * k, -1)
    pred = policy(x).reshape(B, C, k, -1)
    err = np.sum((seg_action[:, None] - pred) ** 2, axis=-1)
    mask = np.arange(k)[None, None, :] < np.asarray(seg_len).reshape(B, 1, 1)
    return -0.5 * np.sum(err * mask, axis=-1)


def relabel_batch(low_policy, seg_obs, seg_action, seg_len, g_orig, s_end, goal_bound, rng,
                  n_samples=8, std_frac=0.5, candidates=None):
    """Best candidate per transition. Returns ``(chosen (B, goal), scores (B, C), candidates)``."""
    if candidates is None:
        candidates = relabel_candidates(g_orig, seg_obs[:, 0], s_end, goal_bound, rng, n_samples, std_frac)
    scores = relabel_scores(low_policy, seg_obs, seg_action, seg_len, candidates)
    best = np.argmax(scores, axis=1)
    return candidates[np.arange(len(best)), best], scores, candidates


def relabel_subgoal(low_policy, segment, g_orig, rng, goal_bound=10.0, s_end=None,
                    n_samples=8, std_frac=0.5, candidates=None):
    """Relabel one subgoal. ``segment`` is a non-empty list of ``(obs, action)`` pairs.

    ``s_end`` is the state reached after the last action (defaults to the last
    stored state). ``candidates`` overrides the candidate set.
    """
    if not segment:
        raise ContractError("relabeling needs a non-empty segment")
    seg_obs = np.array([s for s, _ in segment], dtype=np.float64)[None]
    seg_action = np.array([a for _, a in segment], dtype=np.float64)[None]
    s_end = seg_obs[0, -1] if s_end is None else np.asarray(s_end, dtype=np.float64)
    if candidates is not None:
        candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))[None]
    chosen, _, _ = relabel_batch(
        low_policy, seg_obs, seg_action, np.array([len(segment)]), np.asarray(g_orig)[None],
        s_end[None], goal_bound, rng, n_samples, std_frac, candidates,
    )
    return chosen[0]


# -- acting -----------------------------------------------------------------

@dataclass
class Streams:
    """Independent named RNG substreams expanded from one master seed."""

    seed: int
    names: tuple = ("env", "low_noise", "high_noise", "relabel", "init", "replay", "smoothing", "eval")
    gens: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for i, name in enumerate(self.names):
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(i,))
            self.gens[name] = np.random.default_rng(ss)

    def __getattr__(self, name):
        gens = self.__dict__.get("gens", {})
        if name in gens:
            return gens[name]
        raise AttributeError(name)


@dataclass
class Buffers:
    low: ReplayBuffer
    high: ReplayBuffer | None = None


@dataclass
class EpisodeStats:
    ret: float
    success: bool
    length: int
    trace: list | None = None


def low_obs(obs, g):
    return obs if g is None else np.concatenate([obs, g])


def collect_episode(high: Td3Agent | None, low: Td3Agent, spec: envs.MazeSpec, k: int, buffers: Buffers,
                    rngs: Streams, *, random_actions=False, high_reward_scale=0.1, low_reward_scale=1.0,
                    max_steps=None, on_step=None, record_trace=False) -> EpisodeStats:
    """Run one exploratory episode, filling ``buffers``.

    ``random_actions`` (a bool, or a no-argument callable checked every step)
    draws subgoals and actions uniformly from their boxes (warmup). ``max_steps`` truncates the episode (global budget);
    ``on_step(n)`` is called after every environment step with the number of
    steps taken so far in this episode.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    state = envs.reset(spec, rngs.env)
    obs = envs.observe(spec, state)
    g = None
    seg = None
    ret, t, success = 0.0, 0, False
    trace = [] if record_trace else None

    def close_segment(next_obs, done):
        n = len(seg["rewards"])
        seg_obs = np.zeros((k, envs.OBS_DIM))
        seg_act = np.zeros((k, envs.ACTION_DIM))
        seg_obs[:n] = seg["obs"]
        seg_act[:n] = seg["actions"]
        buffers.high.add(
            obs=seg["start"], goal=seg["goal"],
            reward=accumulate_high_reward(seg["rewards"], high_reward_scale),
            next_obs=next_obs, done=float(done), seg_obs=seg_obs, seg_action=seg_act, seg_len=n,
        )

    while True:
        rand = random_actions() if callable(random_actions) else random_actions
        if high is not None and t % k == 0:
            if rand:
                g = rngs.high_noise.uniform(-high.action_scale, high.action_scale)
            else:
                g = select_action(high, obs, True, rngs.high_noise)
            seg = {"start": obs, "goal": g, "obs": [], "actions": [], "rewards": []}
        x = low_obs(obs, g)
        if rand:
            a = rngs.low_noise.uniform(-low.action_scale, low.action_scale)
        else:
            a = select_action(low, x, True, rngs.low_noise)
        res = envs.step(spec, state, a)
        next_state = res.next_state
        next_obs = envs.observe(spec, next_state)
        if trace is not None:
            trace.append((t, *state.position, *(state.position + (0.0 if g is None else g))))
        if high is None:
            r_low, next_g = res.reward * low_reward_scale, None
        else:
            r_low = intrinsic_reward(state.position, g, next_state.position) * low_reward_scale
            next_g = envs.goal_transition(g, state.position, next_state.position)
            seg["obs"].append(obs)
            seg["actions"].append(a)
            seg["rewards"].append(res.reward)
        buffers.low.add(obs=x, action=a, reward=r_low, next_obs=low_obs(next_obs, next_g), done=float(res.done))
        ret += res.reward
        success = success or res.success
        t += 1
        truncated = max_steps is not None and t >= max_steps
        if high is not None and (t % k == 0 or res.done or truncated):
            close_segment(next_obs, res.done)
        state, obs, g = next_state, next_obs, next_g
        if on_step is not None:
            on_step(t)
        if res.done or truncated:
            break
    return EpisodeStats(ret, success, t, trace)


# -- learning ---------------------------------------------------------------

@dataclass
class UpdateSettings:
    batch_low: int = 128
    batch_high: int = 64
    goal_bound: float = 10.0
    n_relabel_samples: int = 8
    relabel_std_frac: float = 0.5
    high_update_every: int = 1


def _batch_from(sample) -> Batch:
    return Batch(sample["obs"], sample["action"], sample["reward"], sample["next_obs"], sample["done"])


def hrl_update(high: Td3Agent | None, low: Td3Agent, buffers: Buffers, adv: AdversarialCtx | None,
               settings: UpdateSettings, rngs: Streams, *, step: int = 0) -> dict | None:
    """One learning step for both levels. Returns the loss record, or ``None``
    when the buffers cannot fill a batch yet."""
    if len(buffers.low) < settings.batch_low:
        return None
    rec = {"actor_loss_l": None, "critic_loss_l": None, "actor_loss_h": None, "critic_loss_h": None,
           "disc_loss": None, "adv_term": None, "disc_out_generated": None}
    out = td3_update(low, _batch_from(buffers.low.sample(settings.batch_low, rngs.replay)), rngs.smoothing)
    rec["critic_loss_l"], rec["actor_loss_l"] = out["critic_loss"], out["actor_loss"]

    if high is None or len(buffers.high) < settings.batch_high or step % settings.high_update_every:
        return rec
    hb = buffers.high.sample(settings.batch_high, rngs.replay)
    relabeled, _, _ = relabel_batch(
        low.actor, hb["seg_obs"], hb["seg_action"], hb["seg_len"], hb["goal"], hb["next_obs"],
        settings.goal_bound, rngs.relabel, settings.n_relabel_samples, settings.relabel_std_frac,
    )
    batch = Batch(hb["obs"], relabeled, hb["reward"], hb["next_obs"], hb["done"])
    rec["critic_loss_h"] = critic_update(high, batch, rngs.smoothing)
    rec["relabeled"] = relabeled
    rec["high_critic_actions"] = batch.action
    if actor_due(high):
        generated = mlp_predict(high.actor, batch.obs)
        extra = None
        if adv is not None:
            states = batch.obs if adv.state_conditioned else None
            rec["disc_loss"] = discriminator_update(adv, relabeled, generated, states, states)
            extra = generator_action_grad(adv, generated, states)
            p_gen = discriminate(adv, generated, states)
            rec["disc_out_generated"] = float(np.mean(p_gen))
            rec["adv_term"] = float(np.mean(np.log1p(-p_gen)))
        grads, actor_loss, emitted = actor_gradient(high, batch.obs, extra)
        rec["generator_is_actor"] = bool(np.array_equal(emitted, generated))
        high.actor, high.actor_opt = adam_step(high.actor_opt, high.actor, grads, high.actor_lr)
        update_targets(high)
        rec["actor_loss_h"] = actor_loss
    return rec


# -- deterministic policies for evaluation ------------------------------------

class FlatPolicy:
    def __init__(self, actor: MlpParams):
        self.actor = actor

    def reset(self):
        pass

    def act(self, obs):
        return mlp_predict(self.actor, obs)

    def subgoal(self):
        return None


class HierarchicalPolicy:
    """Noise-free two-level controller with the subgoal cadence of training."""

    def __init__(self, high_actor: MlpParams, low_actor: MlpParams, k: int):
        self.high_actor, self.low_actor, self.k = high_actor, low_actor, k
        self.reset()

    def reset(self):
        self.t = 0
        self.g = None
        self.prev_pos = None

    def act(self, obs):
        pos = obs[: envs.GOAL_DIM]
        if self.t % self.k == 0:
            self.g = mlp_predict(self.high_actor, obs)
        else:
            self.g = envs.goal_transition(self.g, self.prev_pos, pos)
        self.prev_pos = pos.copy()
        self.t += 1
        return mlp_predict(self.low_actor, np.concatenate([obs, self.g]))

    def subgoal(self):
        return self.g
