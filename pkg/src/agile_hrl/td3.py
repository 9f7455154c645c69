"""TD3 on top of :mod:`agile_hrl.nn_core`, shared by both hierarchy levels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError, ShapeError
from .nn_core import (
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_predict,
)


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __post_init__(self):
        n = len(self.obs)
        if n == 0:
            raise ValueError("empty batch")
        if not all(len(a) == n for a in (self.action, self.reward, self.next_obs, self.done)):
            raise ShapeError("batch arrays have unequal lengths")
        self.reward = np.asarray(self.reward, dtype=np.float64).reshape(n)
        self.done = np.asarray(self.done, dtype=np.float64).reshape(n)


@dataclass
class Td3Agent:
    actor: MlpParams
    critic1: MlpParams
    critic2: MlpParams
    actor_target: MlpParams
    critic1_target: MlpParams
    critic2_target: MlpParams
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    action_scale: np.ndarray
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    smoothing_noise_std: float = 0.2
    smoothing_clip: float = 0.5
    exploration_noise_std: float = 0.1
    smoothing: bool = True
    update_counter: int = 0
    # instrumentation from the most recent critic update
    last_target_info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        self.action_scale = np.asarray(self.action_scale, dtype=np.float64)

    @property
    def obs_dim(self) -> int:
        return self.actor.in_dim

    @property
    def action_dim(self) -> int:
        return self.actor.out_dim


def make_td3_agent(
    obs_dim,
    action_dim,
    action_scale,
    rng: np.random.Generator,
    hidden_sizes=(300, 300),
    actor_final_scale=1e-2,
    **hyper,
) -> Td3Agent:
    """Fresh agent; noise parameters in ``hyper`` are fractions of ``action_scale``."""
    scale = np.broadcast_to(np.asarray(action_scale, dtype=np.float64), (action_dim,)).copy()
    hidden = list(hidden_sizes)
    actor = init_mlp(
        [obs_dim, *hidden, action_dim],
        rng,
        output_activation="tanh",
        output_scale=scale,
        final_scale=actor_final_scale,
    )
    c1 = init_mlp([obs_dim + action_dim, *hidden, 1], rng)
    c2 = init_mlp([obs_dim + action_dim, *hidden, 1], rng)
    return Td3Agent(
        actor, c1, c2, actor.copy(), c1.copy(), c2.copy(),
        adam_init(actor), adam_init(c1), adam_init(c2),
        scale, **hyper,
    )


def select_action(agent: Td3Agent, obs, explore: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    action = mlp_predict(agent.actor, obs)
    if explore and agent.exploration_noise_std > 0:
        noise = rng.normal(0.0, agent.exploration_noise_std, size=action.shape) * agent.action_scale
        action = np.clip(action + noise, -agent.action_scale, agent.action_scale)
    return action


def soft_update(target: MlpParams, source: MlpParams, tau: float) -> MlpParams:
    if target.sizes != source.sizes:
        raise ShapeError(f"cannot blend {target.sizes} into {source.sizes}")
    layers = [
        ((1.0 - tau) * tW + tau * sW, (1.0 - tau) * tb + tau * sb)
        for (tW, tb), (sW, sb) in zip(target.layers, source.layers)
    ]
    return target.with_layers(layers)


def critic_target(agent: Td3Agent, batch: Batch, rng: np.random.Generator | None) -> np.ndarray:
    """Clipped double-Q target ``r + gamma (1 - done) min(Q1', Q2')``."""
    next_a = mlp_predict(agent.actor_target, batch.next_obs)
    if agent.smoothing and agent.smoothing_noise_std > 0 and rng is not None:
        noise = rng.normal(0.0, agent.smoothing_noise_std, size=next_a.shape)
        noise = np.clip(noise, -agent.smoothing_clip, agent.smoothing_clip) * agent.action_scale
        next_a = np.clip(next_a + noise, -agent.action_scale, agent.action_scale)
    x = np.concatenate([batch.next_obs, next_a], axis=1)
    q1 = mlp_predict(agent.critic1_target, x)[:, 0]
    q2 = mlp_predict(agent.critic2_target, x)[:, 0]
    q_min = np.minimum(q1, q2)
    y = batch.reward + agent.gamma * (1.0 - batch.done) * q_min
    if not np.isfinite(y).all():
        raise NumericError("non-finite critic target")
    agent.last_target_info = {"q1": q1, "q2": q2, "q_min": q_min, "y": y}
    return y


def critic_update(agent: Td3Agent, batch: Batch, rng: np.random.Generator | None = None) -> float:
    """Regress both critics onto the shared target. Returns the mean (summed-twin) loss."""
    y = critic_target(agent, batch, rng)
    x = np.concatenate([batch.obs, batch.action], axis=1)
    n = len(y)
    loss = 0.0
    for name in ("critic1", "critic2"):
        params = getattr(agent, name)
        q, cache = mlp_forward(params, x)
        err = q[:, 0] - y
        loss += float(np.mean(err * err))
        grads, _ = mlp_backward(params, cache, (2.0 / n) * err[:, None])
        new, opt = adam_step(getattr(agent, name + "_opt"), params, grads, agent.critic_lr)
        setattr(agent, name, new)
        setattr(agent, name + "_opt", opt)
    agent.update_counter += 1
    return loss


def actor_gradient(agent: Td3Agent, obs, extra_grad=None):
    """Descent gradient of ``-mean Q1(s, pi(s))``, optionally with an extra ascent term.

    ``extra_grad`` is a per-sample action-space ascent direction added to
    ``dQ1/da`` before backpropagating through the actor; both terms are
    averaged over the batch. Returns ``(grads, actor_loss, actions)``.
    """
    obs = np.asarray(obs, dtype=np.float64)
    actions, a_cache = mlp_forward(agent.actor, obs)
    n = len(actions)
    q, q_cache = mlp_forward(agent.critic1, np.concatenate([obs, actions], axis=1))
    _, dq_dx = mlp_backward(agent.critic1, q_cache, np.ones_like(q))
    ascent = dq_dx[:, obs.shape[1]:]
    if extra_grad is not None:
        extra_grad = np.asarray(extra_grad, dtype=np.float64)
        if extra_grad.shape != ascent.shape:
            raise ShapeError(f"extra_grad shape {extra_grad.shape} != action batch {ascent.shape}")
        ascent = ascent + extra_grad
    grads, _ = mlp_backward(agent.actor, a_cache, -ascent / n)
    return grads, -float(np.mean(q)), actions


def actor_update(agent: Td3Agent, batch: Batch, extra_grad=None) -> float:
    grads, loss, _ = actor_gradient(agent, batch.obs, extra_grad)
    agent.actor, agent.actor_opt = adam_step(agent.actor_opt, agent.actor, grads, agent.actor_lr)
    update_targets(agent)
    return loss


def update_targets(agent: Td3Agent) -> None:
    agent.actor_target = soft_update(agent.actor_target, agent.actor, agent.tau)
    agent.critic1_target = soft_update(agent.critic1_target, agent.critic1, agent.tau)
    agent.critic2_target = soft_update(agent.critic2_target, agent.critic2, agent.tau)


def actor_due(agent: Td3Agent) -> bool:
    """Whether the critic update just performed should be followed by an actor update."""
    return agent.update_counter % agent.policy_delay == 0


def td3_update(agent: Td3Agent, batch: Batch, rng) -> dict:
    """One critic step, and an actor step every ``policy_delay`` calls."""
    out = {"critic_loss": critic_update(agent, batch, rng), "actor_loss": None}
    if actor_due(agent):
        out["actor_loss"] = actor_update(agent, batch)
    return out
