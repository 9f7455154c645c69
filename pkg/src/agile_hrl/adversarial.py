"""Subgoal discriminator and the adversarial term of the high-level actor update.

The discriminator ``D(g)`` scores how much a subgoal looks like a relabeled
one (label 1) rather than one emitted by the current high-level actor
(label 0). The actor doubles as the generator: it receives
``alpha_adv * d/dg[-log(1 - D(g))]`` as an extra action-space ascent
direction next to the critic gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ContractError, ShapeError
from .nn_core import AdamState, MlpParams, adam_init, adam_step, init_mlp, mlp_backward, mlp_forward

P_MIN, P_MAX = 1e-6, 1.0 - 1e-6


@dataclass
class AdversarialCtx:
    discriminator: MlpParams
    disc_opt: AdamState
    alpha_adv: float = 1e-3
    disc_lr: float = 2e-4
    nonsaturating: bool = False
    state_conditioned: bool = False

    def __post_init__(self):
        if self.discriminator.out_dim != 1 or self.discriminator.output_activation != "sigmoid":
            raise ShapeError("discriminator must have a single sigmoid output")
        if not (np.isfinite(self.alpha_adv) and self.alpha_adv >= 0):
            raise ValueError("alpha_adv must be finite and non-negative")


def make_adversarial_ctx(
    goal_dim, rng, hidden_sizes=(64, 16), alpha_adv=1e-3, disc_lr=2e-4,
    nonsaturating=False, state_dim=0, final_scale=1e-2, adam_betas=(0.9, 0.999),
) -> AdversarialCtx:
    """Leaky-ReLU(0.2) discriminator; ``state_dim > 0`` conditions it on the state."""
    disc = init_mlp(
        [goal_dim + state_dim, *hidden_sizes, 1], rng,
        hidden_activation="leaky_relu", output_activation="sigmoid", final_scale=final_scale,
    )
    opt = adam_init(disc, *adam_betas)
    return AdversarialCtx(disc, opt, alpha_adv, disc_lr, nonsaturating, state_dim > 0)


def _disc_input(ctx, g, states):
    g = np.atleast_2d(np.asarray(g, dtype=np.float64))
    if ctx.state_conditioned:
        if states is None:
            raise ContractError("state-conditioned discriminator needs the states")
        g = np.concatenate([np.atleast_2d(states), g], axis=1)
    if g.shape[1] != ctx.discriminator.in_dim:
        raise ShapeError(f"subgoal batch {g.shape} does not fit discriminator in_dim={ctx.discriminator.in_dim}")
    return g


def discriminate(ctx: AdversarialCtx, g, states=None):
    """Clamped probability that ``g`` is a relabeled subgoal (scalar for one subgoal)."""
    single = np.ndim(g) == 1
    p, _ = mlp_forward(ctx.discriminator, _disc_input(ctx, g, states))
    p = np.clip(p[:, 0], P_MIN, P_MAX)
    return float(p[0]) if single else p


def _bce_terms(p_raw, label):
    """Clamped BCE per sample and its derivative w.r.t. the raw probability."""
    p = np.clip(p_raw, P_MIN, P_MAX)
    inside = (p_raw >= P_MIN) & (p_raw <= P_MAX)
    if label:
        return -np.log(p), np.where(inside, -1.0 / p, 0.0)
    return -np.log1p(-p), np.where(inside, 1.0 / (1.0 - p), 0.0)


def discriminator_loss_and_grad(disc: MlpParams, pos, neg):
    """``mean BCE(pos, 1) + mean BCE(neg, 0)`` and its parameter gradient."""
    total, grads = 0.0, None
    for x, label in ((pos, True), (neg, False)):
        p, cache = mlp_forward(disc, x)
        loss, dp = _bce_terms(p[:, 0], label)
        total += float(loss.mean())
        g, _ = mlp_backward(disc, cache, (dp / len(x))[:, None])
        grads = g if grads is None else grads + g
    return total, grads


def discriminator_update(ctx: AdversarialCtx, relabeled, generated, states_pos=None, states_neg=None) -> float:
    """One Adam step on the discriminator (relabeled -> 1, generated -> 0).

    Returns the pre-step loss. ``ctx`` is updated in place; no actor parameter
    is touched.
    """
    if len(relabeled) == 0 or len(generated) == 0:
        raise ContractError("discriminator update needs non-empty relabeled and generated batches")
    pos = _disc_input(ctx, relabeled, states_pos)
    neg = _disc_input(ctx, generated, states_neg)
    loss, grads = discriminator_loss_and_grad(ctx.discriminator, pos, neg)
    ctx.discriminator, ctx.disc_opt = adam_step(ctx.disc_opt, ctx.discriminator, grads, ctx.disc_lr)
    return loss


def generator_action_grad(ctx: AdversarialCtx, generated, states=None) -> np.ndarray:
    """Per-sample ascent direction ``alpha * d/dg[-log(1 - D(g))]``.

    With ``nonsaturating`` the objective is ``log D(g)`` instead. Returns an
    array shaped like ``generated``; zero when ``alpha_adv == 0``.
    """
    generated = np.atleast_2d(np.asarray(generated, dtype=np.float64))
    if len(generated) == 0:
        raise ContractError("empty generated batch")
    if ctx.alpha_adv == 0:
        return np.zeros_like(generated)
    x = _disc_input(ctx, generated, states)
    p_raw, cache = mlp_forward(ctx.discriminator, x)
    p_raw = p_raw[:, 0]
    p = np.clip(p_raw, P_MIN, P_MAX)
    inside = (p_raw >= P_MIN) & (p_raw <= P_MAX)
    if ctx.nonsaturating:
        dobj = np.where(inside, 1.0 / p, 0.0)
    else:
        dobj = np.where(inside, 1.0 / (1.0 - p), 0.0)
    _, dx = mlp_backward(ctx.discriminator, cache, (ctx.alpha_adv * dobj)[:, None])
    return dx[:, -generated.shape[1]:]


def adversarial_objective(ctx: AdversarialCtx, generated, states=None) -> float:
    """Mean generator-side term ``log(1 - D(g))`` (or ``-log D(g)`` when non-saturating)."""
    p = discriminate(ctx, np.atleast_2d(generated), states)
    if ctx.nonsaturating:
        return float(-np.mean(np.log(p)))
    return float(np.mean(np.log1p(-p)))


class SubgoalDiscriminator(ClassifierMixin, BaseEstimator):
    """Estimator wrapper: binary classifier of relabeled (1) vs generated (0) subgoals.

    ``partial_fit`` performs exactly one adversarial discriminator step on the
    given labelled batch, so it can sit inside a training loop; ``fit`` repeats
    it ``n_iter`` times.
    """

    def __init__(self, hidden_sizes=(64, 16), learning_rate=2e-4, alpha_adv=1e-3,
                 n_iter=200, nonsaturating=False, random_state=None):
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.alpha_adv = alpha_adv
        self.n_iter = n_iter
        self.nonsaturating = nonsaturating
        self.random_state = random_state

    def _init_ctx(self, n_features):
        rng = np.random.default_rng(self.random_state)
        self.ctx_ = make_adversarial_ctx(
            n_features, rng, self.hidden_sizes, self.alpha_adv, self.learning_rate, self.nonsaturating
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = n_features

    def partial_fit(self, X, y, classes=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        if not hasattr(self, "ctx_"):
            self._init_ctx(X.shape[1])
        y = y.astype(bool)
        if y.all() or not y.any():
            raise ContractError("need both relabeled (1) and generated (0) samples")
        self.loss_ = discriminator_update(self.ctx_, X[y], X[~y])
        return self

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self._init_ctx(X.shape[1])
        for _ in range(self.n_iter):
            self.partial_fit(X, y)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "ctx_")
        X = check_array(X, dtype=np.float64)
        p = discriminate(self.ctx_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def generator_gradient(self, X):
        """Adversarial ascent direction for each row of ``X`` (see :func:`generator_action_grad`)."""
        check_is_fitted(self, "ctx_")
        return generator_action_grad(self.ctx_, check_array(X, dtype=np.float64))
