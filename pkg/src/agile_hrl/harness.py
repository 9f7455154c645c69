"""Training loop, evaluation, checkpoints and alpha sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import envs
from .adversarial import AdversarialCtx, make_adversarial_ctx
from .config import Config, config_from_dict
from .exceptions import NumericError
from .hrl import (
    Buffers,
    FlatPolicy,
    HierarchicalPolicy,
    Streams,
    UpdateSettings,
    collect_episode,
    high_buffer,
    hrl_update,
    low_buffer,
)
from .nn_core import MlpParams
from .td3 import Td3Agent, make_td3_agent

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "env_step", "episodes", "success_rate", "mean_return", "mean_length",
    "actor_loss_h", "critic_loss_h", "actor_loss_l", "critic_loss_l",
    "disc_loss", "adv_term", "disc_out_generated", "wall_clock_s",
)
LOSS_COLUMNS = METRICS_COLUMNS[5:12]
TRACE_COLUMNS = ("episode", "t", "x", "y", "goal_x_abs", "goal_y_abs")
SUMMARY_COLUMNS = (
    "alpha", "n_runs", "n_failed", "mean_final_success", "ci95_low", "ci95_high",
    "mean_auc", "auc_ci95_low", "auc_ci95_high",
)


class TrainingDiverged(RuntimeError):
    """Raised when a loss or parameter becomes non-finite during training."""


class EvalResult(NamedTuple):
    success_rate: float
    mean_return: float
    mean_length: float
    trace: list | None = None


@dataclass
class Learner:
    """Everything a training run owns."""

    cfg: Config
    spec: envs.MazeSpec
    low: Td3Agent
    high: Td3Agent | None
    adv: AdversarialCtx | None
    buffers: Buffers
    rngs: Streams
    settings: UpdateSettings = field(default_factory=UpdateSettings)

    def policy(self):
        if self.high is None:
            return FlatPolicy(self.low.actor)
        return HierarchicalPolicy(self.high.actor, self.low.actor, self.cfg.k)


def build_learner(cfg: Config) -> Learner:
    spec = cfg.maze_spec()
    rngs = Streams(cfg.seed)
    init = rngs.init
    td3_kw = dict(
        hidden_sizes=cfg.hidden_sizes, actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr, gamma=cfg.gamma,
        tau=cfg.tau, policy_delay=cfg.policy_delay, smoothing_noise_std=cfg.smoothing_std,
        smoothing_clip=cfg.smoothing_clip,
    )
    obs_dim = envs.OBS_DIM + (envs.GOAL_DIM if cfg.hierarchical else 0)
    low = make_td3_agent(obs_dim, envs.ACTION_DIM, spec.action_bound, init,
                         exploration_noise_std=cfg.expl_noise_low, **td3_kw)
    high = adv = None
    buffers = Buffers(low_buffer(cfg.buffer_capacity, obs_dim))
    if cfg.hierarchical:
        high = make_td3_agent(envs.OBS_DIM, envs.GOAL_DIM, spec.goal_bound, init,
                              exploration_noise_std=cfg.expl_noise_high, smoothing=cfg.high_smoothing, **td3_kw)
        adv = make_adversarial_ctx(
            envs.GOAL_DIM, init, cfg.disc_hidden, cfg.effective_alpha, cfg.disc_lr, cfg.nonsaturating,
            state_dim=envs.OBS_DIM if cfg.disc_state_conditioned else 0,
        )
        buffers.high = high_buffer(cfg.buffer_capacity, cfg.k)
    settings = UpdateSettings(cfg.batch_low, cfg.batch_high, spec.goal_bound, cfg.n_relabel_samples,
                              cfg.relabel_std_frac, cfg.high_update_every)
    return Learner(cfg, spec, low, high, adv, buffers, rngs, settings)


def evaluate(policy, spec: envs.MazeSpec, episodes: int, seed, record_trace=False) -> EvalResult:
    """Noise-free rollouts toward the evaluation target."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    successes, returns, lengths, trace = 0, [], [], [] if record_trace else None
    for ep in range(episodes):
        state = envs.reset(spec, rng, evaluation=True)
        policy.reset()
        ret, success = 0.0, False
        while True:
            obs = envs.observe(spec, state)
            a = policy.act(obs)
            if trace is not None:
                g = policy.subgoal()
                gx, gy = (math.nan, math.nan) if g is None else tuple(state.position + g)
                trace.append((ep, state.t, state.position[0], state.position[1], gx, gy))
            res = envs.step(spec, state, a)
            ret += res.reward
            success = success or res.success
            state = res.next_state
            if res.done:
                break
        successes += success
        returns.append(ret)
        lengths.append(state.t)
    return EvalResult(successes / episodes, float(np.mean(returns)), float(np.mean(lengths)), trace)


# -- checkpoints ------------------------------------------------------------

def _pack(prefix, params: MlpParams, out: dict):
    for i, (W, b) in enumerate(params.layers):
        out[f"{prefix}/{i}/W"] = W
        out[f"{prefix}/{i}/b"] = b


def _unpack(prefix, template: MlpParams, data) -> MlpParams:
    layers = [(data[f"{prefix}/{i}/W"], data[f"{prefix}/{i}/b"]) for i in range(len(template.layers))]
    return template.with_layers(layers)


def save_checkpoint(learner: Learner, path, env_step: int) -> Path:
    arrays = {}
    _pack("low/actor", learner.low.actor, arrays)
    _pack("low/critic1", learner.low.critic1, arrays)
    _pack("low/critic2", learner.low.critic2, arrays)
    if learner.high is not None:
        _pack("high/actor", learner.high.actor, arrays)
        _pack("high/critic1", learner.high.critic1, arrays)
        _pack("high/critic2", learner.high.critic2, arrays)
        _pack("disc", learner.adv.discriminator, arrays)
    arrays["config"] = np.array(learner.cfg.to_json())
    arrays["env_step"] = np.array(env_step)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Learner:
    with np.load(path) as data:
        cfg = config_from_dict(json.loads(str(data["config"])))
        learner = build_learner(cfg)
        learner.low.actor = _unpack("low/actor", learner.low.actor, data)
        learner.low.critic1 = _unpack("low/critic1", learner.low.critic1, data)
        learner.low.critic2 = _unpack("low/critic2", learner.low.critic2, data)
        if learner.high is not None:
            learner.high.actor = _unpack("high/actor", learner.high.actor, data)
            learner.high.critic1 = _unpack("high/critic1", learner.high.critic1, data)
            learner.high.critic2 = _unpack("high/critic2", learner.high.critic2, data)
            learner.adv.discriminator = _unpack("disc", learner.adv.discriminator, data)
    return learner


# -- training ---------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


class _LossMeter:
    def __init__(self):
        self.sums = {k: 0.0 for k in LOSS_COLUMNS}
        self.counts = {k: 0 for k in LOSS_COLUMNS}

    def add(self, rec):
        for k in LOSS_COLUMNS:
            v = rec.get(k)
            if v is None:
                continue
            if not math.isfinite(v):
                raise TrainingDiverged(f"{k} became non-finite")
            self.sums[k] += v
            self.counts[k] += 1

    def pop(self):
        out = {k: (self.sums[k] / self.counts[k] if self.counts[k] else None) for k in LOSS_COLUMNS}
        self.__init__()
        return out


@dataclass
class RunOutputs:
    metrics: Path
    traces: Path
    checkpoint: Path | None
    learner: Learner | None = None


def run_training(cfg: Config, progress=None) -> RunOutputs:
    """Warmup, then one update per environment step until ``total_steps``.

    Writes ``metrics.csv``, ``traces.csv``, ``timing.csv`` and
    ``checkpoint.npz`` into ``cfg.out_dir``. Raises :class:`TrainingDiverged`
    after writing an error row if the numbers blow up.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    metrics_path, trace_path = out / "metrics.csv", out / "traces.csv"
    ckpt_path = out / "checkpoint.npz" if cfg.save_checkpoints else None
    learner = build_learner(cfg)
    t0 = time.perf_counter()
    eval_seed = cfg.seed + 1_000_003
    meter = _LossMeter()
    counters = {"env_step": 0, "episodes": 0}
    final_trace = []

    with open(metrics_path, "w", newline="") as mf, open(out / "timing.csv", "w", newline="") as tf:
        mw, tw = csv.writer(mf), csv.writer(tf)
        mw.writerow(METRICS_COLUMNS)
        tw.writerow(("env_step", "wall_clock_s"))

        def write_row(result: EvalResult | None, losses):
            wall = time.perf_counter() - t0
            if result is None:
                vals = (math.nan,) * 3
            else:
                vals = (result.success_rate, result.mean_return, result.mean_length)
            row = [counters["env_step"], counters["episodes"], *vals,
                   *(losses[k] for k in LOSS_COLUMNS), wall if cfg.log_wall_clock else 0.0]
            mw.writerow([_fmt(v) for v in row])
            tw.writerow([counters["env_step"], _fmt(wall)])
            mf.flush()
            tf.flush()

        def evaluate_now(final=False):
            res = evaluate(learner.policy(), learner.spec, cfg.eval_episodes, eval_seed, record_trace=final)
            if final:
                final_trace[:] = res.trace
            write_row(res, meter.pop())
            if progress:
                progress(counters["env_step"], res)
            if ckpt_path is not None:
                save_checkpoint(learner, ckpt_path, counters["env_step"])
            return res

        def on_step(_):
            counters["env_step"] += 1
            step = counters["env_step"]
            if step > cfg.warmup_steps:
                rec = hrl_update(learner.high, learner.low, learner.buffers, learner.adv,
                                 learner.settings, learner.rngs, step=step)
                if rec is not None:
                    meter.add(rec)
                if step % cfg.eval_every == 0 or step == cfg.total_steps:
                    evaluate_now(final=step == cfg.total_steps)

        evaluate_now(final=cfg.total_steps == cfg.warmup_steps)
        try:
            # overflow surfaces as NumericError from the explicit finiteness checks
            with np.errstate(over="ignore", invalid="ignore"):
                while counters["env_step"] < cfg.total_steps:
                    collect_episode(
                        learner.high, learner.low, learner.spec, cfg.k, learner.buffers, learner.rngs,
                        random_actions=lambda: counters["env_step"] < cfg.warmup_steps,
                        high_reward_scale=cfg.high_reward_scale, low_reward_scale=cfg.low_reward_scale,
                        max_steps=cfg.total_steps - counters["env_step"], on_step=on_step,
                    )
                    counters["episodes"] += 1
        except (TrainingDiverged, NumericError, FloatingPointError) as exc:
            log.error("run diverged at step %d: %s", counters["env_step"], exc)
            write_row(None, {k: math.nan for k in LOSS_COLUMNS})
            raise TrainingDiverged(str(exc)) from exc
    _write_trace(trace_path, final_trace)
    return RunOutputs(metrics_path, trace_path, ckpt_path, learner)


def _write_trace(path, trace):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([_fmt(v) for v in row])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: (float(v) if v != "" else None) for k, v in r.items()} for r in rows]


# -- sweeps -----------------------------------------------------------------

def learning_curve_auc(steps, values) -> float:
    """Trapezoidal area under a curve over env steps, normalised by the step span."""
    steps = np.asarray(steps, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(steps) < 2 or steps[-1] == steps[0]:
        return float(values[-1]) if len(values) else math.nan
    area = np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(steps))
    return float(area / (steps[-1] - steps[0]))


def mean_ci95(values):
    """Mean and two-sided 95% Student-t interval; bounds are NaN for fewer than 2 values."""
    x = np.asarray([v for v in values if v is not None and math.isfinite(v)], dtype=np.float64)
    if len(x) == 0:
        return math.nan, math.nan, math.nan
    m = float(np.mean(x))
    if len(x) < 2:
        return m, math.nan, math.nan
    half = float(stats.t.ppf(0.975, len(x) - 1) * np.std(x, ddof=1) / np.sqrt(len(x)))
    return m, m - half, m + half


def run_metrics_summary(metrics_path):
    """``(final success rate, normalised AUC)`` of one run's metrics file."""
    rows = [r for r in read_metrics(metrics_path) if r["success_rate"] is not None
            and math.isfinite(r["success_rate"])]
    if not rows:
        return math.nan, math.nan
    steps = [r["env_step"] for r in rows]
    succ = [r["success_rate"] for r in rows]
    return succ[-1], learning_curve_auc(steps, succ)


def summarize_runs(runs, path) -> list[dict]:
    """Aggregate ``runs`` (dicts with alpha, seed, metrics, failed) into a per-alpha summary CSV."""
    by_alpha: dict = {}
    for r in runs:
        by_alpha.setdefault(r["alpha"], []).append(r)
    table = []
    for alpha in sorted(by_alpha):
        group = by_alpha[alpha]
        finals, aucs = [], []
        for r in group:
            if r.get("failed"):
                continue
            f, a = run_metrics_summary(r["metrics"])
            finals.append(f)
            aucs.append(a)
        m, lo, hi = mean_ci95(finals)
        am, alo, ahi = mean_ci95(aucs)
        table.append({
            "alpha": alpha, "n_runs": len(group), "n_failed": sum(bool(r.get("failed")) for r in group),
            "mean_final_success": m, "ci95_low": lo, "ci95_high": hi,
            "mean_auc": am, "auc_ci95_low": alo, "auc_ci95_high": ahi,
        })
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_COLUMNS)
        for row in table:
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return table


def _sweep_job(args):
    cfg_dict, alpha, seed, run_dir = args
    cfg = config_from_dict(cfg_dict).replace(alpha_adv=alpha, seed=seed, out_dir=str(run_dir))
    try:
        outputs = run_training(cfg)
        return {"alpha": alpha, "seed": seed, "metrics": str(outputs.metrics), "failed": False}
    except Exception as exc:  # recorded, the sweep goes on
        log.exception("sweep run alpha=%s seed=%s failed", alpha, seed)
        return {"alpha": alpha, "seed": seed, "metrics": str(Path(run_dir) / "metrics.csv"),
                "failed": True, "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(base_cfg: Config, alphas, seeds, out_dir=None, jobs=1) -> Path:
    """Train every ``(alpha, seed)`` pair and write ``summary.csv`` and ``runs.csv``.

    ``alpha = 0`` runs are the HIRO-like baseline. ``jobs > 1`` spreads runs
    over processes; results do not depend on it.
    """
    alphas, seeds = list(alphas), list(seeds)
    if not alphas or not seeds:
        raise ValueError("sweep needs at least one alpha and one seed")
    root = Path(out_dir or base_cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    base = base_cfg.to_dict()
    if base["algorithm"] == "HIRO_LIKE":
        base["algorithm"] = "AGILE"
    jobs_args = [(base, float(a), int(s), root / f"alpha_{float(a):g}" / f"seed_{int(s)}")
                 for a in alphas for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_sweep_job, jobs_args))
    else:
        runs = [_sweep_job(a) for a in jobs_args]
    with open(root / "runs.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("alpha", "seed", "failed", "final_success", "auc", "error"))
        for r in runs:
            fs, auc = (math.nan, math.nan) if r["failed"] else run_metrics_summary(r["metrics"])
            w.writerow((_fmt(r["alpha"]), r["seed"], int(r["failed"]), _fmt(fs), _fmt(auc), r.get("error", "")))
    summary = root / "summary.csv"
    summarize_runs(runs, summary)
    return summary
