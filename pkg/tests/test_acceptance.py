"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The long learning experiment (criterion 6) caches its sweep under
``$AGILE_HRL_ACCEPTANCE_DIR`` (default ``<repo>/acceptance_runs``), keyed by
a hash of the configs and of the training source files, so a rerun with
unchanged code only re-reads the metrics.
"""

import csv
import hashlib
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from agile_hrl import envs
from agile_hrl.adversarial import (
    discriminate,
    discriminator_loss_and_grad,
    discriminator_update,
    generator_action_grad,
    make_adversarial_ctx,
)
from agile_hrl.config import config_from_dict, parse_config
from agile_hrl.harness import METRICS_COLUMNS, read_metrics, run_metrics_summary, run_sweep, run_training, summarize_runs
from agile_hrl.hrl import accumulate_high_reward, intrinsic_reward, relabel_candidates, relabel_subgoal
from agile_hrl.nn_core import adam_init, adam_step, init_mlp, mlp_backward, mlp_forward, params_to_vector, vector_to_params
from agile_hrl.td3 import actor_gradient, make_td3_agent

from conftest import central_differences, naive_forward, record_criterion, rel_error

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"
SRC = REPO / "src" / "agile_hrl"
# two-sided 95% Student-t quantiles; dof 2 has the closed form sqrt(2 p^2 / (1 - p^2)) at p = 0.95
T_975 = {2: math.sqrt(2 * 0.95**2 / (1 - 0.95**2)), 4: 2.7764451051977987}


# -- 1. gradients ---------------------------------------------------------------

def random_mlp(rng, in_dim=None, out_dim=None, out_act=None, hidden_act=None, **kw):
    n_layers = int(rng.integers(1, 4))
    sizes = [in_dim or int(rng.integers(1, 9))]
    sizes += [int(rng.integers(1, 9)) for _ in range(n_layers - 1)]
    sizes.append(out_dim or int(rng.integers(1, 9)))
    return init_mlp(
        sizes, rng,
        hidden_activation=hidden_act or str(rng.choice(["relu", "leaky_relu"])),
        output_activation=out_act or str(rng.choice(["identity", "tanh", "sigmoid"])),
        output_scale=float(rng.uniform(0.5, 3.0)), **kw,
    )


def off_kink(params, X, margin=1e-3):
    """True if no hidden pre-activation sits within ``margin`` of the ReLU kink."""
    h = np.atleast_2d(X)
    for W, b in params.layers[:-1]:
        z = h @ W.T + b
        if np.any(np.abs(z) < margin):
            return False
        h = np.where(z > 0, z, 0.0 if params.hidden_activation == "relu" else params.leaky_slope * z)
    return True


def draw_inputs(rng, nets, n, dim):
    for _ in range(1000):
        X = rng.normal(size=(n, dim))
        if all(off_kink(p, X) for p in nets):
            return X
    raise RuntimeError("could not draw inputs away from the ReLU kinks")


def case_plain(rng):
    p = random_mlp(rng)
    X = draw_inputs(rng, [p], 3, p.in_dim)
    u = rng.normal(size=(3, p.out_dim))
    _, cache = mlp_forward(p, X)
    grads, _ = mlp_backward(p, cache, u)
    f = lambda v: float(np.sum(u * mlp_forward(vector_to_params(p, v), X)[0]))
    return rel_error(grads.flat(), central_differences(f, params_to_vector(p)))


def small_agent(rng, obs_dim, act_dim):
    agent = make_td3_agent(obs_dim, act_dim, float(rng.uniform(0.5, 5.0)), rng,
                           hidden_sizes=[int(rng.integers(1, 9)) for _ in range(int(rng.integers(0, 3)))],
                           actor_final_scale=1.0)
    return agent


def case_actor_through_critic(rng):
    obs_dim, act_dim = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    agent = small_agent(rng, obs_dim, act_dim)
    for _ in range(1000):
        obs = rng.normal(size=(2, obs_dim))
        acts = mlp_forward(agent.actor, obs)[0]
        if off_kink(agent.actor, obs) and off_kink(agent.critic1, np.hstack([obs, acts])):
            break

    def objective(v):
        a = mlp_forward(vector_to_params(agent.actor, v), obs)[0]
        return -float(np.mean(mlp_forward(agent.critic1, np.hstack([obs, a]))[0]))

    grads, _, _ = actor_gradient(agent, obs)
    return rel_error(grads.flat(), central_differences(objective, params_to_vector(agent.actor)))


def case_adversarial_term(rng):
    obs_dim, goal_dim = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    agent = small_agent(rng, obs_dim, goal_dim)
    alpha = float(rng.uniform(0.1, 2.0))
    ctx = make_adversarial_ctx(goal_dim, rng, [int(rng.integers(1, 9))], alpha_adv=alpha, final_scale=1.0)
    for _ in range(1000):
        obs = rng.normal(size=(2, obs_dim))
        g = mlp_forward(agent.actor, obs)[0]
        if (off_kink(agent.actor, obs) and off_kink(agent.critic1, np.hstack([obs, g]))
                and off_kink(ctx.discriminator, g)):
            break

    def objective(v):
        # descent objective: -mean Q(s, pi(s)) + alpha * mean log(1 - D(pi(s)))
        a = mlp_forward(vector_to_params(agent.actor, v), obs)[0]
        q = mlp_forward(agent.critic1, np.hstack([obs, a]))[0]
        d = mlp_forward(ctx.discriminator, a)[0]
        return -float(np.mean(q)) + alpha * float(np.mean(np.log1p(-d)))

    extra = generator_action_grad(ctx, g)
    grads, _, _ = actor_gradient(agent, obs, extra)
    return rel_error(grads.flat(), central_differences(objective, params_to_vector(agent.actor)))


def case_discriminator_loss(rng):
    goal_dim = int(rng.integers(1, 4))
    disc = random_mlp(rng, in_dim=goal_dim, out_dim=1, out_act="sigmoid", hidden_act="leaky_relu")
    pos = draw_inputs(rng, [disc], 4, goal_dim)
    neg = draw_inputs(rng, [disc], 5, goal_dim) + 0.5
    _, grads = discriminator_loss_and_grad(disc, pos, neg)
    f = lambda v: discriminator_loss_and_grad(vector_to_params(disc, v), pos, neg)[0]
    return rel_error(grads.flat(), central_differences(f, params_to_vector(disc)))


def test_criterion_1_gradient_suite():
    rng = np.random.default_rng(2024)
    cases = [case_plain, case_actor_through_critic, case_adversarial_term, case_discriminator_loss]
    t0 = time.perf_counter()
    errors = {c.__name__: [] for c in cases}
    for i in range(100):
        case = cases[i % 4]
        errors[case.__name__].append(case(rng))
    elapsed = time.perf_counter() - t0
    worst = max(max(v) for v in errors.values())
    detail = ", ".join(f"{k[5:]} {max(v):.1e}" for k, v in errors.items())
    ok = record_criterion(1, worst < 1e-4 and elapsed < 120,
                          f"100 MLPs, max rel err {worst:.2e} ({detail}); {elapsed:.1f}s")
    assert ok


# -- 2. formula oracles -----------------------------------------------------------

def test_criterion_2_formula_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    drift = 0.0
    for _ in range(1000):
        s, g = rng.uniform(-20, 20, 2), rng.uniform(-10, 10, 2)
        anchor = s + g
        for _ in range(10):
            s_next = s + rng.uniform(-1, 1, 2)
            g = envs.goal_transition(g, s, s_next)
            s = s_next
            drift = max(drift, float(np.max(np.abs(s + g - anchor))))
    cases = [((0, 0), (1, 0), (1, 0), 0.0), ((0, 0), (1, 0), (0, 0), -1.0), ((0, 0), (3, 4), (0, 0), -5.0)]
    reward_err = max(abs(intrinsic_reward(s, g, s2) - want) for s, g, s2, want in cases)
    acc_err = abs(accumulate_high_reward([1, 1, 1], 0.1) - 0.3)
    elapsed = time.perf_counter() - t0
    ok = record_criterion(2, drift < 1e-12 and reward_err < 1e-9 and acc_err < 1e-9,
                          f"telescoping drift {drift:.1e}, intrinsic err {reward_err:.1e}, "
                          f"accumulation err {acc_err:.1e}; {elapsed:.1f}s")
    assert ok


# -- 3. relabeling ---------------------------------------------------------------

def oracle_score(policy_params, segment, candidate):
    """Independent log-likelihood surrogate: roll the candidate along the states, sum -0.5||a - pi||^2."""
    g = np.array(candidate, dtype=float)
    s_prev = None
    total = 0.0
    for obs, action in segment:
        if s_prev is not None:
            g = envs.goal_transition(g, s_prev, obs[:2])
        pred = naive_forward(policy_params, np.concatenate([obs, g]))
        total += -0.5 * float(np.sum((action - pred) ** 2))
        s_prev = obs[:2]
    return total


def test_criterion_3_relabel_oracle():
    rng = np.random.default_rng(99)
    t0 = time.perf_counter()
    agree = 0
    bound = 10.0
    for i in range(200):
        low = init_mlp([7, 8, 8, 2], rng, output_activation="tanh", output_scale=1.0, final_scale=1.0)
        n = int(rng.integers(1, 11))
        pos = rng.uniform(-5, 5, 2)
        segment = []
        for t in range(n):
            obs = np.r_[pos, t / 500, 0.0, 19.0]
            action = rng.uniform(-1, 1, 2)
            segment.append((obs, action))
            pos = pos + action
        g_orig = rng.uniform(-bound, bound, 2)
        seed = int(rng.integers(2**32))
        chosen = relabel_subgoal(low, segment, g_orig, np.random.default_rng(seed), goal_bound=bound, s_end=pos)
        cands = relabel_candidates(g_orig, segment[0][0], pos, bound, np.random.default_rng(seed))[0]
        assert len(cands) == 10
        np.testing.assert_array_equal(cands[0], np.clip(g_orig, -bound, bound))
        np.testing.assert_array_equal(cands[1], np.clip(pos - segment[0][0][:2], -bound, bound))
        scores = [oracle_score(low, segment, c) for c in cands]
        agree += bool(np.array_equal(chosen, cands[int(np.argmax(scores))]))
    elapsed = time.perf_counter() - t0
    ok = record_criterion(3, agree == 200 and elapsed < 60, f"{agree}/200 segments agree; {elapsed:.1f}s")
    assert ok


# -- 4. adversarial equilibrium ---------------------------------------------------

EQ = dict(steps=20_000, batch=64, data_mean=(0.3, -0.2), data_std=0.1, gen_lr=2e-3, disc_lr=1e-4, beta1=0.5)


def equilibrium_run(seed):
    """Constant-output generator against fixed-Gaussian 'relabeled' data in the unit box."""
    rng = np.random.default_rng(seed)
    mu = np.array(EQ["data_mean"])
    ctx = make_adversarial_ctx(2, rng, alpha_adv=1.0, disc_lr=EQ["disc_lr"], adam_betas=(EQ["beta1"], 0.999))
    gen = init_mlp([1, 2], rng, output_activation="tanh", output_scale=1.0, final_scale=1e-2)
    gen_opt = adam_init(gen, EQ["beta1"])
    ones = np.ones((EQ["batch"], 1))
    for _ in range(EQ["steps"]):
        real = mu + EQ["data_std"] * rng.standard_normal((EQ["batch"], 2))
        fake, cache = mlp_forward(gen, ones)
        discriminator_update(ctx, real, fake)
        ascent = generator_action_grad(ctx, fake)
        grads, _ = mlp_backward(gen, cache, -ascent / EQ["batch"])
        gen, gen_opt = adam_step(gen_opt, gen, grads, EQ["gen_lr"])
    fake = mlp_forward(gen, ones)[0]
    return float(np.mean(discriminate(ctx, fake))), float(np.linalg.norm(fake.mean(axis=0) - mu))


def test_criterion_4_adversarial_equilibrium():
    t0 = time.perf_counter()
    results = [equilibrium_run(seed) for seed in range(5)]
    elapsed = time.perf_counter() - t0
    good = sum(0.3 <= d <= 0.7 and dist <= 0.2 for d, dist in results)
    detail = " ".join(f"(D={d:.3f}, dist={dist:.3f})" for d, dist in results)
    ok = record_criterion(4, good >= 4 and elapsed < 300, f"{good}/5 seeds at equilibrium {detail}; {elapsed:.0f}s")
    assert ok


# -- 5. flat control ---------------------------------------------------------------

def test_criterion_5_flat_td3(tmp_path):
    cfg = parse_config(CONFIGS / "flat_empty_room.json", [f"out_dir={tmp_path / 'flat'}"])
    assert cfg.total_steps <= 50_000 and cfg.algorithm == "FLAT_TD3" and cfg.env == "empty_room"
    t0 = time.perf_counter()
    out = run_training(cfg)
    elapsed = time.perf_counter() - t0
    final = read_metrics(out.metrics)[-1]
    ok = record_criterion(5, final["success_rate"] >= 0.9 and elapsed < 600,
                          f"success {final['success_rate']:.2f} at step {int(final['env_step'])}; {elapsed:.0f}s")
    assert ok


# -- 6. directional claim ------------------------------------------------------------

DIRECTIONAL = {"u_maze_sparse": "desk_u_maze_sparse.json", "gated_maze": "desk_gated_maze.json"}
DIRECTIONAL_ALPHAS = (0.0, 1e-3)
DIRECTIONAL_SEEDS = (0, 1, 2, 3, 4)
TRAINING_SOURCES = ("nn_core.py", "envs.py", "td3.py", "hrl.py", "adversarial.py", "harness.py", "config.py")


def directional_key():
    h = hashlib.sha256()
    for name in sorted(DIRECTIONAL.values()):
        h.update((CONFIGS / name).read_bytes())
    for name in TRAINING_SOURCES:
        h.update((SRC / name).read_bytes())
    h.update(repr((DIRECTIONAL_ALPHAS, DIRECTIONAL_SEEDS)).encode())
    return h.hexdigest()[:16]


def directional_sweep():
    """Run (or reuse) both sweeps. Returns ``{maze: summary rows}`` and the timing record."""
    root = Path(os.environ.get("AGILE_HRL_ACCEPTANCE_DIR", REPO / "acceptance_runs")) / directional_key()
    timing_path = root / "timing.json"
    if not timing_path.exists():
        jobs = os.cpu_count() or 1
        t0 = time.perf_counter()
        for maze, name in DIRECTIONAL.items():
            cfg = parse_config(CONFIGS / name)
            run_sweep(cfg, DIRECTIONAL_ALPHAS, DIRECTIONAL_SEEDS, root / maze, jobs=jobs)
        timing = {"wall_clock_s": time.perf_counter() - t0, "jobs": jobs, "cpu_count": os.cpu_count()}
        timing_path.write_text(json.dumps(timing))
    timing = json.loads(timing_path.read_text())
    tables = {maze: list(csv.DictReader(open(root / maze / "summary.csv"))) for maze in DIRECTIONAL}
    return tables, timing


@pytest.mark.slow
def test_criterion_6_directional_claim():
    tables, timing = directional_sweep()
    by = {maze: {float(r["alpha"]): r for r in rows} for maze, rows in tables.items()}
    checks, parts = [], []
    for maze, rows in by.items():
        agile, base = float(rows[1e-3]["mean_final_success"]), float(rows[0.0]["mean_final_success"])
        a_auc, b_auc = float(rows[1e-3]["mean_auc"]), float(rows[0.0]["mean_auc"])
        checks.append(agile >= base)
        parts.append(f"{maze}: final {agile:.2f} vs {base:.2f}, auc {a_auc:.3f} vs {b_auc:.3f}")
        if maze == "gated_maze":
            checks.append(a_auc > b_auc)
        assert int(rows[1e-3]["n_failed"]) == 0 and int(rows[0.0]["n_failed"]) == 0
    minutes = timing["wall_clock_s"] / 60
    runtime_ok = minutes <= 60
    detail = "; ".join(parts) + f"; sweep wall clock {minutes:.0f} min on {timing['jobs']} worker(s)"
    ok = record_criterion(6, all(checks) and runtime_ok, detail)
    assert ok


# -- 7. determinism ---------------------------------------------------------------

def test_criterion_7_cli_determinism(tmp_path):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        proc = subprocess.run(
            [sys.executable, "-m", "agile_hrl", "train", "--config", str(CONFIGS / "determinism.json"),
             "--set", f"out_dir={out}"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append((out / "metrics.csv").read_bytes())
    rows = len(outs[0].splitlines()) - 1
    ok = record_criterion(7, outs[0] == outs[1] and rows > 1,
                          f"metrics.csv bitwise identical: {outs[0] == outs[1]} ({rows} rows)")
    assert ok


# -- 8. ablation harness --------------------------------------------------------------

def hand_ci(values):
    n = len(values)
    m = sum(values) / n
    sd = math.sqrt(sum((v - m) ** 2 for v in values) / (n - 1))
    half = T_975[n - 1] * sd / math.sqrt(n)
    return m, m - half, m + half


def test_criterion_8_ablation_sweep(tmp_path):
    alphas = ["0", "1e-4", "1e-3", "1e-2"]
    out = tmp_path / "sweep"
    proc = subprocess.run(
        [sys.executable, "-m", "agile_hrl", "sweep", "--config", str(CONFIGS / "determinism.json"),
         "--alphas", ",".join(alphas), "--seeds", "0,1,2", "--set", "total_steps=1500", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    rows = list(csv.DictReader(open(out / "summary.csv")))
    structure = [float(r["alpha"]) for r in rows] == [float(a) for a in alphas] and all(
        r["n_runs"] == "3" and r["n_failed"] == "0" for r in rows)

    # the sweep's own aggregation, against the per-run finals
    runs = list(csv.DictReader(open(out / "runs.csv")))
    own_err = 0.0
    for r in rows:
        finals = [float(x["final_success"]) for x in runs if float(x["alpha"]) == float(r["alpha"])]
        m, lo, hi = hand_ci(finals)
        own_err = max(own_err, abs(m - float(r["mean_final_success"])),
                      abs(lo - float(r["ci95_low"])), abs(hi - float(r["ci95_high"])))

    # injected dummy metrics with known finals
    injected = {0.0: [0.1, 0.5, 0.9], 1e-4: [0.0, 0.0, 0.3], 1e-3: [1.0, 0.7, 0.4], 1e-2: [0.2, 0.2, 0.2]}
    fake_runs = []
    for alpha, finals in injected.items():
        for seed, v in enumerate(finals):
            p = out / f"alpha_{alpha:g}" / f"seed_{seed}" / "metrics.csv"
            with open(p, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(METRICS_COLUMNS)
                w.writerow([0, 0, 0.0, -1.0, 500.0] + [""] * 7 + [0.0])
                w.writerow([1500, 5, v, -1.0, 500.0] + [""] * 7 + [0.0])
            fake_runs.append({"alpha": alpha, "seed": seed, "metrics": p, "failed": False})
    table = summarize_runs(fake_runs, tmp_path / "injected_summary.csv")
    inj_err = 0.0
    for row in table:
        m, lo, hi = hand_ci(injected[row["alpha"]])
        inj_err = max(inj_err, abs(m - row["mean_final_success"]), abs(lo - row["ci95_low"]),
                      abs(hi - row["ci95_high"]), abs(m / 2 - row["mean_auc"]))
    ok = record_criterion(8, structure and own_err < 1e-9 and inj_err < 1e-9,
                          f"{len(rows)} alpha rows, sweep CI err {own_err:.1e}, injected CI err {inj_err:.1e}")
    assert ok
