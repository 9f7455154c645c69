"""Deterministic 2D point-mass mazes.

The agent is a first-order point mass: each step moves it by the (clipped)
action, resolved one axis at a time against axis-aligned walls. Wall
interiors are forbidden, wall boundaries are not, so an agent pressed against
a wall can still slide along it.

Observations are ``(x, y, t / horizon, target_x, target_y)``; the goal space
is the position subspace ``(x, y)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError, SpecError

OBS_DIM = 5
GOAL_DIM = 2
ACTION_DIM = 2


@dataclass(frozen=True)
class MazeSpec:
    """Static description of a maze task.

    ``walls`` and ``start``/``trigger`` rectangles are ``(x_min, y_min, x_max, y_max)``.
    A degenerate ``start`` rectangle is a fixed start point. ``gate`` is an extra
    wall that disappears for the rest of the episode once the agent enters
    ``trigger``.
    """

    name: str
    extent: tuple = (24.0, 24.0)
    origin: tuple = (0.0, 0.0)
    walls: tuple = ()
    start: tuple = (0.0, 0.0, 0.0, 0.0)
    target: tuple = (0.0, 0.0)
    success_radius: float = 5.0
    horizon: int = 500
    reward_mode: str = "dense"
    action_bound: float = 1.0
    sample_train_target: bool = False
    eval_start: tuple | None = None
    gate: tuple | None = None
    trigger: tuple | None = None
    goal_bound: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(tuple(float(c) for c in w) for w in self.walls))
        if len(self.start) == 2:
            object.__setattr__(self, "start", tuple(self.start) * 2)
        if self.reward_mode not in ("dense", "sparse"):
            raise SpecError(f"reward_mode must be 'dense' or 'sparse', got {self.reward_mode!r}")
        if not (self.success_radius > 0 and self.horizon > 0 and self.action_bound > 0 and self.goal_bound > 0):
            raise SpecError("success_radius, horizon, action_bound and goal_bound must be positive")
        if (self.gate is None) != (self.trigger is None):
            raise SpecError("gate and trigger must be given together")
        if not self.inside_extent(self.target) or self.blocked(self.target, gate_open=False):
            raise SpecError(f"target {self.target} is outside the free space")
        x0, y0, x1, y1 = self.start
        if x1 < x0 or y1 < y0:
            raise SpecError("start region has negative size")
        if x0 == x1 and y0 == y1:
            if not self.inside_extent((x0, y0)) or self.blocked((x0, y0), gate_open=False):
                raise SpecError(f"fixed start {(x0, y0)} is outside the free space")
        elif not (self.inside_extent((x0, y0)) and self.inside_extent((x1, y1))):
            raise SpecError("start region leaves the maze extent")
        if self.eval_start is not None and (
            not self.inside_extent(self.eval_start) or self.blocked(self.eval_start, gate_open=False)
        ):
            raise SpecError(f"eval_start {self.eval_start} is outside the free space")

    @property
    def bounds(self):
        ox, oy = self.origin
        return ox, oy, ox + self.extent[0], oy + self.extent[1]

    def inside_extent(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    def active_walls(self, gate_open: bool):
        if self.gate is None or gate_open:
            return self.walls
        return self.walls + (tuple(self.gate),)

    def blocked(self, p, gate_open: bool = False) -> bool:
        """True if ``p`` lies strictly inside a wall."""
        return any(
            w[0] < p[0] < w[2] and w[1] < p[1] < w[3] for w in self.active_walls(gate_open)
        )

    def replace(self, **changes) -> "MazeSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class EnvState:
    position: np.ndarray
    t: int
    target: np.ndarray
    gate_open: bool = False


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    success: bool
    info: dict = field(default_factory=dict)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_free_point(spec: MazeSpec, rng, region=None, max_tries=10_000) -> np.ndarray:
    x0, y0, x1, y1 = spec.bounds if region is None else region
    for _ in range(max_tries):
        p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        if not spec.blocked(p, gate_open=False):
            return p
    raise SpecError(f"could not sample a free point in region {(x0, y0, x1, y1)}")


def reset(spec: MazeSpec, rng_seed, evaluation: bool = False) -> EnvState:
    """Initial state. ``rng_seed`` is an int or a ``numpy`` Generator.

    With ``evaluation=True`` the target is always ``spec.target`` and the start
    is ``spec.eval_start`` when one is given.
    """
    rng = _rng(rng_seed)
    if evaluation and spec.eval_start is not None:
        pos = np.array(spec.eval_start, dtype=np.float64)
    else:
        x0, y0, x1, y1 = spec.start
        if x0 == x1 and y0 == y1:
            pos = np.array([x0, y0], dtype=np.float64)
        else:
            pos = sample_free_point(spec, rng, spec.start)
    if spec.sample_train_target and not evaluation:
        target = sample_free_point(spec, rng)
    else:
        target = np.array(spec.target, dtype=np.float64)
    gate_open = spec.gate is not None and _in_rect(pos, spec.trigger)
    return EnvState(pos, 0, target, gate_open)


def _in_rect(p, r) -> bool:
    return r[0] <= p[0] <= r[2] and r[1] <= p[1] <= r[3]


def _move_axis(pos, delta, axis, walls, bounds):
    """Slide ``pos`` by ``delta`` along ``axis``, stopping at the first wall face."""
    other = 1 - axis
    lo, hi = bounds[axis], bounds[axis + 2]
    start = pos[axis]
    end = min(max(start + delta, lo), hi)
    q = pos[other]
    for w in walls:
        if not (w[other] < q < w[other + 2]):
            continue
        w_lo, w_hi = w[axis], w[axis + 2]
        if end > start and start <= w_lo < end:
            end = w_lo
        elif end < start and end < w_hi <= start:
            end = w_hi
    out = pos.copy()
    out[axis] = end
    return out


def reward_for(spec: MazeSpec, position, target) -> tuple[float, bool]:
    dist = float(np.linalg.norm(np.asarray(position) - np.asarray(target)))
    success = dist < spec.success_radius
    if spec.reward_mode == "dense":
        return -0.1 * dist, success
    return (1.0 if success else 0.0), success


def step(spec: MazeSpec, state: EnvState, action) -> StepResult:
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (ACTION_DIM,):
        raise ValueError(f"action must have shape (2,), got {action.shape}")
    if not np.isfinite(action).all():
        raise NumericError("non-finite action")
    a = np.clip(action, -spec.action_bound, spec.action_bound)
    walls = spec.active_walls(state.gate_open)
    bounds = spec.bounds
    pos = _move_axis(state.position, a[0], 0, walls, bounds)
    pos = _move_axis(pos, a[1], 1, walls, bounds)
    gate_open = state.gate_open or (spec.trigger is not None and _in_rect(pos, spec.trigger))
    reward, success = reward_for(spec, pos, state.target)
    t = state.t + 1
    done = success or t >= spec.horizon
    return StepResult(EnvState(pos, t, state.target, gate_open), reward, done, success)


def observe(spec: MazeSpec, state: EnvState) -> np.ndarray:
    return np.array(
        [state.position[0], state.position[1], state.t / spec.horizon, state.target[0], state.target[1]]
    )


def goal_transition(g_prev, s_prev, s_cur) -> np.ndarray:
    """Keep the absolute subgoal target fixed: ``s_prev + g_prev - s_cur``."""
    g_prev, s_prev, s_cur = (np.asarray(v, dtype=np.float64) for v in (g_prev, s_prev, s_cur))
    out = g_prev + (s_prev - s_cur)
    if not np.isfinite(out).all():
        raise NumericError("non-finite goal transition")
    return out


# Maze catalogue. The dense mazes are 24x24 with 8-unit cells.
def empty_room() -> MazeSpec:
    return MazeSpec(
        name="empty_room",
        extent=(24.0, 24.0),
        origin=(-4.0, -4.0),
        start=(-4.0, -4.0, 20.0, 20.0),
        target=(16.0, 16.0),
        eval_start=(0.0, 0.0),
        sample_train_target=True,
        success_radius=5.0,
        reward_mode="dense",
    )


def u_maze() -> MazeSpec:
    # free cells (0,0) (8,0) (16,0) (16,8) (16,16) (8,16) (0,16)
    return MazeSpec(
        name="u_maze",
        extent=(24.0, 24.0),
        origin=(-4.0, -4.0),
        walls=((-4.0, 4.0, 12.0, 12.0),),
        start=(-4.0, -4.0, 20.0, 20.0),
        target=(0.0, 16.0),
        eval_start=(0.0, 0.0),
        sample_train_target=True,
        success_radius=5.0,
        reward_mode="dense",
    )


def u_maze_sparse() -> MazeSpec:
    # 20x20 U-shape, corridor width 20/3; target at the end of the upper arm
    c = 20.0 / 3.0
    return MazeSpec(
        name="u_maze_sparse",
        extent=(20.0, 20.0),
        origin=(0.0, 0.0),
        walls=((0.0, c, 2 * c, 2 * c),),
        start=(0.0, 0.0, 20.0, 20.0),
        target=(2.0, 17.0),
        eval_start=(2.0, 3.0),
        sample_train_target=False,
        success_radius=1.0,
        reward_mode="sparse",
        goal_bound=10.0,
    )


def gated_maze() -> MazeSpec:
    # cells: (-8,0) (0,0) start; (-8,8) trigger; (0,8) gate; (0,16) target.
    # Greedy motion up runs into the gate; the detour left then up opens it.
    return MazeSpec(
        name="gated_maze",
        extent=(24.0, 24.0),
        origin=(-12.0, -4.0),
        walls=(
            (4.0, -4.0, 12.0, 20.0),
            (-12.0, 12.0, -4.0, 20.0),
        ),
        gate=(-4.0, 4.0, 4.0, 12.0),
        trigger=(-12.0, 4.0, -4.0, 12.0),
        start=(0.0, 0.0, 0.0, 0.0),
        target=(0.0, 19.0),
        success_radius=5.0,
        reward_mode="dense",
    )


MAZES = {
    "empty_room": empty_room,
    "u_maze": u_maze,
    "u_maze_sparse": u_maze_sparse,
    "gated_maze": gated_maze,
}


def make_maze(name: str, **overrides) -> MazeSpec:
    try:
        spec = MAZES[name]()
    except KeyError:
        raise SpecError(f"unknown maze {name!r}; choose from {sorted(MAZES)}") from None
    if overrides:
        fields = {f.name for f in dataclasses.fields(MazeSpec)}
        bad = set(overrides) - fields
        if bad:
            raise SpecError(f"unknown MazeSpec field(s) {sorted(bad)}")
        spec = spec.replace(**{k: _tupleize(v) for k, v in overrides.items()})
    return spec


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v
