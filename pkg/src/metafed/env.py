"""Multi-task 2D gridworld environment.

Tasks are trajectories over a small rectangular grid of landmark cells. All
tasks share one entry cell; only the reward tables differ between tasks
(dynamics are task-independent). Episodes are fixed-length epsilon-greedy
rollouts; the discounted sum of per-step rewards ("running reward") is the
accuracy indicator used by the adaptation stopping rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .qlearn import ParamVector, greedy_action, q_forward

Cell = tuple[int, int]

# Actions, encoded 0..3. Forward/Backward move along +y/-y, Left/Right along -x/+x.
FORWARD, BACKWARD, LEFT, RIGHT = 0, 1, 2, 3
N_ACTIONS = 4
ACTION_NAMES = ("F", "B", "L", "R")
_MOVES: tuple[Cell, ...] = ((0, 1), (0, -1), (-1, 0), (1, 0))

#: Default logical payload (bytes) attached to a collected episode; energy
#: configs normally pass their own value. 24.6 MB per 20-motion sequence.
DEFAULT_EPISODE_BYTES = 24_600_000

DEFAULT_R_MAX = 10.0


@dataclass(frozen=True)
class GridWorld:
    """Rectangular grid of ``width * height`` landmark cells.

    Cells are ``(x, y)`` with ``0 <= x < width`` and ``0 <= y < height``.
    """

    width: int = 5
    height: int = 8
    # Interior entry: with no stand-still action, max reward requires an
    # on-trajectory cycle, not a single lucky wall-push at the start cell.
    entry_cell: Cell = (2, 1)

    def __post_init__(self) -> None:
        if self.width < 2 or self.height < 2:
            raise ConfigError("grid: width and height must both be >= 2")
        if not self.contains(self.entry_cell):
            raise ConfigError(f"grid.entry_cell: {self.entry_cell} lies outside the grid")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def contains(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def cell_index(self, cell: Cell) -> int:
        if not self.contains(cell):
            raise DomainError(f"cell {cell} outside {self.width}x{self.height} grid")
        x, y = cell
        return y * self.width + x

    def index_cell(self, index: int) -> Cell:
        if not 0 <= index < self.n_cells:
            raise DomainError(f"cell index {index} outside grid")
        return (index % self.width, index // self.width)

    def observe(self, cell: Cell) -> np.ndarray:
        """One-hot indicator of the cell, the network's observation vector."""
        obs = np.zeros(self.n_cells, dtype=np.float64)
        obs[self.cell_index(cell)] = 1.0
        return obs

    def decode_observation(self, obs: np.ndarray) -> Cell:
        return self.index_cell(int(np.argmax(obs)))


def step(grid: GridWorld, cell: Cell, action: int) -> Cell:
    """Deterministic motion: one cell in the action's direction, clamped at edges."""
    if not grid.contains(cell):
        raise DomainError(f"cell {cell} outside {grid.width}x{grid.height} grid")
    if not 0 <= action < N_ACTIONS:
        raise DomainError(f"action {action} not in 0..3")
    dx, dy = _MOVES[action]
    nxt = (cell[0] + dx, cell[1] + dy)
    return nxt if grid.contains(nxt) else cell


@dataclass(frozen=True)
class TaskSpec:
    """A task: a max-reward trajectory plus the shaped reward table it induces.

    ``reward_table[i]`` is the reward of the cell with index ``i``:
    ``r_max / (1 + d)`` with ``d`` the Manhattan distance to the nearest
    trajectory cell, so the maximum is attained exactly on the trajectory.
    """

    task_id: int
    grid: GridWorld
    trajectory: tuple[Cell, ...]
    reward_table: np.ndarray
    r_max: float = DEFAULT_R_MAX

    def __post_init__(self) -> None:
        if not self.trajectory:
            raise ConfigError(f"task {self.task_id}: empty trajectory")
        if self.trajectory[0] != self.grid.entry_cell:
            raise ConfigError(
                f"task {self.task_id}: trajectory must start at the entry cell "
                f"{self.grid.entry_cell}, got {self.trajectory[0]}"
            )
        for a, b in zip(self.trajectory, self.trajectory[1:]):
            if not self.grid.contains(b):
                raise ConfigError(f"task {self.task_id}: trajectory cell {b} outside grid")
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                raise ConfigError(
                    f"task {self.task_id}: trajectory cells {a} and {b} are not adjacent"
                )
        if self.reward_table.shape != (self.grid.n_cells,):
            raise ConfigError(f"task {self.task_id}: reward table must cover every cell")
        self.reward_table.setflags(write=False)


def build_reward_table(grid: GridWorld, trajectory: Sequence[Cell], r_max: float) -> np.ndarray:
    table = np.empty(grid.n_cells, dtype=np.float64)
    for y in range(grid.height):
        for x in range(grid.width):
            d = min(abs(x - tx) + abs(y - ty) for tx, ty in trajectory)
            table[y * grid.width + x] = r_max / (1.0 + d)
    return table


def make_task(grid: GridWorld, task_id: int, trajectory: Sequence[Cell],
              r_max: float = DEFAULT_R_MAX) -> TaskSpec:
    traj = tuple((int(x), int(y)) for x, y in trajectory)
    return TaskSpec(task_id, grid, traj, build_reward_table(grid, traj, r_max), r_max)


def reward(task: TaskSpec, cell: Cell) -> float:
    """Reward of a cell under the task's shaped table."""
    return float(task.reward_table[task.grid.cell_index(cell)])


@dataclass(frozen=True)
class Transition:
    """One step of experience; observations are one-hot cell indicators."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool = False


@dataclass(frozen=True)
class ExperienceBatch:
    """A sequence of transitions collected by one device on one task.

    ``byte_size`` is the logical payload size used by the energy ledger; it is
    carried with the batch rather than recomputed from the transition count.
    """

    task_id: int
    device_id: int
    transitions: tuple[Transition, ...]
    episode_length: int
    byte_size: int

    def __post_init__(self) -> None:
        if self.byte_size <= 0:
            raise ConfigError("batch.byte_size must be > 0")

    def __len__(self) -> int:
        return len(self.transitions)


def collect_episode(grid: GridWorld, task: TaskSpec, policy_params: ParamVector | None,
                    epsilon: float, steps: int, rng_seed: int | np.random.Generator,
                    device_id: int = 0, byte_size: int = DEFAULT_EPISODE_BYTES) -> ExperienceBatch:
    """Roll out a fixed-length epsilon-greedy episode from the entry cell.

    With probability ``epsilon`` the action is uniform-random, otherwise greedy
    w.r.t. ``policy_params`` (fully random when no params are given). The same
    seed always yields the same batch.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError("epsilon must lie in [0, 1]")
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    cell = grid.entry_cell
    obs = grid.observe(cell)
    transitions = []
    for _ in range(steps):
        if policy_params is None or rng.random() < epsilon:
            action = int(rng.integers(N_ACTIONS))
        else:
            action = greedy_action(q_forward(policy_params, obs))
        nxt = step(grid, cell, action)
        nxt_obs = grid.observe(nxt)
        transitions.append(Transition(obs, action, reward(task, nxt), nxt_obs))
        cell, obs = nxt, nxt_obs
    return ExperienceBatch(task.task_id, device_id, tuple(transitions), steps, byte_size)


def running_reward(rewards: Sequence[float], nu: float) -> float:
    """Discounted sum ``sum_h nu^h * rewards[h]`` (h starts at 0)."""
    if not 0.0 <= nu <= 1.0:
        raise ConfigError("nu must lie in [0, 1]")
    total = 0.0
    weight = 1.0
    for r in rewards:
        total += weight * r
        weight *= nu
    return total


def max_running_reward(r_max: float, nu: float, steps: int) -> float:
    """Running reward of a rollout that earns ``r_max`` on every step."""
    return running_reward([r_max] * steps, nu)


def episode_running_reward(batch: ExperienceBatch, nu: float) -> float:
    return running_reward([t.reward for t in batch.transitions], nu)


# Six built-in trajectories sharing only the entry cell, leaving it in three
# directions (two tasks per direction, diverging right after the branch).
# No adjacent cell pair is on more than two trajectories, so "loiter on a
# common stem" cannot tie the optimum for most tasks at once; the two tasks
# sharing a branch are always one training task and one held-out task.
# The held-out task of each pair is the intrinsically harder one (interior
# tail or later branch), so transfer from its trained sibling is partial.
BUILTIN_TRAJECTORIES: dict[int, tuple[Cell, ...]] = {
    1: ((2, 1), (1, 1), (0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6)),
    2: ((2, 1), (2, 2), (2, 3), (2, 4), (2, 5), (2, 6)),
    3: ((2, 1), (2, 2), (3, 2), (3, 3), (3, 4), (3, 5), (3, 6)),
    4: ((2, 1), (1, 1), (1, 2), (1, 3), (1, 4), (1, 5), (1, 6)),
    5: ((2, 1), (3, 1), (3, 2), (3, 3), (4, 3), (4, 4), (4, 5), (4, 6)),
    6: ((2, 1), (3, 1), (4, 1), (4, 2), (4, 3), (4, 4), (4, 5), (4, 6)),
}


def builtin_tasks(grid: GridWorld | None = None, r_max: float = DEFAULT_R_MAX) -> dict[int, TaskSpec]:
    grid = grid or GridWorld()
    return {tid: make_task(grid, tid, traj, r_max) for tid, traj in BUILTIN_TRAJECTORIES.items()}


def tasks_from_dict(doc: dict) -> tuple[GridWorld, dict[int, TaskSpec]]:
    """Build grid and tasks from the JSON task-definition document.

    Schema::

        {"grid": {"width": 5, "height": 8, "entry": [2, 0]},
         "r_max": 10.0,
         "tasks": [{"id": 1, "trajectory": [[2, 0], [2, 1], ...]}, ...]}
    """
    try:
        g = doc["grid"]
        grid = GridWorld(int(g["width"]), int(g["height"]), tuple(g["entry"]))
        r_max = float(doc.get("r_max", DEFAULT_R_MAX))
        tasks = {}
        for entry in doc["tasks"]:
            tid = int(entry["id"])
            tasks[tid] = make_task(grid, tid, [tuple(c) for c in entry["trajectory"]], r_max)
    except KeyError as exc:
        raise ConfigError(f"task document: missing key {exc}") from exc
    if not tasks:
        raise ConfigError("task document: no tasks defined")
    return grid, tasks


def load_tasks(path: str | Path) -> tuple[GridWorld, dict[int, TaskSpec]]:
    with open(path, encoding="utf-8") as fh:
        return tasks_from_dict(json.load(fh))


def tasks_to_dict(grid: GridWorld, tasks: dict[int, TaskSpec]) -> dict:
    return {
        "grid": {"width": grid.width, "height": grid.height, "entry": list(grid.entry_cell)},
        "r_max": next(iter(tasks.values())).r_max if tasks else DEFAULT_R_MAX,
        "tasks": [
            {"id": tid, "trajectory": [list(c) for c in task.trajectory]}
            for tid, task in sorted(tasks.items())
        ],
    }
