"""
Gridworld with rooms, doors and moving obstacles.

The grid is a fixed skeleton of room_rows x room_cols rooms separated by
one-cell walls, with one candidate door in the middle of every shared wall.
A task samples which doors are open, the agent start, the goal and one
obstacle per index i confined to room i mod n_rooms. Obstacles wander among
the interior cells of their room that do not touch a door; the agent can
remove an obstacle when standing next to it and is sent back to its start
cell when it collides with one.
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .core import ACTION, STATE, Assignment, ConfigError, FactoredMdp, Task, VariableSpec

logger = logging.getLogger(__name__)

MOVES = ("none", "up", "down", "left", "right")
_DELTAS = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}

CONTEXT_VARIABLES = ("agent_room",)
N_TRAIN = 50
N_TEST = 10
CSI_BUDGET = (50, 50)


@dataclass(frozen=True)
class GridworldConfig:
    room_rows: int = 2
    room_cols: int = 2
    room_width: int = 3
    room_height: int = 3
    n_obstacles: int = 3
    obstacle_move_prob: float = 1.0
    goal_reward: float = 1000.0
    gamma: float = 0.99
    horizon: int = 25
    door_open_prob: float = 0.75
    max_retries: int = 100
    # pin the start or goal to one room; None samples it from the whole grid
    start_room: Optional[int] = None
    goal_room: Optional[int] = None

    def __post_init__(self):
        if min(self.room_rows, self.room_cols, self.room_width, self.room_height) < 1:
            raise ConfigError("room counts and room sizes must be positive")
        if self.n_obstacles < 0:
            raise ConfigError("n_obstacles must be non-negative")
        if not 0.0 <= self.obstacle_move_prob <= 1.0:
            raise ConfigError("obstacle_move_prob must lie in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.horizon < 1 or self.max_retries < 1:
            raise ConfigError("horizon and max_retries must be positive")
        if self.goal_reward <= 0:
            raise ConfigError("goal_reward must be positive")
        if not 0.0 <= self.door_open_prob <= 1.0:
            raise ConfigError("door_open_prob must lie in [0, 1]")
        for name in ("start_room", "goal_room"):
            room = getattr(self, name)
            if room is not None and not 0 <= room < self.n_rooms:
                raise ConfigError(f"{name} must be a room index below {self.n_rooms}, got {room}")
        if self.start_room is not None and self.start_room == self.goal_room \
                and self.room_width * self.room_height < 2:
            raise ConfigError("start and goal cannot share a one-cell room")

    @property
    def width(self) -> int:
        return self.room_cols * (self.room_width + 1) + 1

    @property
    def height(self) -> int:
        return self.room_rows * (self.room_height + 1) + 1

    @property
    def n_rooms(self) -> int:
        return self.room_rows * self.room_cols

    def obstacle_room(self, i: int) -> int:
        return i % self.n_rooms


@dataclass(frozen=True)
class Door:
    cell: int
    rooms: Tuple[int, int]


class GridGeometry:
    """Cell indices (y * width + x), rooms, doors and obstacle ranges of a config."""

    def __init__(self, cfg: GridworldConfig):
        self.cfg = cfg
        self.width, self.height = cfg.width, cfg.height
        self.room_cells: List[List[int]] = []
        self.room_of: Dict[int, int] = {}
        for r in range(cfg.room_rows):
            for c in range(cfg.room_cols):
                k = r * cfg.room_cols + c
                x0, y0 = c * (cfg.room_width + 1) + 1, r * (cfg.room_height + 1) + 1
                cells = [self.cell(x, y) for y in range(y0, y0 + cfg.room_height)
                         for x in range(x0, x0 + cfg.room_width)]
                self.room_cells.append(cells)
                for cell in cells:
                    self.room_of[cell] = k
        self.interior_cells = sorted(self.room_of)

        self.doors: List[Door] = []
        for r in range(cfg.room_rows):
            for c in range(cfg.room_cols):
                k = r * cfg.room_cols + c
                if c + 1 < cfg.room_cols:
                    x = (c + 1) * (cfg.room_width + 1)
                    y = r * (cfg.room_height + 1) + 1 + cfg.room_height // 2
                    self.doors.append(Door(self.cell(x, y), (k, k + 1)))
                if r + 1 < cfg.room_rows:
                    x = c * (cfg.room_width + 1) + 1 + cfg.room_width // 2
                    y = (r + 1) * (cfg.room_height + 1)
                    self.doors.append(Door(self.cell(x, y), (k, k + cfg.room_cols)))
        # a door cell counts as part of the lower-index room
        for door in self.doors:
            self.room_of[door.cell] = min(door.rooms)
        self.door_cells = {door.cell for door in self.doors}
        self.free_cells = sorted(self.room_of)

        self.obstacle_cells: List[List[int]] = []
        for cells in self.room_cells:
            allowed = [cell for cell in cells
                       if not any(n in self.door_cells for n in self._raw_neighbors(cell))]
            self.obstacle_cells.append(allowed)
        for i in range(cfg.n_obstacles):
            if not self.obstacle_cells[cfg.obstacle_room(i)]:
                raise ConfigError(f"room {cfg.obstacle_room(i)} has no cell an obstacle may occupy")

    def cell(self, x: int, y: int) -> int:
        return y * self.width + x

    def xy(self, cell: int) -> Tuple[int, int]:
        return cell % self.width, cell // self.width

    def _raw_neighbors(self, cell: int) -> List[int]:
        x, y = self.xy(cell)
        out = []
        for dx, dy in _DELTAS.values():
            nx_, ny_ = x + dx, y + dy
            if 0 <= nx_ < self.width and 0 <= ny_ < self.height:
                out.append(self.cell(nx_, ny_))
        return out

    def step(self, cell: int, move: str) -> Optional[int]:
        if move == "none":
            return cell
        x, y = self.xy(cell)
        dx, dy = _DELTAS[move]
        nx_, ny_ = x + dx, y + dy
        if not (0 <= nx_ < self.width and 0 <= ny_ < self.height):
            return None
        return self.cell(nx_, ny_)

    def adjacent(self, a: int, b: int) -> bool:
        (ax, ay), (bx, by) = self.xy(a), self.xy(b)
        return abs(ax - bx) + abs(ay - by) == 1

    def obstacle_neighbors(self, room: int, cell: int) -> List[int]:
        allowed = set(self.obstacle_cells[room])
        return [n for n in self._raw_neighbors(cell) if n in allowed]

    def room_graph(self, open_doors: Sequence[bool]) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.cfg.n_rooms))
        graph.add_edges_from(door.rooms for door, is_open in zip(self.doors, open_doors) if is_open)
        return graph

    def cell_graph(self, open_doors: Sequence[bool]) -> nx.Graph:
        passable = set(self.interior_cells) | {d.cell for d, o in zip(self.doors, open_doors) if o}
        graph = nx.Graph()
        graph.add_nodes_from(passable)
        for cell in passable:
            for n in self._raw_neighbors(cell):
                if n in passable:
                    graph.add_edge(cell, n)
        return graph


@functools.lru_cache(maxsize=32)
def grid_geometry(cfg: GridworldConfig) -> GridGeometry:
    return GridGeometry(cfg)


def gridworld_variables(cfg: GridworldConfig) -> Tuple[Tuple[VariableSpec, ...], Tuple[VariableSpec, ...]]:
    geo = grid_geometry(cfg)
    states = [
        VariableSpec("agent_pos", STATE, geo.free_cells),
        VariableSpec("agent_room", STATE, range(cfg.n_rooms)),
        VariableSpec("agent_start", STATE, geo.interior_cells),
        VariableSpec("goal_pos", STATE, geo.interior_cells),
    ]
    for i in range(cfg.n_obstacles):
        room = cfg.obstacle_room(i)
        states += [
            VariableSpec(f"obs{i}_pos", STATE, geo.obstacle_cells[room]),
            VariableSpec(f"obs{i}_room", STATE, (room,)),
            VariableSpec(f"obs{i}_alive", STATE, (0, 1)),
        ]
    actions = [VariableSpec("move", ACTION, MOVES)]
    actions += [VariableSpec(f"remove_{i}", ACTION, (0, 1)) for i in range(cfg.n_obstacles)]
    return tuple(states), tuple(actions)


def gridworld_actions(cfg: GridworldConfig) -> Tuple[Assignment, ...]:
    """No-op first, then the four moves, then one removal per obstacle."""
    idle = {f"remove_{i}": 0 for i in range(cfg.n_obstacles)}
    out = [Assignment({"move": m, **idle}) for m in MOVES]
    for i in range(cfg.n_obstacles):
        out.append(Assignment({"move": "none", **idle, f"remove_{i}": 1}))
    return tuple(out)


class GridworldDynamics:
    """Transition, reward and consistency functions for one door layout."""

    def __init__(self, cfg: GridworldConfig, open_doors: Tuple[bool, ...]):
        self.cfg = cfg
        self.geo = grid_geometry(cfg)
        if len(open_doors) != len(self.geo.doors):
            raise ConfigError(f"expected {len(self.geo.doors)} door flags, got {len(open_doors)}")
        self.open_doors = tuple(bool(d) for d in open_doors)
        self.closed_doors = {d.cell for d, o in zip(self.geo.doors, self.open_doors) if not o}
        self.n = cfg.n_obstacles

    def passable(self, cell: Optional[int]) -> bool:
        return cell is not None and cell in self.geo.room_of and cell not in self.closed_doors

    def valid_state(self, values: Mapping[str, Any]) -> bool:
        pos = values["agent_pos"]
        if pos in self.closed_doors:
            return False
        return self.geo.room_of[pos] == values["agent_room"]

    def reward(self, s: Assignment) -> float:
        return self.cfg.goal_reward if s["agent_pos"] == s["goal_pos"] else 0.0

    def terminal(self, s: Assignment) -> bool:
        return s["agent_pos"] == s["goal_pos"]

    def _target(self, s: Assignment, a: Assignment) -> int:
        nxt = self.geo.step(s["agent_pos"], a["move"])
        return nxt if self.passable(nxt) else s["agent_pos"]

    def _alive_after(self, s: Assignment, a: Assignment) -> List[int]:
        pos = s["agent_pos"]
        alive = []
        for i in range(self.n):
            flag = s[f"obs{i}_alive"]
            if flag and a[f"remove_{i}"] and self.geo.adjacent(pos, s[f"obs{i}_pos"]):
                flag = 0
            alive.append(flag)
        return alive

    def _options(self, s: Assignment, i: int, alive: int) -> List[Tuple[int, float]]:
        """Next positions of obstacle i, staying first."""
        pos = s[f"obs{i}_pos"]
        p = self.cfg.obstacle_move_prob
        if not alive or p == 0.0:
            return [(pos, 1.0)]
        options = [pos] + self.geo.obstacle_neighbors(self.cfg.obstacle_room(i), pos)
        share = p / len(options)
        return [(cell, share + (1.0 - p if k == 0 else 0.0)) for k, cell in enumerate(options)]

    def _collides(self, start: int, target: int, old: int, new: int) -> bool:
        return new == target or (target != start and old == target and new == start)

    def _resolve(self, s: Assignment, target: int, alive: Sequence[int], positions: Sequence[int]) -> Assignment:
        start = s["agent_pos"]
        hit = any(alive[i] and self._collides(start, target, s[f"obs{i}_pos"], positions[i])
                  for i in range(self.n))
        pos = s["agent_start"] if hit else target
        changes: Dict[str, Any] = {"agent_pos": pos, "agent_room": self.geo.room_of[pos]}
        for i in range(self.n):
            changes[f"obs{i}_pos"] = positions[i]
            changes[f"obs{i}_alive"] = alive[i]
        return s.updated(changes)

    def _likely_cell(self, s: Assignment, i: int, alive: int) -> int:
        """A most likely next cell of obstacle i.

        Equally likely moves are told apart by a fixed hash of the obstacle,
        its cell and the agent's cell, so the determinized obstacles keep
        moving and their paths depend on where the agent went.
        """
        options = self._options(s, i, alive)
        top = max(p for _, p in options)
        tied = [cell for cell, p in options if p >= top - 1e-12]
        if len(tied) == 1:
            return tied[0]
        key = (i * 73856093) ^ (s[f"obs{i}_pos"] * 19349663) ^ (s["agent_pos"] * 83492791)
        return tied[key % len(tied)]

    def most_likely(self, s: Assignment, a: Assignment) -> Assignment:
        alive = self._alive_after(s, a)
        positions = [self._likely_cell(s, i, alive[i]) for i in range(self.n)]
        return self._resolve(s, self._target(s, a), alive, positions)

    def transition(self, s: Assignment, a: Assignment, rng: Optional[np.random.Generator]) -> Assignment:
        """Samples obstacle moves from `rng`; without one, returns `most_likely`."""
        if rng is None:
            return self.most_likely(s, a)
        alive = self._alive_after(s, a)
        # one draw per obstacle and step, moving or not
        draws = rng.random(self.n)
        positions = []
        for i in range(self.n):
            options = self._options(s, i, alive[i])
            chosen, acc = options[-1][0], 0.0
            for cell, p in options:
                acc += p
                if draws[i] < acc:
                    chosen = cell
                    break
            positions.append(chosen)
        return self._resolve(s, self._target(s, a), alive, positions)

    def transition_dist(self, s: Assignment, a: Assignment) -> Dict[Assignment, float]:
        alive = self._alive_after(s, a)
        target = self._target(s, a)
        per_obstacle = [self._options(s, i, alive[i]) for i in range(self.n)]
        dist: Dict[Assignment, float] = {}
        for combo in itertools.product(*per_obstacle):
            p = math.prod(q for _, q in combo)
            if p <= 0.0:
                continue
            outcome = self._resolve(s, target, alive, [cell for cell, _ in combo])
            dist[outcome] = dist.get(outcome, 0.0) + p
        return dist

    def transition_marginals(self, s: Assignment, a: Assignment) -> Dict[str, Dict[Any, float]]:
        """Per-variable successor marginals without enumerating the joint outcome space."""
        alive = self._alive_after(s, a)
        start, target = s["agent_pos"], self._target(s, a)
        out: Dict[str, Dict[Any, float]] = {}
        safe = 1.0
        for i in range(self.n):
            options = self._options(s, i, alive[i])
            out[f"obs{i}_pos"] = {}
            for cell, p in options:
                out[f"obs{i}_pos"][cell] = out[f"obs{i}_pos"].get(cell, 0.0) + p
            out[f"obs{i}_alive"] = {alive[i]: 1.0}
            out[f"obs{i}_room"] = {s[f"obs{i}_room"]: 1.0}
            if alive[i]:
                old = s[f"obs{i}_pos"]
                hit = sum(p for cell, p in options if self._collides(start, target, old, cell))
                safe *= 1.0 - hit
        agent: Dict[int, float] = {}
        for cell, p in ((target, safe), (s["agent_start"], 1.0 - safe)):
            if p > 0.0:
                agent[cell] = agent.get(cell, 0.0) + p
        out["agent_pos"] = agent
        rooms: Dict[int, float] = {}
        for cell, p in agent.items():
            room = self.geo.room_of[cell]
            rooms[room] = rooms.get(room, 0.0) + p
        out["agent_room"] = rooms
        out["agent_start"] = {s["agent_start"]: 1.0}
        out["goal_pos"] = {s["goal_pos"]: 1.0}
        return out


@functools.lru_cache(maxsize=64)
def build_gridworld_mdp(cfg: GridworldConfig, open_doors: Tuple[bool, ...]) -> FactoredMdp:
    dyn = GridworldDynamics(cfg, open_doors)
    state_vars, action_vars = gridworld_variables(cfg)
    layout = "".join("1" if d else "0" for d in dyn.open_doors)
    return FactoredMdp(
        state_vars=state_vars,
        action_vars=action_vars,
        transition=dyn.transition,
        reward=dyn.reward,
        reward_vars=frozenset({"agent_pos", "goal_pos"}),
        horizon=cfg.horizon,
        gamma=cfg.gamma,
        transition_dist=dyn.transition_dist,
        transition_marginals=dyn.transition_marginals,
        most_likely=dyn.most_likely,
        action_list=gridworld_actions(cfg),
        terminal=dyn.terminal,
        valid_state=dyn.valid_state,
        max_reward=cfg.goal_reward,
        deterministic=cfg.obstacle_move_prob == 0.0 or cfg.n_obstacles == 0,
        name=f"gridworld[{layout}]",
    )


def reference_mdp(cfg: GridworldConfig) -> FactoredMdp:
    """All doors open; CSIs learned here hold for every layout of the skeleton."""
    return build_gridworld_mdp(cfg, tuple(True for _ in grid_geometry(cfg).doors))


@dataclass(frozen=True)
class GridworldLayout:
    open_doors: Tuple[bool, ...]
    start: int
    goal: int
    obstacles: Tuple[int, ...]

    def as_params(self) -> Dict[str, Any]:
        return {"open_doors": [int(d) for d in self.open_doors], "start": self.start,
                "goal": self.goal, "obstacles": list(self.obstacles)}

    @classmethod
    def from_params(cls, params: Mapping[str, Any]) -> "GridworldLayout":
        return cls(tuple(bool(d) for d in params["open_doors"]), int(params["start"]),
                   int(params["goal"]), tuple(int(o) for o in params["obstacles"]))


def initial_state(cfg: GridworldConfig, layout: GridworldLayout) -> Assignment:
    geo = grid_geometry(cfg)
    values: Dict[str, Any] = {
        "agent_pos": layout.start,
        "agent_room": geo.room_of[layout.start],
        "agent_start": layout.start,
        "goal_pos": layout.goal,
    }
    for i, cell in enumerate(layout.obstacles):
        values[f"obs{i}_pos"] = cell
        values[f"obs{i}_room"] = cfg.obstacle_room(i)
        values[f"obs{i}_alive"] = 1
    return Assignment(values)


def _grids(cfg: GridworldConfig, open_doors: Sequence[bool], agent: int, goal: int,
           obstacles: Sequence[int]) -> np.ndarray:
    geo = grid_geometry(cfg)
    size = cfg.width * cfg.height
    walls = np.ones(size)
    walls[geo.interior_cells] = 0.0
    for door, is_open in zip(geo.doors, open_doors):
        if is_open:
            walls[door.cell] = 0.0
    obs = np.zeros(size)
    obs[list(obstacles)] = 1.0
    agent_grid = np.zeros(size)
    agent_grid[agent] = 1.0
    goal_grid = np.zeros(size)
    goal_grid[goal] = 1.0
    return np.concatenate([walls, obs, agent_grid, goal_grid])


def gridworld_features(cfg: GridworldConfig, layout: GridworldLayout) -> np.ndarray:
    """Flattened wall, obstacle, agent and goal occupancy grids."""
    return _grids(cfg, layout.open_doors, layout.start, layout.goal, layout.obstacles)


def state_features(task: Task, s: Assignment) -> np.ndarray:
    cfg: GridworldConfig = task.params["_config"]
    layout = GridworldLayout.from_params(task.params)
    alive = [s[f"obs{i}_pos"] for i in range(cfg.n_obstacles) if s[f"obs{i}_alive"]]
    return _grids(cfg, layout.open_doors, s["agent_pos"], s["goal_pos"], alive)


def make_task(cfg: GridworldConfig, task_id: str, layout: GridworldLayout) -> Task:
    mdp = build_gridworld_mdp(cfg, layout.open_doors)
    params = layout.as_params()
    params["_config"] = cfg
    return Task(task_id, initial_state(cfg, layout), gridworld_features(cfg, layout), mdp, params)


def task_from_params(cfg: GridworldConfig, task_id: str, params: Mapping[str, Any]) -> Task:
    return make_task(cfg, task_id, GridworldLayout.from_params(params))


def gridworld_sample_task(cfg: GridworldConfig, rng: np.random.Generator, task_id: str = "gridworld-0") -> Task:
    """Samples door layout, start, goal and obstacle placements; retries layouts that strand the goal."""
    geo = grid_geometry(cfg)
    cells = geo.interior_cells
    if len(cells) < 2:
        raise ConfigError("the grid needs at least two interior cells")
    for attempt in range(cfg.max_retries):
        open_doors = tuple(bool(rng.random() < cfg.door_open_prob) for _ in geo.doors)
        if not nx.is_connected(geo.room_graph(open_doors)):
            continue
        if cfg.start_room is None and cfg.goal_room is None:
            start, goal = (cells[int(k)] for k in rng.choice(len(cells), size=2, replace=False))
        else:
            starts = cells if cfg.start_room is None else geo.room_cells[cfg.start_room]
            start = starts[int(rng.integers(len(starts)))]
            goals = [c for c in (cells if cfg.goal_room is None else geo.room_cells[cfg.goal_room]) if c != start]
            goal = goals[int(rng.integers(len(goals)))]
        used = {start, goal}
        obstacles = []
        for i in range(cfg.n_obstacles):
            candidates = [c for c in geo.obstacle_cells[cfg.obstacle_room(i)] if c not in used]
            if not candidates:
                break
            cell = candidates[int(rng.integers(len(candidates)))]
            used.add(cell)
            obstacles.append(cell)
        if len(obstacles) < cfg.n_obstacles:
            continue
        if not nx.has_path(geo.cell_graph(open_doors), start, goal):
            continue
        logger.debug(f"Task {task_id}: layout found after {attempt + 1} attempt(s)")
        return make_task(cfg, task_id, GridworldLayout(open_doors, start, goal, tuple(obstacles)))
    raise ConfigError(f"no valid gridworld layout after {cfg.max_retries} attempts")


def state_space_size(cfg: GridworldConfig) -> int:
    """Reachable-state count for fixed start and goal: agent cells times obstacle (cell, alive) pairs."""
    geo = grid_geometry(cfg)
    size = len(geo.free_cells)
    for i in range(cfg.n_obstacles):
        size *= 2 * len(geo.obstacle_cells[cfg.obstacle_room(i)])
    return size
