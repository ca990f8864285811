"""2D grid mazes, segment collision tests, an A* expert, and kinematic rollouts.

Cell ``(r, c)`` covers ``[c*s, (c+1)*s] x [r*s, (r+1)*s]`` in world
coordinates, with ``s`` the cell size. Walls are closed rectangles, so a
segment that merely touches a wall face counts as a collision.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import NumericError, PlanningError, ShapeError

BUILTIN_MAZES = ("medium", "large")


@dataclass(frozen=True)
class Observation:
    """Agent and goal positions in normalized coordinates."""

    agent_pos: np.ndarray
    goal_pos: np.ndarray

    def vector(self):
        return np.concatenate([np.asarray(self.agent_pos, dtype=np.float64),
                               np.asarray(self.goal_pos, dtype=np.float64)])


@dataclass
class MazeWorld:
    cell_grid: np.ndarray
    cell_size: float = 1.0
    name: str = "custom"
    wall_inflation: float = 0.0
    walls: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        grid = np.asarray(self.cell_grid, dtype=bool)
        if grid.ndim != 2 or min(grid.shape) < 3:
            raise ShapeError("cell grid must be 2D and at least 3x3")
        if not (grid[0].all() and grid[-1].all() and grid[:, 0].all() and grid[:, -1].all()):
            raise ValueError("maze boundary must be walls")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell_grid = grid
        rows, cols = np.nonzero(grid)
        s, e = self.cell_size, self.wall_inflation
        # (x0, y0, x1, y1) per wall cell
        self.walls = np.stack([cols * s - e, rows * s - e, (cols + 1) * s + e, (rows + 1) * s + e],
                              axis=1).astype(np.float64)

    @property
    def shape(self):
        return self.cell_grid.shape

    @property
    def bounds(self):
        """World box ``(xmin, ymin, xmax, ymax)``."""
        h, w = self.cell_grid.shape
        return (0.0, 0.0, w * self.cell_size, h * self.cell_size)

    def cell_of(self, p):
        return int(p[1] // self.cell_size), int(p[0] // self.cell_size)

    def cell_center(self, rc):
        return np.array([(rc[1] + 0.5) * self.cell_size, (rc[0] + 0.5) * self.cell_size])

    def free_cells(self):
        return [tuple(rc) for rc in np.argwhere(~self.cell_grid)]

    def point_in_wall(self, p):
        p = np.asarray(p, dtype=np.float64)
        w = self.walls
        return bool(np.any((w[:, 0] <= p[0]) & (p[0] <= w[:, 2]) & (w[:, 1] <= p[1]) & (p[1] <= w[:, 3])))

    def clearance(self, p):
        """Euclidean distance from ``p`` to the nearest wall rectangle (0 inside)."""
        w = self.walls
        dx = np.maximum(np.maximum(w[:, 0] - p[0], p[0] - w[:, 2]), 0.0)
        dy = np.maximum(np.maximum(w[:, 1] - p[1], p[1] - w[:, 3]), 0.0)
        return float(np.sqrt(dx * dx + dy * dy).min())

    def to_text(self):
        rows = ["".join("#" if c else "." for c in row) for row in self.cell_grid]
        return f"cell_size={self.cell_size!r}\n" + "\n".join(rows) + "\n"


def parse_maze(text, name="custom", wall_inflation=0.0):
    """Parse the text asset format: ``cell_size=<float>`` then ``#``/``.`` rows."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("cell_size="):
        raise ValueError("maze asset must start with a 'cell_size=<float>' header")
    cell_size = float(lines[0].split("=", 1)[1])
    rows = lines[1:]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("maze rows must be non-empty and equally long")
    bad = set("".join(rows)) - set("#.")
    if bad:
        raise ValueError(f"unexpected maze characters {sorted(bad)}")
    grid = np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)
    return MazeWorld(grid, cell_size, name, wall_inflation)


def load_maze(source, wall_inflation=0.0):
    """Load a builtin maze by name (``medium``/``large``) or a text asset by path."""
    if source in BUILTIN_MAZES:
        text = resources.files("guidedflow.mazes").joinpath(f"{source}.txt").read_text()
        return parse_maze(text, f"{source}-like", wall_inflation)
    return parse_maze(Path(source).read_text(), "custom", wall_inflation)


def open_arena(n, cell_size=1.0):
    grid = np.zeros((n, n), dtype=bool)
    grid[0] = grid[-1] = grid[:, 0] = grid[:, -1] = True
    return MazeWorld(grid, cell_size, "custom")


# -- collision ---------------------------------------------------------------

def segments_collide(maze, P, Q, walls=None):
    """Vectorized slab test: one boolean per segment ``P[i] -> Q[i]``."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    w = maze.walls if walls is None else walls
    d = Q - P
    lo = np.zeros((P.shape[0], w.shape[0]))
    hi = np.ones_like(lo)
    for k in range(2):
        p = P[:, k:k + 1]
        dk = d[:, k:k + 1]
        wmin = w[None, :, k]
        wmax = w[None, :, k + 2]
        parallel = np.abs(dk) < 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (wmin - p) / dk
            t2 = (wmax - p) / dk
        tmin = np.where(parallel, -np.inf, np.minimum(t1, t2))
        tmax = np.where(parallel, np.inf, np.maximum(t1, t2))
        outside = parallel & ((p < wmin) | (p > wmax))
        lo = np.maximum(lo, tmin)
        hi = np.where(outside, -np.inf, np.minimum(hi, tmax))
    return np.any(lo <= hi, axis=1)


def segment_collides(maze, p, q):
    """True iff the closed segment ``pq`` meets any wall rectangle."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise NumericError("segment endpoints must be finite")
    return bool(segments_collide(maze, p, q)[0])


def path_collisions(maze, points, walls=None):
    """Per-segment collision flags for a polyline given as an ``(n, 2)`` array."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return np.zeros(0, dtype=bool)
    return segments_collide(maze, points[:-1], points[1:], walls)


# -- sampling and planning ---------------------------------------------------

def sample_free_pose(maze, rng, min_goal_separation=2.0, clearance=0.25, max_tries=100_000):
    """Rejection-sample a ``(start, goal)`` pair in free space.

    ``clearance`` is a fraction of the cell size; ``min_goal_separation`` is
    in world units.
    """
    x0, y0, x1, y1 = maze.bounds
    need = clearance * maze.cell_size
    pts = []
    for _ in range(max_tries):
        p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        if maze.cell_grid[maze.cell_of(p)] or maze.clearance(p) < need:
            continue
        if pts and np.linalg.norm(p - pts[0]) < min_goal_separation:
            continue
        pts.append(p)
        if len(pts) == 2:
            return pts[0], pts[1]
    raise PlanningError("pose sampling budget exhausted")


_MOVES = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]


def astar_cells(maze, start_cell, goal_cell):
    """A* over free cells, 8-connected, no diagonal corner cutting."""
    grid = maze.cell_grid
    H, W = grid.shape
    if grid[start_cell] or grid[goal_cell]:
        raise PlanningError("start or goal cell is a wall")

    def h(c):
        return float(np.hypot(c[0] - goal_cell[0], c[1] - goal_cell[1]))

    frontier = [(h(start_cell), 0.0, start_cell)]
    came = {start_cell: None}
    cost = {start_cell: 0.0}
    while frontier:
        _, g, cur = heapq.heappop(frontier)
        if cur == goal_cell:
            path = [cur]
            while came[path[-1]] is not None:
                path.append(came[path[-1]])
            return path[::-1]
        if g > cost[cur]:
            continue
        for dr, dc in _MOVES:
            nr, nc = cur[0] + dr, cur[1] + dc
            if not (0 <= nr < H and 0 <= nc < W) or grid[nr, nc]:
                continue
            if dr and dc and (grid[cur[0] + dr, cur[1]] or grid[cur[0], cur[1] + dc]):
                continue
            ng = g + (1.4142135623730951 if dr and dc else 1.0)
            nxt = (nr, nc)
            if ng < cost.get(nxt, np.inf):
                cost[nxt] = ng
                came[nxt] = cur
                heapq.heappush(frontier, (ng + h(nxt), ng, nxt))
    raise PlanningError(f"no path from cell {start_cell} to {goal_cell}")


def polyline_length(points):
    points = np.asarray(points)
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def shortcut(maze, points, margin):
    """Greedy shortcutting: from each vertex jump to the farthest vertex
    reachable by a straight segment that clears walls inflated by ``margin``.
    Adjacent vertices are always accepted.
    """
    w = maze.walls + np.array([-margin, -margin, margin, margin])
    out = [points[0]]
    i, n = 0, len(points)
    while i < n - 1:
        js = np.arange(n - 1, i + 1, -1)
        hits = segments_collide(maze, np.repeat(points[i][None], len(js), axis=0), points[js], w)
        free = js[~hits]
        j = int(free[0]) if len(free) else i + 1
        out.append(points[j])
        i = j
    return np.array(out)


def resample_polyline(points, n):
    """``n`` points equally spaced in arc length; endpoints kept exactly."""
    points = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return np.repeat(points[:1], n, axis=0)
    targets = np.linspace(0.0, s[-1], n)
    out = np.stack([np.interp(targets, s, points[:, k]) for k in range(points.shape[1])], axis=1)
    out[0] = points[0]
    out[-1] = points[-1]
    return out


@dataclass
class Demonstration:
    start: np.ndarray
    goal: np.ndarray
    waypoints: np.ndarray  # (horizon, 2), world coordinates


def grid_path(maze, start, goal):
    """Start, the centres of the intermediate A* cells, goal."""
    cells = astar_cells(maze, maze.cell_of(start), maze.cell_of(goal))
    mids = [maze.cell_center(c) for c in cells[1:-1]]
    return np.array([start, *mids, goal], dtype=np.float64)


def plan_expert(maze, start, goal, horizon=80, margins=(0.3, 0.2, 0.1, 0.0)):
    """Expert demonstration: A* cell path, shortcut smoothing, arc-length resampling.

    Smoothing keeps a clearance margin (fraction of the cell size) so the
    expert does not graze wall corners; smaller margins are tried if the
    resampled path would clip a wall.
    """
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if maze.point_in_wall(start) or maze.point_in_wall(goal):
        raise PlanningError("start or goal lies inside a wall")
    raw = grid_path(maze, start, goal)
    for m in margins:
        smooth = shortcut(maze, raw, m * maze.cell_size)
        wp = resample_polyline(smooth, horizon)
        if not path_collisions(maze, wp).any():
            return Demonstration(start, goal, wp)
    # fall back to resampling the unsmoothed path
    wp = resample_polyline(raw, horizon)
    if path_collisions(maze, wp).any():
        raise PlanningError("resampled expert path collides; horizon too short for this maze")
    return Demonstration(start, goal, wp)


# -- normalization and demo sets ---------------------------------------------

@dataclass(frozen=True)
class Normalization:
    """Per-dimension affine map ``world = scale * normalized + offset``."""

    scale: tuple
    offset: tuple

    @classmethod
    def from_bounds(cls, bounds):
        x0, y0, x1, y1 = bounds
        return cls(((x1 - x0) / 2.0, (y1 - y0) / 2.0), ((x1 + x0) / 2.0, (y1 + y0) / 2.0))

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - np.asarray(self.offset)) / np.asarray(self.scale)

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * np.asarray(self.scale) + np.asarray(self.offset)

    def coefficients(self):
        return (*self.scale, *self.offset)


@dataclass
class DemoSet:
    demos: list
    maze: MazeWorld
    normalization: Normalization

    @property
    def horizon(self):
        return self.demos[0].waypoints.shape[0]

    @property
    def dim(self):
        return self.demos[0].waypoints.shape[1]

    def __len__(self):
        return len(self.demos)

    def training_arrays(self):
        """Normalized ``(obs, targets)``: obs ``(n, 4)``, targets ``(n, horizon, 2)``."""
        nz = self.normalization.normalize
        obs = np.stack([np.concatenate([nz(d.start), nz(d.goal)]) for d in self.demos])
        targets = np.stack([nz(d.waypoints) for d in self.demos])
        return obs, targets

    def all_waypoints(self, normalized=True):
        pts = np.concatenate([d.waypoints for d in self.demos])
        return self.normalization.normalize(pts) if normalized else pts


def gen_demoset(maze, count, horizon=80, seed=0, min_goal_separation=2.0, clearance=0.25):
    """``count`` expert demos with per-index seeds; normalization from the maze bounds."""
    if count < 1:
        raise ValueError("count must be >= 1")
    demos = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        try:
            start, goal = sample_free_pose(maze, rng, min_goal_separation, clearance)
            demos.append(plan_expert(maze, start, goal, horizon))
        except PlanningError as exc:
            raise PlanningError(f"demo {i} (seed {seed}): {exc}") from exc
    return DemoSet(demos, maze, Normalization.from_bounds(maze.bounds))


def check_demonstration(maze, demo, horizon):
    """Raise ``ValueError`` if a demo breaks its invariants."""
    wp = demo.waypoints
    if wp.shape != (horizon, 2):
        raise ValueError(f"waypoints shape {wp.shape}, expected ({horizon}, 2)")
    if np.abs(wp[0] - demo.start).max() > 1e-9 or np.abs(wp[-1] - demo.goal).max() > 1e-9:
        raise ValueError("demo endpoints do not match start/goal")
    if path_collisions(maze, wp).any():
        raise ValueError("demo path collides with a wall")


# -- rollout -----------------------------------------------------------------

@dataclass
class EpisodeResult:
    trajectory: np.ndarray
    success: bool
    collided: bool
    first_collision_index: int | None = None


def rollout(maze, policy, start, goal, norm, rng, success_radius=None, replan_every=None):
    """Execute a policy open-loop (or with receding-horizon replanning).

    ``policy(obs, rng)`` returns a normalized ``(T, 2)`` series. Waypoints are
    reached exactly; segment ``i`` joins executed point ``i-1`` (the start for
    ``i = 0``) to waypoint ``i``.
    """
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if success_radius is None:
        success_radius = 0.5 * maze.cell_size
    goal_n = norm.normalize(goal)
    pos = start
    executed = []
    total = None
    while total is None or len(executed) < total:
        A = np.asarray(policy(Observation(norm.normalize(pos), goal_n), rng), dtype=np.float64)
        if not np.all(np.isfinite(A)):
            raise NumericError("policy returned non-finite actions")
        if total is None:
            total = A.shape[0]
        take = A.shape[0] if not replan_every else min(replan_every, total - len(executed))
        chunk = norm.denormalize(A[:take])
        executed.extend(chunk)
        pos = chunk[-1]
    traj = np.array(executed)
    hits = path_collisions(maze, np.vstack([start[None], traj]))
    first = int(np.argmax(hits)) if hits.any() else None
    success = bool(np.linalg.norm(traj[-1] - goal) <= success_radius)
    return EpisodeResult(traj, success, first is not None, first)
