"""Seedable partially observable gridworld for object-goal navigation.

Cells are 0.5 m squares; the agent moves cell to cell, turns in 90 degree
increments, and pitches its camera in {-30, 0, +30}.  Observations are
synthesized detections (class, bbox, confidence) plus an egocentric local
occupancy crop.  All visibility geometry uses exact integer arithmetic so
rotating the whole world by 90 degrees changes nothing.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ContractError, GenerationError, TaskError
from .nn import RngStream

CELL_METERS = 0.5
HEADINGS = (0, 90, 180, 270)
PITCHES = (-30, 0, 30)
HEIGHTS = ("low", "mid", "high")
HEIGHT_PITCH = {"low": -30, "mid": 0, "high": 30}
VIEW_RANGE_CELLS = 5
SUCCESS_RADIUS_METERS = 1.5
_RANGE_SQ = VIEW_RANGE_CELLS * VIEW_RANGE_CELLS
_SUCCESS_SQ = 9  # (1.5 m / 0.5 m per cell) squared

FREE, OBSTACLE = 0, 1

# heading 0 faces +x; 90 faces +y; left of heading 0 is heading 90
HEADING_VEC = {0: (1, 0), 90: (0, 1), 180: (-1, 0), 270: (0, -1)}

LOCAL_GRID_CHANNELS = 8  # occupancy, distance, 6 hashed class-presence planes
LOCAL_GRID_SIZE = 7
_LOCAL_REACH = LOCAL_GRID_SIZE // 2
_CLASS_PLANES = LOCAL_GRID_CHANNELS - 2

_DIST_PLANE = np.zeros((LOCAL_GRID_SIZE, LOCAL_GRID_SIZE))
for _i in range(LOCAL_GRID_SIZE):
    for _j in range(LOCAL_GRID_SIZE):
        _f, _l = _LOCAL_REACH - _i, _LOCAL_REACH - _j
        _DIST_PLANE[_i, _j] = math.hypot(_f, _l) / math.hypot(_LOCAL_REACH, _LOCAL_REACH)
_DIST_PLANE.setflags(write=False)


class Action(IntEnum):
    MOVE_AHEAD = 0
    ROTATE_LEFT = 1
    ROTATE_RIGHT = 2
    LOOK_DOWN = 3
    LOOK_UP = 4
    DONE = 5


ACTION_NAMES = ("MoveAhead", "RotateLeft", "RotateRight", "LookDown", "LookUp", "Done")
NUM_ACTIONS = len(ACTION_NAMES)


class AgentState(NamedTuple):
    x: float  # meters, cell-aligned
    y: float
    heading: int
    pitch: int

    def cell(self) -> tuple[int, int]:
        return int(round(self.x / CELL_METERS)), int(round(self.y / CELL_METERS))

    def pose_key(self) -> tuple[int, int, int, int]:
        cx, cy = self.cell()
        return cx, cy, self.heading, self.pitch


class Detection(NamedTuple):
    class_id: int
    bbox: tuple  # (x1, y1, x2, y2) in unit image coordinates, x1 < x2, y1 < y2
    confidence: float


class StepResult(NamedTuple):
    detections: tuple
    local_grid: np.ndarray  # (C, 7, 7); cached, treat as read-only
    collided: bool
    done_valid: bool
    episode_over: bool


@dataclass(frozen=True)
class ObjectInstance:
    class_id: int
    position: tuple  # (cx, cy)
    height: str

    def __post_init__(self):
        if self.height not in HEIGHTS:
            raise ConfigError(f"unknown object height {self.height!r}")


class FloorPlan:
    """Immutable grid + object inventory; caches derived fields lazily."""

    def __init__(self, room_id: str, split: str, grid: np.ndarray, objects: list):
        if split not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {split!r}")
        self.room_id = room_id
        self.split = split
        self.grid = np.asarray(grid, dtype=np.uint8)
        self.grid.setflags(write=False)
        self.objects = tuple(objects)
        self._dist_fields: dict[int, np.ndarray] = {}

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    def in_bounds(self, cx: int, cy: int) -> bool:
        return 0 <= cx < self.width and 0 <= cy < self.height

    def free(self, cx: int, cy: int) -> bool:
        return self.in_bounds(cx, cy) and self.grid[cy, cx] == FREE

    def free_cells(self) -> list:
        return [(x, y) for y in range(self.height) for x in range(self.width)
                if self.grid[y, x] == FREE]

    def instances(self, class_id: int) -> list:
        return [o for o in self.objects if o.class_id == class_id]

    def goal_cells(self, class_id: int) -> list:
        """Free cells from which a Done on this class could succeed."""
        goals = []
        instances = self.instances(class_id)
        for cx, cy in self.free_cells():
            for obj in instances:
                ox, oy = obj.position
                d2 = (cx - ox) ** 2 + (cy - oy) ** 2
                if 0 < d2 <= _SUCCESS_SQ and line_of_sight(self.grid, (cx, cy), (ox, oy)):
                    goals.append((cx, cy))
                    break
        return goals

    def distance_field(self, class_id: int) -> np.ndarray:
        """BFS cell distances (4-connected over Free cells) to the goal set; -1 unreachable."""
        field = self._dist_fields.get(class_id)
        if field is not None:
            return field
        field = np.full((self.height, self.width), -1, dtype=np.int32)
        frontier = deque()
        for cx, cy in self.goal_cells(class_id):
            field[cy, cx] = 0
            frontier.append((cx, cy))
        while frontier:
            cx, cy = frontier.popleft()
            d = field[cy, cx] + 1
            for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
                if self.free(nx, ny) and field[ny, nx] < 0:
                    field[ny, nx] = d
                    frontier.append((nx, ny))
        field.setflags(write=False)
        self._dist_fields[class_id] = field
        return field

    def __eq__(self, other):
        return (isinstance(other, FloorPlan)
                and self.room_id == other.room_id
                and self.split == other.split
                and self.grid.shape == other.grid.shape
                and bool(np.array_equal(self.grid, other.grid))
                and self.objects == other.objects)

    def __hash__(self):
        return hash((self.room_id, self.split, self.grid.tobytes(), self.objects))


# ---------------------------------------------------------------------------
# exact integer geometry


def supercover_cells(a: tuple, b: tuple) -> list:
    """All cells whose closed unit square the center-to-center segment meets.

    Pure integer arithmetic: the next grid line crossed is decided by
    comparing the rationals (1+2i)/(2|dx|) and (1+2j)/(2|dy|) cross-multiplied.
    A tie means the segment passes exactly through a cell corner; the two
    side cells touching that corner are then included as well.
    """
    x, y = a
    bx, by = b
    dx, dy = bx - x, by - y
    nx, ny = abs(dx), abs(dy)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    cells = [(x, y)]
    ix = iy = 0
    while ix < nx or iy < ny:
        if iy >= ny:
            decide = -1
        elif ix >= nx:
            decide = 1
        else:
            d = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx
            decide = 0 if d == 0 else (-1 if d < 0 else 1)
        if decide == 0:  # corner crossing: both side cells touch the segment
            cells.append((x + sx, y))
            cells.append((x, y + sy))
            x += sx
            y += sy
            ix += 1
            iy += 1
        elif decide < 0:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        cells.append((x, y))
    return cells


def line_of_sight(grid: np.ndarray, a: tuple, b: tuple) -> bool:
    """True when no Obstacle cell lies strictly between the two cell centers."""
    for cx, cy in supercover_cells(a, b):
        if (cx, cy) != a and (cx, cy) != b and grid[cy, cx] == OBSTACLE:
            return False
    return True


def _detection_geometry(state: AgentState, obj_cell: tuple) -> tuple | None:
    """FOV test in exact ints; returns (forward, rightward, d2) if inside the cone."""
    acx, acy = state.cell()
    dx, dy = obj_cell[0] - acx, obj_cell[1] - acy
    d2 = dx * dx + dy * dy
    if d2 == 0 or d2 > _RANGE_SQ:
        return None
    ux, uy = HEADING_VEC[state.heading]
    forward = dx * ux + dy * uy
    left = ux * dy - uy * dx
    if forward < abs(left):  # outside the +-45 degree cone
        return None
    return forward, -left, d2


def _synthesize_detection(class_id: int, forward: int, rightward: int, d2: int,
                          pitch_offset_deg: int, rng=None, noise: float = 0.0) -> Detection:
    dist = math.sqrt(d2)
    azimuth = math.degrees(math.atan2(rightward, forward))  # positive = to the right
    center_x = 0.5 + azimuth / 90.0
    center_y = 0.5 + pitch_offset_deg / 90.0
    size = min(max(0.5 / dist, 0.05), 0.6)
    bbox = (max(center_x - size / 2, 0.0), max(center_y - size / 2, 0.0),
            min(center_x + size / 2, 1.0), min(center_y + size / 2, 1.0))
    confidence = min(max(1.0 - dist / VIEW_RANGE_CELLS, 0.1), 1.0)
    if rng is not None and noise > 0.0:
        confidence = min(max(confidence + rng.uniform(-noise, noise), 0.05), 1.0)
    return Detection(class_id, bbox, confidence)


def visibility(state: AgentState, obj: ObjectInstance, plan: FloorPlan,
               rng=None, noise: float = 0.0) -> Detection | None:
    """Full visibility rule for one object: range, FOV cone, line of sight, pitch."""
    geo = _detection_geometry(state, obj.position)
    if geo is None:
        return None
    if HEIGHT_PITCH[obj.height] != state.pitch:
        return None
    if not line_of_sight(plan.grid, state.cell(), obj.position):
        return None
    forward, rightward, d2 = geo
    return _synthesize_detection(obj.class_id, forward, rightward, d2,
                                 HEIGHT_PITCH[obj.height] - state.pitch, rng, noise)


def shortest_path_length(plan: FloorPlan, from_cell: tuple, to_class: int) -> float:
    """Optimal path in meters to a success pose for the class; inf if unreachable."""
    if not plan.instances(to_class):
        raise TaskError(f"plan {plan.room_id} has no instance of class {to_class}")
    d = int(plan.distance_field(to_class)[from_cell[1], from_cell[0]])
    return math.inf if d < 0 else d * CELL_METERS


# ---------------------------------------------------------------------------
# the environment


class NavEnv:
    """One plan, many episodes.  Visibility and local-grid caches persist across
    episodes; detection confidence noise applies only when train=True."""

    NOISE = 0.05

    def __init__(self, plan: FloorPlan, num_classes: int, max_steps: int = 100,
                 train: bool = False, detectable=None):
        if max_steps < 1:
            raise ConfigError(f"max_steps must be positive, got {max_steps}")
        self.plan = plan
        self.num_classes = num_classes
        self.max_steps = max_steps
        self.train = train
        self.detectable = None if detectable is None else frozenset(detectable)
        self._free = plan.free_cells()
        self._candidates: dict[tuple, tuple] = {}
        self._grids: dict[tuple, np.ndarray] = {}
        self._state = None
        self._target = None
        self._rng = None
        self._steps = 0
        self._over = True
        self.optimal_length_m = math.inf

    # -- episode control

    def reset(self, target: int, rng: RngStream):
        if not (0 <= target < self.num_classes):
            raise TaskError(f"target class {target} outside 0..{self.num_classes - 1}")
        if not self.plan.instances(target):
            raise TaskError(f"plan {self.plan.room_id} has no instance of class {target}")
        cx, cy = self._free[int(rng.integers(0, len(self._free)))]
        heading = HEADINGS[int(rng.integers(0, 4))]
        self._state = AgentState(cx * CELL_METERS, cy * CELL_METERS, heading, 0)
        self._target = target
        self._rng = rng
        self._steps = 0
        self._over = False
        self.optimal_length_m = shortest_path_length(self.plan, (cx, cy), target)
        return self._state, self._observe(collided=False, done_valid=False)

    def step(self, action):
        if self._over:
            raise ContractError("step() after episode_over")
        action = Action(action)
        s = self._state
        collided = False
        done_valid = False
        if action == Action.MOVE_AHEAD:
            ux, uy = HEADING_VEC[s.heading]
            cx, cy = s.cell()
            nx, ny = cx + ux, cy + uy
            if self.plan.free(nx, ny):
                s = s._replace(x=nx * CELL_METERS, y=ny * CELL_METERS)
            else:
                collided = True
        elif action == Action.ROTATE_LEFT:
            s = s._replace(heading=(s.heading + 90) % 360)
        elif action == Action.ROTATE_RIGHT:
            s = s._replace(heading=(s.heading - 90) % 360)
        elif action == Action.LOOK_DOWN:
            if s.pitch > PITCHES[0]:
                s = s._replace(pitch=s.pitch - 30)
        elif action == Action.LOOK_UP:
            if s.pitch < PITCHES[-1]:
                s = s._replace(pitch=s.pitch + 30)
        else:  # Done
            self._state = s
            done_valid = self._done_valid()
            self._over = True
        self._state = s
        self._steps += 1
        if self._steps >= self.max_steps:
            self._over = True
        return s, self._observe(collided, done_valid)

    @property
    def state(self) -> AgentState:
        return self._state

    @property
    def episode_over(self) -> bool:
        return self._over

    def geodesic_cells(self, state: AgentState) -> int:
        """BFS distance (cells) from the state to the target's goal set; -1 unreachable."""
        cx, cy = state.cell()
        return int(self.plan.distance_field(self._target)[cy, cx])

    # -- observation synthesis

    def _done_valid(self) -> bool:
        cx, cy = self._state.cell()
        near = any((cx - ox) ** 2 + (cy - oy) ** 2 <= _SUCCESS_SQ
                   for ox, oy in (o.position for o in self.plan.instances(self._target)))
        if not near:
            return False
        return any(d.class_id == self._target for d in self.detections(self._state))

    def _cell_candidates(self, cell: tuple) -> tuple:
        """Objects with clear line of sight within range of this cell, precomputed."""
        cached = self._candidates.get(cell)
        if cached is not None:
            return cached
        cx, cy = cell
        found = []
        for obj in self.plan.objects:
            ox, oy = obj.position
            dx, dy = ox - cx, oy - cy
            d2 = dx * dx + dy * dy
            if 0 < d2 <= _RANGE_SQ and line_of_sight(self.plan.grid, cell, obj.position):
                found.append((obj.class_id, dx, dy, d2, HEIGHT_PITCH[obj.height]))
        cached = tuple(found)
        self._candidates[cell] = cached
        return cached

    def detections(self, state: AgentState) -> tuple:
        out = []
        ux, uy = HEADING_VEC[state.heading]
        for class_id, dx, dy, d2, pitch in self._cell_candidates(state.cell()):
            if pitch != state.pitch:
                continue
            if self.detectable is not None and class_id not in self.detectable:
                continue
            forward = dx * ux + dy * uy
            left = ux * dy - uy * dx
            if forward < abs(left):
                continue
            noise = self.NOISE if self.train else 0.0
            out.append(_synthesize_detection(class_id, forward, -left, d2, 0,
                                             self._rng if self.train else None, noise))
        return tuple(out)

    def local_grid(self, state: AgentState) -> np.ndarray:
        cx, cy = state.cell()
        key = (cx, cy, state.heading)
        grid = self._grids.get(key)
        if grid is None:
            grid = self._build_local_grid(cx, cy, state.heading)
            self._grids[key] = grid
        return grid

    def _build_local_grid(self, cx: int, cy: int, heading: int) -> np.ndarray:
        ux, uy = HEADING_VEC[heading]
        lx, ly = -uy, ux  # unit vector to the agent's left
        planes = np.zeros((LOCAL_GRID_CHANNELS, LOCAL_GRID_SIZE, LOCAL_GRID_SIZE))
        planes[1] = _DIST_PLANE
        by_cell = {}
        for obj in self.plan.objects:
            by_cell.setdefault(obj.position, []).append(obj.class_id)
        reach = _LOCAL_REACH
        for f in range(-reach, reach + 1):
            for l in range(-reach, reach + 1):
                wx = cx + f * ux + l * lx
                wy = cy + f * uy + l * ly
                i, j = reach - f, reach - l
                if not self.plan.free(wx, wy):
                    planes[0, i, j] = 1.0
                for class_id in by_cell.get((wx, wy), ()):
                    planes[2 + class_id % _CLASS_PLANES, i, j] = 1.0
        planes.setflags(write=False)
        return planes

    def _observe(self, collided: bool, done_valid: bool) -> StepResult:
        return StepResult(
            detections=self.detections(self._state),
            local_grid=self.local_grid(self._state),
            collided=collided,
            done_valid=done_valid,
            episode_over=self._over,
        )


# ---------------------------------------------------------------------------
# procedural generation


@dataclass
class PlanGenConfig:
    width: int = 11
    height: int = 11
    obstacle_density: float = 0.15
    num_classes: int = 6
    objects_per_class: int = 1

    def validate(self) -> None:
        if self.width < 7 or self.height < 7:
            raise ConfigError(f"plan size {self.width}x{self.height} below minimum 7x7")
        if not (0.0 <= self.obstacle_density <= 0.4):
            raise ConfigError(f"obstacle_density {self.obstacle_density} outside [0, 0.4]")
        if self.num_classes < 1 or self.objects_per_class < 1:
            raise ConfigError("num_classes and objects_per_class must be positive")


def _connected(grid: np.ndarray) -> bool:
    free = np.argwhere(grid == FREE)
    if len(free) == 0:
        return False
    h, w = grid.shape
    seen = np.zeros_like(grid, dtype=bool)
    start = (int(free[0][1]), int(free[0][0]))
    seen[start[1], start[0]] = True
    frontier = deque([start])
    count = 1
    while frontier:
        cx, cy = frontier.popleft()
        for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
            if 0 <= nx < w and 0 <= ny < h and grid[ny, nx] == FREE and not seen[ny, nx]:
                seen[ny, nx] = True
                count += 1
                frontier.append((nx, ny))
    return count == len(free)


def generate_floorplan(seed: int, config: PlanGenConfig, room_id: str | None = None,
                       split: str = "train") -> FloorPlan:
    """Deterministically grow a furnished room: rectangular obstacle blocks that
    keep the free region connected, then one object per class per round on
    free cells adjacent to an obstacle or wall."""
    config.validate()
    rng = RngStream(seed)
    w, h = config.width, config.height
    grid = np.zeros((h, w), dtype=np.uint8)
    grid[0, :] = grid[-1, :] = OBSTACLE
    grid[:, 0] = grid[:, -1] = OBSTACLE

    interior = (w - 2) * (h - 2)
    budget = int(round(config.obstacle_density * interior))
    min_free = max(interior // 2, config.num_classes * config.objects_per_class + 4)
    placed = 0
    for _ in range(30 * max(1, budget)):
        if placed >= budget:
            break
        bw = int(rng.integers(1, 4))
        bh = int(rng.integers(1, 4))
        if bw > w - 2 or bh > h - 2:
            continue
        x0 = int(rng.integers(1, w - bw))
        y0 = int(rng.integers(1, h - bh))
        block = grid[y0:y0 + bh, x0:x0 + bw]
        if block.any():
            continue
        block[:] = OBSTACLE
        free_left = int((grid == FREE).sum())
        if free_left < min_free or not _connected(grid):
            block[:] = FREE
            continue
        placed += bw * bh

    candidates = [(x, y) for y in range(1, h - 1) for x in range(1, w - 1)
                  if grid[y, x] == FREE and (grid[y - 1, x] or grid[y + 1, x]
                                             or grid[y, x - 1] or grid[y, x + 1])]
    objects = []
    used = set()
    for _ in range(config.objects_per_class):
        for class_id in range(config.num_classes):
            open_cells = [c for c in candidates if c not in used]
            if not open_cells:
                raise GenerationError(
                    f"seed {seed}: only {len(used)} wall-adjacent cells for "
                    f"{config.num_classes}x{config.objects_per_class} objects")
            cell = open_cells[int(rng.integers(0, len(open_cells)))]
            used.add(cell)
            height = HEIGHTS[int(rng.integers(0, 3))]
            objects.append(ObjectInstance(class_id, cell, height))

    plan = FloorPlan(room_id or f"fp{seed:06d}", split, grid, objects)
    validate_plan(plan, config.num_classes)
    return plan


def validate_plan(plan: FloorPlan, num_classes: int | None = None) -> None:
    """Structural invariants: sealed border, connected free space, objects on
    distinct free cells, full class coverage when num_classes is given."""
    grid = plan.grid
    border = np.concatenate([grid[0, :], grid[-1, :], grid[:, 0], grid[:, -1]])
    if not (border == OBSTACLE).all():
        raise ConfigError(f"plan {plan.room_id}: boundary must be all obstacles")
    if not _connected(grid):
        raise ConfigError(f"plan {plan.room_id}: free region is disconnected")
    seen_cells = set()
    for obj in plan.objects:
        cx, cy = obj.position
        if not plan.free(cx, cy):
            raise ConfigError(f"plan {plan.room_id}: object at {obj.position} not on a Free cell")
        if obj.position in seen_cells:
            raise ConfigError(f"plan {plan.room_id}: two objects share cell {obj.position}")
        seen_cells.add(obj.position)
        if num_classes is not None and not (0 <= obj.class_id < num_classes):
            raise ConfigError(f"plan {plan.room_id}: class_id {obj.class_id} out of range")
    if num_classes is not None:
        present = {o.class_id for o in plan.objects}
        missing = sorted(set(range(num_classes)) - present)
        if missing:
            raise ConfigError(f"plan {plan.room_id}: classes missing instances: {missing}")


def generate_suite(seed: int, config: PlanGenConfig, n_train: int, n_eval: int) -> list:
    """A reproducible suite: n_train 'train' plans then n_eval held-out 'test' plans."""
    rng = RngStream(seed)
    plans = []
    index = 0
    attempts = 0
    while len(plans) < n_train + n_eval:
        plan_seed = int(rng.integers(0, 2 ** 62))
        attempts += 1
        if attempts > 40 * (n_train + n_eval):
            raise GenerationError("suite generation kept failing; relax the density or size")
        split = "train" if index < n_train else "test"
        try:
            plan = generate_floorplan(plan_seed, config, room_id=f"fp{index:03d}", split=split)
        except GenerationError:
            continue
        plans.append(plan)
        index += 1
    return plans


# ---------------------------------------------------------------------------
# plan suite file format (versioned text container)

_PLANS_HEADER = "gridmind-plans 1"


def save_plans(path, plans) -> None:
    lines = [_PLANS_HEADER]
    for plan in plans:
        lines.append(f"plan {plan.room_id} {plan.split} {plan.width} {plan.height}")
        for y in range(plan.height):
            lines.append("".join("#" if plan.grid[y, x] else "." for x in range(plan.width)))
        lines.append(f"objects {len(plan.objects)}")
        for obj in plan.objects:
            lines.append(f"{obj.class_id} {obj.position[0]} {obj.position[1]} {obj.height}")
        lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_plans(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]

    def fail(lineno, msg):
        raise ConfigError(f"{path}:{lineno + 1}: {msg}")

    if not lines or lines[0] != _PLANS_HEADER:
        fail(0, f"expected header {_PLANS_HEADER!r}")
    plans = []
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if len(head) != 5 or head[0] != "plan":
            fail(i, f"expected 'plan <id> <split> <w> <h>', got {lines[i]!r}")
        _, room_id, split, w_s, h_s = head
        try:
            w, h = int(w_s), int(h_s)
        except ValueError:
            fail(i, "plan width/height must be integers")
        i += 1
        grid = np.zeros((h, w), dtype=np.uint8)
        for y in range(h):
            if i >= len(lines) or len(lines[i]) != w:
                fail(min(i, len(lines) - 1), f"grid row {y} must have exactly {w} characters")
            for x, ch in enumerate(lines[i]):
                if ch == "#":
                    grid[y, x] = OBSTACLE
                elif ch != ".":
                    fail(i, f"unknown grid character {ch!r}")
            i += 1
        if i >= len(lines) or not lines[i].startswith("objects "):
            fail(min(i, len(lines) - 1), "expected 'objects <count>'")
        try:
            count = int(lines[i].split()[1])
        except (IndexError, ValueError):
            fail(i, "bad object count")
        i += 1
        objects = []
        for _ in range(count):
            if i >= len(lines):
                fail(len(lines) - 1, "truncated object table")
            parts = lines[i].split()
            if len(parts) != 4:
                fail(i, f"expected '<class> <cx> <cy> <height>', got {lines[i]!r}")
            try:
                objects.append(ObjectInstance(int(parts[0]), (int(parts[1]), int(parts[2])), parts[3]))
            except (ValueError, ConfigError) as exc:
                fail(i, str(exc))
            i += 1
        if i >= len(lines) or lines[i] != "end":
            fail(min(i, len(lines) - 1), "expected 'end'")
        i += 1
        try:
            plan = FloorPlan(room_id, split, grid, objects)
            validate_plan(plan)
        except ConfigError as exc:
            fail(i - 1, str(exc))
        plans.append(plan)
    return plans
