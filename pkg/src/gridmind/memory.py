"""Per-episode memories and the egocentric inputs for the five thinking streams.

Angle features use exact lookup tables over the discrete heading/pitch sets,
so self-rows come out as (0, 0, 0, 1, 0, 1) exactly and rotating the whole
world by 90 degrees leaves every transformed row bit-identical.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .env import CELL_METERS, HEADING_VEC, AgentState, StepResult
from .nn import RngStream
from .tensor import Tensor

# sin/cos over multiples of 90 degrees, exact in float64
_H_SIN = {0: 0.0, 90: 1.0, 180: 0.0, 270: -1.0}
_H_COS = {0: 1.0, 90: 0.0, 180: -1.0, 270: 0.0}
# pitch differences land in a small fixed set; precomputed once
_B_TAB = {d: (math.sin(math.radians(d)), math.cos(math.radians(d)))
          for d in (-60, -30, 0, 30, 60)}

APPEARANCE_DIM = 16
OBJECT_ROW_DIM = APPEARANCE_DIM + 4 + 1 + 1  # embedding, bbox, confidence, is_target
SIGHTING_ROW_DIM = 9  # bbox(4) + pose(4) + confidence

_APPEARANCE_SEED = 202_406


def appearance_embeddings(num_classes: int, dim: int = APPEARANCE_DIM) -> np.ndarray:
    """Fixed per-class appearance vectors (a stand-in for detector features)."""
    rng = RngStream(_APPEARANCE_SEED)
    table = rng.uniform(-1.0, 1.0, size=(num_classes, dim))
    table.setflags(write=False)
    return table


def egocentric_transform(rows, current: AgentState) -> np.ndarray:
    """World-frame (x, y, heading, pitch) rows -> agent-frame (D, 6) features.

    Positions are translated then rotated so +x points where the agent faces
    and +y to its left; angles become (sin, cos) pairs of the difference from
    the current heading/pitch, all within [-1, 1].
    """
    out = np.empty((len(rows), 6))
    c = _H_COS[current.heading]
    s = _H_SIN[current.heading]
    for i, (x, y, heading, pitch) in enumerate(rows):
        dx = x - current.x
        dy = y - current.y
        hd = int(heading - current.heading) % 360
        bs, bc = _B_TAB[int(pitch - current.pitch)]
        out[i] = (dx * c + dy * s, -dx * s + dy * c, _H_SIN[hd], _H_COS[hd], bs, bc)
    return out


def egocentric_positions(rows, current: AgentState) -> np.ndarray:
    """Position-only variant: world (x, y) rows -> agent-frame (D, 2)."""
    out = np.empty((len(rows), 2))
    c = _H_COS[current.heading]
    s = _H_SIN[current.heading]
    for i, (x, y) in enumerate(rows):
        dx = x - current.x
        dy = y - current.y
        out[i] = (dx * c + dy * s, -dx * s + dy * c)
    return out


def polarize(rows: np.ndarray) -> np.ndarray:
    """(x, y, rest...) rows -> (rho, sin phi, cos phi, rest...); origin -> (0, 0, 1)."""
    if rows.ndim != 2 or rows.shape[1] < 2:
        raise ValueError(f"polarize expects (D, >=2) rows, got {rows.shape}")
    out = np.empty((rows.shape[0], rows.shape[1] + 1))
    for i, row in enumerate(rows):
        x, y = row[0], row[1]
        rho = math.hypot(x, y)
        if rho == 0.0:
            out[i, :3] = (0.0, 0.0, 1.0)
        else:
            out[i, :3] = (rho, y / rho, x / rho)
        out[i, 3:] = row[2:]
    return out


@dataclass
class MemoryCaps:
    sightings: int = 40
    history: int = 200
    obstacles: int = 50


class EpisodeMemory:
    """Target sightings, pose history, and blocked cells for one episode.

    All three are FIFO under their caps; blocked cells are deduplicated.
    """

    def __init__(self, caps: MemoryCaps | None = None):
        self.caps = caps or MemoryCaps()
        self.sightings = deque(maxlen=self.caps.sightings)
        self.history = deque(maxlen=self.caps.history)
        self.obstacles = deque()
        self._obstacle_set = set()

    def reset(self) -> None:
        self.sightings.clear()
        self.history.clear()
        self.obstacles.clear()
        self._obstacle_set.clear()

    def update(self, obs: StepResult, state: AgentState, target: int) -> None:
        """Fold one observation frame in; call before building inputs each step."""
        self.history.append((state.x, state.y, float(state.heading), float(state.pitch)))
        best = None
        for det in obs.detections:
            if det.class_id == target and (best is None or det.confidence > best.confidence):
                best = det
        if best is not None:
            self.sightings.append(best.bbox + (state.x, state.y, float(state.heading),
                                               float(state.pitch), best.confidence))
        if obs.collided:
            ux, uy = HEADING_VEC[state.heading]
            cx, cy = state.cell()
            blocked = ((cx + ux) * CELL_METERS, (cy + uy) * CELL_METERS)
            if blocked not in self._obstacle_set:
                if len(self.obstacles) >= self.caps.obstacles:
                    self._obstacle_set.discard(self.obstacles.popleft())
                self.obstacles.append(blocked)
                self._obstacle_set.add(blocked)


@dataclass
class StreamInputs:
    """The five per-step inputs; memory matrices stay world-frame here."""
    scene: Tensor      # (C, 7, 7) local grid
    objects: Tensor    # (N, OBJECT_ROW_DIM) current detections by class
    sightings: Tensor  # (D_n, 9) target sighting memory
    history: Tensor    # (D_e, 4) pose history
    obstacles: Tensor  # (D_o, 2) blocked-cell memory


def build_inputs(obs: StepResult, state: AgentState, target: int,
                 memory: EpisodeMemory, num_classes: int,
                 appearance: np.ndarray | None = None) -> StreamInputs:
    """Assemble the five stream inputs from the frame and the episode memory.

    The memory must already include this frame (update() called first).
    """
    if appearance is None:
        appearance = appearance_embeddings(num_classes)
    objects = np.zeros((num_classes, OBJECT_ROW_DIM))
    best: dict[int, tuple] = {}
    for det in obs.detections:
        cur = best.get(det.class_id)
        if cur is None or det.confidence > cur.confidence:
            best[det.class_id] = det
    for class_id, det in best.items():
        row = objects[class_id]
        row[:APPEARANCE_DIM] = appearance[class_id]
        row[APPEARANCE_DIM:APPEARANCE_DIM + 4] = det.bbox
        row[APPEARANCE_DIM + 4] = det.confidence
        row[APPEARANCE_DIM + 5] = 1.0 if class_id == target else 0.0

    n = len(memory.sightings)
    sightings = np.array(memory.sightings) if n else np.zeros((0, SIGHTING_ROW_DIM))
    e = len(memory.history)
    history = np.array(memory.history) if e else np.zeros((0, 4))
    o = len(memory.obstacles)
    obstacles = np.array(memory.obstacles) if o else np.zeros((0, 2))

    return StreamInputs(
        scene=Tensor(obs.local_grid),
        objects=Tensor(objects),
        sightings=Tensor(sightings.reshape(n, SIGHTING_ROW_DIM)),
        history=Tensor(history.reshape(e, 4)),
        obstacles=Tensor(obstacles.reshape(o, 2)),
    )
