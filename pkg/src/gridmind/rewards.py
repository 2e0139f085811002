"""Per-step rewards: the base navigation reward plus four shaping terms
that each pay for (or penalize) one ability -- spotting the target,
closing geodesic distance to it, revisiting states, and collisions.

Every step yields a 7-tuple of components whose exact sum is the total,
in the order named by COMPONENT_NAMES.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .env import Action, AgentState, NavEnv, StepResult
from .errors import ConfigError

COMPONENT_NAMES = ("step", "move", "success", "detect", "approach", "revisit", "collide")


@dataclass(frozen=True)
class RewardConfig:
    step_penalty: float = -0.01
    move_bonus: float = 0.01
    success_reward: float = 5.0
    detect_bonus: float = 0.01
    approach_bonus: float = 0.01
    revisit_penalty: float = -0.01
    collision_penalty: float = -0.01
    shaping_episodes: int = 6000  # shaping applies while the episode index is below this

    def __post_init__(self):
        for name in ("step_penalty", "move_bonus", "success_reward", "detect_bonus",
                     "approach_bonus", "revisit_penalty", "collision_penalty"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"reward {name} must be finite")
        if self.shaping_episodes < 0:
            raise ConfigError(f"shaping_episodes must be >= 0, got {self.shaping_episodes}")


def _pose(state: AgentState) -> tuple:
    return (state.x, state.y, state.heading, state.pitch)


class EpisodeContext:
    """Reward bookkeeping for one episode.

    Tracks the visited-pose set, whether the target has ever been detected,
    and the geodesic distance to the target at the current pose.  `seen`
    always refers to the frame the agent chose its latest action from, so
    callers must `advance_frame` with each new observation after scoring
    the step that produced it.
    """

    def __init__(self, env: NavEnv, target: int, first_frame: StepResult):
        self.env = env
        self.target = target
        self.visited = {_pose(env.state)}
        self.dist = env.geodesic_cells(env.state)
        self.seen = self._detected(first_frame)
        self.located = self.seen

    def _detected(self, frame: StepResult) -> bool:
        return any(d.class_id == self.target for d in frame.detections)

    def advance_frame(self, frame: StepResult) -> None:
        self.seen = self._detected(frame)
        self.located = self.located or self.seen


def compute_reward(prev: AgentState, action, result: StepResult,
                   ctx: EpisodeContext, cfg: RewardConfig,
                   use_shaping: bool) -> tuple:
    """Score one transition and advance the context to the post-step pose.

    Returns (total, components); components follow COMPONENT_NAMES and sum
    exactly to the total.
    """
    pose = _pose(ctx.env.state)
    dist_after = ctx.env.geodesic_cells(ctx.env.state)

    step_r = cfg.step_penalty
    move_r = cfg.move_bonus if Action(action) == Action.MOVE_AHEAD else 0.0
    success_r = cfg.success_reward if result.done_valid else 0.0
    detect_r = approach_r = revisit_r = collide_r = 0.0
    if use_shaping:
        if ctx.seen:
            detect_r = cfg.detect_bonus
        if ctx.located and 0 <= dist_after < ctx.dist:
            approach_r = cfg.approach_bonus
        if pose in ctx.visited:
            revisit_r = cfg.revisit_penalty
        if result.collided:
            collide_r = cfg.collision_penalty

    ctx.visited.add(pose)
    ctx.dist = dist_after

    components = (step_r, move_r, success_r, detect_r, approach_r, revisit_r, collide_r)
    return sum(components), components
