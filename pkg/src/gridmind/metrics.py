"""Episode traces, the evaluation loop, and the six-number metric suite.

Metrics (all percentages): success rate, path-efficiency-weighted success,
how often the target was ever sighted, navigation efficiency after the
first sighting, pose-revisit rate, and collision rate.  Each is reported
for all episodes and for the subset whose optimal path exceeds 5 grid
steps.  A trace records enough per step to recompute everything offline.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .env import (ACTION_NAMES, Action, CELL_METERS, FloorPlan, NavEnv,
                  shortest_path_length)
from .errors import ConfigError, ContractError
from .memory import EpisodeMemory, build_inputs
from .model import Model, make_target_code
from .nn import RngStream
from .rewards import EpisodeContext, RewardConfig, compute_reward

LONG_SUBSET_STEPS = 5  # an episode is "long" when optimal steps exceed this


class StepRecord(NamedTuple):
    pose: tuple                # post-action (x, y, heading, pitch)
    action: int
    reward_components: tuple   # 7 floats, rewards.COMPONENT_NAMES order
    target_detected: bool      # detection on the frame the action was chosen from
    collided: bool
    activation_means: tuple    # 5 floats, model.STREAMS order


@dataclass
class EpisodeTrace:
    episode_id: str
    plan_id: str
    target: int
    seed: int
    start_pose: tuple
    steps: list
    success: bool
    path_length_m: float        # 0.5 m per pose-changing forward move
    optimal_length_m: float
    first_visible_step: int | None
    optimal_nav_m: float | None  # shortest path from the first-sighting pose


@dataclass
class SubsetMetrics:
    episodes: int
    nav_episodes: int
    sr: float
    spl: float
    ssr: float
    nsnpl: float | None  # None when no episode ever sighted the target
    rep: float
    cp: float


@dataclass
class MetricsReport:
    overall: SubsetMetrics
    long: SubsetMetrics


# ---------------------------------------------------------------------------
# per-episode quantities


def action_count(trace: EpisodeTrace) -> int:
    """Actions taken excluding the terminal Done."""
    return sum(1 for r in trace.steps if r.action != int(Action.DONE))


def distinct_poses(trace: EpisodeTrace) -> int:
    """Distinct post-action poses over the non-Done actions."""
    return len({r.pose for r in trace.steps if r.action != int(Action.DONE)})


def collision_count(trace: EpisodeTrace) -> int:
    """Collisions among the non-Done actions (the REP/CP denominator set)."""
    return sum(1 for r in trace.steps
               if r.collided and r.action != int(Action.DONE))


def split_phases(trace: EpisodeTrace) -> tuple:
    """(records before the first sighting, records from it onward)."""
    boundary = trace.first_visible_step
    if boundary is None:
        return list(trace.steps), []
    return list(trace.steps[:boundary]), list(trace.steps[boundary:])


def nav_path_length_m(trace: EpisodeTrace) -> float:
    """Meters moved during the navigate phase."""
    _, nav = split_phases(trace)
    moved = sum(1 for r in nav if r.action == int(Action.MOVE_AHEAD) and not r.collided)
    return moved * CELL_METERS


def _ratio_term(success: bool, optimal: float, actual: float) -> float:
    """Path-efficiency term: optimal / max(actual, optimal); 0/0 counts as 1."""
    if not success:
        return 0.0
    if optimal == 0.0 and actual == 0.0:
        return 1.0
    return optimal / max(actual, optimal)


# ---------------------------------------------------------------------------
# metric aggregation


def _subset_metrics(traces: list) -> SubsetMetrics:
    f = len(traces)
    if f == 0:
        return SubsetMetrics(0, 0, 0.0, 0.0, 0.0, None, 0.0, 0.0)
    sr = sum(t.success for t in traces) / f
    spl = sum(_ratio_term(t.success, t.optimal_length_m, t.path_length_m)
              for t in traces) / f
    nav_traces = [t for t in traces if t.first_visible_step is not None]
    ssr = len(nav_traces) / f
    if nav_traces:
        nsnpl = sum(_ratio_term(t.success, t.optimal_nav_m, nav_path_length_m(t))
                    for t in nav_traces) / len(nav_traces)
    else:
        nsnpl = None
    rep_sum = 0.0
    cp_sum = 0.0
    for t in traces:
        n = action_count(t)
        if n > 0:
            rep_sum += (n - distinct_poses(t)) / n
            cp_sum += collision_count(t) / n
    rep = rep_sum / f
    cp = cp_sum / f
    return SubsetMetrics(
        episodes=f, nav_episodes=len(nav_traces),
        sr=100.0 * sr, spl=100.0 * spl, ssr=100.0 * ssr,
        nsnpl=None if nsnpl is None else 100.0 * nsnpl,
        rep=100.0 * rep, cp=100.0 * cp)


def is_long(trace: EpisodeTrace) -> bool:
    return trace.optimal_length_m / CELL_METERS > LONG_SUBSET_STEPS


def compute_metrics(traces: list) -> MetricsReport:
    if not traces:
        raise ContractError("compute_metrics needs at least one trace")
    return MetricsReport(overall=_subset_metrics(traces),
                         long=_subset_metrics([t for t in traces if is_long(t)]))


def format_report(report: MetricsReport) -> str:
    """Fixed-column tabular text; NSNPL shows NA when no sighting occurred."""
    def fmt(v):
        return "NA" if v is None else f"{v:.2f}"

    header = f"{'subset':<8}{'SR':>8}{'SPL':>8}{'SSR':>8}{'NSNPL':>8}{'REP':>8}{'CP':>8}{'F':>6}{'F_nav':>6}"
    lines = [header]
    for label, m in (("ALL", report.overall), ("L>5", report.long)):
        lines.append(f"{label:<8}{fmt(m.sr):>8}{fmt(m.spl):>8}{fmt(m.ssr):>8}"
                     f"{fmt(m.nsnpl):>8}{fmt(m.rep):>8}{fmt(m.cp):>8}"
                     f"{m.episodes:>6}{m.nav_episodes:>6}")
    return "\n".join(lines)


def report_by_class(traces: list) -> dict:
    """Per-target-class breakdown of the same report."""
    groups: dict = {}
    for t in traces:
        groups.setdefault(t.target, []).append(t)
    return {cls: compute_metrics(group) for cls, group in sorted(groups.items())}


# ---------------------------------------------------------------------------
# running episodes


def _pose_tuple(state) -> tuple:
    return (state.x, state.y, state.heading, state.pitch)


def run_episode(policy, env: NavEnv, plan: FloorPlan, target: int, seed: int,
                reward_cfg: RewardConfig) -> EpisodeTrace:
    """Roll one episode with `policy(frame, memory_inputs_ctx) -> (action, activations)`.

    `policy` is called with (frame, state, memory) each decision step and
    returns the action plus the 5 activation means to record.
    """
    rng = RngStream(seed, ("eval",))
    _, frame = env.reset(target, rng.child("reset"))
    start_pose = _pose_tuple(env.state)
    ctx = EpisodeContext(env, target, frame)
    memory = EpisodeMemory()
    records = []
    first_visible = None
    optimal_nav_m = None
    success = False
    moved = 0
    step_index = 0

    while not env.episode_over:
        if ctx.seen and first_visible is None:
            first_visible = step_index
            cell = env.state.cell()
            optimal_nav_m = shortest_path_length(env.plan, cell, target)
        memory.update(frame, env.state, target)
        action, activations = policy(frame, env.state, memory)
        prev = env.state
        _, result = env.step(action)
        _, components = compute_reward(prev, action, result, ctx, reward_cfg, True)
        if Action(action) == Action.MOVE_AHEAD and not result.collided:
            moved += 1
        if result.done_valid:
            success = True
        records.append(StepRecord(
            pose=_pose_tuple(env.state), action=int(action),
            reward_components=components, target_detected=ctx.seen,
            collided=result.collided, activation_means=tuple(activations)))
        ctx.advance_frame(result)
        frame = result
        step_index += 1

    return EpisodeTrace(
        episode_id=f"{plan.room_id}:{target}:{seed}",
        plan_id=plan.room_id, target=target, seed=seed,
        start_pose=start_pose, steps=records, success=success,
        path_length_m=moved * CELL_METERS,
        optimal_length_m=env.optimal_length_m,
        first_visible_step=first_visible, optimal_nav_m=optimal_nav_m)


def evaluate(model: Model, suite: list, max_steps: int = 100, greedy: bool = True,
             embeddings=None, reward_cfg: RewardConfig | None = None,
             sample_seed: int = 0) -> tuple:
    """Run the suite of (plan, target class, seed) episodes; returns
    (MetricsReport, traces).  Unreachable targets are skipped with a warning.
    """
    if not suite:
        raise ContractError("evaluate needs a nonempty suite")
    reward_cfg = reward_cfg or RewardConfig()
    num_classes = model.config.num_classes
    envs: dict = {}
    traces = []
    sampler = RngStream(sample_seed, ("eval-sampler",))
    for plan, target, seed in suite:
        if plan.room_id not in envs:
            envs[plan.room_id] = NavEnv(plan, num_classes, max_steps=max_steps,
                                        train=False)
        env = envs[plan.room_id]
        code = make_target_code(target, num_classes, model.config.target_mode, embeddings)
        h_c = [model.init_state()]

        def policy(frame, state, memory):
            h, c = h_c[0]
            inputs = build_inputs(frame, state, target, memory, num_classes)
            out = model.step(inputs, state, code, h, c)
            h_c[0] = (out.h, out.c)
            if greedy:
                action = int(np.argmax(out.logits.data))
            else:
                z = out.logits.data - out.logits.data.max()
                probs = np.exp(z)
                probs /= probs.sum()
                action = sampler.categorical(probs)
            return action, out.activation_means

        trace = run_trace_or_skip(policy, env, plan, target, seed, reward_cfg)
        if trace is not None:
            traces.append(trace)
    if not traces:
        raise ContractError("every episode in the suite was skipped")
    return compute_metrics(traces), traces


def run_trace_or_skip(policy, env, plan, target, seed, reward_cfg):
    """Run one episode; drop it (with a warning) when the target is unreachable."""
    trace = run_episode(policy, env, plan, target, seed, reward_cfg)
    if not np.isfinite(trace.optimal_length_m):
        warnings.warn(f"skipping {trace.episode_id}: target unreachable from start")
        return None
    return trace


def evaluate_random(suite: list, num_classes: int, seed: int = 0, max_steps: int = 100,
                    reward_cfg: RewardConfig | None = None) -> tuple:
    """Uniform-random policy baseline over the same suite."""
    if not suite:
        raise ContractError("evaluate_random needs a nonempty suite")
    reward_cfg = reward_cfg or RewardConfig()
    rng = RngStream(seed, ("random-policy",))
    envs: dict = {}
    traces = []
    for plan, target, ep_seed in suite:
        if plan.room_id not in envs:
            envs[plan.room_id] = NavEnv(plan, num_classes, max_steps=max_steps,
                                        train=False)

        def policy(frame, state, memory):
            return int(rng.integers(0, len(ACTION_NAMES))), (0.0,) * 5

        trace = run_trace_or_skip(policy, envs[plan.room_id], plan, target,
                                  ep_seed, reward_cfg)
        if trace is not None:
            traces.append(trace)
    if not traces:
        raise ContractError("every episode in the suite was skipped")
    return compute_metrics(traces), traces


# ---------------------------------------------------------------------------
# trace files: one JSON record per line, an episode header before its steps


def export_traces(traces: list, path) -> None:
    with open(path, "w") as fh:
        for t in traces:
            header = {
                "kind": "episode", "episode_id": t.episode_id, "plan_id": t.plan_id,
                "target": t.target, "seed": t.seed, "start_pose": list(t.start_pose),
                "success": t.success, "path_length_m": t.path_length_m,
                "optimal_length_m": t.optimal_length_m,
                "first_visible_step": t.first_visible_step,
                "optimal_nav_m": t.optimal_nav_m, "steps": len(t.steps),
            }
            fh.write(json.dumps(header) + "\n")
            for r in t.steps:
                fh.write(json.dumps({
                    "kind": "step", "pose": list(r.pose), "action": r.action,
                    "reward": list(r.reward_components),
                    "target_detected": r.target_detected, "collided": r.collided,
                    "activations": list(r.activation_means)}) + "\n")


def import_traces(path) -> list:
    traces = []
    current = None
    remaining = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            rec = json.loads(line)
            if rec["kind"] == "episode":
                if remaining:
                    raise ConfigError(f"{path}:{lineno}: episode header arrived "
                                      f"{remaining} step records early")
                current = EpisodeTrace(
                    episode_id=rec["episode_id"], plan_id=rec["plan_id"],
                    target=rec["target"], seed=rec["seed"],
                    start_pose=tuple(rec["start_pose"]), steps=[],
                    success=rec["success"], path_length_m=rec["path_length_m"],
                    optimal_length_m=rec["optimal_length_m"],
                    first_visible_step=rec["first_visible_step"],
                    optimal_nav_m=rec["optimal_nav_m"])
                remaining = rec["steps"]
                traces.append(current)
                continue
            if current is None or remaining == 0:
                raise ConfigError(f"{path}:{lineno}: step record without a header")
            current.steps.append(StepRecord(
                pose=tuple(rec["pose"]), action=rec["action"],
                reward_components=tuple(rec["reward"]),
                target_detected=rec["target_detected"], collided=rec["collided"],
                activation_means=tuple(rec["activations"])))
            remaining -= 1
    if remaining:
        raise ConfigError(f"{path}: truncated; {remaining} step records missing")
    return traces
