"""Asynchronous advantage actor-critic training.

Workers each own a private model replica and per-plan environments.  A
segment = copy shared parameters, act up to n_step steps (sampling from
the policy), build the n-step-return loss, backprop on a private tape,
and apply the gradients to the shared store under its lock.  Episode
indices are reserved from a global counter so the shaping-reward
schedule and per-episode rng streams do not depend on worker timing.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .env import NavEnv
from .errors import ConfigError, ContractError, TaskError
from .memory import EpisodeMemory, build_inputs
from .model import Model, ModelConfig, make_target_code
from .nn import AdamState, RngStream, adam_step, save_checkpoint
from .rewards import EpisodeContext, RewardConfig, compute_reward
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class TrainConfig:
    workers: int = 4
    gamma: float = 0.99
    n_step: int = 20
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 7e-4
    total_episodes: int = 30000
    seed: int = 0
    max_steps: int = 100
    checkpoint_interval: int = 0  # episodes between snapshots; 0 disables

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.n_step < 1:
            raise ConfigError(f"n_step must be >= 1, got {self.n_step}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.total_episodes < 0:
            raise ConfigError(f"total_episodes must be >= 0, got {self.total_episodes}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")


def n_step_returns(trajectory, gamma: float, bootstrap: float) -> list:
    """Discounted returns per step, bootstrapped at the cut, reset at done."""
    returns = []
    acc = float(bootstrap)
    for _, _, _, reward, done in reversed(trajectory):
        if done:
            acc = 0.0
        acc = reward + gamma * acc
        returns.append(acc)
    returns.reverse()
    return returns


def rollout_losses(trajectory, gamma: float, value_coef: float, entropy_coef: float,
                   bootstrap: float, advantages=None) -> Tensor:
    """Combined actor, critic, and entropy loss for one rollout segment.

    trajectory entries are (logits, value, action, reward, done).  Returns
    bootstrap from the cut state unless the segment ended an episode; the
    advantage is a constant in the actor term, while the critic term keeps
    its gradient.  `advantages`, when given, supplies those constants
    explicitly (numerically identical at the collection point; needed by
    finite-difference gradient checks, which must not let the perturbation
    leak through the stop-gradient).
    """
    if not trajectory:
        raise ContractError("rollout_losses needs at least one step")
    returns = n_step_returns(trajectory, gamma, bootstrap)
    if advantages is None:
        advantages = [ret - float(value.data[0])
                      for (_, value, _, _, _), ret in zip(trajectory, returns)]

    total = None
    for (logits, value, action, _, _), ret, advantage in zip(trajectory, returns, advantages):
        log_probs = T.log_softmax_rows(logits)
        probs = T.softmax_rows(logits)
        actor = T.scale(T.pick(log_probs, int(action)), -advantage)
        delta = T.add_scalar(T.scale(T.pick(value, 0), -1.0), ret)
        critic = T.scale(T.square(delta), value_coef)
        neg_entropy = T.scale(T.sum_all(T.mul(probs, log_probs)), entropy_coef)
        step_loss = T.add(T.add(actor, critic), neg_entropy)
        total = step_loss if total is None else T.add(total, step_loss)
    return total


class TrainLog:
    """Thread-safe append-only JSON-lines stream; None path logs nothing."""

    def __init__(self, path=None):
        self._lock = threading.Lock()
        self._fh = open(path, "w") if path else None

    def record(self, **fields) -> None:
        if self._fh is None:
            return
        line = json.dumps(fields, sort_keys=True)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class SharedParamStore:
    """Master parameter values + Adam state + the global episode counter.

    All mutation happens under one lock, so gradient application is atomic
    and no update can be torn or lost.
    """

    def __init__(self, arrays: dict, lr: float):
        self._lock = threading.Lock()
        self._arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
        self._adam = AdamState({k: v.shape for k, v in self._arrays.items()})
        self._lr = lr
        self._total = 0
        self._next_index = 0
        self._inflight = 0
        self.episodes_done = 0
        self.episodes_aborted = 0
        self.batches_applied = 0
        self.batches_dropped = 0

    def set_budget(self, total_episodes: int) -> None:
        with self._lock:
            self._total = total_episodes

    # -- episode accounting

    def reserve_episode(self):
        """Claim the next episode index, or None once the budget is spoken for."""
        with self._lock:
            if self.episodes_done + self._inflight >= self._total:
                return None
            index = self._next_index
            self._next_index += 1
            self._inflight += 1
            return index

    def finish_episode(self) -> int:
        with self._lock:
            self._inflight -= 1
            self.episodes_done += 1
            return self.episodes_done

    def abort_episode(self) -> None:
        """Release a reservation without consuming budget (the index is burned)."""
        with self._lock:
            self._inflight -= 1
            self.episodes_aborted += 1

    # -- parameters

    def copy_into(self, params) -> None:
        with self._lock:
            for p in params:
                np.copyto(p.value.data, self._arrays[p.name])

    def snapshot(self) -> dict:
        with self._lock:
            return {k: v.copy() for k, v in self._arrays.items()}

    def adam_snapshot(self) -> AdamState:
        with self._lock:
            snap = AdamState({k: v.shape for k, v in self._arrays.items()})
            for k in self._arrays:
                np.copyto(snap.m[k], self._adam.m[k])
                np.copyto(snap.v[k], self._adam.v[k])
            snap.step = self._adam.step
            return snap

    def apply_gradients(self, grads: dict) -> bool:
        """One atomic Adam step; non-finite batches are dropped whole."""
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                with self._lock:
                    self.batches_dropped += 1
                return False
        with self._lock:
            adam_step(self._arrays, grads, self._adam, self._lr)
            self.batches_applied += 1
        return True


@dataclass
class TrainResult:
    arrays: dict
    episodes: int
    batches_applied: int
    batches_dropped: int
    episodes_aborted: int
    wall_seconds: float
    cpu_seconds: float


def _present_classes(plan, num_classes: int) -> list:
    return [c for c in range(num_classes) if plan.instances(c)]


def _run_episode(model: Model, store: SharedParamStore, env: NavEnv, target: int,
                 code, ep_rng: RngStream, reward_cfg: RewardConfig,
                 train_cfg: TrainConfig, use_shaping: bool) -> tuple:
    """One training episode; returns (steps, total_reward, batches, success)."""
    _, frame = env.reset(target, ep_rng.child("reset"))
    memory = EpisodeMemory()
    ctx = EpisodeContext(env, target, frame)
    act_rng = ep_rng.child("actions")
    drop_rng = ep_rng.child("dropout")
    h, c = model.init_state()
    num_classes = model.config.num_classes
    steps = 0
    episode_reward = 0.0
    batches = 0
    success = False
    loss_sum = 0.0
    entropy_sum = 0.0

    while not env.episode_over:
        store.copy_into(model.params)
        h, c = h.detach(), c.detach()
        trajectory = []
        with Tape() as tape:
            for _ in range(train_cfg.n_step):
                memory.update(frame, env.state, target)
                inputs = build_inputs(frame, env.state, target, memory, num_classes)
                out = model.step(inputs, env.state, code, h, c, rng=drop_rng, train=True)
                shifted = out.logits.data - out.logits.data.max()
                probs = np.exp(shifted)
                probs /= probs.sum()
                pos = probs[probs > 0.0]
                entropy_sum += float(-(pos * np.log(pos)).sum())
                action = act_rng.categorical(probs)
                prev = env.state
                _, result = env.step(action)
                total, _ = compute_reward(prev, action, result, ctx, reward_cfg, use_shaping)
                ctx.advance_frame(result)
                trajectory.append((out.logits, out.value, action, total, env.episode_over))
                episode_reward += total
                h, c = out.h, out.c
                frame = result
                steps += 1
                if result.done_valid:
                    success = True
                if env.episode_over:
                    break
            if env.episode_over:
                bootstrap = 0.0
            else:
                # Estimate the cut state's value from the same snapshot.  The
                # memory is deliberately not updated here; the next segment
                # performs the one real update for this frame.
                inputs = build_inputs(frame, env.state, target, memory, num_classes)
                peek = model.step(inputs, env.state, code, h, c, rng=drop_rng, train=True)
                bootstrap = float(peek.value.data[0])
            loss = rollout_losses(trajectory, train_cfg.gamma, train_cfg.value_coef,
                                  train_cfg.entropy_coef, bootstrap)
            model.params.zero_grads()
            tape.backward(loss)
        loss_sum += float(loss.data)
        grads = {p.name: (p.value.grad if p.value.grad is not None
                          else np.zeros_like(p.value.data))
                 for p in model.params}
        store.apply_gradients(grads)
        batches += 1
    return steps, episode_reward, batches, success, loss_sum, entropy_sum


def _worker_loop(worker_id: int, store: SharedParamStore, model: Model, plans,
                 reward_cfg: RewardConfig, train_cfg: TrainConfig, log: TrainLog,
                 allowed_targets, detectable, embeddings,
                 checkpoint_path=None) -> None:
    envs = {}
    num_classes = model.config.num_classes
    while True:
        index = store.reserve_episode()
        if index is None:
            return
        ep_rng = RngStream(train_cfg.seed, ("episode", index))
        plan = plans[int(ep_rng.child("plan").integers(0, len(plans)))]
        if plan.room_id not in envs:
            envs[plan.room_id] = NavEnv(plan, num_classes, max_steps=train_cfg.max_steps,
                                        train=True, detectable=detectable)
        env = envs[plan.room_id]
        classes = _present_classes(plan, num_classes)
        if allowed_targets is not None:
            classes = [c for c in classes if c in allowed_targets]
        if not classes:
            store.abort_episode()
            log.record(kind="aborted", episode_index=index, plan=plan.room_id,
                       reason="no eligible target class")
            continue
        target = classes[int(ep_rng.child("target").integers(0, len(classes)))]
        code = make_target_code(target, num_classes, model.config.target_mode, embeddings)
        use_shaping = index < reward_cfg.shaping_episodes
        try:
            steps, episode_reward, batches, success, loss_sum, entropy_sum = _run_episode(
                model, store, env, target, code, ep_rng, reward_cfg, train_cfg, use_shaping)
        except TaskError as exc:
            store.abort_episode()
            log.record(kind="aborted", episode_index=index, plan=plan.room_id,
                       reason=str(exc))
            continue
        done = store.finish_episode()
        log.record(kind="episode", episode_index=index, episodes_done=done,
                   plan=plan.room_id, target=target, steps=steps,
                   reward=round(episode_reward, 6), success=success,
                   batches=batches, worker=worker_id,
                   loss=round(loss_sum / max(batches, 1), 6),
                   entropy=round(entropy_sum / max(steps, 1), 6))
        if checkpoint_path and train_cfg.checkpoint_interval > 0 \
                and done % train_cfg.checkpoint_interval == 0:
            _save_store(store, checkpoint_path, model.config, done)


def _save_store(store: SharedParamStore, path, model_cfg: ModelConfig, episodes: int) -> None:
    meta = {"episodes": episodes, "model": _config_meta(model_cfg)}
    save_checkpoint(path, store.snapshot(), meta=meta, adam=store.adam_snapshot())


def _config_meta(cfg: ModelConfig) -> dict:
    return {
        "num_classes": cfg.num_classes, "stream_dim": cfg.stream_dim,
        "conv_channels": cfg.conv_channels, "hidden_dim": cfg.hidden_dim,
        "z_dim": cfg.z_dim, "fused_dim": cfg.fused_dim, "lstm_dim": cfg.lstm_dim,
        "dropout": cfg.dropout, "target_mode": cfg.target_mode,
        "streams": list(cfg.streams), "collab": cfg.collab,
    }


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, reward_cfg: RewardConfig,
          plans, log_path=None, checkpoint_path=None, allowed_targets=None,
          detectable=None, embeddings=None) -> TrainResult:
    """Run the full multi-worker training loop and return the final weights."""
    if not plans:
        raise ConfigError("training needs at least one floor plan")
    master = Model(model_cfg, RngStream(train_cfg.seed))
    store = SharedParamStore(master.params.as_arrays(), lr=train_cfg.lr)
    store.set_budget(train_cfg.total_episodes)
    log = TrainLog(log_path)
    t0 = time.perf_counter()
    cpu0 = time.process_time()

    workers = []
    for wid in range(train_cfg.workers):
        replica = Model(model_cfg, RngStream(train_cfg.seed))
        args = (wid, store, replica, plans, reward_cfg, train_cfg, log,
                allowed_targets, detectable, embeddings, checkpoint_path)
        if train_cfg.workers == 1:
            _worker_loop(*args)
        else:
            thread = threading.Thread(target=_worker_loop, args=args,
                                      name=f"trainer-{wid}", daemon=True)
            thread.start()
            workers.append(thread)
    for thread in workers:
        thread.join()

    wall = time.perf_counter() - t0
    cpu = time.process_time() - cpu0
    if checkpoint_path:
        _save_store(store, checkpoint_path, model_cfg, store.episodes_done)
    log.record(kind="summary", episodes=store.episodes_done,
               batches_applied=store.batches_applied,
               batches_dropped=store.batches_dropped,
               aborted=store.episodes_aborted,
               wall_seconds=round(wall, 3), cpu_seconds=round(cpu, 3))
    log.close()
    return TrainResult(arrays=store.snapshot(), episodes=store.episodes_done,
                       batches_applied=store.batches_applied,
                       batches_dropped=store.batches_dropped,
                       episodes_aborted=store.episodes_aborted,
                       wall_seconds=wall, cpu_seconds=cpu)
