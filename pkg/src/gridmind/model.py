"""The navigation agent: five ability encoders, a gating collaboration
module that recalibrates them against each other, and a recurrent
actor-critic policy head.

Stream order is fixed everywhere (concatenation, activation traces):
intuition, search, navigation, exploration, obstacle.  Ablations drop a
stream entirely -- its parameters are never registered and the fusion
widths shrink accordingly.  The intuition stream is mandatory; it is the
baseline agent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .env import ACTION_NAMES, LOCAL_GRID_CHANNELS, LOCAL_GRID_SIZE, AgentState
from .errors import ConfigError, ContractError, DimensionError
from .memory import (OBJECT_ROW_DIM, StreamInputs, egocentric_positions,
                     egocentric_transform, polarize)
from .nn import ParameterSet, RngStream, init_lstm, lstm_step, uniform_init
from .tensor import Tensor

STREAMS = ("intuition", "search", "navigation", "exploration", "obstacle")

# A sighting row enters the navigation encoder as bbox(4) + agent-frame
# pose(6) + confidence(1).
NAV_ROW_DIM = 11


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    stream_dim: int = 64
    conv_channels: int = 4
    hidden_dim: int = 64
    z_dim: int = 128
    fused_dim: int = 256
    lstm_dim: int = 256
    dropout: float = 0.1
    target_mode: str = "one_hot"
    streams: tuple = STREAMS
    collab: bool = True

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        for field in ("stream_dim", "conv_channels", "hidden_dim", "z_dim",
                      "fused_dim", "lstm_dim"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be >= 1, got {getattr(self, field)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.target_mode not in ("one_hot", "similarity"):
            raise ConfigError(f"unknown target_mode {self.target_mode!r}")
        chosen = tuple(self.streams)
        unknown = [s for s in chosen if s not in STREAMS]
        if unknown:
            raise ConfigError(f"unknown streams {unknown}; valid: {list(STREAMS)}")
        if len(set(chosen)) != len(chosen):
            raise ConfigError(f"duplicate stream names in {chosen}")
        if "intuition" not in chosen:
            raise ConfigError("the intuition stream is required; it is the baseline agent")
        object.__setattr__(self, "streams", tuple(s for s in STREAMS if s in chosen))


class TargetCode(NamedTuple):
    mode: str
    vector: np.ndarray  # length num_classes


class PolicyOutput(NamedTuple):
    logits: Tensor           # (6,) action preferences
    value: Tensor            # (1,) state-value estimate
    h: Tensor
    c: Tensor
    activation_means: tuple  # 5 floats in STREAMS order; 0.0 for disabled streams


def make_target_code(class_id: int, num_classes: int, mode: str = "one_hot",
                     embeddings: np.ndarray | None = None) -> TargetCode:
    """Encode the goal class: an indicator, or cosine similarities to it."""
    if not 0 <= class_id < num_classes:
        raise ConfigError(f"target class {class_id} out of range [0, {num_classes})")
    if mode == "one_hot":
        vec = np.zeros(num_classes)
        vec[class_id] = 1.0
        return TargetCode(mode, vec)
    if mode != "similarity":
        raise ConfigError(f"unknown target mode {mode!r}")
    if embeddings is None:
        raise ConfigError("similarity target mode needs a class embedding table")
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] != num_classes:
        raise ConfigError(f"embedding table shape {emb.shape} does not cover {num_classes} classes")
    norms = np.linalg.norm(emb, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ConfigError(f"zero-norm embedding for class index {zero[0]}")
    unit = emb / norms[:, None]
    vec = np.clip(unit @ unit[class_id], -1.0, 1.0)
    vec[class_id] = 1.0
    return TargetCode(mode, vec)


def activation_means(outputs: dict) -> tuple:
    """Mean activation per stream, fixed STREAMS order, 0.0 when disabled."""
    return tuple(float(np.mean(outputs[s].data)) if s in outputs else 0.0
                 for s in STREAMS)


class Model:
    """Immutable during a forward pass; gradients land on the parameter set."""

    def __init__(self, config: ModelConfig, rng: RngStream):
        self.config = config
        self.params = ParameterSet()
        self._build(rng.child("model"))

    # ------------------------------------------------------------------
    # construction

    def _build(self, rng: RngStream) -> None:
        cfg, P = self.config, self.params
        d, hid, n = cfg.stream_dim, cfg.hidden_dim, cfg.num_classes
        if "intuition" in cfg.streams:
            cc = cfg.conv_channels
            P.add("intuition.conv.w",
                  uniform_init(rng.child("it.conv"), (cc, LOCAL_GRID_CHANNELS), LOCAL_GRID_CHANNELS))
            P.add("intuition.conv.b", np.zeros(cc))
            flat = cc * LOCAL_GRID_SIZE * LOCAL_GRID_SIZE
            P.add("intuition.proj.w", uniform_init(rng.child("it.proj"), (flat, d), flat))
            P.add("intuition.proj.b", np.zeros(d))
        if "search" in cfg.streams:
            P.add("search.enc.w",
                  uniform_init(rng.child("st.enc"), (OBJECT_ROW_DIM, d), OBJECT_ROW_DIM))
            P.add("search.attn.logits", np.zeros((n, n)))
        if "navigation" in cfg.streams:
            for k in (1, 3, 5):
                P.add(f"navigation.tcn{k}.w",
                      uniform_init(rng.child("nt.tcn", k), (k, NAV_ROW_DIM), k * NAV_ROW_DIM))
                P.add(f"navigation.tcn{k}.b", np.zeros(1))
            P.add("navigation.fnt.w", uniform_init(rng.child("nt.fnt"), (NAV_ROW_DIM, d), NAV_ROW_DIM))
            P.add("navigation.fnt.b", np.zeros(d))
            P.add("navigation.gate1.w", uniform_init(rng.child("nt.g1"), (n, hid), n))
            P.add("navigation.gate1.b", np.zeros(hid))
            P.add("navigation.gate2.w", uniform_init(rng.child("nt.g2"), (hid, d), hid))
            P.add("navigation.gate2.b", np.zeros(d))
        if "exploration" in cfg.streams:
            P.add("exploration.f1.w", uniform_init(rng.child("et.f1"), (7, hid), 7))
            P.add("exploration.f1.b", np.zeros(hid))
            P.add("exploration.f2.w", uniform_init(rng.child("et.f2"), (hid, d), hid))
            P.add("exploration.f2.b", np.zeros(d))
        if "obstacle" in cfg.streams:
            P.add("obstacle.f1.w", uniform_init(rng.child("ot.f1"), (3, hid), 3))
            P.add("obstacle.f1.b", np.zeros(hid))
            P.add("obstacle.f2.w", uniform_init(rng.child("ot.f2"), (hid, d), hid))
            P.add("obstacle.f2.b", np.zeros(d))
        width = len(cfg.streams) * d
        if cfg.collab:
            P.add("collab.squeeze.w", uniform_init(rng.child("collab.z"), (width, cfg.z_dim), width))
            P.add("collab.squeeze.b", np.zeros(cfg.z_dim))
            for s in cfg.streams:
                P.add(f"collab.gate.{s}.w",
                      uniform_init(rng.child("collab", s), (cfg.z_dim, d), cfg.z_dim))
                P.add(f"collab.gate.{s}.b", np.zeros(d))
        P.add("fuse.ln.g", np.ones(width))
        P.add("fuse.ln.b", np.zeros(width))
        P.add("fuse.proj.w", uniform_init(rng.child("fuse"), (width, cfg.fused_dim), width))
        P.add("fuse.proj.b", np.zeros(cfg.fused_dim))
        init_lstm(P, "lstm", cfg.fused_dim + n, cfg.lstm_dim, rng.child("lstm"))
        P.add("actor.w", uniform_init(rng.child("actor"), (cfg.lstm_dim, len(ACTION_NAMES)), cfg.lstm_dim))
        P.add("actor.b", np.zeros(len(ACTION_NAMES)))
        P.add("critic.w", uniform_init(rng.child("critic"), (cfg.lstm_dim, 1), cfg.lstm_dim))
        P.add("critic.b", np.zeros(1))

    def init_state(self):
        z = self.config.lstm_dim
        return Tensor(np.zeros(z)), Tensor(np.zeros(z))

    # ------------------------------------------------------------------
    # encoders

    def _drop(self, x: Tensor, rng, train: bool) -> Tensor:
        return T.dropout(x, self.config.dropout, rng, train)

    def _encode_intuition(self, scene: Tensor, rng, train: bool) -> Tensor:
        P = self.params
        x = T.relu(T.pointwise_conv(scene, P["intuition.conv.w"].value,
                                    P["intuition.conv.b"].value))
        x = T.affine(T.flatten(x), P["intuition.proj.w"].value, P["intuition.proj.b"].value)
        return self._drop(x, rng, train)

    def _attention_weights(self, target: TargetCode) -> np.ndarray:
        # Convex mixture over attention rows.  One-hot targets reduce to
        # exactly the target's row; similarity targets blend rows of related
        # classes, with anti-correlated classes dropped.  Self-similarity 1
        # keeps the normalizer >= 1.
        clipped = np.maximum(target.vector, 0.0)
        return clipped / clipped.sum()

    def _encode_search(self, objects: Tensor, target: TargetCode, rng, train: bool) -> Tensor:
        P = self.params
        if objects.data.shape != (self.config.num_classes, OBJECT_ROW_DIM):
            raise DimensionError(
                f"object table shape {objects.data.shape} != "
                f"({self.config.num_classes}, {OBJECT_ROW_DIM})")
        enc = T.relu(T.matmul(objects, P["search.enc.w"].value))
        rows = T.softmax_rows(P["search.attn.logits"].value)
        attn = T.matmul(Tensor(self._attention_weights(target)), rows)
        return self._drop(T.matmul(attn, enc), rng, train)

    def _encode_navigation(self, sightings: Tensor, state: AgentState,
                           target: TargetCode, rng, train: bool) -> Tensor:
        raw = sightings.data
        if raw.shape[0] == 0:
            return Tensor(np.zeros(self.config.stream_dim))
        ego = egocentric_transform(raw[:, 4:8], state)
        x = Tensor(np.concatenate([raw[:, :4], ego, raw[:, 8:9]], axis=1))
        P = self.params
        mixed = None
        for k in (1, 3, 5):
            conv = T.temporal_conv(x, P[f"navigation.tcn{k}.w"].value,
                                   P[f"navigation.tcn{k}.b"].value)
            mixed = conv if mixed is None else T.add(mixed, conv)
        per_row = T.relu(T.affine(x, P["navigation.fnt.w"].value, P["navigation.fnt.b"].value))
        core = T.matmul(mixed, per_row)
        hidden = T.relu(T.affine(Tensor(target.vector), P["navigation.gate1.w"].value,
                                 P["navigation.gate1.b"].value))
        gate = T.sigmoid(T.affine(hidden, P["navigation.gate2.w"].value,
                                  P["navigation.gate2.b"].value))
        return self._drop(T.mul(core, gate), rng, train)

    def _row_mlp(self, prefix: str, rows: np.ndarray) -> Tensor:
        P = self.params
        h = T.relu(T.affine(Tensor(rows), P[f"{prefix}.f1.w"].value, P[f"{prefix}.f1.b"].value))
        out = T.affine(h, P[f"{prefix}.f2.w"].value, P[f"{prefix}.f2.b"].value)
        return T.reduce(out, "mean", axis=0)

    def _encode_exploration(self, history: Tensor, state: AgentState) -> Tensor:
        raw = history.data
        if raw.shape[0] == 0:
            raise ContractError("pose history is empty; it must hold at least the start pose")
        return self._row_mlp("exploration", polarize(egocentric_transform(raw, state)))

    def _encode_obstacle(self, obstacles: Tensor, state: AgentState) -> Tensor:
        raw = obstacles.data
        if raw.shape[0] == 0:
            return Tensor(np.zeros(self.config.stream_dim))
        return self._row_mlp("obstacle", polarize(egocentric_positions(raw, state)))

    # ------------------------------------------------------------------
    # forward passes

    def encode(self, inputs: StreamInputs, state: AgentState, target: TargetCode,
               rng=None, train: bool = False) -> dict:
        if train and self.config.dropout > 0.0 and rng is None:
            raise ContractError("training forward needs an rng for dropout")
        outs = {}
        for s in self.config.streams:
            if s == "intuition":
                outs[s] = self._encode_intuition(inputs.scene, rng, train)
            elif s == "search":
                outs[s] = self._encode_search(inputs.objects, target, rng, train)
            elif s == "navigation":
                outs[s] = self._encode_navigation(inputs.sightings, state, target, rng, train)
            elif s == "exploration":
                outs[s] = self._encode_exploration(inputs.history, state)
            else:
                outs[s] = self._encode_obstacle(inputs.obstacles, state)
        return outs

    def recalibrate(self, outputs: dict) -> dict:
        if not self.config.collab:
            return dict(outputs)
        P = self.params
        joint = T.concat([outputs[s] for s in self.config.streams])
        z = T.relu(T.affine(joint, P["collab.squeeze.w"].value, P["collab.squeeze.b"].value))
        recal = {}
        for s in self.config.streams:
            gate = T.sigmoid(T.affine(z, P[f"collab.gate.{s}.w"].value,
                                      P[f"collab.gate.{s}.b"].value))
            recal[s] = T.mul(outputs[s], gate)
        return recal

    def policy(self, recal: dict, target: TargetCode, h: Tensor, c: Tensor):
        P = self.params
        joint = T.concat([recal[s] for s in self.config.streams])
        normed = T.layer_norm(joint, P["fuse.ln.g"].value, P["fuse.ln.b"].value)
        fused = T.relu(T.affine(normed, P["fuse.proj.w"].value, P["fuse.proj.b"].value))
        state_in = T.concat([fused, Tensor(target.vector)])
        h2, c2 = lstm_step(state_in, h, c, P["lstm.w"], P["lstm.b"])
        logits = T.affine(h2, P["actor.w"].value, P["actor.b"].value)
        value = T.affine(h2, P["critic.w"].value, P["critic.b"].value)
        return logits, value, h2, c2

    def step(self, inputs: StreamInputs, state: AgentState, target: TargetCode,
             h: Tensor, c: Tensor, rng=None, train: bool = False) -> PolicyOutput:
        outs = self.encode(inputs, state, target, rng, train)
        recal = self.recalibrate(outs)
        logits, value, h2, c2 = self.policy(recal, target, h, c)
        return PolicyOutput(logits, value, h2, c2, activation_means(recal))
