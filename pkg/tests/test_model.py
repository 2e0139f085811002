"""Encoder semantics, collaboration gating, policy heads, gradients."""

import numpy as np
import pytest

from gridmind import model as MD
from gridmind import tensor as T
from gridmind.env import AgentState
from gridmind.errors import ConfigError, ContractError
from gridmind.memory import OBJECT_ROW_DIM, StreamInputs
from gridmind.nn import RngStream
from gridmind.tensor import Tensor, finite_diff_check

N_CLASSES = 4


def small_config(**kw):
    base = dict(num_classes=N_CLASSES, stream_dim=6, conv_channels=2, hidden_dim=5,
                z_dim=7, fused_dim=9, lstm_dim=8, dropout=0.0)
    base.update(kw)
    return MD.ModelConfig(**base)


def make_model(seed=0, **kw):
    return MD.Model(small_config(**kw), RngStream(seed))


def rand_pose(rng):
    return (int(rng.integers(-6, 6)) * 0.5, int(rng.integers(-6, 6)) * 0.5,
            float([0, 90, 180, 270][int(rng.integers(0, 4))]),
            float([-30, 0, 30][int(rng.integers(0, 3))]))


def make_inputs(seed=7, n_sight=3, n_hist=4, n_obs=2):
    rng = RngStream(seed)
    sightings = np.array([
        list(rng.uniform(0, 1, 4)) + list(rand_pose(rng)) + [float(rng.uniform(0, 1))]
        for _ in range(n_sight)]).reshape(n_sight, 9)
    history = np.array([rand_pose(rng) for _ in range(n_hist)]).reshape(n_hist, 4)
    obstacles = np.array([[int(rng.integers(-6, 6)) * 0.5, int(rng.integers(-6, 6)) * 0.5]
                          for _ in range(n_obs)]).reshape(n_obs, 2)
    return StreamInputs(
        scene=Tensor(rng.random((8, 7, 7))),
        objects=Tensor(rng.uniform(-1, 1, (N_CLASSES, OBJECT_ROW_DIM))),
        sightings=Tensor(sightings),
        history=Tensor(history),
        obstacles=Tensor(obstacles),
    )


STATE = AgentState(1.0, 0.5, 90, 0)
TARGET = MD.make_target_code(1, N_CLASSES)


# ---------------------------------------------------------------------------
# configuration


def test_config_requires_intuition():
    with pytest.raises(ConfigError):
        small_config(streams=("search", "navigation"))


def test_config_rejects_unknown_and_duplicate_streams():
    with pytest.raises(ConfigError):
        small_config(streams=("intuition", "telepathy"))
    with pytest.raises(ConfigError):
        small_config(streams=("intuition", "search", "search"))


def test_config_canonicalizes_stream_order():
    cfg = small_config(streams=("obstacle", "intuition", "search"))
    assert cfg.streams == ("intuition", "search", "obstacle")


def test_config_validates_scalars():
    with pytest.raises(ConfigError):
        small_config(dropout=1.0)
    with pytest.raises(ConfigError):
        small_config(lstm_dim=0)
    with pytest.raises(ConfigError):
        small_config(target_mode="glyph")


# ---------------------------------------------------------------------------
# target codes


def test_one_hot_target():
    code = MD.make_target_code(3, 5)
    assert code.vector.tolist() == [0, 0, 0, 1, 0]


def test_similarity_self_is_one_and_bounded():
    rng = RngStream(3)
    emb = rng.normal(size=(5, 8))
    code = MD.make_target_code(2, 5, "similarity", emb)
    assert code.vector[2] == 1.0
    assert np.all(code.vector >= -1.0) and np.all(code.vector <= 1.0)


def test_similarity_orthogonal_equals_one_hot():
    code = MD.make_target_code(1, 4, "similarity", np.eye(4))
    assert code.vector.tolist() == [0, 1, 0, 0]


def test_similarity_zero_norm_rejected():
    emb = np.ones((3, 4))
    emb[1] = 0.0
    with pytest.raises(ConfigError):
        MD.make_target_code(0, 3, "similarity", emb)


def test_target_class_out_of_range():
    with pytest.raises(ConfigError):
        MD.make_target_code(4, 4)


# ---------------------------------------------------------------------------
# individual encoders


def test_intuition_zero_input_matches_hand_formula():
    model = make_model()
    np.copyto(model.params["intuition.conv.b"].data, [0.5, -0.25])
    out = model._encode_intuition(Tensor(np.zeros((8, 7, 7))), None, False)
    planes = np.repeat(np.maximum([0.5, -0.25], 0.0), 49)
    expect = planes @ model.params["intuition.proj.w"].data + model.params["intuition.proj.b"].data
    np.testing.assert_allclose(out.data, expect, atol=1e-15)
    assert out.data.shape == (6,)


def test_search_uniform_logits_average_rows():
    model = make_model()
    inputs = make_inputs()
    out = model._encode_search(inputs.objects, TARGET, None, False)
    enc = np.maximum(inputs.objects.data @ model.params["search.enc.w"].data, 0.0)
    np.testing.assert_allclose(out.data, enc.mean(axis=0), atol=1e-12)


def test_search_zero_rows_give_zero():
    model = make_model()
    out = model._encode_search(Tensor(np.zeros((N_CLASSES, OBJECT_ROW_DIM))), TARGET, None, False)
    np.testing.assert_array_equal(out.data, 0.0)


def test_search_permutation_invariance():
    model = make_model(seed=5)
    rng = RngStream(11)
    logits = rng.normal(size=(N_CLASSES, N_CLASSES))
    np.copyto(model.params["search.attn.logits"].data, logits)
    objects = rng.uniform(-1, 1, (N_CLASSES, OBJECT_ROW_DIM))
    base = model._encode_search(Tensor(objects), TARGET, None, False).data.copy()
    perm = np.array([2, 0, 3, 1])
    np.copyto(model.params["search.attn.logits"].data, logits[:, perm])
    permuted = model._encode_search(Tensor(objects[perm]), TARGET, None, False).data
    np.testing.assert_allclose(permuted, base, atol=1e-12)


def test_search_one_hot_attention_row_is_target_row():
    model = make_model()
    weights = model._attention_weights(MD.make_target_code(2, N_CLASSES))
    assert weights.tolist() == [0, 0, 1, 0]


def test_search_similarity_attention_clamps_negatives():
    code = MD.TargetCode("similarity", np.array([1.0, -0.5, 0.25, 0.0]))
    weights = make_model()._attention_weights(code)
    assert weights[1] == 0.0
    assert weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(weights, [0.8, 0.0, 0.2, 0.0])


def test_navigation_empty_memory_yields_zeros():
    model = make_model()
    out = model._encode_navigation(Tensor(np.zeros((0, 9))), STATE, TARGET, None, False)
    np.testing.assert_array_equal(out.data, np.zeros(6))


def test_navigation_single_row_hand_formula():
    from gridmind.memory import egocentric_transform

    model = make_model(seed=9)
    inputs = make_inputs(n_sight=1)
    out = model._encode_navigation(inputs.sightings, STATE, TARGET, None, False).data

    raw = inputs.sightings.data
    ego = egocentric_transform(raw[:, 4:8], STATE)
    row = np.concatenate([raw[0, :4], ego[0], raw[0, 8:9]])
    P = model.params
    h = sum(row @ P[f"navigation.tcn{k}.w"].data[k // 2] + P[f"navigation.tcn{k}.b"].data[0]
            for k in (1, 3, 5))
    per_row = np.maximum(row @ P["navigation.fnt.w"].data + P["navigation.fnt.b"].data, 0.0)
    hid = np.maximum(TARGET.vector @ P["navigation.gate1.w"].data + P["navigation.gate1.b"].data, 0.0)
    gate = 1.0 / (1.0 + np.exp(-(hid @ P["navigation.gate2.w"].data + P["navigation.gate2.b"].data)))
    np.testing.assert_allclose(out, h * per_row * gate, atol=1e-12)


def test_exploration_self_row_and_duplication_invariance():
    model = make_model(seed=2)
    self_row = np.array([[STATE.x, STATE.y, float(STATE.heading), float(STATE.pitch)]])
    one = model._encode_exploration(Tensor(self_row), STATE).data
    P = model.params
    feat = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    expect = np.maximum(feat @ P["exploration.f1.w"].data + P["exploration.f1.b"].data, 0.0)
    expect = expect @ P["exploration.f2.w"].data + P["exploration.f2.b"].data
    np.testing.assert_allclose(one, expect, atol=1e-15)

    doubled = model._encode_exploration(Tensor(np.repeat(self_row, 2, axis=0)), STATE).data
    np.testing.assert_array_equal(doubled, one)


def test_exploration_empty_history_is_a_contract_violation():
    with pytest.raises(ContractError):
        make_model()._encode_exploration(Tensor(np.zeros((0, 4))), STATE)


def test_obstacle_empty_gives_zeros_and_direction_matters():
    model = make_model(seed=4)
    state = AgentState(1.0, 1.0, 0, 0)
    empty = model._encode_obstacle(Tensor(np.zeros((0, 2))), state)
    np.testing.assert_array_equal(empty.data, np.zeros(6))
    ahead = model._encode_obstacle(Tensor(np.array([[1.5, 1.0]])), state).data
    behind = model._encode_obstacle(Tensor(np.array([[0.5, 1.0]])), state).data
    assert not np.array_equal(ahead, behind)


# ---------------------------------------------------------------------------
# collaboration gating


def test_zeroed_gate_parameters_halve_every_stream():
    model = make_model(seed=6)
    for s in model.config.streams:
        np.copyto(model.params[f"collab.gate.{s}.w"].data, 0.0)
        np.copyto(model.params[f"collab.gate.{s}.b"].data, 0.0)
    outs = model.encode(make_inputs(), STATE, TARGET)
    recal = model.recalibrate(outs)
    for s in model.config.streams:
        np.testing.assert_array_equal(recal[s].data, 0.5 * outs[s].data)


def test_gates_lie_strictly_inside_unit_interval():
    model = make_model(seed=8)
    outs = model.encode(make_inputs(seed=3), STATE, TARGET)
    recal = model.recalibrate(outs)
    for s in model.config.streams:
        o, r = outs[s].data, recal[s].data
        mask = o != 0.0
        assert mask.any()
        ratio = r[mask] / o[mask]
        assert np.all(ratio > 0.0) and np.all(ratio < 1.0)


def test_collab_disabled_passes_through():
    model = make_model(collab=False)
    outs = model.encode(make_inputs(), STATE, TARGET)
    recal = model.recalibrate(outs)
    assert all(recal[s] is outs[s] for s in model.config.streams)
    assert "collab.squeeze.w" not in model.params


# ---------------------------------------------------------------------------
# policy head and whole-step behavior


def test_policy_emits_six_logits_and_valid_distribution():
    model = make_model()
    h, c = model.init_state()
    out = model.step(make_inputs(), STATE, TARGET, h, c)
    assert out.logits.data.shape == (6,)
    assert out.value.data.shape == (1,)
    probs = np.exp(out.logits.data - out.logits.data.max())
    probs /= probs.sum()
    assert probs.sum() == pytest.approx(1.0)
    assert np.all(probs > 0)


def test_step_is_deterministic_in_eval_mode():
    model = make_model(seed=12)
    inputs = make_inputs()
    h, c = model.init_state()
    a = model.step(inputs, STATE, TARGET, h, c)
    b = model.step(inputs, STATE, TARGET, h, c)
    np.testing.assert_array_equal(a.logits.data, b.logits.data)
    np.testing.assert_array_equal(a.value.data, b.value.data)


def test_dropout_needs_rng_and_perturbs_training_forward():
    model = make_model(dropout=0.5)
    inputs = make_inputs()
    with pytest.raises(ContractError):
        model.encode(inputs, STATE, TARGET, rng=None, train=True)
    h, c = model.init_state()
    eval_out = model.step(inputs, STATE, TARGET, h, c)
    train_out = model.step(inputs, STATE, TARGET, h, c, rng=RngStream(99), train=True)
    assert not np.array_equal(eval_out.logits.data, train_out.logits.data)


def test_activation_means_order_and_oracle():
    model = make_model(seed=1)
    outs = model.encode(make_inputs(), STATE, TARGET)
    recal = model.recalibrate(outs)
    means = MD.activation_means(recal)
    assert len(means) == 5
    for i, s in enumerate(MD.STREAMS):
        assert means[i] == pytest.approx(float(recal[s].data.mean()), abs=1e-12)


def test_disabled_streams_report_zero_activation():
    model = make_model(streams=("intuition",), collab=False)
    h, c = model.init_state()
    out = model.step(make_inputs(), STATE, TARGET, h, c)
    assert out.activation_means[1:] == (0.0, 0.0, 0.0, 0.0)
    assert out.activation_means[0] != 0.0


def test_intuition_only_registers_no_other_stream_parameters():
    model = make_model(streams=("intuition",))
    for name in model.params.names():
        assert not name.startswith(("search.", "navigation.", "exploration.", "obstacle."))
        assert not name.startswith(("collab.gate.search", "collab.gate.navigation",
                                    "collab.gate.exploration", "collab.gate.obstacle"))
    assert "intuition.conv.w" in model.params
    assert "collab.gate.intuition.w" in model.params
    assert model.params["fuse.ln.g"].data.shape == (6,)


def test_same_seed_same_parameters():
    a, b = make_model(seed=21), make_model(seed=21)
    for name in a.params.names():
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    c = make_model(seed=22)
    assert any(not np.array_equal(a.params[n].data, c.params[n].data)
               for n in a.params.names())


def test_step_with_fresh_memories_runs():
    model = make_model()
    inputs = StreamInputs(
        scene=Tensor(np.zeros((8, 7, 7))),
        objects=Tensor(np.zeros((N_CLASSES, OBJECT_ROW_DIM))),
        sightings=Tensor(np.zeros((0, 9))),
        history=Tensor(np.array([[STATE.x, STATE.y, 90.0, 0.0]])),
        obstacles=Tensor(np.zeros((0, 2))),
    )
    h, c = model.init_state()
    out = model.step(inputs, STATE, TARGET, h, c)
    assert out.activation_means[2] == 0.0 and out.activation_means[4] == 0.0
    assert np.all(np.isfinite(out.logits.data))


# ---------------------------------------------------------------------------
# gradients through everything


def full_model_loss(model, inputs, h, c):
    def f():
        out = model.step(inputs, STATE, TARGET, h, c)
        policy_bit = T.sum_all(T.log_softmax_rows(out.logits))
        return T.add(policy_bit, T.sum_all(out.value))
    return f


def test_full_model_gradient_check():
    model = make_model(seed=33)
    inputs = make_inputs(seed=17)
    h, c = model.init_state()
    f = full_model_loss(model, inputs, h, c)
    rng = RngStream(55)
    checked = 0
    for p in model.params:
        n = min(2, p.data.size)
        err = finite_diff_check(f, p.value, samples=n, rng=rng.child(p.name))
        assert err <= 1e-4, f"{p.name}: relative error {err}"
        checked += n
    assert checked >= 50
