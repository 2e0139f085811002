"""Egocentric transforms (exactness + equivariance) and episode memories."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridmind import env as E
from gridmind import memory as M
from gridmind.nn import RngStream


def _state(cx, cy, heading=0, pitch=0):
    return E.AgentState(cx * E.CELL_METERS, cy * E.CELL_METERS, heading, pitch)


def random_pose_rows(rng, n, box=20):
    rows = []
    for _ in range(n):
        rows.append((
            int(rng.integers(-box, box)) * E.CELL_METERS,
            int(rng.integers(-box, box)) * E.CELL_METERS,
            float(E.HEADINGS[int(rng.integers(0, 4))]),
            float(E.PITCHES[int(rng.integers(0, 3))]),
        ))
    return rows


def rotate_pose_ccw(row):
    x, y, heading, pitch = row
    return (-y, x, (heading + 90) % 360, pitch)


# ---------------------------------------------------------------------------
# egocentric transform


def test_self_row_is_exact():
    cur = _state(4, 7, heading=270, pitch=-30)
    row = (cur.x, cur.y, float(cur.heading), float(cur.pitch))
    out = M.egocentric_transform([row], cur)
    assert out.tolist() == [[0.0, 0.0, 0.0, 1.0, 0.0, 1.0]]


def test_hand_case_one_cell_ahead_turned_left():
    cur = _state(2, 2, heading=0)
    row = (cur.x + 1.0, cur.y, 90.0, 0.0)
    out = M.egocentric_transform([row], cur)[0]
    assert out.tolist() == [1.0, 0.0, 1.0, 0.0, 0.0, 1.0]


def test_position_rotates_into_agent_frame():
    cur = _state(0, 0, heading=90)  # facing +y; +x of the world is the agent's right
    out = M.egocentric_transform([(0.5, 0.0, 90.0, 0.0)], cur)[0]
    assert out[0] == 0.0 and out[1] == -0.5


def test_rotation_equivariance_exact_all_headings():
    rng = RngStream(123)
    for heading in E.HEADINGS:
        for case in range(100):
            pitch = E.PITCHES[case % 3]
            cur = E.AgentState(int(rng.integers(-10, 10)) * 0.5,
                               int(rng.integers(-10, 10)) * 0.5, heading, pitch)
            rows = random_pose_rows(rng, 5)
            base = M.egocentric_transform(rows, cur)
            cur_rot = E.AgentState(-cur.y, cur.x, (cur.heading + 90) % 360, cur.pitch)
            rows_rot = [rotate_pose_ccw(r) for r in rows]
            rot = M.egocentric_transform(rows_rot, cur_rot)
            assert np.array_equal(base, rot)  # bit-exact, not approximate


def test_angle_features_bounded():
    rng = RngStream(5)
    cur = _state(0, 0, heading=180, pitch=30)
    rows = random_pose_rows(rng, 200)
    out = M.egocentric_transform(rows, cur)
    assert np.all(out[:, 2:] >= -1.0) and np.all(out[:, 2:] <= 1.0)


def test_egocentric_positions_matches_full_transform():
    cur = _state(3, 1, heading=270)
    rows = random_pose_rows(RngStream(8), 20)
    full = M.egocentric_transform(rows, cur)
    pos = M.egocentric_positions([(r[0], r[1]) for r in rows], cur)
    assert np.array_equal(full[:, :2], pos)


# ---------------------------------------------------------------------------
# polarize


def test_polarize_hand_cases():
    out = M.polarize(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))
    assert out[0].tolist() == [1.0, 0.0, 1.0]
    assert out[1].tolist() == [1.0, 1.0, 0.0]
    assert out[2].tolist() == [0.0, 0.0, 1.0]


def test_polarize_passes_extra_columns_through():
    rows = np.array([[3.0, 4.0, 9.0, -2.0]])
    out = M.polarize(rows)
    assert out.shape == (1, 5)
    assert out[0, 3:].tolist() == [9.0, -2.0]
    assert out[0, 0] == pytest.approx(5.0)


@settings(deadline=None, max_examples=60)
@given(x=st.floats(-50, 50), y=st.floats(-50, 50))
def test_polarize_radius_matches_euclid_oracle(x, y):
    out = M.polarize(np.array([[x, y]]))
    assert out[0, 0] == pytest.approx(math.sqrt(x * x + y * y), abs=1e-12)
    if out[0, 0] > 0:
        assert out[0, 1] ** 2 + out[0, 2] ** 2 == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# episode memory


def obs_with(detections=(), collided=False):
    return E.StepResult(tuple(detections), np.zeros((8, 7, 7)), collided, False, False)


def det(class_id, conf=0.9):
    return E.Detection(class_id, (0.4, 0.4, 0.6, 0.6), conf)


def test_history_counts_frames_not_actions():
    mem = M.EpisodeMemory()
    state = _state(1, 1)
    for _ in range(5):  # five decision frames: reset frame + four post-action frames
        mem.update(obs_with(), state, target=0)
    assert len(mem.history) == 5
    assert len(mem.sightings) == 0


def test_sightings_append_only_on_target_frames():
    mem = M.EpisodeMemory()
    state = _state(1, 1)
    mem.update(obs_with([det(2)]), state, target=0)
    assert len(mem.sightings) == 0
    mem.update(obs_with([det(0, conf=0.5), det(0, conf=0.8)]), state, target=0)
    assert len(mem.sightings) == 1
    assert mem.sightings[0][-1] == 0.8  # keeps the most confident sighting


def test_sightings_fifo_cap():
    mem = M.EpisodeMemory(M.MemoryCaps(sightings=40))
    for i in range(45):
        mem.update(obs_with([det(0, conf=i / 100)]), _state(1, 1), target=0)
    assert len(mem.sightings) == 40
    assert mem.sightings[0][-1] == pytest.approx(0.05)  # oldest five evicted


def test_obstacles_dedup_and_fifo():
    mem = M.EpisodeMemory(M.MemoryCaps(obstacles=3))
    wall = _state(2, 2, heading=0)
    mem.update(obs_with(collided=True), wall, target=0)
    mem.update(obs_with(collided=True), wall, target=0)
    assert len(mem.obstacles) == 1  # same blocked cell merged
    assert mem.obstacles[0] == ((3) * 0.5, 2 * 0.5)
    for cy in (3, 4, 5):
        mem.update(obs_with(collided=True), _state(2, cy, heading=0), target=0)
    assert len(mem.obstacles) == 3  # cap enforced, oldest evicted
    assert ((3) * 0.5, 2 * 0.5) not in mem._obstacle_set


def test_reset_clears_everything():
    mem = M.EpisodeMemory()
    mem.update(obs_with([det(0)], collided=True), _state(1, 1), target=0)
    mem.reset()
    assert len(mem.history) == len(mem.sightings) == len(mem.obstacles) == 0


# ---------------------------------------------------------------------------
# build_inputs


def test_build_inputs_no_detections_gives_zero_object_rows():
    mem = M.EpisodeMemory()
    state = _state(1, 1)
    mem.update(obs_with(), state, target=2)
    inputs = M.build_inputs(obs_with(), state, 2, mem, num_classes=4)
    assert inputs.objects.shape == (4, M.OBJECT_ROW_DIM)
    np.testing.assert_array_equal(inputs.objects.data, 0.0)
    assert inputs.sightings.shape == (0, 9)
    assert inputs.history.shape == (1, 4)
    assert inputs.obstacles.shape == (0, 2)


def test_build_inputs_object_rows_and_target_flag():
    mem = M.EpisodeMemory()
    state = _state(1, 1)
    frame = obs_with([det(1, 0.7), det(3, 0.4)])
    mem.update(frame, state, target=3)
    inputs = M.build_inputs(frame, state, 3, mem, num_classes=4)
    rows = inputs.objects.data
    emb = M.appearance_embeddings(4)
    np.testing.assert_array_equal(rows[1, :16], emb[1])
    assert rows[1, 20] == 0.7 and rows[1, 21] == 0.0
    assert rows[3, 21] == 1.0
    np.testing.assert_array_equal(rows[0], 0.0)
    assert len(mem.sightings) == 1  # target detected at the very first frame
    assert inputs.sightings.shape == (1, 9)


def test_appearance_embeddings_stable():
    a = M.appearance_embeddings(6)
    b = M.appearance_embeddings(6)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (6, 16)
