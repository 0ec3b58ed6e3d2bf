import numpy as np
import pytest

from skillemb import scene


def _state(eff, blocks, colors=(0, 1)):
    return scene.SceneState(np.array(eff, float), np.array(blocks, float), np.array(colors))


def test_vector_roundtrip():
    s = _state([0.3, 0.4], [[0.2, 0.0], [0.6, 0.0]])
    s.held, s.armed, s.offset, s.lifted = 1, False, 0.05, True
    back = scene.SceneState.from_vector(s.to_vector(), s.colors)
    assert np.array_equal(back.to_vector(), s.to_vector())


def test_action_clipped_and_workspace_bounded():
    s = _state([0.1, 0.5], [[1.0, 0.0]], (0,))
    out = scene.step(s, [-5.0, 0.0], max_speed=0.4)
    assert out.eff[0] == scene.WORKSPACE[0]
    out = scene.step(s, [0.5, 0.0], max_speed=0.4)
    assert out.eff[0] == pytest.approx(0.3)


def test_step_does_not_mutate_input():
    s = _state([0.5, 0.5], [[0.2, 0.0]], (0,))
    before = s.to_vector().copy()
    scene.step(s, [1, 1], 0.4)
    assert np.array_equal(s.to_vector(), before)


@pytest.mark.parametrize("task", scene.TASKS)
@pytest.mark.parametrize("success", [True, False])
def test_scripted_outcome_matches_request(task, success):
    rng = np.random.default_rng(11)
    ep = scene.scripted_episode(task, rng, success, target_steps=36, max_speed=0.4)
    assert scene.goal_reached(task, ep.states[-1], ep.states[0]) == success
    # consecutive effector moves never exceed the speed limit
    eff = np.array([s.eff for s in ep.states])
    assert np.linalg.norm(np.diff(eff, axis=0), axis=1).max() <= 0.4 * np.sqrt(2) + 1e-9


def test_views_differ_and_frame_shape():
    rng = np.random.default_rng(0)
    s, _ = scene.initial_scene("stack", rng)
    a, b = scene.render(s, 0, 64), scene.render(s, 1, 64)
    assert a.shape == (64, 64, 3) and a.dtype == np.uint8
    assert not np.array_equal(a, b)


def test_unknown_task():
    with pytest.raises(ValueError):
        scene.initial_scene("juggle", np.random.default_rng(0))
