"""
环境测试
CartPole 对照独立实现的一步动力学、Acrobot 基本性质、网格世界布局与转移
"""

import hashlib
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from memec.envs import (
    Acrobot,
    CartPole,
    action_count,
    available_envs,
    four_room,
    make_env,
    open_room,
    parse_layout,
)
from memec.envs.gridworld import LAYOUT_DIR
from memec.utils.exceptions import ConfigError, DomainError, UsageError, ValidationError

LAYOUT_SHA256 = {
    "open_room.txt": "144a56ccb012c4458cdb4742a754315b157236c4751564298e377a9e42188dec",
    "four_room.txt": "76589923eacd1ec5d90203158f3e91bf99cdf527b4feecfa4d6cef3ab3fd710d",
}


def _cartpole_oracle(state, action):
    """按公开的方程独立写出的一步欧拉积分"""
    x, x_dot, theta, theta_dot = state
    force = 10.0 if action == 1 else -10.0
    total_mass = 1.1
    pml = 0.05
    temp = (force + pml * theta_dot ** 2 * math.sin(theta)) / total_mass
    theta_acc = (9.8 * math.sin(theta) - math.cos(theta) * temp) / (
        0.5 * (4.0 / 3.0 - 0.1 * math.cos(theta) ** 2 / total_mass))
    x_acc = temp - pml * theta_acc * math.cos(theta) / total_mass
    return np.array([x + 0.02 * x_dot, x_dot + 0.02 * x_acc,
                     theta + 0.02 * theta_dot, theta_dot + 0.02 * theta_acc])


class TestRegistry:

    def test_registered_ids(self):
        assert {"cartpole", "acrobot", "open_room", "four_room"} <= set(available_envs())

    def test_unknown_env(self):
        with pytest.raises(ValidationError) as info:
            make_env("pong")
        assert info.value.keys == ["experiment.env_id"]

    def test_action_counts(self):
        assert [action_count(make_env(e)) for e in ("cartpole", "acrobot", "open_room")] == [2, 3, 4]


class TestCartPole:

    def test_reset_is_seeded(self):
        a = CartPole().reset(seed=3).observation
        b = CartPole().reset(seed=3).observation
        np.testing.assert_array_equal(a, b)
        assert np.all(np.abs(a) <= 0.05)

    def test_step_matches_oracle(self):
        env = CartPole()
        state = env.reset(seed=0)
        obs = state.observation
        for action in (1, 0, 1, 1, 0):
            expected = _cartpole_oracle(obs, action)
            state, reward, _ = env.step(action)
            np.testing.assert_allclose(state.observation, expected, rtol=1e-12, atol=1e-15)
            assert reward == 1.0
            obs = state.observation

    def test_terminates_when_pole_falls(self):
        env = CartPole()
        env.reset(seed=1)
        done, steps = False, 0
        while not done:
            _, _, done = env.step(1)
            steps += 1
        assert steps < 200

    def test_episode_cap(self):
        env = CartPole()
        env.reset(seed=2)
        # 平衡控制：按杆的角速度方向推车
        done, steps = False, 0
        while not done:
            theta, theta_dot = env.state.observation[2:]
            _, _, done = env.step(1 if theta + 0.5 * theta_dot > 0 else 0)
            steps += 1
        assert steps <= 200

    def test_misuse(self):
        env = CartPole()
        with pytest.raises(UsageError):
            env.step(0)
        env.reset(seed=0)
        with pytest.raises(DomainError):
            env.step(2)


class TestAcrobot:

    def test_observation_layout(self):
        obs = Acrobot().reset(seed=0).observation
        assert obs.shape == (6,)
        assert obs[0] ** 2 + obs[1] ** 2 == pytest.approx(1.0)
        assert obs[2] ** 2 + obs[3] ** 2 == pytest.approx(1.0)

    def test_rewards_and_bounds(self):
        env = Acrobot()
        env.reset(seed=4)
        rng = np.random.default_rng(0)
        for _ in range(100):
            state, reward, done = env.step(int(rng.integers(3)))
            assert reward in (-1.0, 0.0)
            assert abs(state.observation[4]) <= 4 * math.pi
            assert abs(state.observation[5]) <= 9 * math.pi
            if done:
                assert reward == 0.0 or state.step_count == env.episode_cap
                break

    def test_deterministic(self):
        def rollout():
            env = Acrobot()
            env.reset(seed=7)
            return [env.step(a)[0].observation for a in (0, 1, 2, 2, 0)]
        for a, b in zip(rollout(), rollout()):
            np.testing.assert_array_equal(a, b)


class TestGridWorld:

    @pytest.mark.parametrize("name", sorted(LAYOUT_SHA256))
    def test_layout_files_unchanged(self, name):
        digest = hashlib.sha256((LAYOUT_DIR / name).read_bytes()).hexdigest()
        assert digest == LAYOUT_SHA256[name]

    def test_open_room_geometry(self):
        env = open_room()
        assert env.layout.start == (0, 0) and env.layout.goal == (9, 9)
        assert env.observation_dim == 100 and env.episode_cap == 100

    def test_four_room_geometry(self):
        env = four_room()
        assert env.layout.start == (1, 1) and env.layout.goal == (11, 11)
        assert env.observation_dim == 169 and env.episode_cap == 500
        assert env.layout.reachable()

    def test_shortest_path_reaches_goal(self):
        env = open_room()
        env.reset()
        rewards = []
        for action in [1] * 9 + [3] * 9:
            _, reward, done = env.step(action)
            rewards.append(reward)
        assert done and rewards[-1] == 1.0 and sum(rewards) == 1.0

    def test_walls_block_movement(self):
        env = four_room()
        start = env.reset().observation
        state, reward, done = env.step(0)
        np.testing.assert_array_equal(state.observation, start)
        assert reward == 0.0 and not done

    def test_one_hot_observation(self):
        obs = open_room().reset().observation
        assert obs.sum() == 1.0 and obs[0] == 1.0

    def test_episode_cap_ends_episode(self):
        env = open_room()
        env.reset()
        for _ in range(100):
            _, _, done = env.step(0)
        assert done
        with pytest.raises(UsageError):
            env.step(0)

    @pytest.mark.parametrize("text", [
        "S..\n...",             # 缺少终点
        "S.G\n..",              # 行宽不一致
        "S#G",                  # 不可达
        "S.x\n..G",             # 非法字符
        "SSG",                  # 多个起点
    ])
    def test_invalid_layouts(self, text):
        with pytest.raises(ConfigError):
            parse_layout(text, 10)
