"""
经典控制环境
CartPole 与 Acrobot，沿用社区通行的动力学方程和常数
"""

import math
from typing import Optional

import numpy as np

from .base import Environment, EnvState


class CartPole(Environment):
    """
    倒立摆小车：显式欧拉积分，每步奖励 +1，
    |x| > 2.4 或 |θ| > 12° 时终止，回合上限 200 步
    """

    env_id = "cartpole"
    episode_cap = 200
    n_actions = 2
    observation_dim = 4

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    total_mass = masspole + masscart
    length = 0.5  # 半杆长
    polemass_length = masspole * length
    force_mag = 10.0
    tau = 0.02
    theta_threshold_radians = 12 * 2 * math.pi / 360
    x_threshold = 2.4

    def reset(self, seed: Optional[int] = None) -> EnvState:
        rng = np.random.default_rng(seed)
        self._physics = rng.uniform(low=-0.05, high=0.05, size=(4,))
        self.state = EnvState(self._physics.copy(), 0, False)
        return self.state

    def _transition(self, action):
        x, x_dot, theta, theta_dot = self._physics
        force = self.force_mag if action == 1 else -self.force_mag
        costheta = math.cos(theta)
        sintheta = math.sin(theta)

        temp = (force + self.polemass_length * theta_dot ** 2 * sintheta) / self.total_mass
        thetaacc = (self.gravity * sintheta - costheta * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * costheta ** 2 / self.total_mass)
        )
        xacc = temp - self.polemass_length * thetaacc * costheta / self.total_mass

        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * xacc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * thetaacc
        self._physics = np.array([x, x_dot, theta, theta_dot], dtype=np.float64)

        terminal = bool(
            x < -self.x_threshold or x > self.x_threshold
            or theta < -self.theta_threshold_radians or theta > self.theta_threshold_radians
        )
        return self._physics.copy(), 1.0, terminal


def _wrap(x: float, m: float, M: float) -> float:
    diff = M - m
    while x > M:
        x = x - diff
    while x < m:
        x = x + diff
    return x


def _bound(x: float, m: float, M: float) -> float:
    return min(max(x, m), M)


class Acrobot(Environment):
    """
    双连杆摆：四阶龙格-库塔积分 (dt = 0.2)，"book" 版动力学，
    末端高于横杆一个连杆长度时终止；每步奖励 −1，终止步为 0，回合上限 500 步
    """

    env_id = "acrobot"
    episode_cap = 500
    n_actions = 3
    observation_dim = 6

    dt = 0.2
    link_length_1 = 1.0
    link_mass_1 = 1.0
    link_mass_2 = 1.0
    link_com_pos_1 = 0.5
    link_com_pos_2 = 0.5
    link_moi = 1.0
    max_vel_1 = 4 * math.pi
    max_vel_2 = 9 * math.pi
    avail_torque = (-1.0, 0.0, 1.0)

    def reset(self, seed: Optional[int] = None) -> EnvState:
        rng = np.random.default_rng(seed)
        self._physics = rng.uniform(low=-0.1, high=0.1, size=(4,))
        self.state = EnvState(self._observation(), 0, False)
        return self.state

    def _observation(self) -> np.ndarray:
        s = self._physics
        return np.array([math.cos(s[0]), math.sin(s[0]), math.cos(s[1]), math.sin(s[1]),
                         s[2], s[3]], dtype=np.float64)

    def _dsdt(self, s_augmented: np.ndarray) -> np.ndarray:
        m1, m2 = self.link_mass_1, self.link_mass_2
        l1 = self.link_length_1
        lc1, lc2 = self.link_com_pos_1, self.link_com_pos_2
        i1 = i2 = self.link_moi
        g = 9.8
        a = s_augmented[-1]
        theta1, theta2, dtheta1, dtheta2 = s_augmented[:4]
        d1 = m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * math.cos(theta2)) + i1 + i2
        d2 = m2 * (lc2 ** 2 + l1 * lc2 * math.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2 ** 2 * math.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
            + phi2
        )
        ddtheta2 = (
            a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 ** 2 * math.sin(theta2) - phi2
        ) / (m2 * lc2 ** 2 + i2 - d2 ** 2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return np.array([dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0])

    def _rk4(self, y0: np.ndarray) -> np.ndarray:
        dt = self.dt
        k1 = self._dsdt(y0)
        k2 = self._dsdt(y0 + dt / 2.0 * k1)
        k3 = self._dsdt(y0 + dt / 2.0 * k2)
        k4 = self._dsdt(y0 + dt * k3)
        return y0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def _transition(self, action):
        torque = self.avail_torque[action]
        s_augmented = np.append(self._physics, torque)
        ns = self._rk4(s_augmented)[:4]
        ns[0] = _wrap(ns[0], -math.pi, math.pi)
        ns[1] = _wrap(ns[1], -math.pi, math.pi)
        ns[2] = _bound(ns[2], -self.max_vel_1, self.max_vel_1)
        ns[3] = _bound(ns[3], -self.max_vel_2, self.max_vel_2)
        self._physics = ns
        terminal = bool(-math.cos(ns[0]) - math.cos(ns[1] + ns[0]) > 1.0)
        reward = 0.0 if terminal else -1.0
        return self._observation(), reward, terminal
