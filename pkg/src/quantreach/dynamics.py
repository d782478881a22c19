"""Planar Dubins plant: ownship turns at a commanded rate, intruder flies straight.

State vector order: x_own, y_own, vx_own, vy_own, x_int, y_int, vx_int, vy_int
(ft and ft/s).  Left turns are counter-clockwise (positive rate).
"""

from __future__ import annotations

import enum
import math
from dataclasses import astuple, dataclass
from functools import lru_cache

import numpy as np

STATE_DIM = 8
X_OWN, Y_OWN, VX_OWN, VY_OWN, X_INT, Y_INT, VX_INT, VY_INT = range(STATE_DIM)

_SMALL_RATE = 1e-9


class Advisory(enum.IntEnum):
    COC = 0
    WL = 1
    WR = 2
    SL = 3
    SR = 4

    @property
    def turn_rate_deg(self) -> float:
        return _TURN_DEG[self]

    @property
    def turn_rate(self) -> float:
        """Signed turn rate in rad/s."""
        return math.radians(_TURN_DEG[self])

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def file_index(self) -> int:
        """1-based index used in network file names."""
        return int(self) + 1

    @classmethod
    def parse(cls, text: str) -> "Advisory":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown advisory {text!r}") from None


_TURN_DEG = {Advisory.COC: 0.0, Advisory.WL: 1.5, Advisory.WR: -1.5, Advisory.SL: 3.0, Advisory.SR: -3.0}


@dataclass(frozen=True)
class PlantState:
    x_own: float
    y_own: float
    vx_own: float
    vy_own: float
    x_int: float
    y_int: float
    vx_int: float
    vy_int: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, arr) -> "PlantState":
        arr = np.asarray(arr, dtype=float).reshape(-1)
        if arr.shape[0] != STATE_DIM:
            raise ValueError(f"expected {STATE_DIM} state entries, got {arr.shape[0]}")
        return cls(*(float(v) for v in arr))

    @property
    def speed_own(self) -> float:
        return math.hypot(self.vx_own, self.vy_own)

    @property
    def speed_int(self) -> float:
        return math.hypot(self.vx_int, self.vy_int)


@dataclass(frozen=True)
class NetworkInput:
    rho: float
    theta: float
    psi: float
    v_own: float
    v_int: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.theta, self.psi, self.v_own, self.v_int])


class ZeroSpeedError(ValueError):
    pass


def wrap_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    w = math.fmod(a + math.pi, 2 * math.pi)
    if w < 0:
        w += 2 * math.pi
    w -= math.pi
    return math.pi if w == -math.pi else w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    w = np.mod(np.asarray(a) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _turn_terms(rate: float, dt: float) -> tuple[float, float, float, float]:
    """cos, sin of the turned angle plus sin(c dt)/c and (1 - cos(c dt))/c."""
    ang = rate * dt
    if abs(rate) < _SMALL_RATE:
        return math.cos(ang), math.sin(ang), dt - rate * rate * dt**3 / 6, rate * dt * dt / 2
    return math.cos(ang), math.sin(ang), math.sin(ang) / rate, (1 - math.cos(ang)) / rate


def step_matrix_for_rate(rate: float, dt: float) -> np.ndarray:
    cs, sn, s_over, c_over = _turn_terms(rate, dt)
    m = np.eye(STATE_DIM)
    m[X_OWN, VX_OWN] = s_over
    m[X_OWN, VY_OWN] = -c_over
    m[Y_OWN, VX_OWN] = c_over
    m[Y_OWN, VY_OWN] = s_over
    m[VX_OWN, VX_OWN] = cs
    m[VX_OWN, VY_OWN] = -sn
    m[VY_OWN, VX_OWN] = sn
    m[VY_OWN, VY_OWN] = cs
    m[X_INT, VX_INT] = dt
    m[Y_INT, VY_INT] = dt
    return m


@lru_cache(maxsize=64)
def _cached(adv: Advisory, dt: float) -> np.ndarray:
    m = step_matrix_for_rate(adv.turn_rate, dt)
    m.flags.writeable = False
    return m


def step_matrix(adv: Advisory, dt: float = 1.0) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _cached(Advisory(adv), float(dt))


def back_step_matrix(adv: Advisory) -> np.ndarray:
    """Inverse of the one-second step, by running the closed form backwards."""
    return _cached(Advisory(adv), -1.0)


def derivative_matrix(adv: Advisory) -> np.ndarray:
    """Continuous-time A_c with x' = A_c x."""
    rate = Advisory(adv).turn_rate
    a = np.zeros((STATE_DIM, STATE_DIM))
    a[X_OWN, VX_OWN] = a[Y_OWN, VY_OWN] = 1.0
    a[X_INT, VX_INT] = a[Y_INT, VY_INT] = 1.0
    a[VX_OWN, VY_OWN] = -rate
    a[VY_OWN, VX_OWN] = rate
    return a


def propagate(s: PlantState, adv: Advisory, dt: float = 1.0) -> PlantState:
    return PlantState.from_array(step_matrix(adv, dt) @ s.as_array())


def state_to_network_inputs(s: PlantState | np.ndarray) -> NetworkInput:
    x = s.as_array() if isinstance(s, PlantState) else np.asarray(s, dtype=float)
    v_own = math.hypot(x[VX_OWN], x[VY_OWN])
    if v_own == 0:
        raise ZeroSpeedError("ownship speed is zero; heading undefined")
    heading_own = math.atan2(x[VY_OWN], x[VX_OWN])
    heading_int = math.atan2(x[VY_INT], x[VX_INT])
    dx = x[X_INT] - x[X_OWN]
    dy = x[Y_INT] - x[Y_OWN]
    return NetworkInput(
        rho=math.hypot(dx, dy),
        theta=wrap_angle(math.atan2(dy, dx) - heading_own),
        psi=wrap_angle(heading_int - heading_own),
        v_own=v_own,
        v_int=math.hypot(x[VX_INT], x[VY_INT]),
    )
