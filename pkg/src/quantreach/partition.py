"""Cover of the unsafe set by convex partitions, in the canonical frame.

The intruder sits at the origin flying due east.  Each partition fixes an
ownship position cell, an ownship heading sector and speed band, an intruder
speed band, the previous advisory and the vertical rate.

Partition regions are parametrized by six free coordinates
(x_own, y_own, vx_own, vy_own, x_int, vx_int); y_int and vy_int are
identically zero by construction, so they have zero rows in the basis.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from quantreach.dynamics import STATE_DIM, VX_INT, VX_OWN, VY_OWN, X_INT, X_OWN, Y_INT, Y_OWN, Advisory
from quantreach.geometry import AhPolytope, GeometryError
from quantreach.quant import QuantParams

NMAC_RADIUS = 500.0
TAU_DOTS = (0, -1)

FREE_DIMS = (X_OWN, Y_OWN, VX_OWN, VY_OWN, X_INT, VX_INT)
FIXED_DIMS = tuple(i for i in range(STATE_DIM) if i not in FREE_DIMS)


class PartitionConfigError(ValueError):
    pass


def velocity_polygon(theta_lb: float, theta_ub: float, v_min: float, v_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Half-spaces g @ (vx, vy) <= h of the pentagon b, d, e, c, a enclosing the annular sector.

    b, d lie on the lower heading bound at v_min and v_max, a, c on the upper
    one, and e is where the tangents to the v_max circle at c and d meet.
    Zero-length edges are skipped (v_min == 0 or v_min == v_max).
    """
    span = theta_ub - theta_lb
    if not span > 0:
        raise PartitionConfigError("heading sector must have positive width")
    if span > math.pi / 2 + 1e-12:
        raise PartitionConfigError("heading sector wider than 90 degrees; tangent intersection is ill-conditioned")
    if not (0 <= v_min <= v_max) or v_max <= 0:
        raise PartitionConfigError("need 0 <= v_min <= v_max and v_max > 0")

    lo_dir = np.array([math.cos(theta_lb), math.sin(theta_lb)])
    hi_dir = np.array([math.cos(theta_ub), math.sin(theta_ub)])
    mid = (theta_lb + theta_ub) / 2
    e = v_max / math.cos(span / 2) * np.array([math.cos(mid), math.sin(mid)])
    b, d = v_min * lo_dir, v_max * lo_dir
    a, c = v_min * hi_dir, v_max * hi_dir
    ring = [b, d, e, c, a]

    normals, offsets = [], []
    scale = max(v_max, 1.0)
    for start, end in zip(ring, ring[1:] + ring[:1]):
        edge = end - start
        length = math.hypot(*edge)
        if length <= 1e-12 * scale:
            continue
        # counter-clockwise ring: the outward normal is the edge turned clockwise
        n = np.array([edge[1], -edge[0]]) / length
        normals.append(n)
        offsets.append(float(n @ start))
    return np.array(normals), np.array(offsets)


def disk_cover_cells(radius: float, q_pos: float) -> list[tuple[int, int]]:
    """Grid cells whose closed square meets the open disk of the given radius."""
    reach = math.ceil(radius / q_pos)
    out = []
    for ix in range(-reach - 1, reach + 1):
        for iy in range(-reach - 1, reach + 1):
            near_x = _axis_gap(ix * q_pos, (ix + 1) * q_pos)
            near_y = _axis_gap(iy * q_pos, (iy + 1) * q_pos)
            if math.hypot(near_x, near_y) < radius:
                out.append((ix, iy))
    return out


def _axis_gap(lo: float, hi: float) -> float:
    return 0.0 if lo <= 0 <= hi else min(abs(lo), abs(hi))


@dataclass(frozen=True, order=True)
class PartitionKey:
    ix: int
    iy: int
    v_own: int
    v_int: int
    sector: int
    alpha_prev: Advisory
    tau_dot: int

    def descriptor(self) -> str:
        return (
            f"pos({self.ix},{self.iy})|vown({self.v_own})|vint({self.v_int})|th({self.sector})"
            f"|prev({Advisory(self.alpha_prev).name})|taudot({self.tau_dot})"
        )

    @classmethod
    def parse(cls, text: str) -> "PartitionKey":
        m = _DESCRIPTOR.fullmatch(text.strip())
        if m is None:
            raise ValueError(f"malformed partition descriptor {text!r}")
        ix, iy, vo, vi, th, prev, td = m.groups()
        return cls(int(ix), int(iy), int(vo), int(vi), int(th), Advisory.parse(prev), int(td))


_DESCRIPTOR = re.compile(
    r"pos\((-?\d+),(-?\d+)\)\|vown\((-?\d+)\)\|vint\((-?\d+)\)\|th\((\d+)\)\|prev\((\w+)\)\|taudot\((-?\d+)\)"
)


@dataclass(frozen=True, eq=False)
class UnsafePartition:
    key: PartitionKey
    region: AhPolytope

    @property
    def alpha_prev(self) -> Advisory:
        return self.key.alpha_prev

    @property
    def tau_dot(self) -> int:
        return self.key.tau_dot

    @property
    def descriptor(self) -> str:
        return self.key.descriptor()


def _basis() -> np.ndarray:
    v = np.zeros((STATE_DIM, len(FREE_DIMS)))
    for col, dim in enumerate(FREE_DIMS):
        v[dim, col] = 1.0
    return v


_BASIS = _basis()


def partition_region(key: PartitionKey, p: QuantParams) -> AhPolytope:
    """Region in the free coordinates (x_own, y_own, vx_own, vy_own, x_int, vx_int)."""
    q = p.q_pos
    rows, rhs = [], []

    def add(coeffs: dict[int, float], bound: float):
        r = np.zeros(len(FREE_DIMS))
        for col, val in coeffs.items():
            r[col] = val
        rows.append(r)
        rhs.append(bound)

    # ownship position cell (intruder at the origin)
    add({0: 1}, (key.ix + 1) * q)
    add({0: -1}, -key.ix * q)
    add({1: 1}, (key.iy + 1) * q)
    add({1: -1}, -key.iy * q)
    # ownship velocity
    lb, ub = p.sector_bounds(key.sector)
    g2, h2 = velocity_polygon(lb, ub, *p.speed_interval("own", key.v_own))
    for (gx, gy), h in zip(g2, h2):
        add({2: gx, 3: gy}, h)
    # intruder pinned at x = 0 with a speed band
    add({4: 1}, 0.0)
    add({4: -1}, 0.0)
    vlo, vhi = p.speed_interval("int", key.v_int)
    add({5: 1}, vhi)
    add({5: -1}, -vlo)
    return AhPolytope(_BASIS, np.zeros(STATE_DIM), np.array(rows), np.array(rhs))


def partition_keys(p: QuantParams, tau_dots=TAU_DOTS) -> Iterator[PartitionKey]:
    cells = disk_cover_cells(NMAC_RADIUS, p.q_pos)
    for ix, iy in cells:
        for vo in p.speed_cells("own"):
            for vi in p.speed_cells("int"):
                for k in range(p.num_sectors):
                    for adv in Advisory:
                        for td in tau_dots:
                            yield PartitionKey(ix, iy, vo, vi, k, adv, td)


def count_partitions(p: QuantParams, tau_dots=TAU_DOTS) -> int:
    return (
        len(disk_cover_cells(NMAC_RADIUS, p.q_pos))
        * len(p.speed_cells("own"))
        * len(p.speed_cells("int"))
        * p.num_sectors
        * len(Advisory)
        * len(tau_dots)
    )


def enumerate_unsafe_partitions(p: QuantParams, tau_dots=TAU_DOTS) -> Iterator[UnsafePartition]:
    """Lazy, deterministic stream of partitions; speed ranges come from p."""
    for td in tau_dots:
        if td not in TAU_DOTS:
            raise PartitionConfigError(f"tau_dot must be 0 or -1, got {td}")
    for key in partition_keys(p, tau_dots):
        yield UnsafePartition(key, partition_region(key, p))


def region_for_descriptor(text: str, p: QuantParams) -> UnsafePartition:
    key = PartitionKey.parse(text)
    return UnsafePartition(key, partition_region(key, p))


def partition_of_state(state: np.ndarray, alpha_prev: Advisory, tau_dot: int, p: QuantParams) -> PartitionKey:
    """Partition key whose cell holds a canonical-frame state (intruder at the origin)."""
    x = np.asarray(state, dtype=float)
    if abs(x[X_INT]) > 1e-6 or abs(x[Y_INT]) > 1e-6:
        raise GeometryError("state is not in the canonical frame (intruder must be at the origin)")
    heading = math.atan2(x[VY_OWN], x[VX_OWN]) % (2 * math.pi)
    return PartitionKey(
        math.floor(x[X_OWN] / p.q_pos),
        math.floor(x[Y_OWN] / p.q_pos),
        p.speed_index("own", math.hypot(x[VX_OWN], x[VY_OWN])),
        p.speed_index("int", abs(x[VX_INT])),
        min(math.floor(heading / p.q_theta), p.num_sectors - 1),
        Advisory(alpha_prev),
        tau_dot,
    )
