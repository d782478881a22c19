"""State quantization in the canonical frame (intruder flying due east).

A quantized state names a cell of relative position, ownship heading sector
and the two speed bands.  Speed cells are anchored at zero and clipped to the
configured operating range, so a fixed speed such as [200, 200] is one
degenerate cell whose dequantized value is exactly 200.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from quantreach.dynamics import (
    STATE_DIM,
    VX_INT,
    VX_OWN,
    VY_INT,
    VY_OWN,
    X_INT,
    X_OWN,
    Y_INT,
    Y_OWN,
    NetworkInput,
    PlantState,
    wrap_angle,
)
from quantreach.geometry import (
    AhPolytope,
    EmptySetError,
    affine_map,
    bounding_box,
    intersect_halfspaces,
    is_feasible,
)
from quantreach.lp import LpBackend, LpStatus, solve_lp

RANGE_RHO = 60760.0
# a cell counts as overlapping only if some point lies this far inside it
INTERIOR_TOL = 1e-5
TWO_PI = 2.0 * math.pi


class QuantConfigError(ValueError):
    pass


@dataclass(frozen=True)
class QuantParams:
    q_pos: float = 500.0
    q_vel: float = 100.0
    q_theta: float = math.radians(1.5)
    vown_range: tuple[float, float] = (100.0, 1200.0)
    vint_range: tuple[float, float] = (0.0, 1200.0)

    def __post_init__(self):
        if not (self.q_pos > 0 and self.q_vel > 0 and self.q_theta > 0):
            raise QuantConfigError("quanta must be strictly positive")
        sectors = TWO_PI / self.q_theta
        if abs(sectors - round(sectors)) > 1e-6:
            raise QuantConfigError(f"2*pi / q_theta = {sectors:.9g} is not a whole number of sectors")
        if self.q_theta > math.pi / 2 + 1e-12:
            raise QuantConfigError("heading sectors wider than 90 degrees are not supported")
        for name in ("vown_range", "vint_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise QuantConfigError(f"{name} must satisfy 0 <= lo <= hi")
        if self.vown_range[0] <= 0:
            raise QuantConfigError("ownship speeds must be positive")
        object.__setattr__(self, "vown_range", tuple(float(v) for v in self.vown_range))
        object.__setattr__(self, "vint_range", tuple(float(v) for v in self.vint_range))

    @property
    def num_sectors(self) -> int:
        return int(round(TWO_PI / self.q_theta))

    @property
    def q_theta_deg(self) -> float:
        return math.degrees(self.q_theta)

    def speed_cells(self, which: str) -> range:
        lo, hi = self._range(which)
        first = math.floor(lo / self.q_vel)
        last = max(first, math.ceil(hi / self.q_vel) - 1)
        return range(first, last + 1)

    def speed_interval(self, which: str, idx: int) -> tuple[float, float]:
        """Cell [idx*q_vel, (idx+1)*q_vel] clipped to the operating range."""
        lo, hi = self._range(which)
        a = max(idx * self.q_vel, lo)
        b = min((idx + 1) * self.q_vel, hi)
        if a > b:
            raise QuantConfigError(f"speed cell {idx} lies outside the {which} range [{lo}, {hi}]")
        return a, b

    def speed_index(self, which: str, speed: float) -> int:
        cells = self.speed_cells(which)
        return min(max(math.floor(speed / self.q_vel), cells.start), cells.stop - 1)

    def sector_bounds(self, k: int) -> tuple[float, float]:
        return k * self.q_theta, (k + 1) * self.q_theta

    def _range(self, which: str) -> tuple[float, float]:
        if which == "own":
            return self.vown_range
        if which == "int":
            return self.vint_range
        raise ValueError(f"unknown speed kind {which!r}")


class QuantizedState(NamedTuple):
    dx: int
    dy: int
    theta_own: int
    v_own: int
    v_int: int


def quantize_state(s: PlantState | np.ndarray, p: QuantParams) -> QuantizedState:
    """Cell of a canonical-frame state.  Speeds outside the range map to the nearest end cell."""
    x = s.as_array() if isinstance(s, PlantState) else np.asarray(s, dtype=float)
    heading = math.atan2(x[VY_OWN], x[VX_OWN]) % TWO_PI
    sector = min(math.floor(heading / p.q_theta), p.num_sectors - 1)
    return QuantizedState(
        math.floor((x[X_INT] - x[X_OWN]) / p.q_pos),
        math.floor((x[Y_INT] - x[Y_OWN]) / p.q_pos),
        sector,
        p.speed_index("own", math.hypot(x[VX_OWN], x[VY_OWN])),
        p.speed_index("int", math.hypot(x[VX_INT], x[VY_INT])),
    )


def cell_center_offsets(q: QuantizedState, p: QuantParams) -> tuple[float, float]:
    return p.q_pos / 2 + q.dx * p.q_pos, p.q_pos / 2 + q.dy * p.q_pos


def dequantize_to_inputs(q: QuantizedState, p: QuantParams) -> NetworkInput:
    dx, dy = cell_center_offsets(q, p)
    heading = (q.theta_own + 0.5) * p.q_theta
    return NetworkInput(
        rho=math.hypot(dx, dy),
        theta=wrap_angle(math.atan2(dy, dx) - heading),
        psi=wrap_angle(-heading),
        v_own=sum(p.speed_interval("own", q.v_own)) / 2,
        v_int=sum(p.speed_interval("int", q.v_int)) / 2,
    )


def rho_min(q: QuantizedState, p: QuantParams) -> float:
    def axis(i):
        lo, hi = i * p.q_pos, (i + 1) * p.q_pos
        return 0.0 if lo <= 0 <= hi else min(abs(lo), abs(hi))

    return math.hypot(axis(q.dx), axis(q.dy))


def _state_row(**coeffs) -> np.ndarray:
    row = np.zeros(STATE_DIM)
    for k, v in coeffs.items():
        row[globals()[k.upper()]] = v
    return row


def _frozen_rows(*rows) -> np.ndarray:
    out = np.array(rows)
    out.flags.writeable = False
    return out


# rows: dx, dy, vx_own, vy_own, vx_int, vy_int
_DERIVED = _frozen_rows(
    _state_row(x_int=1, x_own=-1),
    _state_row(y_int=1, y_own=-1),
    _state_row(vx_own=1),
    _state_row(vy_own=1),
    _state_row(vx_int=1),
    _state_row(vy_int=1),
)
_POS_ROWS = _frozen_rows(_DERIVED[0], -_DERIVED[0], _DERIVED[1], -_DERIVED[1])
_INT_ROWS = _frozen_rows(_DERIVED[4], -_DERIVED[4], _DERIVED[5], -_DERIVED[5])


def position_rows(dx: int, dy: int, p: QuantParams) -> tuple[np.ndarray, np.ndarray]:
    h = np.array([(dx + 1) * p.q_pos, -dx * p.q_pos, (dy + 1) * p.q_pos, -dy * p.q_pos])
    return _POS_ROWS, h


@lru_cache(maxsize=8192)
def own_velocity_rows(sector: int, v_idx: int, p: QuantParams) -> tuple[np.ndarray, np.ndarray]:
    from quantreach.partition import velocity_polygon

    lb, ub = p.sector_bounds(sector)
    vmin, vmax = p.speed_interval("own", v_idx)
    g2, h = velocity_polygon(lb, ub, vmin, vmax)
    g = np.zeros((g2.shape[0], STATE_DIM))
    g[:, VX_OWN] = g2[:, 0]
    g[:, VY_OWN] = g2[:, 1]
    g.flags.writeable = False
    h.flags.writeable = False
    return g, h


def intruder_rows(v_idx: int, p: QuantParams) -> tuple[np.ndarray, np.ndarray]:
    """vx_int band and vy_int = 0.  The last two rows (and a zero-width band) are equalities."""
    lo, hi = p.speed_interval("int", v_idx)
    return _INT_ROWS, np.array([hi, -lo, 0.0, 0.0])


def intruder_strict_mask(v_idx: int, p: QuantParams) -> np.ndarray:
    lo, hi = p.speed_interval("int", v_idx)
    return np.array([hi > lo, hi > lo, False, False])


@lru_cache(maxsize=65536)
def _cell_rows(q: QuantizedState, p: QuantParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    parts = [position_rows(q.dx, q.dy, p), own_velocity_rows(q.theta_own, q.v_own, p), intruder_rows(q.v_int, p)]
    g = np.vstack([g for g, _ in parts])
    h = np.concatenate([h for _, h in parts])
    strict = np.concatenate([np.ones(len(g) - 4, dtype=bool), intruder_strict_mask(q.v_int, p)])
    for arr in (g, h, strict):
        arr.flags.writeable = False
    return g, h, strict


def cell_halfspaces(q: QuantizedState, p: QuantParams) -> tuple[np.ndarray, np.ndarray]:
    g, h, _ = _cell_rows(QuantizedState(*q), p)
    return g, h


def cell_strict_mask(q: QuantizedState, p: QuantParams) -> np.ndarray:
    return _cell_rows(QuantizedState(*q), p)[2]


def cell_polytope(q: QuantizedState, p: QuantParams) -> AhPolytope:
    g, h = cell_halfspaces(q, p)
    return AhPolytope.from_halfspaces(g, h)


class _SetQueries:
    """LP queries over one AH-polytope with extra half-spaces stacked on demand."""

    def __init__(self, s: AhPolytope, backend: LpBackend | None):
        self.s = s
        self.backend = backend

    def _stack(self, g, h, extra_col=None):
        s = self.s
        k, m = s.cons_mat.shape
        r = g.shape[0]
        width = m + (extra_col is not None)
        mat = np.zeros((k + r + (extra_col is not None), width))
        mat[:k, :m] = s.cons_mat
        mat[k : k + r, :m] = g @ s.basis
        rhs = np.empty(mat.shape[0])
        rhs[:k] = s.cons_rhs
        rhs[k : k + r] = h - g @ s.center
        if extra_col is not None:
            mat[k : k + r, m] = extra_col
            mat[-1, m] = 1.0
        return mat, rhs

    def margin(self, g, h, strict) -> float | None:
        norms = np.where(strict, np.sqrt((g * g).sum(axis=1)), 0.0)
        mat, rhs = self._stack(g, h, norms)
        rhs[-1] = 1.0
        obj = np.zeros(mat.shape[1])
        obj[-1] = -1.0
        res = solve_lp(mat, rhs, obj, self.backend)
        if res.status is LpStatus.INFEASIBLE:
            return None
        if not res.is_optimal:
            raise EmptySetError(f"margin LP ended {res.status.value}")
        return -res.objective

    def lowest(self, direction, g, h) -> float | None:
        mat, rhs = self._stack(g, h)
        res = solve_lp(mat, rhs, direction @ self.s.basis, self.backend)
        if res.status is LpStatus.INFEASIBLE:
            return None
        if not res.is_optimal:
            raise EmptySetError(f"extreme-value LP ended {res.status.value}")
        return res.objective + direction @ self.s.center

    def meets_interior(self, g, h, strict) -> bool:
        m = self.margin(g, h, strict)
        return m is not None and m > INTERIOR_TOL


def _index_span(lo: float, hi: float, step: float) -> range:
    tol = 1e-7 * max(1.0, abs(lo), abs(hi))
    return range(math.floor((lo - tol) / step), math.floor((hi + tol) / step) + 1)


def _open_span(lo: float, hi: float, step: float) -> range:
    """Cells whose open interval meets (lo, hi) by more than the interior tolerance."""
    if hi - lo <= 2 * INTERIOR_TOL:
        mid = math.floor((lo + hi) / 2 / step)
        return range(mid, mid + 1)
    return range(math.floor((lo + INTERIOR_TOL) / step), math.floor((hi - INTERIOR_TOL) / step) + 1)


def _heading_sectors(vx: tuple[float, float], vy: tuple[float, float], p: QuantParams) -> list[int]:
    tol = 1e-6 * max(1.0, abs(vx[0]), abs(vx[1]), abs(vy[0]), abs(vy[1]))
    if vx[0] - tol <= 0 <= vx[1] + tol and vy[0] - tol <= 0 <= vy[1] + tol:
        return list(range(p.num_sectors))
    corners = [(a, b) for a in vx for b in vy]
    ref = math.atan2(sum(c[1] for c in corners), sum(c[0] for c in corners))
    offs = [wrap_angle(math.atan2(b, a) - ref) for a, b in corners]
    eps = 1e-9
    first = math.floor((ref + min(offs) - eps) / p.q_theta)
    last = math.floor((ref + max(offs) + eps) / p.q_theta)
    n = p.num_sectors
    return sorted({k % n for k in range(first, last + 1)})


def _speed_candidates(vx, vy, which: str, p: QuantParams) -> list[int]:
    near_x = 0.0 if vx[0] <= 0 <= vx[1] else min(abs(vx[0]), abs(vx[1]))
    near_y = 0.0 if vy[0] <= 0 <= vy[1] else min(abs(vy[0]), abs(vy[1]))
    far = math.hypot(max(abs(vx[0]), abs(vx[1])), max(abs(vy[0]), abs(vy[1])))
    span = _index_span(math.hypot(near_x, near_y), far, p.q_vel)
    cells = p.speed_cells(which)
    return [i for i in span if i in cells]


@dataclass
class _Group:
    cands: list
    rows: Callable  # candidate -> (g, h, strict)
    exact: bool  # every candidate is known to meet the set's interior on its own
    free: bool = False  # single candidate whose region contains the whole set


def _box_inside(g: np.ndarray, h: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> bool:
    """Whether the state box [lo, hi] lies inside g x <= h (slack INTERIOR_TOL)."""
    worst = np.where(g > 0, g * hi, g * lo).sum(axis=1)
    return bool(np.all(worst <= h + INTERIOR_TOL))


def possible_quantized_states(
    p_set: AhPolytope, p: QuantParams, backend: LpBackend | None = None
) -> list[QuantizedState]:
    """Cells meeting the interior of p_set (thickness above INTERIOR_TOL), sorted.

    If p_set only touches cell boundaries, every touched cell is returned
    instead, so a nonempty set never yields an empty list.
    """
    try:
        box = bounding_box(affine_map(p_set, _DERIVED, np.zeros(len(_DERIVED))), backend)
    except EmptySetError:
        return []
    lo, hi = box.lo, box.hi
    if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        raise EmptySetError("state set is unbounded; cannot enumerate cells")
    queries = _SetQueries(p_set, backend)
    # the same box in state coordinates (only the derived coordinates matter)
    state_lo = np.zeros(STATE_DIM)
    state_hi = np.zeros(STATE_DIM)
    for i, dim in enumerate((VX_OWN, VY_OWN, VX_INT, VY_INT)):
        state_lo[dim], state_hi[dim] = lo[2 + i], hi[2 + i]

    # relative position: exact per column of the grid
    cols = _open_span(lo[0], hi[0], p.q_pos)
    pos = []
    if len(cols) == 1:
        pos = [(cols[0], r) for r in _open_span(lo[1], hi[1], p.q_pos)]
    else:
        for dx in cols:
            strip_h = np.array([(dx + 1) * p.q_pos - INTERIOR_TOL, -dx * p.q_pos - INTERIOR_TOL])
            strip_g = _POS_ROWS[:2]
            y_lo = queries.lowest(_DERIVED[1], strip_g, strip_h)
            if y_lo is None:
                continue
            y_hi = -queries.lowest(-_DERIVED[1], strip_g, strip_h)
            pos.extend((dx, r) for r in _open_span(y_lo, y_hi, p.q_pos))
    pos_group = _Group(pos, lambda c: (*position_rows(c[0], c[1], p), np.ones(4, dtype=bool)), exact=True)

    own = [
        (k, v)
        for k in _heading_sectors((lo[2], hi[2]), (lo[3], hi[3]), p)
        for v in _speed_candidates((lo[2], hi[2]), (lo[3], hi[3]), "own", p)
    ]
    own_group = _Group(own, lambda c: (*own_velocity_rows(c[0], c[1], p), None), exact=False)
    if len(own) == 1:
        own_group.free = _box_inside(*own_velocity_rows(*own[0], p), state_lo, state_hi)

    canonical = abs(lo[5]) <= INTERIOR_TOL and abs(hi[5]) <= INTERIOR_TOL
    cells = p.speed_cells("int")
    vint = [j for j in _open_span(lo[4], hi[4], p.q_vel) if j in cells] if canonical else []
    if canonical and not vint:
        vint = [p.speed_index("int", (lo[4] + hi[4]) / 2)]
    if not canonical:
        vint = _speed_candidates((lo[4], hi[4]), (lo[5], hi[5]), "int", p)
    vint_group = _Group(vint, lambda c: (*intruder_rows(c, p), intruder_strict_mask(c, p)), exact=canonical)
    if len(vint) == 1 and canonical:
        vint_group.free = _box_inside(*intruder_rows(vint[0], p), state_lo, state_hi)

    groups = (pos_group, own_group, vint_group)
    if len(pos) == 1:
        (dx, dy), q, t = pos[0], p.q_pos, INTERIOR_TOL
        pos_group.free = (
            dx * q - t <= lo[0] and hi[0] <= (dx + 1) * q + t and dy * q - t <= lo[1] and hi[1] <= (dy + 1) * q + t
        )
    out = _assemble(groups, queries)
    if not out:
        out = _touching_cells(p_set, p, lo, hi, backend)
    out.sort()
    return out


def _assemble(groups: tuple[_Group, ...], queries: _SetQueries) -> list[QuantizedState]:
    if not all(g.cands for g in groups):
        return []
    binding = [g for g in groups if not g.free]
    combos = itertools.product(*(g.cands for g in groups))
    if not binding or (len(binding) == 1 and binding[0].exact):
        return [_to_state(c) for c in combos]

    if sum(len(g.cands) > 1 for g in binding) > 1:
        # several factors vary: prune inexact ones on their own first
        for g in binding:
            if not g.exact and len(g.cands) > 1:
                g.cands = [c for c in g.cands if queries.meets_interior(*_strict_rows(g.rows(c)))]
        if not all(g.cands for g in groups):
            return []
        combos = itertools.product(*(g.cands for g in groups))

    out = []
    for combo in combos:
        parts = [_strict_rows(g.rows(c)) for g, c in zip(groups, combo) if not g.free]
        gm = np.vstack([a for a, _, _ in parts])
        hv = np.concatenate([b for _, b, _ in parts])
        sv = np.concatenate([s for _, _, s in parts])
        if queries.meets_interior(gm, hv, sv):
            out.append(_to_state(combo))
    return out


def _strict_rows(rows):
    g, h, strict = rows
    return g, h, np.ones(len(h), dtype=bool) if strict is None else strict


def _to_state(combo) -> QuantizedState:
    (dx, dy), (k, v), j = combo
    return QuantizedState(dx, dy, k, v, j)


def _touching_cells(p_set, p, lo, hi, backend) -> list[QuantizedState]:
    cands = itertools.product(
        _index_span(lo[0], hi[0], p.q_pos),
        _index_span(lo[1], hi[1], p.q_pos),
        _heading_sectors((lo[2], hi[2]), (lo[3], hi[3]), p),
        _speed_candidates((lo[2], hi[2]), (lo[3], hi[3]), "own", p),
        _speed_candidates((lo[4], hi[4]), (lo[5], hi[5]), "int", p),
    )
    out = []
    for c in cands:
        q = QuantizedState(*c)
        if is_feasible(intersect_halfspaces(p_set, *cell_halfspaces(q, p)), backend):
            out.append(q)
    return out
