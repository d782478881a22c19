"""AH-polytopes: affine images of half-space polytopes kept in factored form.

A polytope ``<V, c, C, d>`` represents ``{V a + c | C a <= d}``.  Affine maps
and half-space intersections are exact matrix bookkeeping; everything that
needs a decision (emptiness, support values, bounding boxes, witness points)
goes through the LP backend in :mod:`quantreach.lp`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from quantreach.lp import FEAS_TOL, LpBackend, LpOutcome, LpStatus, solve_lp


class GeometryError(ValueError):
    pass


class DimensionMismatchError(GeometryError):
    pass


class EmptySetError(GeometryError):
    pass


class DegenerateBasisError(GeometryError):
    """Reduced basis is not invertible; fall back to any interior LP point instead."""


def _frozen(arr, ndim: int, name: str) -> np.ndarray:
    out = np.array(arr, dtype=float)
    if ndim == 2 and out.ndim == 1 and out.size == 0:
        out = out.reshape(0, 0)
    if out.ndim != ndim:
        raise DimensionMismatchError(f"{name} must be {ndim}-d, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise GeometryError(f"{name} has non-finite entries")
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class AhPolytope:
    basis: np.ndarray
    center: np.ndarray
    cons_mat: np.ndarray
    cons_rhs: np.ndarray

    def __post_init__(self):
        basis = _frozen(self.basis, 2, "basis")
        center = _frozen(self.center, 1, "center")
        cons_rhs = _frozen(self.cons_rhs, 1, "cons_rhs")
        cons_mat = np.array(self.cons_mat, dtype=float)
        if cons_mat.size == 0:
            cons_mat = cons_mat.reshape(cons_rhs.shape[0], basis.shape[1])
        cons_mat = _frozen(cons_mat, 2, "cons_mat")
        if basis.shape[0] != center.shape[0]:
            raise DimensionMismatchError(
                f"basis has {basis.shape[0]} rows but center has {center.shape[0]} entries"
            )
        if cons_mat.shape != (cons_rhs.shape[0], basis.shape[1]):
            raise DimensionMismatchError(
                f"cons_mat shape {cons_mat.shape} incompatible with "
                f"{cons_rhs.shape[0]} constraints over {basis.shape[1]} variables"
            )
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "cons_mat", cons_mat)
        object.__setattr__(self, "cons_rhs", cons_rhs)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def num_vars(self) -> int:
        return self.basis.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.cons_rhs.shape[0]

    @classmethod
    def from_box(cls, lo: Sequence[float], hi: Sequence[float]) -> "AhPolytope":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = lo.shape[0]
        eye = np.eye(n)
        return cls(eye, np.zeros(n), np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def from_halfspaces(cls, g: np.ndarray, h: np.ndarray) -> "AhPolytope":
        g = np.asarray(g, dtype=float)
        n = g.shape[1]
        return cls(np.eye(n), np.zeros(n), g, h)

    def dump(self) -> str:
        """Debug text: one line per field, row-major, 17 significant digits."""

        def fmt(arr):
            return " ".join(f"{v:.17g}" for v in np.asarray(arr).ravel())

        return "\n".join(
            [
                f"basis {self.basis.shape[0]}x{self.basis.shape[1]}: {fmt(self.basis)}",
                f"center {self.center.shape[0]}: {fmt(self.center)}",
                f"cons_mat {self.cons_mat.shape[0]}x{self.cons_mat.shape[1]}: {fmt(self.cons_mat)}",
                f"cons_rhs {self.cons_rhs.shape[0]}: {fmt(self.cons_rhs)}",
            ]
        )


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if np.any(self.lo > self.hi):
            raise GeometryError("box has lo > hi")

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


def affine_map(p: AhPolytope, w, b) -> AhPolytope:
    w = np.atleast_2d(np.asarray(w, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if w.shape[1] != p.dim:
        raise DimensionMismatchError(f"map has {w.shape[1]} columns, polytope is {p.dim}-d")
    if b.shape[0] != w.shape[0]:
        raise DimensionMismatchError(f"offset has {b.shape[0]} entries, map has {w.shape[0]} rows")
    return AhPolytope(w @ p.basis, w @ p.center + b, p.cons_mat, p.cons_rhs)


def linear_transform(p: AhPolytope, w) -> AhPolytope:
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return affine_map(p, w, np.zeros(w.shape[0]))


def intersect_halfspaces(p: AhPolytope, g, h) -> AhPolytope:
    """p intersected with {x | g x <= h}."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    if g.shape[1] != p.dim:
        raise DimensionMismatchError(f"half-spaces have {g.shape[1]} columns, polytope is {p.dim}-d")
    if g.shape[0] != h.shape[0]:
        raise DimensionMismatchError("half-space rows and rhs length differ")
    return AhPolytope(
        p.basis,
        p.center,
        np.vstack([p.cons_mat, g @ p.basis]),
        np.concatenate([p.cons_rhs, h - g @ p.center]),
    )


def minimize(p: AhPolytope, w, backend: LpBackend | None = None) -> LpOutcome:
    """min w.x over p; the argument is returned in the polytope's variable space."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != p.dim:
        raise DimensionMismatchError(f"direction has {w.shape[0]} entries, polytope is {p.dim}-d")
    res = solve_lp(p.cons_mat, p.cons_rhs, w @ p.basis, backend)
    if res.status is LpStatus.OPTIMAL:
        return LpOutcome(res.status, float(res.objective + w @ p.center), res.argument)
    return res


def maximize(p: AhPolytope, w, backend: LpBackend | None = None) -> LpOutcome:
    res = minimize(p, -np.asarray(w, dtype=float), backend)
    if res.status is LpStatus.OPTIMAL:
        return LpOutcome(res.status, -res.objective, res.argument)
    return res


def is_feasible(p: AhPolytope, backend: LpBackend | None = None) -> bool:
    # relax by feas_tol so sets that merely touch are reported nonempty
    res = solve_lp(p.cons_mat, p.cons_rhs + _row_norms(p.cons_mat) * FEAS_TOL,
                   np.zeros(p.num_vars), backend)
    return res.status is LpStatus.OPTIMAL


def feasible_point(p: AhPolytope, backend: LpBackend | None = None) -> np.ndarray | None:
    """Some point of p (ambient coordinates), or None when p is empty."""
    res = solve_lp(p.cons_mat, p.cons_rhs, np.zeros(p.num_vars), backend)
    if res.status is not LpStatus.OPTIMAL:
        return None
    return p.basis @ res.argument + p.center


def _row_norms(mat: np.ndarray) -> np.ndarray:
    return np.linalg.norm(mat, axis=1) if mat.size else np.zeros(mat.shape[0])


def bounding_box(p: AhPolytope, backend: LpBackend | None = None) -> Box:
    n = p.dim
    lo = np.empty(n)
    hi = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        low = minimize(p, e, backend)
        if low.status is LpStatus.INFEASIBLE:
            raise EmptySetError("bounding box of an empty set")
        high = maximize(p, e, backend)
        lo[i] = low.objective if low.is_optimal else -np.inf
        hi[i] = high.objective if high.is_optimal else np.inf
    return Box(lo, hi)


def contains_point(p: AhPolytope, x, tol: float = FEAS_TOL, backend: LpBackend | None = None) -> bool:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != p.dim:
        raise DimensionMismatchError(f"point has {x.shape[0]} entries, polytope is {p.dim}-d")
    resid = x - p.center
    g = np.vstack([p.cons_mat, p.basis, -p.basis])
    h = np.concatenate(
        [p.cons_rhs + _row_norms(p.cons_mat) * tol, resid + tol, -resid + tol]
    )
    res = solve_lp(g, h, np.zeros(p.num_vars), backend)
    return res.status is LpStatus.OPTIMAL


def to_halfspaces(p: AhPolytope, drop_dims: Iterable[int] = ()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-space form of p over the kept dimensions.

    Requires the reduced basis (rows of the kept dimensions) to be square and
    invertible.  Returns (g, h, kept) with rows normalized to unit length.
    """
    drop = sorted(set(int(i) for i in drop_dims))
    kept = np.array([i for i in range(p.dim) if i not in drop], dtype=int)
    vr = p.basis[kept]
    if vr.shape[0] != vr.shape[1]:
        raise DegenerateBasisError(
            f"reduced basis is {vr.shape[0]}x{vr.shape[1]}; a square basis is required"
        )
    if np.linalg.cond(vr) > 1e12:
        raise DegenerateBasisError("reduced basis is singular or badly conditioned")
    vinv = np.linalg.inv(vr)
    g = p.cons_mat @ vinv
    h = p.cons_rhs + g @ p.center[kept]
    norms = _row_norms(g)
    live = norms > 1e-12
    if np.any(h[~live] < -FEAS_TOL):
        raise EmptySetError("half-space form is empty")
    return g[live] / norms[live, None], h[live] / norms[live], kept


def chebyshev_center(p: AhPolytope, drop_dims: Iterable[int] = (), backend: LpBackend | None = None) -> np.ndarray:
    """Center of the largest inscribed ball, computed over the kept dimensions.

    Dropped dimensions must be constant over p (zero basis rows); they are
    re-inserted at their fixed values.  Opposing constraint pairs that pin a
    direction (equalities) are kept as equalities instead of forcing a zero
    radius.
    """
    drop = sorted(set(int(i) for i in drop_dims))
    for i in drop:
        if np.any(np.abs(p.basis[i]) > 1e-12):
            raise GeometryError(f"dimension {i} is not constant over the set and cannot be dropped")
    g, h, kept = to_halfspaces(p, drop)
    k, n = g.shape
    equality = _equality_rows(g, h)
    radius_col = np.where(equality, 0.0, 1.0)
    lp_mat = np.vstack([np.column_stack([g, radius_col]), np.append(np.zeros(n), -1.0)])
    lp_rhs = np.append(h, 0.0)
    obj = np.append(np.zeros(n), -1.0)
    res = solve_lp(lp_mat, lp_rhs, obj, backend)
    if res.status is LpStatus.INFEASIBLE:
        raise EmptySetError("Chebyshev center of an empty set")
    if res.status is LpStatus.UNBOUNDED:
        raise GeometryError("set is unbounded; Chebyshev center undefined")
    out = p.center.copy()
    out[kept] = res.argument[:n]
    return out


def _equality_rows(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Flag rows whose negation (with negated rhs) is also present."""
    k = g.shape[0]
    flags = np.zeros(k, dtype=bool)
    if k < 2:
        return flags
    dots = g @ g.T
    scale = np.maximum(1.0, np.abs(h))
    for i in range(k):
        for j in np.nonzero(dots[i] < -1.0 + 1e-9)[0]:
            if abs(h[i] + h[j]) <= FEAS_TOL * max(scale[i], scale[j]):
                flags[i] = flags[j] = True
    return flags


def support_values(p: AhPolytope, directions: np.ndarray, backend: LpBackend | None = None) -> np.ndarray:
    """max d.x over p for each row d of directions."""
    out = np.empty(len(directions))
    for i, d in enumerate(directions):
        res = maximize(p, d, backend)
        if not res.is_optimal:
            raise GeometryError(f"support value not finite ({res.status.value})")
        out[i] = res.objective
    return out


def interior_margin(
    p: AhPolytope,
    g,
    h,
    strict_rows=None,
    cap: float = 1.0,
    backend: LpBackend | None = None,
) -> float | None:
    """Largest t such that some point of p satisfies g_i x <= h_i - t |g_i| on the strict rows.

    Non-strict rows (equalities, for instance) must hold with zero slack.
    The margin is capped at ``cap``; None means p itself is empty.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    if g.shape[1] != p.dim:
        raise DimensionMismatchError(f"half-spaces have {g.shape[1]} columns, polytope is {p.dim}-d")
    strict = np.ones(g.shape[0], dtype=bool) if strict_rows is None else np.asarray(strict_rows, dtype=bool)
    m = p.num_vars
    rows = np.vstack([
        np.column_stack([p.cons_mat, np.zeros(p.num_constraints)]),
        np.column_stack([g @ p.basis, np.where(strict, _row_norms(g), 0.0)]),
        np.append(np.zeros(m), 1.0),
    ])
    rhs = np.concatenate([p.cons_rhs, h - g @ p.center, [cap]])
    obj = np.append(np.zeros(m), -1.0)
    res = solve_lp(rows, rhs, obj, backend)
    if res.status is LpStatus.INFEASIBLE:
        return None
    if not res.is_optimal:
        raise GeometryError(f"interior margin LP ended {res.status.value}")
    return -res.objective
