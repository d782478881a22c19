"""Small dense linear programs over free variables.

Every LP in the package has the shape ``min w.x  s.t.  C x <= d`` with ``x``
free and only a handful of variables (at most eight) but possibly hundreds of
constraints.  The default backend solves the dual problem

    min d.y  s.t.  C^T y = -w,  y >= 0

with a two-phase tableau simplex using Bland's rule.  The dual tableau has one
row per primal *variable*, so pivots stay cheap no matter how many constraints
pile up, and the simplex multipliers of the final dual basis are an optimal
primal point.

The pivoting kernel is compiled with numba.  ``ScipyBackend`` wraps HiGHS and
is kept around for cross-checking.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol

import numba
import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9

# kernel status codes
_OPTIMAL = 0
_DUAL_INFEASIBLE = 1
_DUAL_UNBOUNDED = 2
_ITERATION_LIMIT = 3


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LpNumericalError(RuntimeError):
    """The LP backend failed for numerical reasons (not an infeasibility verdict)."""


@dataclass(frozen=True)
class LpOutcome:
    status: LpStatus
    objective: float | None = None
    argument: np.ndarray | None = None

    @property
    def is_optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class LpBackend(Protocol):
    def solve(self, cons_mat: np.ndarray, cons_rhs: np.ndarray, objective: np.ndarray) -> LpOutcome:
        ...


@numba.njit(cache=True)
def _pivot(tab, obj, r, q):
    piv = tab[r, q]
    ncol = tab.shape[1]
    for j in range(ncol):
        tab[r, j] /= piv
    for i in range(tab.shape[0]):
        if i != r:
            f = tab[i, q]
            if f != 0.0:
                for j in range(ncol):
                    tab[i, j] -= f * tab[r, j]
            tab[i, q] = 0.0
    f = obj[q]
    if f != 0.0:
        for j in range(ncol):
            obj[j] -= f * tab[r, j]
    obj[q] = 0.0
    tab[r, q] = 1.0


@numba.njit(cache=True)
def _bland_iterate(tab, obj, basis, is_basic, num_orig, tol, max_iter):
    """Primal simplex iterations with Bland's rule; only original columns may enter."""
    m = tab.shape[0]
    rhs = tab.shape[1] - 1
    for _ in range(max_iter):
        q = -1
        for j in range(num_orig):
            if not is_basic[j] and obj[j] < -tol:
                q = j
                break
        if q < 0:
            return _OPTIMAL
        r = -1
        best = np.inf
        for i in range(m):
            a = tab[i, q]
            if a > tol:
                ratio = tab[i, rhs] / a
                if r < 0 or ratio < best - 1e-13 * (1.0 + abs(best)):
                    r = i
                    best = ratio
                elif abs(ratio - best) <= 1e-13 * (1.0 + abs(best)) and basis[i] < basis[r]:
                    r = i
                    best = ratio
        if r < 0:
            return _DUAL_UNBOUNDED
        is_basic[basis[r]] = False
        _pivot(tab, obj, r, q)
        basis[r] = q
        is_basic[q] = True
    return _ITERATION_LIMIT


@numba.njit(cache=True)
def _solve_standard_form(amat, bvec, cost, tol, max_iter):
    """min cost.y s.t. amat y = bvec, y >= 0.

    Returns (status, multipliers, basis).  Multipliers are only meaningful when
    status is optimal.
    """
    m, k = amat.shape
    ncol = k + m
    tab = np.zeros((m, ncol + 1))
    sign = np.ones(m)
    for i in range(m):
        s = 1.0
        if bvec[i] < 0.0:
            s = -1.0
        sign[i] = s
        for j in range(k):
            tab[i, j] = s * amat[i, j]
        tab[i, k + i] = 1.0
        tab[i, ncol] = s * bvec[i]
    basis = np.empty(m, dtype=np.int64)
    is_basic = np.zeros(ncol, dtype=np.bool_)
    for i in range(m):
        basis[i] = k + i
        is_basic[k + i] = True

    # phase 1: drive the artificial variables to zero
    obj = np.zeros(ncol + 1)
    for i in range(m):
        for j in range(k):
            obj[j] -= tab[i, j]
        obj[ncol] -= tab[i, ncol]
    status = _bland_iterate(tab, obj, basis, is_basic, k, tol, max_iter)
    if status == _ITERATION_LIMIT:
        return status, np.zeros(m), basis
    infeas = 0.0
    for i in range(m):
        if basis[i] >= k:
            infeas += tab[i, ncol]
    if infeas > tol * m:
        return _DUAL_INFEASIBLE, np.zeros(m), basis

    # pivot remaining (zero-level) artificials out of the basis where possible
    for i in range(m):
        if basis[i] >= k:
            q = -1
            big = tol
            for j in range(k):
                if not is_basic[j] and abs(tab[i, j]) > big:
                    big = abs(tab[i, j])
                    q = j
            if q >= 0:
                is_basic[basis[i]] = False
                _pivot(tab, obj, i, q)
                basis[i] = q
                is_basic[q] = True

    # phase 2
    obj[:] = 0.0
    for j in range(k):
        obj[j] = cost[j]
    for i in range(m):
        if basis[i] < k:
            cb = cost[basis[i]]
            if cb != 0.0:
                for j in range(ncol + 1):
                    obj[j] -= cb * tab[i, j]
    for i in range(m):
        if basis[i] < k:
            obj[basis[i]] = 0.0
    status = _bland_iterate(tab, obj, basis, is_basic, k, tol, max_iter)
    if status != _OPTIMAL:
        return status, np.zeros(m), basis

    mult = np.zeros(m)
    for i in range(m):
        acc = 0.0
        for l in range(m):
            if basis[l] < k:
                acc += cost[basis[l]] * tab[l, k + i]
        mult[i] = sign[i] * acc
    return _OPTIMAL, mult, basis


# outcome codes of the compiled solve
_R_OPTIMAL = 0
_R_INFEASIBLE = 1
_R_UNBOUNDED = 2
_R_NUMERICAL = 3


@numba.njit(cache=True)
def _max_residual(cn, dn, point):
    worst = -np.inf
    for i in range(cn.shape[0]):
        acc = -dn[i]
        for j in range(cn.shape[1]):
            acc += cn[i, j] * point[j]
        if acc > worst:
            worst = acc
    return worst


@numba.njit(cache=True)
def _solve_compiled(cmat, rhs, wvec, feas_tol, opt_tol):
    k, m = cmat.shape
    # unit-normalize rows, dropping null ones
    norms = np.zeros(k)
    nk = 0
    for i in range(k):
        acc = 0.0
        for j in range(m):
            acc += cmat[i, j] * cmat[i, j]
        norms[i] = np.sqrt(acc)
        if norms[i] > 1e-12:
            nk += 1
        elif rhs[i] < -feas_tol:
            return _R_INFEASIBLE, np.zeros(m)
    cn = np.empty((nk, m))
    dn = np.empty(nk)
    r = 0
    scale = 1.0
    for i in range(k):
        if norms[i] > 1e-12:
            for j in range(m):
                cn[r, j] = cmat[i, j] / norms[i]
            dn[r] = rhs[i] / norms[i]
            scale = max(scale, abs(dn[r]))
            r += 1
    wnorm = np.sqrt(np.sum(wvec * wvec))
    if nk == 0:
        if wnorm == 0.0:
            return _R_OPTIMAL, np.zeros(m)
        return _R_UNBOUNDED, np.zeros(m)
    w_unit = np.zeros(m)
    if wnorm > 0.0:
        w_unit = wvec / wnorm
    amat = np.ascontiguousarray(cn.T)
    cost = dn / scale
    max_iter = 50 * (nk + m) + 100
    # reduced costs live in scaled units; if the vertex misses feas_tol, retry with tighter pivoting
    tol = opt_tol
    point = np.zeros(m)
    for _attempt in range(3):
        code, point = _solve_scaled(amat, cn, dn, w_unit, cost, scale, tol, max_iter)
        if code == _R_OPTIMAL and _max_residual(cn, dn, point) <= feas_tol:
            return _R_OPTIMAL, point
        if code == _R_INFEASIBLE or code == _R_UNBOUNDED:
            return code, point
        tol *= 1e-3
    return _R_NUMERICAL, point


@numba.njit(cache=True)
def _solve_scaled(amat, cn, dn, w_unit, cost, scale, tol, max_iter):
    m = amat.shape[0]
    nk = amat.shape[1]
    status, mult, basis = _solve_standard_form(amat, -w_unit, cost, tol, max_iter)
    if status == _ITERATION_LIMIT:
        return _R_NUMERICAL, np.full(m, np.inf)
    if status == _DUAL_UNBOUNDED:
        return _R_INFEASIBLE, np.zeros(m)
    if status == _DUAL_INFEASIBLE:
        # primal unbounded or infeasible: decide with a pure feasibility solve
        fstatus, _, _ = _solve_standard_form(amat, np.zeros(m), cost, tol, max_iter)
        if fstatus == _OPTIMAL:
            return _R_UNBOUNDED, np.zeros(m)
        if fstatus == _DUAL_UNBOUNDED:
            return _R_INFEASIBLE, np.zeros(m)
        return _R_NUMERICAL, np.full(m, np.inf)

    point = mult * scale
    resid = _max_residual(cn, dn, point)
    # a full dual basis names m active constraints; re-solve them for a cleaner vertex
    full = True
    for i in range(m):
        if basis[i] >= nk:
            full = False
    if full:
        sub = np.empty((m, m))
        sub_rhs = np.empty(m)
        for i in range(m):
            sub[i, :] = cn[basis[i], :]
            sub_rhs[i] = dn[basis[i]]
        cand = np.linalg.solve(sub, sub_rhs)
        if np.all(np.isfinite(cand)):
            cres = _max_residual(cn, dn, cand)
            if cres <= resid:
                point = cand
    return _R_OPTIMAL, point


class SimplexBackend:
    """Dense two-phase simplex on the dual problem (Bland's rule, deterministic)."""

    def __init__(self, feas_tol: float = FEAS_TOL, opt_tol: float = OPT_TOL):
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol

    def solve(self, cons_mat, cons_rhs, objective) -> LpOutcome:
        cmat = np.ascontiguousarray(cons_mat, dtype=np.float64)
        rhs = np.ascontiguousarray(cons_rhs, dtype=np.float64).reshape(-1)
        wvec = np.ascontiguousarray(objective, dtype=np.float64).reshape(-1)
        if cmat.ndim != 2 or cmat.shape[0] != rhs.shape[0] or cmat.shape[1] != wvec.shape[0]:
            raise ValueError(f"LP shape mismatch: C {cmat.shape}, d {rhs.shape}, w {wvec.shape}")
        code, point = _solve_compiled(cmat, rhs, wvec, self.feas_tol, self.opt_tol)
        if code == _R_OPTIMAL:
            return LpOutcome(LpStatus.OPTIMAL, float(wvec @ point), point)
        if code == _R_INFEASIBLE:
            return LpOutcome(LpStatus.INFEASIBLE)
        if code == _R_UNBOUNDED:
            return LpOutcome(LpStatus.UNBOUNDED)
        raise LpNumericalError("simplex could not produce a point within tolerance")


def _prepare(cons_mat, cons_rhs, objective, feas_tol):
    """Validate, drop null rows and normalize each constraint row to unit length."""
    cmat = np.asarray(cons_mat, dtype=float)
    rhs = np.asarray(cons_rhs, dtype=float).reshape(-1)
    wvec = np.asarray(objective, dtype=float).reshape(-1)
    if cmat.ndim != 2 or cmat.shape[0] != rhs.shape[0] or cmat.shape[1] != wvec.shape[0]:
        raise ValueError(
            f"LP shape mismatch: C {cmat.shape}, d {rhs.shape}, w {wvec.shape}"
        )
    norms = np.linalg.norm(cmat, axis=1)
    null = norms <= 1e-12
    if np.any(rhs[null] < -feas_tol):
        return None, None, None
    keep = ~null
    norms = norms[keep]
    return cmat[keep] / norms[:, None], rhs[keep] / norms, wvec


class ScipyBackend:
    """HiGHS through scipy; used as an independent cross-check."""

    def __init__(self, feas_tol: float = FEAS_TOL):
        self.feas_tol = feas_tol

    def solve(self, cons_mat, cons_rhs, objective) -> LpOutcome:
        from scipy.optimize import linprog

        cmat, rhs, wvec = _prepare(cons_mat, cons_rhs, objective, self.feas_tol)
        if cmat is None:
            return LpOutcome(LpStatus.INFEASIBLE)
        m = cmat.shape[1]
        if cmat.shape[0] == 0:
            if np.all(wvec == 0.0):
                return LpOutcome(LpStatus.OPTIMAL, 0.0, np.zeros(m))
            return LpOutcome(LpStatus.UNBOUNDED)
        res = linprog(wvec, A_ub=cmat, b_ub=rhs, bounds=[(None, None)] * m, method="highs")
        if res.status == 0:
            return LpOutcome(LpStatus.OPTIMAL, float(wvec @ res.x), np.asarray(res.x))
        if res.status == 2:
            return LpOutcome(LpStatus.INFEASIBLE)
        if res.status == 3:
            return LpOutcome(LpStatus.UNBOUNDED)
        raise LpNumericalError(f"HiGHS failed: {res.message}")


_default_backend: LpBackend = SimplexBackend()


def default_backend() -> LpBackend:
    return _default_backend


def set_default_backend(backend: LpBackend) -> None:
    global _default_backend
    _default_backend = backend


def solve_lp(cons_mat, cons_rhs, objective, backend: LpBackend | None = None) -> LpOutcome:
    """min objective.x subject to cons_mat x <= cons_rhs, x free."""
    return (backend or _default_backend).solve(cons_mat, cons_rhs, objective)
