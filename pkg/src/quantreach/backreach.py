"""Quantized backreachability from unsafe partitions, witness extraction and falsification."""

from __future__ import annotations

import enum
import json
import math
import multiprocessing as mp
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from quantreach.dynamics import Advisory, PlantState, back_step_matrix, step_matrix
from quantreach.geometry import (
    AhPolytope,
    DegenerateBasisError,
    chebyshev_center,
    feasible_point,
    intersect_halfspaces,
    is_feasible,
    linear_transform,
)
from quantreach.lp import LpBackend
from quantreach.nnet import NetworkSet, execute, select_advisory, tau_index
from quantreach.partition import (
    FIXED_DIMS,
    NMAC_RADIUS,
    PartitionKey,
    UnsafePartition,
    disk_cover_cells,
    partition_region,
)
from quantreach.quant import (
    RANGE_RHO,
    QuantizedState,
    QuantParams,
    cell_halfspaces,
    dequantize_to_inputs,
    possible_quantized_states,
    rho_min,
)
from quantreach.sim import CounterexampleTrace, simulate_state

DEFAULT_MAX_DEPTH = 300


class Verdict(str, enum.Enum):
    SAFE = "safe"
    UNSAFE = "unsafe"
    INCONCLUSIVE = "inconclusive"


@dataclass
class CheckContext:
    quant: QuantParams
    nets: NetworkSet
    max_depth: int = DEFAULT_MAX_DEPTH
    backend: LpBackend | None = None
    _advice: dict = field(default_factory=dict, repr=False, compare=False)

    def with_quant(self, quant: QuantParams) -> "CheckContext":
        return CheckContext(quant, self.nets, self.max_depth, self.backend)


@dataclass(frozen=True, eq=False)
class CheckResult:
    verdict: Verdict
    descriptor: str = ""
    witness_region: AhPolytope | None = None
    command_sequence: tuple[Advisory, ...] = ()
    tau_init: float = 0.0
    depth: int = 0
    tau_dot: int = 0
    nodes: int = 0

    @property
    def is_unsafe(self) -> bool:
        return self.verdict is Verdict.UNSAFE

    def summary(self) -> dict:
        out = {"partition": self.descriptor, "verdict": self.verdict.value, "nodes": self.nodes}
        if self.is_unsafe:
            out.update(
                depth=self.depth,
                tau_init=self.tau_init,
                tau_dot=self.tau_dot,
                commands=[a.name for a in self.command_sequence],
            )
        return out


def backreach_step(s: AhPolytope, alpha_prev: Advisory) -> AhPolytope:
    """Exact set of states that reach s in one second under alpha_prev."""
    return linear_transform(s, back_step_matrix(alpha_prev))


def run_network(ctx: CheckContext, alpha_prevprev: Advisory, tau_prev: float, q: QuantizedState) -> Advisory:
    """Command issued in cell q; clear-of-conflict is forced outside the operating range."""
    t_idx = tau_index(tau_prev)
    key = (alpha_prevprev, t_idx, q, ctx.quant)
    cached = ctx._advice.get(key)
    if cached is not None:
        return cached
    inp = dequantize_to_inputs(q, ctx.quant)
    if inp.rho > RANGE_RHO:
        adv = Advisory.COC
    else:
        adv = select_advisory(execute(ctx.nets.get(alpha_prevprev, t_idx), inp), ctx.nets.use_argmax)
    if len(ctx._advice) > 1_000_000:
        ctx._advice.clear()
    ctx._advice[key] = adv
    return adv


def _drop_vacuous(p: AhPolytope) -> AhPolytope:
    keep = np.any(np.abs(p.cons_mat) > 0, axis=1)
    if np.all(keep):
        return p
    return AhPolytope(p.basis, p.center, p.cons_mat[keep], p.cons_rhs[keep])


def _restrict(p: AhPolytope, q: QuantizedState, quant: QuantParams) -> AhPolytope:
    return _drop_vacuous(intersect_halfspaces(p, *cell_halfspaces(q, quant)))


@dataclass
class _Node:
    region: AhPolytope
    alpha_prev: Advisory
    tau: float
    depth: int
    # commands from this node's states to the partition, oldest first
    commands: tuple[Advisory, ...]


def check_state(
    s: AhPolytope,
    alpha_prev: Advisory,
    tau: float,
    ctx: CheckContext,
    tau_dot: int,
    descriptor: str = "",
) -> CheckResult:
    """Search predecessors of s for a valid initial state, depth first.

    A branch that reaches ctx.max_depth is cut; the overall verdict is unsafe
    if any branch is, otherwise inconclusive if any branch was cut, else safe.
    """
    stack = [_Node(s, Advisory(alpha_prev), tau, 0, ())]
    cut = False
    nodes = 0
    while stack:
        node = stack.pop()
        nodes += 1
        if node.depth >= ctx.max_depth:
            cut = True
            continue
        pred = backreach_step(node.region, node.alpha_prev)
        tau_prev = node.tau - tau_dot
        commands = (node.alpha_prev,) + node.commands
        quanta = possible_quantized_states(pred, ctx.quant, ctx.backend)
        if not quanta:
            continue
        children = []
        for app in Advisory:
            matching = [q for q in quanta if run_network(ctx, app, tau_prev, q) == node.alpha_prev]
            for q in matching:
                if rho_min(q, ctx.quant) > RANGE_RHO:
                    return CheckResult(
                        Verdict.UNSAFE,
                        descriptor,
                        _restrict(pred, q, ctx.quant),
                        commands,
                        tau_prev,
                        node.depth + 1,
                        tau_dot,
                        nodes,
                    )
            if len(matching) == len(quanta):
                children.append(_Node(pred, app, tau_prev, node.depth + 1, commands))
            else:
                for q in matching:
                    part = _restrict(pred, q, ctx.quant)
                    if is_feasible(part, ctx.backend):
                        children.append(_Node(part, app, tau_prev, node.depth + 1, commands))
        stack.extend(reversed(children))
    return CheckResult(Verdict.INCONCLUSIVE if cut else Verdict.SAFE, descriptor, tau_dot=tau_dot, nodes=nodes)


def check_partition(part: UnsafePartition, ctx: CheckContext) -> CheckResult:
    return check_state(part.region, part.alpha_prev, 0.0, ctx, part.tau_dot, part.descriptor)


def extract_witness(r: CheckResult, backend: LpBackend | None = None) -> PlantState:
    """Chebyshev center of the witness region, or any feasible point if the basis degenerates."""
    if r.witness_region is None:
        raise ValueError("only unsafe results carry a witness region")
    try:
        point = chebyshev_center(r.witness_region, FIXED_DIMS, backend)
    except DegenerateBasisError:
        point = feasible_point(r.witness_region, backend)
        if point is None:
            raise
    return PlantState.from_array(point)


def replay_and_confirm(
    w: PlantState, r: CheckResult, ctx: CheckContext, extra_steps: int = 100
) -> CounterexampleTrace | None:
    trace = simulate_state(w, ctx.nets, r.tau_init, r.tau_dot, max_steps=r.depth + extra_steps)
    return trace if trace.is_collision else None


def forward_through(region: AhPolytope, commands: Sequence[Advisory]) -> AhPolytope:
    """Map a witness region forward by its command sequence."""
    out = region
    for adv in commands:
        out = linear_transform(out, step_matrix(adv))
    return out


# ---------------------------------------------------------------- parallel driver

_WORKER_CTX: CheckContext | None = None


def _init_worker(ctx: CheckContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _check_key(key: PartitionKey) -> tuple[CheckResult, float]:
    ctx = _WORKER_CTX
    start = time.perf_counter()
    part = UnsafePartition(key, partition_region(key, ctx.quant))
    return check_partition(part, ctx), time.perf_counter() - start


@dataclass
class VerifyReport:
    safe: int = 0
    unsafe: int = 0
    inconclusive: int = 0
    skipped: int = 0
    wall_time: float = 0.0
    longest_check: float = 0.0
    unsafe_results: list[CheckResult] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.safe + self.unsafe + self.inconclusive + self.skipped

    def counts(self) -> dict:
        return {
            "safe": self.safe,
            "unsafe": self.unsafe,
            "inconclusive": self.inconclusive,
            "resumed": self.skipped,
        }


def iter_checks(keys: Iterable[PartitionKey], ctx: CheckContext, jobs: int = 1, chunksize: int = 4) -> Iterator[tuple[CheckResult, float]]:
    """Check partitions in input order; results are identical for any worker count."""
    if jobs <= 1:
        _init_worker(ctx)
        for key in keys:
            yield _check_key(key)
        return
    method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
    with mp.get_context(method).Pool(jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
        yield from pool.imap(_check_key, keys, chunksize=chunksize)


def load_resume(path: str | os.PathLike | None) -> set[str]:
    if path is None or not Path(path).exists():
        return set()
    return {ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()}


def verify_all(
    keys: Iterable[PartitionKey],
    ctx: CheckContext,
    jobs: int = 1,
    resume_path: str | os.PathLike | None = None,
    unsafe_path: str | os.PathLike | None = None,
    stop_on_unsafe: bool = False,
    progress: Callable[[int, CheckResult], None] | None = None,
) -> VerifyReport:
    """Check every partition; safe descriptors are appended to the resume file as they finish."""
    start = time.perf_counter()
    report = VerifyReport()
    done = load_resume(resume_path)
    todo = []
    for key in keys:
        if key.descriptor() in done:
            report.skipped += 1
        else:
            todo.append(key)
    resume_fh = open(resume_path, "a") if resume_path else None
    unsafe_fh = open(unsafe_path, "a") if unsafe_path else None
    try:
        for i, (res, elapsed) in enumerate(iter_checks(todo, ctx, jobs)):
            report.longest_check = max(report.longest_check, elapsed)
            if res.verdict is Verdict.SAFE:
                report.safe += 1
                if resume_fh:
                    resume_fh.write(res.descriptor + "\n")
                    resume_fh.flush()
            elif res.verdict is Verdict.UNSAFE:
                report.unsafe += 1
                report.unsafe_results.append(res)
                if unsafe_fh:
                    unsafe_fh.write(json.dumps(res.summary()) + "\n")
                    unsafe_fh.flush()
            else:
                report.inconclusive += 1
            if progress:
                progress(i + 1, res)
            if stop_on_unsafe and res.is_unsafe:
                break
    finally:
        for fh in (resume_fh, unsafe_fh):
            if fh:
                fh.close()
        report.wall_time = time.perf_counter() - start
    return report


# ---------------------------------------------------------------- falsification

REFINE_ORDER = ("pos", "vel", "theta")


@dataclass(frozen=True)
class QuantumFloors:
    q_pos: float = 1.0
    q_vel: float = 1.0
    q_theta: float = math.radians(0.01)


class FalsifyStatus(str, enum.Enum):
    CONFIRMED = "confirmed"
    QUANTIZED_SAFE = "quantized-safe"
    GAVE_UP = "gave-up"


@dataclass
class FalsifyOutcome:
    status: FalsifyStatus
    trace: CounterexampleTrace | None = None
    result: CheckResult | None = None
    quant: QuantParams | None = None
    checked: int = 0
    replays: int = 0
    wall_time: float = 0.0


def _halve(quant: QuantParams, which: str) -> QuantParams:
    if which == "pos":
        return replace(quant, q_pos=quant.q_pos / 2)
    if which == "vel":
        return replace(quant, q_vel=quant.q_vel / 2)
    return replace(quant, q_theta=quant.q_theta / 2)


def _next_refinement(quant: QuantParams, turn: int, floors: QuantumFloors) -> tuple[str, int] | None:
    """Quantum to halve next, rotating pos, vel, theta and skipping any at its floor."""
    for off in range(len(REFINE_ORDER)):
        which = REFINE_ORDER[(turn + off) % len(REFINE_ORDER)]
        current = {"pos": quant.q_pos, "vel": quant.q_vel, "theta": quant.q_theta}[which]
        floor = {"pos": floors.q_pos, "vel": floors.q_vel, "theta": floors.q_theta}[which]
        if current / 2 >= floor:
            return which, turn + off + 1
    return None


def child_keys(key: PartitionKey, which: str, fine: QuantParams) -> list[PartitionKey]:
    """Partitions at the finer quantum that lie inside the coarse one."""
    if which == "pos":
        cover = set(disk_cover_cells(NMAC_RADIUS, fine.q_pos))
        cells = [(2 * key.ix + a, 2 * key.iy + b) for a in (0, 1) for b in (0, 1)]
        return [replace(key, ix=ix, iy=iy) for ix, iy in cells if (ix, iy) in cover]
    if which == "vel":
        own = [i for i in (2 * key.v_own, 2 * key.v_own + 1) if i in fine.speed_cells("own")]
        vint = [j for j in (2 * key.v_int, 2 * key.v_int + 1) if j in fine.speed_cells("int")]
        return [replace(key, v_own=i, v_int=j) for i in own for j in vint]
    return [replace(key, sector=2 * key.sector + b) for b in (0, 1)]


def falsify(
    keys: Iterable[PartitionKey],
    ctx: CheckContext,
    jobs: int = 1,
    floors: QuantumFloors = QuantumFloors(),
    batch: int = 8,
    log: Callable[[str], None] | None = None,
) -> FalsifyOutcome:
    """Refine quanta around quantized counterexamples until one replays in the real loop.

    Top-level partitions are streamed in order.  Each unsafe result is replayed
    at once; unconfirmed ones are collected and, once `batch` have accumulated,
    refined depth first (halving pos, vel, theta in turn) before resuming.
    """
    start = time.perf_counter()
    out = FalsifyOutcome(FalsifyStatus.QUANTIZED_SAFE, quant=ctx.quant)
    say = log or (lambda msg: None)
    pending: list[CheckResult] = []
    any_unsafe = False

    def try_confirm(res: CheckResult, quant: QuantParams) -> bool:
        out.replays += 1
        witness = extract_witness(res, ctx.backend)
        trace = replay_and_confirm(witness, res, ctx)
        if trace is not None:
            out.status, out.trace, out.result, out.quant = FalsifyStatus.CONFIRMED, trace, res, quant
            return True
        return False

    def refine(results: list[CheckResult], quant: QuantParams, turn: int) -> bool:
        step = _next_refinement(quant, turn, floors)
        if step is None:
            return False
        which, next_turn = step
        fine = _halve(quant, which)
        fine_ctx = ctx.with_quant(fine)
        for res in results:
            kids = child_keys(PartitionKey.parse(res.descriptor), which, fine)
            say(f"refine {res.descriptor} by {which}: {len(kids)} children at "
                f"q_pos={fine.q_pos:g} q_vel={fine.q_vel:g} q_theta={math.degrees(fine.q_theta):g}deg")
            unsafe_kids = []
            for kid_res, _ in iter_checks(kids, fine_ctx, jobs):
                out.checked += 1
                if kid_res.is_unsafe:
                    if try_confirm(kid_res, fine):
                        return True
                    unsafe_kids.append(kid_res)
            if unsafe_kids and refine(unsafe_kids, fine, next_turn):
                return True
        return False

    try:
        for res, _ in iter_checks(keys, ctx, jobs):
            out.checked += 1
            if not res.is_unsafe:
                continue
            any_unsafe = True
            say(f"unsafe at base quanta: {res.descriptor} (depth {res.depth})")
            if try_confirm(res, ctx.quant):
                return out
            pending.append(res)
            if len(pending) >= batch:
                if refine(pending, ctx.quant, 0):
                    return out
                pending = []
        if pending and refine(pending, ctx.quant, 0):
            return out
        if any_unsafe:
            out.status = FalsifyStatus.GAVE_UP
        return out
    finally:
        out.wall_time = time.perf_counter() - start


def log_stderr(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)
