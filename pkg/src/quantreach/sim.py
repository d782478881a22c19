"""Closed-loop simulation: one advisory per second, exact or quantized controller inputs."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from quantreach.dynamics import (
    STATE_DIM,
    VX_INT,
    VY_INT,
    X_INT,
    Y_INT,
    Advisory,
    NetworkInput,
    PlantState,
    state_to_network_inputs,
    step_matrix,
    wrap_angles,
)
from quantreach.nnet import NetworkSet, execute, select_advisory, tau_index
from quantreach.quant import RANGE_RHO, QuantParams, dequantize_to_inputs, quantize_state

NMAC_RHO = 500.0
DIVERGENCE_STEPS = 10
DEFAULT_MAX_STEPS = 600

Mode = Literal["exact", "quantized"]


@dataclass(frozen=True)
class EncounterSpec:
    rho: float
    theta: float
    psi: float
    v_own: float
    v_int: float
    tau0: float = 0.0
    tau_dot: int = 0
    max_steps: int = DEFAULT_MAX_STEPS


@dataclass(frozen=True)
class TraceRow:
    step: int
    alpha_prev: Advisory
    tau: float
    net: tuple[int, int]  # 1-based (a_prev, tau) grid position of the selected network
    cmd: Advisory
    rho: float
    theta_deg: float
    psi_deg: float
    state: tuple[float, ...]


@dataclass
class CounterexampleTrace:
    initial: PlantState
    tau0: float
    tau_dot: int
    rows: list[TraceRow] = field(default_factory=list)
    outcome: str = "max_steps"  # collision | max_steps | diverged
    network_calls: int = 0

    @property
    def is_collision(self) -> bool:
        return self.outcome == "collision"

    @property
    def commands(self) -> list[Advisory]:
        return [r.cmd for r in self.rows]


def spec_to_state(e: EncounterSpec) -> PlantState:
    """Ownship at the origin heading +x; intruder at rho along theta, heading psi."""
    return PlantState(
        0.0,
        0.0,
        e.v_own,
        0.0,
        e.rho * math.cos(e.theta),
        e.rho * math.sin(e.theta),
        e.v_int * math.cos(e.psi),
        e.v_int * math.sin(e.psi),
    )


def canonicalize(x: np.ndarray) -> np.ndarray:
    """Rigid motion putting the intruder at the origin flying due east."""
    heading = math.atan2(x[VY_INT], x[VX_INT])
    cs, sn = math.cos(-heading), math.sin(-heading)
    rot = np.array([[cs, -sn], [sn, cs]])
    out = np.empty(STATE_DIM)
    origin = x[[X_INT, Y_INT]]
    for pos, vel in ((0, 2), (4, 6)):
        out[pos : pos + 2] = rot @ (x[pos : pos + 2] - origin)
        out[vel : vel + 2] = rot @ x[vel : vel + 2]
    return out


def controller_inputs(x: np.ndarray, mode: Mode, quant: QuantParams | None) -> NetworkInput:
    if mode == "exact":
        return state_to_network_inputs(x)
    if quant is None:
        raise ValueError("quantized mode needs QuantParams")
    return dequantize_to_inputs(quantize_state(canonicalize(x), quant), quant)


def tau_at(tau0: float, tau_dot: int, step: int) -> float:
    """tau for 1-based step: tau0 + tau_dot*(step - 1), never below zero."""
    return max(0.0, tau0 + tau_dot * (step - 1))


def simulate_state(
    state: PlantState | np.ndarray,
    nets: NetworkSet,
    tau0: float = 0.0,
    tau_dot: int = 0,
    max_steps: int = DEFAULT_MAX_STEPS,
    mode: Mode = "exact",
    quant: QuantParams | None = None,
) -> CounterexampleTrace:
    x = state.as_array() if isinstance(state, PlantState) else np.asarray(state, dtype=float).copy()
    trace = CounterexampleTrace(PlantState.from_array(x), tau0, tau_dot)
    alpha_prev = Advisory.COC
    increasing = 0
    last_rho = math.inf
    for step in range(1, max_steps + 1):
        tau = tau_at(tau0, tau_dot, step)
        exact = state_to_network_inputs(x)
        inp = exact if mode == "exact" else controller_inputs(x, mode, quant)
        t_idx = tau_index(tau)
        if inp.rho > RANGE_RHO:
            cmd = Advisory.COC
        else:
            scores = execute(nets.get(alpha_prev, t_idx), inp)
            trace.network_calls += 1
            cmd = select_advisory(scores, nets.use_argmax)
        trace.rows.append(
            TraceRow(
                step,
                alpha_prev,
                tau,
                (alpha_prev.file_index, t_idx + 1),
                cmd,
                exact.rho,
                math.degrees(exact.theta),
                math.degrees(exact.psi),
                tuple(float(v) for v in x),
            )
        )
        if exact.rho < NMAC_RHO and tau == 0:
            trace.outcome = "collision"
            return trace
        increasing = increasing + 1 if exact.rho > last_rho and exact.rho > RANGE_RHO and tau == 0 else 0
        if increasing >= DIVERGENCE_STEPS:
            trace.outcome = "diverged"
            return trace
        last_rho = exact.rho
        x = step_matrix(cmd) @ x
        alpha_prev = cmd
    trace.outcome = "max_steps"
    return trace


def simulate(
    e: EncounterSpec,
    nets: NetworkSet,
    mode: Mode = "exact",
    quant: QuantParams | None = None,
) -> CounterexampleTrace:
    return simulate_state(spec_to_state(e), nets, e.tau0, e.tau_dot, e.max_steps, mode, quant)


# ---------------------------------------------------------------- Monte Carlo

MC_RHO_RANGE = (60760.0, 63160.0)
MC_VOWN_RANGE = (100.0, 1200.0)
MC_VINT_RANGE = (0.0, 1200.0)
MC_TAU0_RANGE = (25.0, 160.0)
MC_CHUNK = 8192


@dataclass
class MonteCarloStats:
    samples: int
    tau_dot: int
    seed: int
    unsafe: int = 0
    diverged: int = 0
    max_steps: int = 0
    unsafe_cases: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "samples": self.samples,
            "tau_dot": self.tau_dot,
            "seed": self.seed,
            "unsafe": self.unsafe,
            "diverged": self.diverged,
            "max_steps": self.max_steps,
            "unsafe_cases": self.unsafe_cases,
        }


def chunk_generator(seed: int, chunk: int) -> np.random.Generator:
    """Philox4x64 keyed by (seed, chunk index): the 128-bit key is seed + chunk * 2**64."""
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(key=seed + (chunk << 64)))


def sample_encounters(seed: int, chunk: int, count: int, tau_dot: int) -> np.ndarray:
    """Columns rho, theta, psi, v_own, v_int, tau0; each sample uses six consecutive draws."""
    u = chunk_generator(seed, chunk).random((count, 6))
    out = np.empty((count, 6))
    lo, hi = MC_RHO_RANGE
    out[:, 0] = hi - (hi - lo) * u[:, 0]  # (lo, hi]
    out[:, 1] = math.pi - 2 * math.pi * u[:, 1]  # (-pi, pi]
    out[:, 2] = math.pi - 2 * math.pi * u[:, 2]
    out[:, 3] = MC_VOWN_RANGE[0] + (MC_VOWN_RANGE[1] - MC_VOWN_RANGE[0]) * u[:, 3]
    out[:, 4] = MC_VINT_RANGE[0] + (MC_VINT_RANGE[1] - MC_VINT_RANGE[0]) * u[:, 4]
    if tau_dot == 0:
        out[:, 5] = 0.0
    else:
        out[:, 5] = MC_TAU0_RANGE[0] + (MC_TAU0_RANGE[1] - MC_TAU0_RANGE[0]) * u[:, 5]
    return out


def _encounter_states(enc: np.ndarray) -> np.ndarray:
    rho, theta, psi, vo, vi = enc[:, 0], enc[:, 1], enc[:, 2], enc[:, 3], enc[:, 4]
    x = np.zeros((len(enc), STATE_DIM))
    x[:, 2] = vo
    x[:, X_INT] = rho * np.cos(theta)
    x[:, Y_INT] = rho * np.sin(theta)
    x[:, VX_INT] = vi * np.cos(psi)
    x[:, VY_INT] = vi * np.sin(psi)
    return x


def _batch_inputs(x: np.ndarray) -> np.ndarray:
    """Columns rho, theta, psi, v_own, v_int for a stack of states."""
    heading_own = np.arctan2(x[:, 3], x[:, 2])
    heading_int = np.arctan2(x[:, VY_INT], x[:, VX_INT])
    dx = x[:, X_INT] - x[:, 0]
    dy = x[:, Y_INT] - x[:, 1]
    out = np.empty((len(x), 5))
    out[:, 0] = np.hypot(dx, dy)
    out[:, 1] = wrap_angles(np.arctan2(dy, dx) - heading_own)
    out[:, 2] = wrap_angles(heading_int - heading_own)
    out[:, 3] = np.hypot(x[:, 2], x[:, 3])
    out[:, 4] = np.hypot(x[:, VX_INT], x[:, VY_INT])
    return out


def simulate_batch(
    enc: np.ndarray, nets: NetworkSet, tau_dot: int, max_steps: int = DEFAULT_MAX_STEPS
) -> tuple[np.ndarray, np.ndarray]:
    """Exact-mode closed loop for many encounters at once.

    Returns (outcome, steps): outcome 0 = max_steps, 1 = collision, 2 = diverged.
    Stop rules match simulate_state.
    """
    n = len(enc)
    x = _encounter_states(enc)
    tau0 = enc[:, 5]
    alpha = np.zeros(n, dtype=np.int64)
    outcome = np.zeros(n, dtype=np.int64)
    steps = np.full(n, max_steps, dtype=np.int64)
    increasing = np.zeros(n, dtype=np.int64)
    last_rho = np.full(n, np.inf)
    active = np.arange(n)
    mats = np.stack([step_matrix(a).T for a in Advisory])
    for step in range(1, max_steps + 1):
        if not len(active):
            break
        xa = x[active]
        tau = np.maximum(0.0, tau0[active] + tau_dot * (step - 1))
        inp = _batch_inputs(xa)
        rho = inp[:, 0]
        cmd = np.zeros(len(active), dtype=np.int64)
        in_range = rho <= RANGE_RHO
        if np.any(in_range):
            uniq, inverse = np.unique(tau, return_inverse=True)
            t_idx = np.array([tau_index(t) for t in uniq])[inverse]
            prev = alpha[active]
            for a in np.unique(prev[in_range]):
                for t in np.unique(t_idx[in_range & (prev == a)]):
                    sel = in_range & (prev == a) & (t_idx == t)
                    scores = nets.get(Advisory(int(a)), int(t)).forward(inp[sel])
                    cmd[sel] = np.argmax(scores, axis=1) if nets.use_argmax else np.argmin(scores, axis=1)
        hit = (rho < NMAC_RHO) & (tau == 0)
        incr = np.where((rho > last_rho[active]) & (rho > RANGE_RHO) & (tau == 0), increasing[active] + 1, 0)
        gone = (incr >= DIVERGENCE_STEPS) & ~hit
        outcome[active[hit]] = 1
        outcome[active[gone]] = 2
        steps[active[hit | gone]] = step
        increasing[active] = incr
        last_rho[active] = rho
        keep = ~(hit | gone)
        live = active[keep]
        x[live] = np.einsum("ni,nij->nj", xa[keep], mats[cmd[keep]])
        alpha[live] = cmd[keep]
        active = live
    return outcome, steps


_MC_NETS: NetworkSet | None = None


def _mc_init(nets: NetworkSet) -> None:
    global _MC_NETS
    _MC_NETS = nets


def _mc_chunk(args) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    seed, chunk, count, tau_dot, max_steps = args
    enc = sample_encounters(seed, chunk, count, tau_dot)
    outcome, steps = simulate_batch(enc, _MC_NETS, tau_dot, max_steps)
    return chunk, enc, outcome, steps


def monte_carlo(
    batch_size: int,
    tau_dot: int,
    seed: int,
    nets: NetworkSet,
    jobs: int = 1,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> MonteCarloStats:
    """Uniform random encounters in the five radial inputs; results depend only on (seed, batch_size)."""
    if tau_dot not in (0, -1):
        raise ValueError("tau_dot must be 0 or -1")
    if batch_size < 0:
        raise ValueError("batch_size must be non-negative")
    stats = MonteCarloStats(batch_size, tau_dot, seed)
    tasks = [
        (seed, c, min(MC_CHUNK, batch_size - c * MC_CHUNK), tau_dot, max_steps)
        for c in range(-(-batch_size // MC_CHUNK))
    ]
    if jobs <= 1 or len(tasks) <= 1:
        _mc_init(nets)
        results = map(_mc_chunk, tasks)
        pool = None
    else:
        import multiprocessing as mp

        method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
        pool = mp.get_context(method).Pool(jobs, initializer=_mc_init, initargs=(nets,))
        results = pool.imap(_mc_chunk, tasks)
    try:
        for chunk, enc, outcome, steps in results:
            stats.unsafe += int(np.sum(outcome == 1))
            stats.diverged += int(np.sum(outcome == 2))
            stats.max_steps += int(np.sum(outcome == 0))
            for i in np.flatnonzero(outcome == 1):
                rho, theta, psi, vo, vi, t0 = (float(v) for v in enc[i])
                stats.unsafe_cases.append(
                    {
                        "index": chunk * MC_CHUNK + int(i),
                        "rho": rho,
                        "theta": theta,
                        "psi": psi,
                        "v_own": vo,
                        "v_int": vi,
                        "tau0": t0,
                        "steps": int(steps[i]),
                    }
                )
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return stats


# ---------------------------------------------------------------- trace output

CSV_HEADER = ("step", "alpha_prev", "cmd", "rho_ft", "theta_deg", "psi_deg")


def write_trace_csv(trace: CounterexampleTrace, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in trace.rows:
        writer.writerow([r.step, r.alpha_prev.label, r.cmd.label, f"{r.rho:.1f}", f"{r.theta_deg:.2f}", f"{r.psi_deg:.2f}"])


def trace_to_json(trace: CounterexampleTrace) -> dict:
    """Full-precision trace including the 8-d state at every step."""
    return {
        "initial": dataclasses.asdict(trace.initial),
        "tau0": trace.tau0,
        "tau_dot": trace.tau_dot,
        "outcome": trace.outcome,
        "network_calls": trace.network_calls,
        "rows": [
            {
                "step": r.step,
                "alpha_prev": r.alpha_prev.name,
                "tau": r.tau,
                "net": list(r.net),
                "cmd": r.cmd.name,
                "rho_ft": r.rho,
                "theta_deg": r.theta_deg,
                "psi_deg": r.psi_deg,
                "state": list(r.state),
            }
            for r in trace.rows
        ],
    }
