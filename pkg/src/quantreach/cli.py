"""Command-line front end.

Exit codes: 0 success (verify: all safe; falsify/replay: counterexample
confirmed), 1 unsafe found / nothing confirmed, 2 inconclusive, 3 asset or
parse error, 4 bad configuration, 130 interrupted.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from quantreach.backreach import (
    DEFAULT_MAX_DEPTH,
    CheckContext,
    FalsifyStatus,
    QuantumFloors,
    Verdict,
    check_partition,
    extract_witness,
    falsify,
    log_stderr,
    replay_and_confirm,
    verify_all,
)
from quantreach.nnet import MissingNetworkError, NNetParseError, NetworkSet, load_network_set
from quantreach.partition import PartitionConfigError, count_partitions, partition_keys, region_for_descriptor
from quantreach.quant import QuantConfigError, QuantParams
from quantreach.sim import (
    DEFAULT_MAX_STEPS,
    CounterexampleTrace,
    EncounterSpec,
    monte_carlo,
    simulate,
    simulate_state,
    trace_to_json,
    write_trace_csv,
)

EXIT_OK = 0
EXIT_UNSAFE = 1
EXIT_INCONCLUSIVE = 2
EXIT_ASSETS = 3
EXIT_CONFIG = 4
EXIT_INTERRUPTED = 130

NNET_DIR_ENV = "QUANTREACH_NNET_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    nnet_dir: str | None = None
    q_pos: float = 500.0
    q_vel: float = 100.0
    q_theta_deg: float = 1.5
    vown_min: float = 100.0
    vown_max: float = 1200.0
    vint_min: float = 0.0
    vint_max: float = 1200.0
    tau_dot: str = "both"
    jobs: int = 1
    seed: int = 0
    out: str | None = None
    resume: str | None = None
    max_depth: int = DEFAULT_MAX_DEPTH
    floor_pos: float = 1.0
    floor_vel: float = 1.0
    floor_theta_deg: float = 0.01
    argmax: bool = False

    def quant(self) -> QuantParams:
        return QuantParams(
            q_pos=self.q_pos,
            q_vel=self.q_vel,
            q_theta=math.radians(self.q_theta_deg),
            vown_range=(self.vown_min, self.vown_max),
            vint_range=(self.vint_min, self.vint_max),
        )

    def tau_dots(self) -> tuple[int, ...]:
        return {"0": (0,), "-1": (-1,), "both": (0, -1)}[self.tau_dot]

    def single_tau_dot(self) -> int:
        dots = self.tau_dots()
        if len(dots) != 1:
            raise ConfigError("this command needs --tau-dot 0 or -1")
        return dots[0]

    def floors(self) -> QuantumFloors:
        return QuantumFloors(self.floor_pos, self.floor_vel, math.radians(self.floor_theta_deg))

    def validate(self) -> None:
        if self.tau_dot not in ("0", "-1", "both"):
            raise ConfigError(f"tau_dot must be 0, -1 or both, got {self.tau_dot!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        try:
            self.quant()
        except (QuantConfigError, PartitionConfigError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if "bool" in kind:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if kind.startswith("int"):
        return int(raw, 0)
    if kind.startswith("float"):
        return float(raw)
    return raw


def read_config_file(path: str | os.PathLike) -> dict:
    """key=value lines; '#' starts a comment; keys may use dashes or underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, raw)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from None
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if os.environ.get(NNET_DIR_ENV):
        values["nnet_dir"] = os.environ[NNET_DIR_ENV]
    if args.config:
        values.update(read_config_file(args.config))
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def load_nets(cfg: RunConfig, tau_dots: Sequence[int]) -> NetworkSet:
    if not cfg.nnet_dir:
        raise NNetParseError(f"no network directory given (use --nnet-dir or {NNET_DIR_ENV})")
    indices = [0] if set(tau_dots) == {0} else None
    return load_network_set(cfg.nnet_dir, tau_indices=indices, use_argmax=cfg.argmax)


def _out_dir(cfg: RunConfig) -> Path | None:
    if cfg.out is None:
        return None
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_trace_files(trace: CounterexampleTrace, folder: Path, stem: str = "trace") -> None:
    with open(folder / f"{stem}.csv", "w", newline="") as fh:
        write_trace_csv(trace, fh)
    (folder / f"{stem}.json").write_text(json.dumps(trace_to_json(trace), indent=1) + "\n")
    (folder / f"{stem}.svg").write_text(trace_svg(trace))


# ---------------------------------------------------------------- SVG


def trace_svg(trace: CounterexampleTrace, width: int = 640, height: int = 640) -> str:
    """Both aircraft's position traces with a marker at every step."""
    own = [(r.state[0], r.state[1]) for r in trace.rows]
    intr = [(r.state[4], r.state[5]) for r in trace.rows]
    pts = own + intr or [(0.0, 0.0)]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    span = max(max(xs) - min(xs), max(ys) - min(ys), 1.0)
    margin = 40
    scale = (min(width, height) - 2 * margin) / span
    cx = (max(xs) + min(xs)) / 2
    cy = (max(ys) + min(ys)) / 2

    def at(p):
        return width / 2 + (p[0] - cx) * scale, height / 2 - (p[1] - cy) * scale

    def path(points, color):
        if not points:
            return []
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(at, points))
        out = [f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>']
        out += [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>' for x, y in map(at, points)]
        return out

    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    body += path(own, "#1f5fbf")
    body += path(intr, "#c0392b")
    body += [
        '<text x="12" y="20" font-family="sans-serif" font-size="13" fill="#1f5fbf">ownship</text>',
        '<text x="12" y="38" font-family="sans-serif" font-size="13" fill="#c0392b">intruder</text>',
        f'<text x="12" y="{height - 12}" font-family="sans-serif" font-size="12">'
        f"{len(trace.rows)} steps, outcome {trace.outcome}, scale {span:.0f} ft</text>",
        "</svg>",
    ]
    return "\n".join(body) + "\n"


# ---------------------------------------------------------------- subcommands


def cmd_partitions(cfg: RunConfig, args: argparse.Namespace) -> int:
    quant = cfg.quant()
    print(count_partitions(quant, cfg.tau_dots()))
    if args.list:
        for key in partition_keys(quant, cfg.tau_dots()):
            print(key.descriptor())
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args: argparse.Namespace) -> int:
    quant = cfg.quant()
    nets = load_nets(cfg, cfg.tau_dots())
    ctx = CheckContext(quant, nets, cfg.max_depth)
    keys = partition_keys(quant, cfg.tau_dots())
    if args.limit is not None:
        keys = itertools.islice(keys, args.limit)
    total = count_partitions(quant, cfg.tau_dots()) if args.limit is None else args.limit
    folder = _out_dir(cfg)

    def progress(done: int, res) -> None:
        if args.progress and (done % args.progress == 0 or not res.verdict is Verdict.SAFE):
            log_stderr(f"[{done}/{total}] {res.descriptor} {res.verdict.value}")

    report = verify_all(
        keys,
        ctx,
        jobs=cfg.jobs,
        resume_path=cfg.resume,
        unsafe_path=folder / "unsafe.jsonl" if folder else None,
        stop_on_unsafe=args.stop_on_unsafe,
        progress=progress,
    )
    counts = report.counts()
    print(json.dumps(counts, sort_keys=True))
    log_stderr(f"wall time {report.wall_time:.1f} s, longest partition {report.longest_check:.2f} s")
    if folder:
        (folder / "verify.json").write_text(
            json.dumps({"counts": counts, "unsafe": [r.summary() for r in report.unsafe_results]}, indent=1) + "\n"
        )
    if report.unsafe:
        return EXIT_UNSAFE
    if report.inconclusive:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def cmd_falsify(cfg: RunConfig, args: argparse.Namespace) -> int:
    quant = cfg.quant()
    nets = load_nets(cfg, cfg.tau_dots())
    ctx = CheckContext(quant, nets, cfg.max_depth)
    outcome = falsify(
        partition_keys(quant, cfg.tau_dots()),
        ctx,
        jobs=cfg.jobs,
        floors=cfg.floors(),
        batch=args.batch,
        log=log_stderr if args.verbose else None,
    )
    summary = {
        "status": outcome.status.value,
        "checked": outcome.checked,
        "replays": outcome.replays,
    }
    if outcome.status is FalsifyStatus.CONFIRMED:
        res, q = outcome.result, outcome.quant
        summary.update(
            partition=res.descriptor,
            q_pos=q.q_pos,
            q_vel=q.q_vel,
            q_theta_deg=q.q_theta_deg,
            steps=len(outcome.trace.rows),
            final_rho=outcome.trace.rows[-1].rho,
        )
        folder = _out_dir(cfg)
        if folder:
            _write_trace_files(outcome.trace, folder)
    print(json.dumps(summary, sort_keys=True))
    log_stderr(f"wall time {outcome.wall_time:.1f} s")
    if outcome.status is FalsifyStatus.CONFIRMED:
        return EXIT_OK
    return EXIT_UNSAFE if outcome.status is FalsifyStatus.QUANTIZED_SAFE else EXIT_INCONCLUSIVE


def _emit_trace(trace: CounterexampleTrace, cfg: RunConfig) -> None:
    folder = _out_dir(cfg)
    if folder:
        _write_trace_files(trace, folder)
    else:
        write_trace_csv(trace, sys.stdout)


def cmd_simulate(cfg: RunConfig, args: argparse.Namespace) -> int:
    tau_dot = 0 if cfg.tau_dot == "both" else cfg.single_tau_dot()
    nets = load_nets(cfg, (tau_dot,))
    spec = EncounterSpec(args.rho, args.theta, args.psi, args.v_own, args.v_int, args.tau0, tau_dot, args.max_steps)
    quant = cfg.quant() if args.mode == "quantized" else None
    trace = simulate(spec, nets, args.mode, quant)
    _emit_trace(trace, cfg)
    log_stderr(f"outcome {trace.outcome} after {len(trace.rows)} steps")
    return EXIT_OK


def cmd_replay(cfg: RunConfig, args: argparse.Namespace) -> int:
    """Check one partition and, if unsafe, replay its witness on the exact closed loop."""
    quant = cfg.quant()
    part = region_for_descriptor(args.partition, quant)
    nets = load_nets(cfg, (part.tau_dot,))
    ctx = CheckContext(quant, nets, cfg.max_depth)
    res = check_partition(part, ctx)
    summary = res.summary()
    code = {Verdict.SAFE: EXIT_UNSAFE, Verdict.INCONCLUSIVE: EXIT_INCONCLUSIVE}.get(res.verdict, EXIT_OK)
    if res.is_unsafe:
        witness = extract_witness(res)
        trace = replay_and_confirm(witness, res, ctx)
        summary["confirmed"] = trace is not None
        if trace is None:
            # still show what the real loop does from the witness
            trace = simulate_state(witness, nets, res.tau_init, res.tau_dot, res.depth + 100)
            code = EXIT_INCONCLUSIVE
        _emit_trace(trace, cfg)
    print(json.dumps(summary, sort_keys=True), file=sys.stderr if res.is_unsafe and cfg.out is None else sys.stdout)
    return code


def cmd_montecarlo(cfg: RunConfig, args: argparse.Namespace) -> int:
    tau_dot = 0 if cfg.tau_dot == "both" else cfg.single_tau_dot()
    nets = load_nets(cfg, (tau_dot,))
    start = time.perf_counter()
    stats = monte_carlo(args.samples, tau_dot, cfg.seed, nets, jobs=cfg.jobs, max_steps=args.max_steps)
    text = json.dumps(stats.as_dict(), sort_keys=True)
    print(text)
    folder = _out_dir(cfg)
    if folder:
        (folder / "montecarlo.json").write_text(text + "\n")
    log_stderr(f"wall time {time.perf_counter() - start:.1f} s")
    return EXIT_OK


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", help="key=value configuration file")
    g.add_argument("--nnet-dir", dest="nnet_dir", help=f"directory of .nnet files (default ${NNET_DIR_ENV})")
    g.add_argument("--q-pos", dest="q_pos", type=float, help="position quantum, ft")
    g.add_argument("--q-vel", dest="q_vel", type=float, help="velocity quantum, ft/s")
    g.add_argument("--q-theta-deg", dest="q_theta_deg", type=float, help="heading quantum, degrees")
    g.add_argument("--vown-min", dest="vown_min", type=float)
    g.add_argument("--vown-max", dest="vown_max", type=float)
    g.add_argument("--vint-min", dest="vint_min", type=float)
    g.add_argument("--vint-max", dest="vint_max", type=float)
    g.add_argument("--tau-dot", dest="tau_dot", choices=("0", "-1", "both"))
    g.add_argument("--jobs", type=int, help="worker processes")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--resume", help="file of finished safe partitions, appended as they complete")
    g.add_argument("--max-depth", dest="max_depth", type=int, help="backward steps per branch")
    g.add_argument("--floor-pos", dest="floor_pos", type=float)
    g.add_argument("--floor-vel", dest="floor_vel", type=float)
    g.add_argument("--floor-theta-deg", dest="floor_theta_deg", type=float)
    g.add_argument("--argmax", action="store_const", const=True, default=None, help="highest score wins")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quantreach", description="Quantized backreachability verifier for neural advisory tables.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("partitions", help="count (and optionally list) unsafe-set partitions")
    _common(p)
    p.add_argument("--list", action="store_true", help="print every partition descriptor")
    p.set_defaults(handler=cmd_partitions)

    p = sub.add_parser("verify", help="check every partition")
    _common(p)
    p.add_argument("--limit", type=int, help="only the first N partitions")
    p.add_argument("--progress", type=int, default=0, metavar="N", help="log every N partitions to stderr")
    p.add_argument("--stop-on-unsafe", action="store_true")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("falsify", help="refine quanta until a real counterexample replays")
    _common(p)
    p.add_argument("--batch", type=int, default=8, help="unsafe partitions collected before refining")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(handler=cmd_falsify)

    p = sub.add_parser("simulate", help="one closed-loop rollout")
    _common(p)
    p.add_argument("--rho", type=float, required=True, help="ft")
    p.add_argument("--theta", type=float, required=True, help="rad")
    p.add_argument("--psi", type=float, required=True, help="rad")
    p.add_argument("--v-own", dest="v_own", type=float, required=True)
    p.add_argument("--v-int", dest="v_int", type=float, required=True)
    p.add_argument("--tau0", type=float, default=0.0)
    p.add_argument("--mode", choices=("exact", "quantized"), default="exact")
    p.add_argument("--max-steps", dest="max_steps", type=int, default=DEFAULT_MAX_STEPS)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("replay", help="check one partition and replay its witness")
    _common(p)
    p.add_argument("--partition", required=True, help="descriptor such as 'pos(0,0)|vown(1)|vint(2)|th(3)|prev(COC)|taudot(0)'")
    p.set_defaults(handler=cmd_replay)

    p = sub.add_parser("montecarlo", help="uniform random encounter batch")
    _common(p)
    p.add_argument("--samples", type=int, default=1_500_000)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=DEFAULT_MAX_STEPS)
    p.set_defaults(handler=cmd_montecarlo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        return args.handler(cfg, args)
    except ConfigError as exc:
        print(f"quantreach: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NNetParseError, MissingNetworkError) as exc:
        print(f"quantreach: asset error: {exc}", file=sys.stderr)
        return EXIT_ASSETS
    except KeyboardInterrupt:
        # verify_all flushes each resume line as it is written and closes the file on the way out
        print("quantreach: interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
