"""NNet text-format networks, advisory selection and the (a_prev, tau) network grid."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from quantreach.dynamics import Advisory, NetworkInput

TAU_GRID = (0, 1, 5, 10, 20, 50, 60, 80, 100)
NUM_ADVISORIES = 5


class NNetParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.source = source


class MissingNetworkError(KeyError):
    pass


def _ro(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Network:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    input_mins: np.ndarray
    input_maxes: np.ndarray
    input_means: np.ndarray
    input_ranges: np.ndarray
    output_mean: float
    output_range: float
    clamp_inputs: bool = True

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("network needs matching, non-empty weight and bias lists")
        object.__setattr__(self, "weights", tuple(_ro(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_ro(b) for b in self.biases))
        for name in ("input_mins", "input_maxes", "input_means", "input_ranges"):
            object.__setattr__(self, name, _ro(getattr(self, name)))
        prev = self.weights[0].shape[1]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != prev or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i} dimensions do not chain")
            prev = w.shape[0]
        n = self.input_count
        for name in ("input_mins", "input_maxes", "input_means", "input_ranges"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have {n} entries")
        if np.any(self.input_ranges <= 0) or self.output_range <= 0:
            raise ValueError("normalization ranges must be strictly positive")

    @property
    def input_count(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_count(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_count] + [w.shape[0] for w in self.weights]

    def forward(self, features: np.ndarray) -> np.ndarray:
        """Scores for one feature vector, or a batch stacked along axis 0."""
        x = np.asarray(features, dtype=float)
        if x.shape[-1] != self.input_count:
            raise ValueError(f"network takes {self.input_count} inputs, got {x.shape[-1]}")
        if self.clamp_inputs:
            x = np.clip(x, self.input_mins, self.input_maxes)
        x = (x - self.input_means) / self.input_ranges
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.T + b
            if i < last:
                np.maximum(x, 0.0, out=x)
        return x * self.output_range + self.output_mean

    def identical_to(self, other: "Network") -> bool:
        pairs = [
            (self.input_mins, other.input_mins),
            (self.input_maxes, other.input_maxes),
            (self.input_means, other.input_means),
            (self.input_ranges, other.input_ranges),
        ]
        pairs += list(zip(self.weights, other.weights)) + list(zip(self.biases, other.biases))
        return (
            len(self.weights) == len(other.weights)
            and all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)
            and self.output_mean == other.output_mean
            and self.output_range == other.output_range
        )


def _numbers(line: str, lineno: int, source: str | None, conv=float) -> list:
    toks = [t.strip() for t in line.strip().split(",")]
    if toks and toks[-1] == "":
        toks.pop()
    try:
        return [conv(t) for t in toks]
    except ValueError:
        bad = next(t for t in toks if not _convertible(t, conv))
        raise NNetParseError(f"non-numeric token {bad!r}", lineno, source) from None


def _convertible(tok: str, conv) -> bool:
    try:
        conv(tok)
        return True
    except ValueError:
        return False


def parse_nnet(text: str | bytes, source: str | None = None, clamp_inputs: bool = True) -> Network:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines()
    pos = 0
    while pos < len(lines) and (lines[pos].startswith("//") or not lines[pos].strip()):
        pos += 1

    def take(conv=float, expect: int | None = None, what: str = "values"):
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise NNetParseError(f"unexpected end of file while reading {what}", pos + 1, source)
        vals = _numbers(lines[pos], pos + 1, source, conv)
        if expect is not None and len(vals) < expect:
            raise NNetParseError(f"expected {expect} {what}, found {len(vals)}", pos + 1, source)
        pos += 1
        return vals[:expect] if expect is not None else vals

    header = take(int, 4, "header fields")
    num_layers, n_in, n_out, _ = header
    if num_layers < 1 or n_in < 1 or n_out < 1:
        raise NNetParseError("header sizes must be positive", pos, source)
    sizes = take(int, num_layers + 1, "layer sizes")
    if sizes[0] != n_in or sizes[-1] != n_out:
        raise NNetParseError(
            f"layer sizes {sizes} disagree with header input/output sizes {n_in}/{n_out}", pos, source
        )
    take(float, None, "flag")
    mins = take(float, n_in, "input minimums")
    maxes = take(float, n_in, "input maximums")
    means = take(float, n_in + 1, "means")
    ranges_line = pos + 1
    ranges = take(float, n_in + 1, "ranges")
    if any(r <= 0 for r in ranges):
        raise NNetParseError("ranges must be strictly positive", ranges_line, source)

    weights, biases = [], []
    for layer in range(num_layers):
        rows, cols = sizes[layer + 1], sizes[layer]
        w = [take(float, cols, f"weights of layer {layer + 1}") for _ in range(rows)]
        b = [take(float, 1, f"bias of layer {layer + 1}")[0] for _ in range(rows)]
        weights.append(np.array(w))
        biases.append(np.array(b))
    return Network(
        weights=tuple(weights),
        biases=tuple(biases),
        input_mins=mins,
        input_maxes=maxes,
        input_means=means[:n_in],
        input_ranges=ranges[:n_in],
        output_mean=means[n_in],
        output_range=ranges[n_in],
        clamp_inputs=clamp_inputs,
    )


def serialize_nnet(net: Network, comment: str = "") -> str:
    def row(vals):
        return ",".join(repr(float(v)) for v in vals) + ","

    out = [f"// {line}" for line in comment.splitlines()] if comment else []
    sizes = net.layer_sizes
    out.append(f"{len(net.weights)},{net.input_count},{net.output_count},{max(sizes)},")
    out.append(",".join(str(s) for s in sizes) + ",")
    out.append("0,")
    out.append(row(net.input_mins))
    out.append(row(net.input_maxes))
    out.append(row(list(net.input_means) + [net.output_mean]))
    out.append(row(list(net.input_ranges) + [net.output_range]))
    for w, b in zip(net.weights, net.biases):
        out.extend(row(r) for r in w)
        out.extend(f"{float(v)!r}," for v in b)
    return "\n".join(out) + "\n"


def execute(net: Network, inp: NetworkInput, tau_feature: float | None = None) -> np.ndarray:
    feats = [inp.rho, inp.theta, inp.psi, inp.v_own, inp.v_int]
    if tau_feature is not None:
        feats.append(tau_feature)
    if len(feats) != net.input_count:
        raise ValueError(f"network takes {net.input_count} inputs, got {len(feats)} features")
    return net.forward(np.array(feats))


def select_advisory(scores, use_argmax: bool = False) -> Advisory:
    """Lowest score wins (scores are costs); ties go to the lower index."""
    scores = np.asarray(scores)
    if scores.shape != (NUM_ADVISORIES,):
        raise ValueError(f"expected {NUM_ADVISORIES} scores, got shape {scores.shape}")
    return Advisory(int(np.argmax(scores) if use_argmax else np.argmin(scores)))


def tau_index(tau: float) -> int:
    """0-based grid index of the nearest tau value; exact midpoints go to the smaller value."""
    if tau >= TAU_GRID[-1]:
        return len(TAU_GRID) - 1
    best = 0
    for i, g in enumerate(TAU_GRID):
        if abs(tau - g) < abs(tau - TAU_GRID[best]):
            best = i
    return best


def network_file_name(a_prev: Advisory, tau_idx: int) -> str:
    """File name for 0-based tau_idx (file names are 1-based)."""
    return f"ACASXU_run2a_{Advisory(a_prev).file_index}_{tau_idx + 1}_batch_2000.nnet"


@dataclass(frozen=True)
class NetworkSet:
    """Networks keyed by (previous advisory, 0-based tau index); may be a subset of the grid."""

    networks: Mapping[tuple[Advisory, int], Network]
    use_argmax: bool = False
    source: str | None = field(default=None, compare=False)

    def get(self, a_prev: Advisory, tau_idx: int) -> Network:
        try:
            return self.networks[(Advisory(a_prev), tau_idx)]
        except KeyError:
            raise MissingNetworkError(
                f"no network loaded for a_prev={Advisory(a_prev).name}, tau index {tau_idx + 1}"
            ) from None

    @property
    def complete(self) -> bool:
        return len(self.networks) == NUM_ADVISORIES * len(TAU_GRID)

    def advise(self, a_prev: Advisory, tau: float, inp: NetworkInput) -> Advisory:
        net = select_network(self, a_prev, tau)
        return select_advisory(execute(net, inp), self.use_argmax)


def select_network(nets: NetworkSet, a_prev: Advisory, tau: float) -> Network:
    return nets.get(a_prev, tau_index(tau))


def load_network_set(
    directory: str | os.PathLike,
    tau_indices: Iterable[int] | None = None,
    use_argmax: bool = False,
    clamp_inputs: bool = True,
) -> NetworkSet:
    """Load networks from a directory.  tau_indices (0-based) restricts the grid slice loaded."""
    root = Path(directory)
    if not root.is_dir():
        raise NNetParseError(f"network directory {str(root)!r} does not exist")
    wanted = range(len(TAU_GRID)) if tau_indices is None else sorted(set(tau_indices))
    nets = {}
    for adv in Advisory:
        for t in wanted:
            path = root / network_file_name(adv, t)
            if not path.is_file():
                raise NNetParseError(f"missing network file {path.name}", source=str(root))
            nets[(adv, t)] = parse_nnet(path.read_text(), source=str(path), clamp_inputs=clamp_inputs)
    return NetworkSet(nets, use_argmax=use_argmax, source=str(root))

