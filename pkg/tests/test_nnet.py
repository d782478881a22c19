import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stubs import constant_network, threshold_network, uniform_set
from quantreach.dynamics import Advisory, NetworkInput
from quantreach.nnet import (
    TAU_GRID,
    MissingNetworkError,
    Network,
    NetworkSet,
    NNetParseError,
    execute,
    load_network_set,
    network_file_name,
    parse_nnet,
    select_advisory,
    select_network,
    serialize_nnet,
    tau_index,
)

SMALL = """// toy network
// second comment line
2,2,2,3,
2,3,2,
0,
-1.0,-2.0,
1.0,2.0,
0.0,0.0,10.0,
1.0,2.0,4.0,
1.0,0.0,
0.0,1.0,
1.0,1.0,
0.0,
0.0,
-1.0,
1.0,0.0,0.0,
0.0,1.0,1.0,
0.5,
-0.5,
"""


def test_parse_small_network_and_forward_by_hand():
    net = parse_nnet(SMALL)
    assert net.layer_sizes == [2, 3, 2]
    # x = (0.5, 3.0): clamp y to 2, normalize -> (0.5, 1.0)
    # hidden = relu([0.5, 1.0, 1.5 - 1]) = [0.5, 1.0, 0.5]
    # out = [0.5 + 0.5, 1.0 + 0.5 - 0.5] -> *4 + 10
    np.testing.assert_allclose(net.forward(np.array([0.5, 3.0])), [14.0, 14.0])
    np.testing.assert_allclose(net.forward(np.array([[0.5, 3.0], [0.0, 0.0]])), [[14.0, 14.0], [12.0, 8.0]])


def test_clamping_can_be_disabled():
    net = parse_nnet(SMALL, clamp_inputs=False)
    # y = 3 normalizes to 1.5 without the clamp: hidden (0.5, 1.5, 1.0)
    np.testing.assert_allclose(net.forward(np.array([0.5, 3.0])), [14.0, 18.0])


def test_serialize_round_trip_is_bit_exact():
    net = parse_nnet(SMALL)
    again = parse_nnet(serialize_nnet(net, comment="round trip"))
    assert again.identical_to(net)
    rng = np.random.default_rng(0)
    big = Network(
        weights=(rng.normal(size=(7, 5)), rng.normal(size=(5, 7))),
        biases=(rng.normal(size=7), rng.normal(size=5)),
        input_mins=-np.ones(5) * 1e3,
        input_maxes=np.ones(5) * 1e3,
        input_means=rng.normal(size=5),
        input_ranges=rng.uniform(1, 2, size=5),
        output_mean=0.1,
        output_range=3.0,
    )
    assert parse_nnet(serialize_nnet(big)).identical_to(big)


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("2,2,2,3,\n2,3,\n", 2, "layer sizes"),
        ("2,2,2,3,\n2,3,2,\n0,\n-1.0,abc,\n", 4, "non-numeric"),
        ("2,2,2,3,\n2,3,2,\n0,\n-1,-1,\n1,1,\n0,0,0,\n1,0,1,\n", 7, "strictly positive"),
        ("1,2,2,3,\n2,3,\n", 2, "disagree"),
    ],
)
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(NNetParseError) as err:
        parse_nnet(text, source="bad.nnet")
    assert err.value.line == line
    assert fragment in str(err.value)
    assert "bad.nnet" in str(err.value)


def test_truncated_file():
    with pytest.raises(NNetParseError, match="end of file"):
        parse_nnet("\n".join(SMALL.splitlines()[:12]))


def test_select_advisory_min_and_max():
    assert select_advisory([3, 1, 2, 5, 1]) is Advisory.WL  # ties to the lower index
    assert select_advisory([3, 1, 2, 5, 1], use_argmax=True) is Advisory.SL
    with pytest.raises(ValueError):
        select_advisory([1, 2])


@pytest.mark.parametrize(
    "tau, idx",
    [(0, 0), (0.4, 0), (0.5, 0), (0.6, 1), (3, 1), (3.5, 2), (7.5, 2), (15, 3), (55, 5), (70, 6), (90, 7), (99, 8), (100, 8), (160, 8)],
)
def test_tau_index(tau, idx):
    assert tau_index(tau) == idx


@given(st.floats(0, 500, allow_nan=False))
def test_tau_index_is_nearest(tau):
    idx = tau_index(tau)
    assert all(abs(tau - TAU_GRID[idx]) <= abs(tau - g) for g in TAU_GRID) or tau >= TAU_GRID[-1]


def test_file_names_are_one_based():
    assert network_file_name(Advisory.COC, 0) == "ACASXU_run2a_1_1_batch_2000.nnet"
    assert network_file_name(Advisory.SR, 8) == "ACASXU_run2a_5_9_batch_2000.nnet"


def test_execute_and_network_set():
    nets = uniform_set(lambda a, t: constant_network(Advisory.WR))
    inp = NetworkInput(1000.0, 0.1, 0.2, 300.0, 400.0)
    assert select_advisory(execute(select_network(nets, Advisory.SL, 33.0), inp)) is Advisory.WR
    assert nets.advise(Advisory.COC, 0, inp) is Advisory.WR
    assert nets.complete
    partial = NetworkSet({(Advisory.COC, 0): constant_network(Advisory.COC)})
    with pytest.raises(MissingNetworkError):
        partial.get(Advisory.WL, 0)
    with pytest.raises(ValueError):
        execute(nets.get(Advisory.COC, 0), inp, tau_feature=1.0)


def test_threshold_stub():
    net = threshold_network(Advisory.SL, 1000.0)
    far = NetworkInput(1000.5, 0, 0, 100, 100)
    near = NetworkInput(999.0, 0, 0, 100, 100)
    assert select_advisory(execute(net, far)) is Advisory.COC
    assert select_advisory(execute(net, near)) is Advisory.SL


def test_load_directory(tmp_path):
    for adv in Advisory:
        for t in range(len(TAU_GRID)):
            (tmp_path / network_file_name(adv, t)).write_text(serialize_nnet(constant_network(adv)))
    nets = load_network_set(tmp_path)
    assert nets.complete
    assert select_advisory(execute(nets.get(Advisory.SL, 4), NetworkInput(1, 0, 0, 1, 1))) is Advisory.SL
    subset = load_network_set(tmp_path, tau_indices=[0])
    assert len(subset.networks) == 5


def test_load_directory_errors(tmp_path):
    with pytest.raises(NNetParseError, match="does not exist"):
        load_network_set(tmp_path / "missing")
    with pytest.raises(NNetParseError, match="missing network file"):
        load_network_set(tmp_path)
    for adv in Advisory:
        (tmp_path / network_file_name(adv, 0)).write_text("garbage\n")
    with pytest.raises(NNetParseError):
        load_network_set(tmp_path, tau_indices=[0])
