import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from helpers import BULB, CTRL, PLUG, c2d, d2c, pkt
from matterlens.model import Direction, RoleMap, classify_direction
from matterlens.sequencer import (
    LengthSequence,
    day_of,
    extract_sequences,
    pair_exchanges,
    pair_index,
    partition_days,
)
from matterlens.synth import generate, load_scenario


def test_single_exchange_pairs(roles):
    req, resp = c2d(0.0, 59), d2c(0.1, 70)
    exchanges, unpaired = pair_exchanges([req, resp], roles)
    assert len(exchanges) == 1 and unpaired == []
    assert exchanges[0].request == req and exchanges[0].response == resp
    assert exchanges[0].gap == pytest.approx(0.1)


def test_response_outside_window_is_unpaired(roles):
    trace = [c2d(0.0, 59), d2c(0.6, 70)]
    exchanges, unpaired = pair_exchanges(trace, roles, window=0.5)
    assert exchanges == [] and unpaired == trace


def test_window_boundary_is_inclusive(roles):
    assert pair_index([c2d(0.0, 59), d2c(0.5, 70)], roles, 0.5) == {0: 1}


def test_response_goes_to_earliest_request(roles):
    trace = [c2d(0.0, 59), c2d(0.1, 59), d2c(0.2, 70)]
    assert pair_index(trace, roles) == {0: 2}


def test_pairs_do_not_cross_devices(roles):
    trace = [c2d(0.0, 59, BULB), d2c(0.1, 70, PLUG), d2c(0.2, 70, BULB)]
    assert pair_index(trace, roles) == {0: 2}


def test_other_traffic_is_ignored(roles):
    trace = [c2d(0.0, 59), pkt(0.1, 70, "fd00::99|", CTRL), d2c(0.2, 70)]
    assert pair_index(trace, roles) == {0: 2}


def test_eligibility_mask(roles):
    trace = [c2d(0.0, 34), c2d(0.1, 59), d2c(0.2, 70)]
    assert pair_index(trace, roles, eligible=[False, True, True]) == {1: 2}


# brute-force oracle for the greedy matching

UNMATCHED = math.inf


def feasible(records, roles, window, q, r):
    a, b = records[q], records[r]
    da, db = classify_direction(a, roles), classify_direction(b, roles)
    return (
        da is Direction.CONTROLLER_TO_DEVICE
        and db is Direction.DEVICE_TO_CONTROLLER
        and q < r
        and a.dst_id == b.src_id
        and a.src_id == b.dst_id
        and 0 <= b.timestamp - a.timestamp <= window
    )


def all_matchings(records, roles, window):
    """Every partial matching, as a tuple of response indices (inf when unmatched) per request."""
    requests = [i for i, r in enumerate(records) if classify_direction(r, roles) is Direction.CONTROLLER_TO_DEVICE]
    options = [[UNMATCHED] + [j for j in range(len(records)) if feasible(records, roles, window, q, j)] for q in requests]
    for choice in itertools.product(*options):
        used = [c for c in choice if c is not UNMATCHED]
        if len(used) == len(set(used)):
            yield requests, choice


def lexicographic_min(records, roles, window):
    best = None
    for requests, choice in all_matchings(records, roles, window):
        if best is None or choice < best[1]:
            best = (requests, choice)
    requests, choice = best
    return {q: r for q, r in zip(requests, choice) if r is not UNMATCHED}


def max_matching_size(records, roles, window):
    return max(sum(c is not UNMATCHED for c in choice) for _, choice in all_matchings(records, roles, window))


small_trace = st.lists(
    st.tuples(
        st.integers(0, 20),  # tenths of a second
        st.sampled_from(["c2d", "d2c"]),
        st.sampled_from([BULB, PLUG]),
    ),
    min_size=0,
    max_size=8,
).map(
    lambda rows: [
        (c2d if kind == "c2d" else d2c)(t / 10, 60, dev)
        for t, kind, dev in sorted(rows, key=lambda r: r[0])
    ]
)
windows = st.sampled_from([0.0, 0.1, 0.25, 0.5, 1.0, 3.0])


@settings(max_examples=300, deadline=None)
@given(small_trace, windows)
def test_greedy_equals_lexicographic_min(trace, window):
    roles = RoleMap(frozenset({CTRL}), {BULB: "bulb", PLUG: "plug"})
    assert pair_index(trace, roles, window) == lexicographic_min(trace, roles, window)


@settings(max_examples=300, deadline=None)
@given(small_trace, windows, windows)
def test_matching_validity_and_window_monotonicity(trace, w1, w2):
    roles = RoleMap(frozenset({CTRL}), {BULB: "bulb", PLUG: "plug"})
    lo, hi = sorted((w1, w2))
    pairs = pair_index(trace, roles, lo)
    assert len(set(pairs.values())) == len(pairs)
    assert all(feasible(trace, roles, lo, q, r) for q, r in pairs.items())
    # every pair found under the narrow window stays feasible under the wide one
    assert all(feasible(trace, roles, hi, q, r) for q, r in pairs.items())
    assert max_matching_size(trace, roles, lo) <= max_matching_size(trace, roles, hi)
    assert len(pairs) <= max_matching_size(trace, roles, lo)


# length sequences


def test_sequence_order_and_text():
    assert LengthSequence(59, 70) < LengthSequence(59, 71) < LengthSequence(60, 1)
    assert str(LengthSequence(75, 59)) == "(75->59)"
    with pytest.raises(ValueError):
        LengthSequence(0, 59)


def test_extract_sequences_on_color_then_onoff(roles):
    # IRA1(75) ... END, then a trailing on/off IRA1(59) shortly after
    trace = [c2d(100.0, 75), d2c(100.1, 70), c2d(100.3, 34), c2d(100.5, 59), d2c(100.6, 70), c2d(100.8, 34)]
    seqs = extract_sequences(trace, roles)
    day = day_of(100.0)
    assert seqs == {(BULB, day): {LengthSequence(75, 34): 1, LengthSequence(34, 59): 1, LengthSequence(59, 34): 1}}


def test_extract_sequences_respects_window(roles):
    trace = [c2d(0.0, 39), c2d(0.6, 64)]
    assert extract_sequences(trace, roles, window=0.5) == {}
    assert extract_sequences(trace, roles, window=1.0) == {(BULB, day_of(0.0)): {LengthSequence(39, 64): 1}}


def test_extract_sequences_separate_devices(roles):
    trace = [c2d(0.0, 39, BULB), c2d(0.1, 64, PLUG)]
    assert extract_sequences(trace, roles) == {}


# day partitions


def test_day_of_with_offset():
    assert day_of(0.0) == "1970-01-01"
    assert day_of(86399.9) == "1970-01-01"
    assert day_of(86400.0) == "1970-01-02"
    assert day_of(3600.0, timezone_offset=-7200.0) == "1969-12-31"


def test_partition_days_groups_by_calendar_day():
    trace = [c2d(10.0, 59), c2d(86410.0, 59), c2d(86420.0, 59)]
    days = partition_days(trace)
    assert {k: len(v) for k, v in days.items()} == {"1970-01-01": 1, "1970-01-02": 2}


def test_500_day_trace_gives_500_buckets():
    cfg = load_scenario("exp1")
    data = generate(cfg, seed=3)
    days = partition_days(data.records)
    # the scenario never draws zero interactions, so every day carries traffic
    assert 0 not in cfg.interactions_per_day
    assert len(days) == 500
    assert set(days) == {day for _, day in data.device_truth}
