import itertools
import json
import math
from collections import Counter, defaultdict
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import chisquare

from matterlens.errors import InvalidConfig, SchemaViolation
from matterlens.model import Direction, DeviceType, InteractionLabel as L, classify_direction
from matterlens.synth import (
    BLOCK_SEPARATION,
    DAY,
    ControllerVariant,
    ScenarioConfig,
    all_on_off_probability,
    generate,
    invoke_template,
    load_scenario,
    read_truth,
    sample_commands,
    sample_interaction_counts,
    timed_invoke_template,
    write_truth,
)

EXP1 = load_scenario("exp1")
EXP2 = load_scenario("exp2")


def small(cfg, days=20):
    return replace(cfg, days=days)


def test_same_seed_same_trace():
    a, b = generate(small(EXP1), seed=9), generate(small(EXP1), seed=9)
    assert a.records == b.records and a.truth == b.truth and a.device_truth == b.device_truth
    assert generate(small(EXP1), seed=10).records != a.records


def test_seed_in_config_is_used():
    assert generate(replace(small(EXP1), seed=4)).records == generate(small(EXP1), seed=4).records


def test_template_shapes():
    assert [s.label for s in invoke_template(59).steps] == [L.IRA1, L.IRA2, L.END]
    timed = timed_invoke_template(64)
    assert [s.label for s in timed.steps] == [L.TRA, L.SRA2, L.IRA1, L.IRA2, L.END]
    assert [s.length for s in timed.steps] == [39, 42, 64, 70, 34]
    assert [s.direction for s in timed.steps] == [
        Direction.CONTROLLER_TO_DEVICE,
        Direction.DEVICE_TO_CONTROLLER,
        Direction.CONTROLLER_TO_DEVICE,
        Direction.DEVICE_TO_CONTROLLER,
        Direction.CONTROLLER_TO_DEVICE,
    ]


def test_lock_uses_timed_invokes():
    cfg = ScenarioConfig(DeviceType.LOCK, days=1, fixed_commands={"LockDoor": 1})
    data = generate(cfg, seed=1)
    assert [r.payload_len for r in data.records] == [39, 42, 64, 70, 34]
    assert data.labels() == [L.TRA, L.SRA2, L.IRA1, L.IRA2, L.END]


def test_color_command_gets_trailing_on_off():
    cfg = ScenarioConfig(DeviceType.LIGHTING, days=1, fixed_commands={"MoveToHueAndSaturation": 1})
    recs = generate(cfg, seed=2).records
    assert [r.payload_len for r in recs] == [75, 70, 34, 59, 70, 34]
    assert 0.1 <= recs[3].timestamp - recs[2].timestamp <= 0.4 + 1e-6


def test_controller_variant_changes_level_length():
    ha = ScenarioConfig(DeviceType.LIGHTING, days=1, fixed_commands={"MoveToLevelWithOnOff": 1})
    ag = replace(ha, controller_variant=ControllerVariant.APPLE_GOOGLE, command_length_map=None)
    assert generate(ha, seed=1).records[0].payload_len == 71
    assert generate(ag, seed=1).records[0].payload_len == 70


def test_generated_trace_invariants():
    data = generate(small(load_scenario("d2"), 30), seed=3)
    recs = data.records
    ts = [r.timestamp for r in recs]
    assert ts == sorted(ts)
    counters = [r.message_counter for r in recs]
    assert len(set(counters)) == len(counters) == len(data.truth)
    start = EXP1.start
    assert start <= ts[0] and ts[-1] < start + 30 * DAY
    for r in recs:
        assert classify_direction(r, data.roles) is not Direction.OTHER


def test_packet_gaps_and_block_separation():
    cfg = ScenarioConfig(DeviceType.PLUG, days=3, fixed_commands={"OnOff": 40})
    recs = generate(cfg, seed=8).records
    assert len(recs) == 3 * 40 * 3
    for i in range(0, len(recs), 3):
        a, b, c = recs[i : i + 3]
        assert [a.payload_len, b.payload_len, c.payload_len] == [59, 70, 34]
        assert 0.05 - 1e-6 <= b.timestamp - a.timestamp <= 0.3 + 1e-6
        assert 0.05 - 1e-6 <= c.timestamp - b.timestamp <= 0.3 + 1e-6
        if i:
            assert a.timestamp - recs[i - 1].timestamp >= BLOCK_SEPARATION - 1e-6


def test_truth_file_round_trip(tmp_path):
    data = generate(small(EXP1, 5), seed=2)
    path = tmp_path / "truth.jsonl"
    write_truth(data, path)
    packets, devices = read_truth(path)
    assert packets == data.truth and devices == data.device_truth


def test_truth_file_errors(tmp_path):
    path = tmp_path / "truth.jsonl"
    path.write_text(json.dumps({"kind": "packet", "message_counter": 1, "label": "IRA9"}) + "\n")
    with pytest.raises(SchemaViolation):
        read_truth(path)
    path.write_text(json.dumps({"kind": "weird"}) + "\n")
    with pytest.raises(SchemaViolation):
        read_truth(path)


# sampling statistics


def test_mean_interactions_per_day():
    assert EXP1.mean_interactions == pytest.approx(3.1)
    counts = sample_interaction_counts(EXP1.interactions_per_day, 500, np.random.default_rng(0))
    assert abs(counts.mean() - 3.1) <= 0.2


def test_command_frequency_matches_distribution():
    draws = sample_commands(EXP1.command_distribution, 1_000_000, np.random.default_rng(1))
    assert abs(Counter(draws)["OnOff"] / 1_000_000 - 0.4) <= 0.002


def test_interaction_counts_pass_chi_square():
    dist = EXP1.interactions_per_day
    counts = sample_interaction_counts(dist, 10_000, np.random.default_rng(2))
    values = sorted(dist)
    observed = [int((counts == v).sum()) for v in values]
    expected = [10_000 * dist[v] for v in values]
    assert chisquare(observed, expected).pvalue > 0.01


def brute_force_all_on_off(ipd, dist):
    """Sum over every possible command sequence of each day length."""
    names = list(dist)
    total = 0.0
    for n, q in ipd.items():
        for seq in itertools.product(names, repeat=n):
            if all(c == "OnOff" for c in seq):
                total += q * math.prod(dist[c] for c in seq)
    return total


@pytest.mark.parametrize("cfg, expected", [(EXP1, 0.900096), (EXP2, 0.868032)])
def test_all_on_off_probability_oracle(cfg, expected):
    p = all_on_off_probability(cfg.interactions_per_day, cfg.command_distribution)
    assert p == pytest.approx(brute_force_all_on_off(cfg.interactions_per_day, cfg.command_distribution), abs=1e-12)
    assert 1 - p == pytest.approx(expected, abs=1e-9)


def test_device_days_labeled_with_true_type():
    data = generate(load_scenario("d3"), seed=1)
    per_type = defaultdict(int)
    for (_, _), t in data.device_truth.items():
        per_type[t] += 1
    assert per_type == {DeviceType.LIGHTING: 10, DeviceType.PLUG: 10, DeviceType.LOCK: 10, DeviceType.SENSOR: 10}


# invalid configurations


@pytest.mark.parametrize(
    "changes",
    [
        {"interactions_per_day": {1: 0.5, 2: 0.4}},
        {"interactions_per_day": {1: 1.2, 2: -0.2}},
        {"command_distribution": {"OnOff": 0.5, "Toast": 0.5}},
        {"command_distribution": {}},
        {"days": -1},
        {"seed": -3},
        {"background": {"gossip": 1.0}},
        {"background": {"report": -1.0}},
        {"controller_variant": "Alexa"},
        {"command_length_map": {"OnOff": 0, "MoveToLevelWithOnOff": 71}, "command_distribution": {"OnOff": 1.0}},
    ],
)
def test_invalid_configs(changes):
    with pytest.raises(InvalidConfig):
        replace(EXP1, **changes)


def test_day_overflow_is_rejected():
    cfg = ScenarioConfig(DeviceType.PLUG, days=1, fixed_commands={"OnOff": 40_000})
    with pytest.raises(InvalidConfig):
        generate(cfg, seed=1)


def test_scenario_json_round_trip(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(EXP1.to_json()))
    assert load_scenario(path) == EXP1
    with pytest.raises(InvalidConfig):
        load_scenario("no-such-preset")
