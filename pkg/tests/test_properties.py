import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfopt.constraints import (
    AggregationConfig,
    ConstraintVector,
    DepthDiversityConfig,
    MagnitudeConfig,
    ThresholdSchedule,
    aggregate,
    score_depth,
    score_diversity,
    score_magnitude,
    threshold,
)
from wfopt.model import ExecutionTrace, WorkflowState, default_registry, interpret
from wfopt.weights import AdaptationConfig, ObservationBuffer, WeightVector, update_weights

from conftest import random_program

REGISTRY = default_registry()

scores6 = st.lists(st.floats(0, 1), min_size=6, max_size=6)
positive_weights = st.lists(st.floats(0.01, 5.0), min_size=6, max_size=6)


def simplex(raw):
    total = sum(raw)
    return WeightVector.from_iterable(v / total for v in raw)


@given(scores6, positive_weights)
def test_aggregate_range(scores, raw_weights):
    value = aggregate(ConstraintVector(*scores), simplex(raw_weights), AggregationConfig())
    assert 0.01 - 1e-12 <= value <= 1.01 + 1e-12


@given(scores6, positive_weights, st.integers(0, 5), st.floats(0.0, 0.3))
def test_aggregate_monotone(scores, raw_weights, index, bump):
    cfg = AggregationConfig()
    weights = simplex(raw_weights)
    bumped = list(scores)
    bumped[index] = min(1.0, bumped[index] + bump)
    assert aggregate(ConstraintVector(*bumped), weights, cfg) >= aggregate(ConstraintVector(*scores), weights, cfg) - 1e-12


@given(st.dictionaries(st.sampled_from(REGISTRY.names), st.integers(1, 50), min_size=1), st.integers(2, 12))
def test_diversity_scale_invariance(histogram, factor):
    base = score_diversity(WorkflowState(1, histogram), len(REGISTRY))
    scaled = score_diversity(WorkflowState(1, {k: factor * v for k, v in histogram.items()}), len(REGISTRY))
    assert scaled == pytest.approx(base, abs=1e-9)
    assert 0.0 <= base <= 1.0


@given(st.integers(0, 200))
def test_depth_score_in_range_and_monotone(depth):
    cfg = DepthDiversityConfig()
    score = score_depth(WorkflowState(depth, {}), cfg)
    assert 0.0 <= score <= 1.0
    assert score >= score_depth(WorkflowState(depth + 1, {}), cfg)


@given(st.integers(0, 500))
def test_threshold_floor(depth):
    sched = ThresholdSchedule()
    value = threshold(depth, sched)
    assert sched.tau_min <= value <= sched.tau0
    assert value >= threshold(depth + 1, sched)


@given(
    st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8),
    st.lists(st.floats(0.1, 1e3), min_size=1, max_size=4),
    st.floats(0.001, 1e3),
)
def test_magnitude_scale_invariance(values, inputs, scale):
    cfg = MagnitudeConfig()
    base = score_magnitude(ExecutionTrace(tuple(values), tuple(inputs), True, values[-1]), cfg)
    scaled = score_magnitude(
        ExecutionTrace(tuple(v * scale for v in values), tuple(v * scale for v in inputs), True, values[-1] * scale),
        cfg,
    )
    assert scaled == pytest.approx(base, abs=1e-9)
    assert 0.0 <= base <= 1.0


@given(st.lists(st.tuples(st.lists(st.floats(0, 1), min_size=6, max_size=6), st.floats(0, 1)), min_size=1, max_size=40))
def test_weight_updates_stay_on_simplex(observations):
    buffer = ObservationBuffer(window=10)
    weights = WeightVector.uniform()
    cfg = AdaptationConfig()
    for step, (scores, reward) in enumerate(observations):
        buffer.push(ConstraintVector(*scores), reward)
        weights = update_weights(weights, buffer, cfg, round_index=cfg.warmup_rounds + step)
        assert sum(weights.as_tuple()) == pytest.approx(1.0, abs=1e-9)
        assert all(v > 0 for v in weights.as_tuple())


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_random_programs_interpret_or_fail_cleanly(seed):
    rng = np.random.default_rng(seed)
    program = random_program(rng, REGISTRY)
    inputs = {rid: float(rng.integers(-9, 10)) for rid in program.roots}
    trace = interpret(program, inputs, REGISTRY)
    if trace.success:
        assert trace.values
        assert all(math.isfinite(v) for v in trace.values)
    else:
        assert trace.violation
