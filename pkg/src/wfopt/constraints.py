"""Six-family compliance scoring, aggregation, and the expansion threshold.

Score conventions: every family score lies in [0, 1]; 0.5 is the neutral
prior used whenever the metadata needed to judge a program is absent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from .model import (
    ExecutionTrace,
    OperatorRegistry,
    WorkflowProgram,
    WorkflowState,
    DomainRule,
    Sign,
    default_registry,
    shape_analysis,
    sign_analysis,
    unit_analysis,
)
from .motifs import MotifLibrary, score_pattern
from .weights import FAMILIES


@dataclass(frozen=True)
class ConstraintVector:
    """Per-family compliance scores, each in [0, 1]."""

    units: float
    types: float
    pattern: float
    magnitude: float
    depth: float
    diversity: float

    def __post_init__(self) -> None:
        for name, value in self.as_dict().items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"constraint score {name}={value} outside [0, 1]")

    def as_dict(self) -> dict[str, float]:
        return {
            "units": self.units,
            "types": self.types,
            "pattern": self.pattern,
            "magnitude": self.magnitude,
            "depth": self.depth,
            "diversity": self.diversity,
        }

    def as_tuple(self) -> tuple[float, ...]:
        return (self.units, self.types, self.pattern, self.magnitude, self.depth, self.diversity)


@dataclass(frozen=True)
class AggregationConfig:
    epsilon: float = 0.01
    lambda_shaping: float = 0.5
    uct_c: float = 1.414

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.lambda_shaping < 0:
            raise ValueError("lambda_shaping must be >= 0")


@dataclass(frozen=True)
class ThresholdSchedule:
    tau0: float = 0.6
    tau_min: float = 0.3
    decay_k: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau_min <= self.tau0 <= 1.0:
            raise ValueError("need 0 <= tau_min <= tau0 <= 1")
        if self.decay_k < 0:
            raise ValueError("decay_k must be >= 0")


@dataclass(frozen=True)
class DepthDiversityConfig:
    d_max: int = 15
    beta: float = 0.1

    def __post_init__(self) -> None:
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class MagnitudeConfig:
    gamma: int = 2
    delta: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must be in [0, 1]")


def score_depth(state: WorkflowState, cfg: DepthDiversityConfig) -> float:
    """Penalty for exceeding the maximum program depth, clamped to [0, 1]."""
    excess = max(0, state.depth - cfg.d_max)
    return max(0.0, 1.0 - cfg.beta * excess)


def score_diversity(state: WorkflowState, registry_size: int) -> float:
    """Normalized Shannon entropy of the operator histogram."""
    if registry_size < 2:
        raise ValueError("registry must hold at least two operators")
    counts = [c for c in state.operator_histogram.values() if c > 0]
    total = sum(counts)
    if total == 0:
        return 0.0
    entropy = 0.0
    for c in counts:
        p = c / total
        entropy -= p * math.log(p)
    return entropy / math.log(registry_size)


def score_units(program: WorkflowProgram, registry: Optional[OperatorRegistry] = None) -> float:
    """Fraction of unit-checkable operations that are dimensionally consistent.

    Operations become checkable once all their input signatures are known,
    either from explicit tags or by propagation. With no checkable operation
    the score is the neutral prior 0.5.
    """
    ua = unit_analysis(program, registry)
    if not ua.checkable:
        return 0.5
    passing = sum(1 for nid in ua.checkable if ua.passed[nid])
    return passing / len(ua.checkable)


def score_types(program: WorkflowProgram, registry: Optional[OperatorRegistry] = None) -> float:
    """Fraction of operator applications passing shape and domain-rule checks."""
    registry = registry or default_registry()
    ops = program.operator_nodes()
    if not ops:
        return 0.5
    shape_ok = shape_analysis(program, registry)
    signs = sign_analysis(program, registry)
    inc = program.incoming()
    passing = 0
    for node in ops:
        ok = shape_ok.get(node.node_id, True)
        rule = registry.get(node.op).domain_rule
        if ok and rule is not DomainRule.NONE:
            arg_signs = [signs[src] for src in inc[node.node_id].values()]
            for s in arg_signs:
                if rule is DomainRule.INPUT_NONNEG and s is Sign.NEG:
                    ok = False
                elif rule is DomainRule.INPUT_POSITIVE and s in (Sign.NEG, Sign.ZERO, Sign.NONPOS):
                    ok = False
        passing += 1 if ok else 0
    return passing / len(ops)


def score_magnitude(trace: ExecutionTrace, cfg: MagnitudeConfig) -> float:
    """Penalty for intermediate values far beyond the scale of the inputs.

    The tolerance is theta = max(|V_in|) * 10**gamma; traces staying within it
    score 1.0. Missing or all-zero inputs make theta undefined, so the neutral
    prior 0.5 is returned.
    """
    if not trace.values:
        return 0.5
    peak_in = max((abs(v) for v in trace.input_constants), default=0.0)
    if peak_in == 0.0:
        return 0.5
    theta = peak_in * 10.0 ** cfg.gamma
    peak = max(abs(v) for v in trace.values)
    if peak <= theta:
        return 1.0
    return max(0.0, 1.0 - cfg.delta * (peak - theta) / theta)


def aggregate_weighted(
    scores: Mapping[str, float],
    weights: Mapping[str, float],
    epsilon: float,
    families: Sequence[str] = FAMILIES,
) -> float:
    """Weighted geometric mean of (score + epsilon) over the given families."""
    num = 0.0
    den = 0.0
    for fam in families:
        c = scores[fam]
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"constraint score {fam}={c} outside [0, 1]")
        w = weights[fam]
        num += w * math.log(c + epsilon)
        den += w
    if den <= 0:
        raise ValueError("weights must have positive mass")
    return math.exp(num / den)


def aggregate(c: ConstraintVector, weights, cfg: AggregationConfig) -> float:
    """Aggregate compliance over all six families; range is [epsilon, 1 + epsilon]."""
    return aggregate_weighted(c.as_dict(), weights.as_dict(), cfg.epsilon)


def threshold(depth: int, sched: ThresholdSchedule) -> float:
    """Depth-aware expansion gate: loosens linearly with depth down to a floor."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return max(sched.tau_min, sched.tau0 - sched.decay_k * depth)


class ConstraintScorer:
    """Composes the six family scores against one registry/motif-library setup.

    Disabled families are pinned to the neutral 0.5 and their weight mass is
    redistributed uniformly over the enabled families when aggregating.
    """

    def __init__(
        self,
        registry: OperatorRegistry,
        *,
        agg: AggregationConfig = AggregationConfig(),
        depth_diversity: DepthDiversityConfig = DepthDiversityConfig(),
        magnitude: MagnitudeConfig = MagnitudeConfig(),
        library: Optional[MotifLibrary] = None,
        category: str = "default",
        enabled_families: Sequence[str] = FAMILIES,
    ):
        unknown = set(enabled_families) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown constraint families: {sorted(unknown)}")
        if not enabled_families:
            raise ValueError("at least one constraint family must be enabled")
        self.registry = registry
        self.agg = agg
        self.depth_diversity = depth_diversity
        self.magnitude = magnitude
        self.library = library
        self.category = category
        self.enabled = tuple(f for f in FAMILIES if f in set(enabled_families))

    def _on(self, family: str) -> bool:
        return family in self.enabled

    def static_vector(self, program: WorkflowProgram, state: WorkflowState) -> ConstraintVector:
        """Pre-execution scores; magnitude stays at 1.0 until a trace exists."""
        if self.library is not None and self._on("pattern"):
            pattern = score_pattern(state, self.category, self.library)
        else:
            pattern = 0.5
        return ConstraintVector(
            units=score_units(program, self.registry) if self._on("units") else 0.5,
            types=score_types(program, self.registry) if self._on("types") else 0.5,
            pattern=pattern,
            magnitude=1.0 if self._on("magnitude") else 0.5,
            depth=score_depth(state, self.depth_diversity) if self._on("depth") else 0.5,
            diversity=score_diversity(state, len(self.registry)) if self._on("diversity") else 0.5,
        )

    def with_magnitude(self, vector: ConstraintVector, traces: Sequence[ExecutionTrace]) -> ConstraintVector:
        """Fold measured magnitude scores (mean over traces) into a vector."""
        if not self._on("magnitude") or not traces:
            return vector
        mean = sum(score_magnitude(t, self.magnitude) for t in traces) / len(traces)
        return replace(vector, magnitude=mean)

    def effective_weights(self, weights: Mapping[str, float]) -> dict[str, float]:
        disabled_mass = sum(weights[f] for f in FAMILIES if not self._on(f))
        share = disabled_mass / len(self.enabled)
        return {f: weights[f] + share for f in self.enabled}

    def total(self, vector: ConstraintVector, weights) -> float:
        wmap = weights.as_dict() if hasattr(weights, "as_dict") else dict(weights)
        eff = self.effective_weights(wmap)
        return aggregate_weighted(vector.as_dict(), eff, self.agg.epsilon, self.enabled)
