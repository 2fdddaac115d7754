"""Deterministic stand-ins for the optimizer/executor roles, plus accounting.

The synthetic proposer enumerates minimal structural edits of a program in a
fixed order and returns a seeded sample; the synthetic evaluator interprets a
program over a problem set. Both emit token records whose sizes are
deterministic functions of payload size, so efficiency metrics reproduce
exactly. Remote implementations of the same two roles are supported through
the wire protocol in :mod:`wfopt.adapter`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .model import (
    CONST_OP,
    INPUT_OP,
    Edge,
    ExecutionTrace,
    Node,
    OperatorRegistry,
    UnitSignature,
    WorkflowProgram,
    canonical_key,
    default_registry,
    fresh_node_id,
    interpret,
    validate_program,
)
from .runlog import RunLog


class EvaluationError(RuntimeError):
    """An evaluator reported failure for one request (the run continues;
    the simulation scores a zero reward)."""


@dataclass(frozen=True)
class Problem:
    inputs: Mapping[str, float]
    expected: float
    category: str
    constants: tuple[float, ...]


@dataclass(frozen=True)
class ProblemSet:
    problems: tuple[Problem, ...]
    split: str  # "validation" | "test"

    def __post_init__(self) -> None:
        if self.split not in ("validation", "test"):
            raise ValueError(f"bad split {self.split!r}")

    def __len__(self) -> int:
        return len(self.problems)


@dataclass(frozen=True)
class TokenRecord:
    role: str  # "optimizer" | "executor"
    prompt_tokens: int
    completion_tokens: int
    request_id: str

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class PriceMap:
    """Per-role (input, output) price per token."""

    prices: Mapping[str, tuple[float, float]]

    def __post_init__(self) -> None:
        for role, (pin, pout) in self.prices.items():
            if pin < 0 or pout < 0:
                raise ValueError(f"negative price for role {role!r}")

    @staticmethod
    def zero() -> "PriceMap":
        return PriceMap({"optimizer": (0.0, 0.0), "executor": (0.0, 0.0)})

    def for_role(self, role: str) -> tuple[float, float]:
        if role not in self.prices:
            raise KeyError(f"no price configured for role {role!r}")
        return self.prices[role]


@dataclass(frozen=True)
class ProposerConfig:
    """Controls the edit space the synthetic proposer enumerates."""

    ops: Optional[tuple[str, ...]] = None       # None = whole registry
    max_operator_nodes: int = 6
    const_palette: tuple[float, ...] = ()
    allow_insert: bool = True
    allow_replace: bool = True
    allow_delete: bool = True
    allow_rewire: bool = True

    def __post_init__(self) -> None:
        if self.max_operator_nodes < 1:
            raise ValueError("max_operator_nodes must be >= 1")


def _descendants(program: WorkflowProgram, nid: str) -> set[str]:
    out: dict[str, list[str]] = {n.node_id: [] for n in program.nodes}
    for e in program.edges:
        out[e.src].append(e.dst)
    stack, seen = [nid], set()
    while stack:
        cur = stack.pop()
        for nxt in out[cur]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _prune_dead(program: WorkflowProgram) -> WorkflowProgram:
    """Drop operator/const nodes that no longer feed the output; keep roots."""
    inc = program.incoming()
    live: set[str] = set()
    stack = [program.output]
    while stack:
        cur = stack.pop()
        if cur in live:
            continue
        live.add(cur)
        stack.extend(inc.get(cur, {}).values())
    nodes = tuple(
        n for n in program.nodes
        if n.node_id in live or n.op == INPUT_OP
    )
    kept = {n.node_id for n in nodes}
    edges = tuple(e for e in program.edges if e.src in kept and e.dst in kept)
    return WorkflowProgram(nodes=nodes, edges=edges, roots=program.roots, output=program.output)


class SyntheticProposer:
    """Enumerates structural edits: insert, replace, delete, rewire.

    Edits are generated in a fixed structural order; `propose` then applies a
    seeded permutation and returns the first `count` distinct candidates, so
    a fixed seed always yields the identical list.
    """

    def __init__(self, registry: Optional[OperatorRegistry] = None, config: ProposerConfig = ProposerConfig()):
        self.registry = registry or default_registry()
        self.config = config
        names = config.ops if config.ops is not None else self.registry.names
        for name in names:
            if name not in self.registry:
                raise ValueError(f"proposer op {name!r} not in registry")
        self._ops = tuple(self.registry.get(name) for name in names)
        self._request_counter = 0

    # -- edit enumeration ---------------------------------------------------

    def enumerate_edits(self, program: WorkflowProgram) -> list[WorkflowProgram]:
        """All valid, distinct single-edit neighbours in fixed order."""
        base_key = canonical_key(program)
        seen = {base_key}
        results: list[WorkflowProgram] = []

        def emit(candidate: Optional[WorkflowProgram]) -> None:
            if candidate is None:
                return
            candidate = _prune_dead(candidate)
            if len(candidate.operator_nodes()) > self.config.max_operator_nodes:
                return
            if not validate_program(candidate, self.registry).ok:
                return
            key = canonical_key(candidate)
            if key in seen:
                return
            seen.add(key)
            results.append(candidate)

        if self.config.allow_insert:
            for candidate in self._insertions(program):
                emit(candidate)
        if self.config.allow_replace:
            for candidate in self._replacements(program):
                emit(candidate)
        if self.config.allow_delete:
            for candidate in self._deletions(program):
                emit(candidate)
        if self.config.allow_rewire:
            for candidate in self._rewires(program):
                emit(candidate)
        return results

    def _second_inputs(self, program: WorkflowProgram, below: str) -> list[str]:
        """Candidate extra operands: any node that cannot close a cycle through `below`."""
        blocked = _descendants(program, below) | {below}
        return [n.node_id for n in program.nodes if n.node_id not in blocked]

    def _edit_sites(self, program: WorkflowProgram) -> list[tuple[str, Optional[Edge]]]:
        # real edges first, then the virtual edge above the output node
        sites: list[tuple[str, Optional[Edge]]] = [("edge", e) for e in program.edges]
        sites.append(("output", None))
        return sites

    def _insertions(self, program: WorkflowProgram):
        nm = program.node_map()
        for where, edge in self._edit_sites(program):
            src = edge.src if edge is not None else program.output
            anchor = edge.dst if edge is not None else program.output
            for kind in self._ops:
                if kind.arity == 1:
                    yield self._insert_node(program, edge, kind.name, [src])
                elif kind.arity == 2:
                    partners = self._second_inputs(program, anchor) if edge is not None else [
                        n.node_id for n in program.nodes
                    ]
                    for partner in partners:
                        yield self._insert_node(program, edge, kind.name, [src, partner])
                        yield self._insert_node(program, edge, kind.name, [partner, src])
                    for value in self.config.const_palette:
                        yield self._insert_node(program, edge, kind.name, [src, ("const", value)])
                        yield self._insert_node(program, edge, kind.name, [("const", value), src])

    def _insert_node(self, program: WorkflowProgram, edge: Optional[Edge], op: str, operands) -> WorkflowProgram:
        new_id = fresh_node_id(program)
        nodes = list(program.nodes)
        edges = list(program.edges)
        const_counter = 0
        operand_ids = []
        for operand in operands:
            if isinstance(operand, tuple) and operand[0] == "const":
                cid = fresh_node_id(program, "c")
                if const_counter:
                    cid = f"{cid}_{const_counter}"
                const_counter += 1
                nodes.append(Node(cid, CONST_OP, value=float(operand[1])))
                operand_ids.append(cid)
            else:
                operand_ids.append(operand)
        nodes.append(Node(new_id, op))
        for slot, operand_id in enumerate(operand_ids):
            edges.append(Edge(operand_id, new_id, slot))
        if edge is not None:
            edges.remove(edge)
            edges.append(Edge(new_id, edge.dst, edge.slot))
            output = program.output
        else:
            output = new_id
        return WorkflowProgram(tuple(nodes), tuple(edges), program.roots, output)

    def _replacements(self, program: WorkflowProgram):
        for node in program.operator_nodes():
            arity = self.registry.get(node.op).arity
            for kind in self._ops:
                if kind.arity != arity or kind.name == node.op:
                    continue
                nodes = tuple(
                    replace(n, op=kind.name) if n.node_id == node.node_id else n
                    for n in program.nodes
                )
                yield WorkflowProgram(nodes, program.edges, program.roots, program.output)

    def _deletions(self, program: WorkflowProgram):
        inc = program.incoming()
        for node in program.operator_nodes():
            if self.registry.get(node.op).arity != 1:
                continue
            source = inc[node.node_id][0]
            nodes = tuple(n for n in program.nodes if n.node_id != node.node_id)
            edges = []
            for e in program.edges:
                if e.dst == node.node_id:
                    continue
                if e.src == node.node_id:
                    edges.append(Edge(source, e.dst, e.slot))
                else:
                    edges.append(e)
            output = source if program.output == node.node_id else program.output
            yield WorkflowProgram(nodes, tuple(edges), program.roots, output)

    def _rewires(self, program: WorkflowProgram):
        for edge in program.edges:
            blocked = _descendants(program, edge.dst) | {edge.dst}
            for node in program.nodes:
                alt = node.node_id
                if alt == edge.src or alt in blocked:
                    continue
                edges = tuple(
                    Edge(alt, e.dst, e.slot) if e == edge else e for e in program.edges
                )
                yield WorkflowProgram(program.nodes, edges, program.roots, program.output)

    # -- the proposer role --------------------------------------------------

    def propose(
        self,
        program: WorkflowProgram,
        count: int,
        rng: np.random.Generator,
    ) -> tuple[list[WorkflowProgram], TokenRecord]:
        """Seeded sample of up to `count` distinct valid edits."""
        if count < 1:
            raise ValueError("count must be >= 1")
        edits = self.enumerate_edits(program)
        if len(edits) > count:
            order = rng.permutation(len(edits))
            edits = [edits[i] for i in order[:count]]
        self._request_counter += 1
        prompt = 40 + 12 * len(program.nodes) + 6 * len(program.edges)
        completion = sum(8 + 3 * len(c.nodes) for c in edits)
        record = TokenRecord(
            role="optimizer",
            prompt_tokens=prompt,
            completion_tokens=completion,
            request_id=f"opt-{self._request_counter:05d}",
        )
        return edits, record


class SyntheticEvaluator:
    """Interprets a program over a problem set; reward is the solved fraction."""

    def __init__(
        self,
        problems: ProblemSet,
        registry: Optional[OperatorRegistry] = None,
        tolerance: float = 1e-9,
        relative: bool = False,
    ):
        if not problems.problems:
            raise ValueError("evaluator needs a non-empty problem set")
        self.problems = problems
        self.registry = registry or default_registry()
        self.tolerance = tolerance
        self.relative = relative
        self._request_counter = 0

    def _matches(self, output: float, expected: float) -> bool:
        if self.relative:
            scale = max(1.0, abs(expected))
            return abs(output - expected) <= self.tolerance * scale
        return abs(output - expected) <= self.tolerance

    def evaluate(self, program: WorkflowProgram) -> tuple[float, list[ExecutionTrace], TokenRecord]:
        traces: list[ExecutionTrace] = []
        solved = 0
        for problem in self.problems.problems:
            trace = interpret(program, problem.inputs, self.registry)
            traces.append(trace)
            if trace.success and trace.output is not None and self._matches(trace.output, problem.expected):
                solved += 1
        reward = solved / len(self.problems.problems)
        self._request_counter += 1
        prompt = 20 + 8 * len(program.nodes) + 5 * len(self.problems.problems)
        completion = sum(4 + 2 * len(t.values) for t in traces)
        record = TokenRecord(
            role="executor",
            prompt_tokens=prompt,
            completion_tokens=completion,
            request_id=f"exe-{self._request_counter:05d}",
        )
        return reward, traces, record


# ---------------------------------------------------------------------------
# Synthetic suite generation.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSuite:
    initial_program: WorkflowProgram
    targets: Mapping[str, WorkflowProgram]   # category -> hidden target
    validation: ProblemSet
    test: ProblemSet

    @property
    def target(self) -> WorkflowProgram:
        if len(self.targets) != 1:
            raise ValueError("suite has multiple category targets")
        return next(iter(self.targets.values()))

    def all_problems(self) -> tuple[Problem, ...]:
        return self.validation.problems + self.test.problems


class SuiteGenerationError(RuntimeError):
    pass


def make_synthetic_suite(
    seed: int,
    n_problems: int,
    category_count: int = 1,
    *,
    registry: Optional[OperatorRegistry] = None,
    proposer_config: Optional[ProposerConfig] = None,
    n_roots: int = 2,
    target_edits: int = 3,
    unit_dims: Optional[Sequence[Optional[str]]] = None,
    split_ratio: tuple[int, int] = (1, 4),
    max_attempts: int = 200,
) -> SyntheticSuite:
    """Build a hidden-target optimization problem with a 1:4 val/test split.

    Targets are grown by random walks through the proposer's own edit space,
    so they are guaranteed reachable by the search. `unit_dims` optionally
    assigns a dimension name (or None) to each root.
    """
    if n_problems < 5:
        raise ValueError("need at least 5 problems for a 1:4 split")
    if category_count < 1:
        raise ValueError("category_count must be >= 1")
    registry = registry or default_registry()
    proposer = SyntheticProposer(registry, proposer_config or ProposerConfig(ops=("add", "sub", "mul", "neg")))
    rng = np.random.default_rng(seed)

    roots = []
    for i in range(n_roots):
        dim = unit_dims[i] if unit_dims is not None and i < len(unit_dims) else None
        unit = UnitSignature.of({dim: 1}) if dim else None
        roots.append(Node(f"x{i}", INPUT_OP, unit=unit))
    root_ids = tuple(n.node_id for n in roots)
    # seed with one working operator node, the way real optimization starts
    # from a minimal functioning workflow rather than a bare input
    if n_roots >= 2:
        op = "add" if roots[0].unit == roots[1].unit else "mul"
        seed_node = Node("n0", op)
        seed_edges = (Edge(root_ids[0], "n0", 0), Edge(root_ids[1], "n0", 1))
    else:
        seed_node = Node("n0", "neg")
        seed_edges = (Edge(root_ids[0], "n0", 0),)
    initial = WorkflowProgram(
        nodes=tuple(roots) + (seed_node,),
        edges=seed_edges,
        roots=root_ids,
        output="n0",
    )

    targets: dict[str, WorkflowProgram] = {}
    categories = [f"cat{i}" for i in range(category_count)]
    for category in categories:
        targets[category] = _grow_target(initial, proposer, target_edits, rng, max_attempts)

    problems: list[Problem] = []
    for i in range(n_problems):
        category = categories[i % category_count]
        target = targets[category]
        problem = _sample_problem(target, registry, rng, category, max_attempts)
        problems.append(problem)

    n_val = max(1, (n_problems * split_ratio[0]) // (split_ratio[0] + split_ratio[1]))
    validation = ProblemSet(tuple(problems[:n_val]), "validation")
    test = ProblemSet(tuple(problems[n_val:]), "test")
    return SyntheticSuite(initial, targets, validation, test)


def _grow_target(
    initial: WorkflowProgram,
    proposer: SyntheticProposer,
    target_edits: int,
    rng: np.random.Generator,
    max_attempts: int,
) -> WorkflowProgram:
    for _ in range(max_attempts):
        program = initial
        for _ in range(target_edits):
            edits = proposer.enumerate_edits(program)
            if not edits:
                break
            program = edits[int(rng.integers(len(edits)))]
        if program.operator_nodes() and _target_is_usable(program, initial, proposer.registry, rng):
            return program
    raise SuiteGenerationError("could not grow a usable target program")


def _target_is_usable(
    program: WorkflowProgram,
    initial: WorkflowProgram,
    registry: OperatorRegistry,
    rng: np.random.Generator,
    probes: int = 4,
) -> bool:
    """Target must be multi-step (two distinct operator kinds), run cleanly,
    stay unit-consistent, vary with its inputs, and not coincide with the
    initial program's behavior."""
    from .model import unit_analysis  # local import keeps the module header lean

    if len({n.op for n in program.operator_nodes()}) < 2:
        return False
    ua = unit_analysis(program, registry)
    if ua.checkable and not all(ua.passed[nid] for nid in ua.checkable):
        return False
    outputs = []
    differs = False
    for _ in range(probes):
        inputs = {rid: float(rng.integers(1, 10)) for rid in program.roots}
        trace = interpret(program, inputs, registry)
        if not trace.success:
            return False
        outputs.append(trace.output)
        baseline = interpret(initial, inputs, registry)
        if not baseline.success or baseline.output != trace.output:
            differs = True
    return len(set(outputs)) > 1 and differs


def _sample_problem(
    target: WorkflowProgram,
    registry: OperatorRegistry,
    rng: np.random.Generator,
    category: str,
    max_attempts: int,
) -> Problem:
    for _ in range(max_attempts):
        inputs = {rid: float(rng.integers(1, 10)) for rid in target.roots}
        trace = interpret(target, inputs, registry)
        if trace.success and trace.output is not None and math.isfinite(trace.output):
            return Problem(
                inputs=inputs,
                expected=trace.output,
                category=category,
                constants=trace.input_constants,
            )
    raise SuiteGenerationError("target kept hitting domain violations on sampled inputs")


# ---------------------------------------------------------------------------
# Token and cost accounting.
# ---------------------------------------------------------------------------

def iter_token_usage(log: RunLog):
    for record in log:
        tin = record.get("tokens_in")
        tout = record.get("tokens_out")
        if tin is None and tout is None:
            continue
        yield record.get("role", "executor"), int(tin or 0), int(tout or 0)


def tokens_per_problem(log: RunLog, n_problems: int) -> float:
    """Total prompt+completion tokens across both roles, per problem."""
    if n_problems < 1:
        raise ValueError("n_problems must be >= 1")
    total = sum(tin + tout for _, tin, tout in iter_token_usage(log))
    return total / n_problems


def cost(log: RunLog, prices: PriceMap, n_problems: int) -> float:
    """Apply per-role token prices to the logged usage, averaged per problem."""
    if n_problems < 1:
        raise ValueError("n_problems must be >= 1")
    total = 0.0
    for role, tin, tout in iter_token_usage(log):
        pin, pout = prices.for_role(role)
        total += tin * pin + tout * pout
    return total / n_problems


# ---------------------------------------------------------------------------
# Problem-set files.
# ---------------------------------------------------------------------------

def problems_to_dict(problems: Sequence[Problem], split_ratio: tuple[int, int] = (1, 4)) -> dict:
    return {
        "problems": [
            {
                "inputs": dict(p.inputs),
                "expected": p.expected,
                "category": p.category,
                "constants": list(p.constants),
            }
            for p in problems
        ],
        "split_ratio": list(split_ratio),
    }


def save_problem_file(problems: Sequence[Problem], path: str | Path, split_ratio: tuple[int, int] = (1, 4)) -> None:
    Path(path).write_text(json.dumps(problems_to_dict(problems, split_ratio), sort_keys=True, indent=2) + "\n")


def load_problem_file(path: str | Path) -> tuple[ProblemSet, ProblemSet]:
    data = json.loads(Path(path).read_text())
    unknown = set(data) - {"problems", "split_ratio"}
    if unknown:
        raise ValueError(f"unknown problem-file keys: {sorted(unknown)}")
    ratio = tuple(int(x) for x in data.get("split_ratio", [1, 4]))
    problems = []
    for entry in data["problems"]:
        bad = set(entry) - {"inputs", "expected", "category", "constants"}
        if bad:
            raise ValueError(f"unknown problem keys: {sorted(bad)}")
        problems.append(
            Problem(
                inputs={str(k): float(v) for k, v in entry["inputs"].items()},
                expected=float(entry["expected"]),
                category=str(entry.get("category", "default")),
                constants=tuple(float(x) for x in entry.get("constants", [])),
            )
        )
    n_val = max(1, (len(problems) * ratio[0]) // (ratio[0] + ratio[1]))
    return (
        ProblemSet(tuple(problems[:n_val]), "validation"),
        ProblemSet(tuple(problems[n_val:]), "test"),
    )
