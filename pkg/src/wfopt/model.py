"""Workflow programs as typed operator DAGs.

A workflow program is a directed acyclic graph of operator applications over
a set of leaf nodes (named inputs and literal constants). Nodes may carry
optional unit signatures (dimensional tags) and shape tags used by the static
constraint checks; the interpreter itself is scalar-valued and deterministic.

Everything in this module is an immutable value: programs, traces, and
derived states can be shared freely between concurrent workers.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence


class InvalidProgramError(ValueError):
    """Raised when an operation requires a structurally valid program."""


class MissingInputError(KeyError):
    """Raised when interpret() is not given a value for every input root."""


class DomainRule(str, Enum):
    NONE = "none"
    INPUT_NONNEG = "input_nonneg"
    INPUT_POSITIVE = "input_positive"


class UnitBehavior(str, Enum):
    ADDITIVE = "additive"            # operands must share a unit signature
    MULTIPLICATIVE = "multiplicative"  # exponents combine by slot sign
    TRANSFORM = "transform"          # derivative/integral style exponent shift
    UNITLESS = "unitless"            # result is dimensionless


class ShapeRule(str, Enum):
    ELEMENTWISE = "elementwise"
    MATMUL = "matmul"
    DIVIDE = "divide"
    POWER = "power"


# Pseudo-operators for leaf nodes; never part of an operator registry.
INPUT_OP = "input"
CONST_OP = "const"


@dataclass(frozen=True)
class OperatorKind:
    """One entry of the operator registry.

    ``unit_slot_signs`` applies to multiplicative operators: +1 adds the
    operand's exponents into the result signature, -1 subtracts them.
    ``transform_dim``/``transform_shift`` apply to transform operators and
    shift a single dimension exponent.
    """

    name: str
    arity: int
    domain_rule: DomainRule = DomainRule.NONE
    unit_behavior: UnitBehavior = UnitBehavior.UNITLESS
    shape_rule: ShapeRule = ShapeRule.ELEMENTWISE
    unit_slot_signs: Optional[tuple[int, ...]] = None
    transform_dim: Optional[str] = None
    transform_shift: int = 0
    fn: Optional[Callable[..., float]] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.arity < 0:
            raise ValueError(f"operator {self.name!r}: arity must be >= 0")
        if self.unit_behavior is UnitBehavior.ADDITIVE and self.arity < 2:
            raise ValueError(f"operator {self.name!r}: additive operators need arity >= 2")
        if self.unit_slot_signs is not None and len(self.unit_slot_signs) != self.arity:
            raise ValueError(f"operator {self.name!r}: unit_slot_signs must match arity")

    def slot_signs(self) -> tuple[int, ...]:
        if self.unit_slot_signs is not None:
            return self.unit_slot_signs
        return tuple(1 for _ in range(self.arity))


class OperatorRegistry:
    """Fixed, ordered set of operator kinds available to a run."""

    def __init__(self, kinds: Iterable[OperatorKind]):
        self._kinds: dict[str, OperatorKind] = {}
        for kind in kinds:
            if kind.name in self._kinds:
                raise ValueError(f"duplicate operator name {kind.name!r}")
            if kind.name in (INPUT_OP, CONST_OP):
                raise ValueError(f"{kind.name!r} is reserved for leaf nodes")
            self._kinds[kind.name] = kind

    def __len__(self) -> int:
        return len(self._kinds)

    def __contains__(self, name: str) -> bool:
        return name in self._kinds

    def __iter__(self):
        return iter(self._kinds.values())

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._kinds)

    def get(self, name: str) -> OperatorKind:
        try:
            return self._kinds[name]
        except KeyError:
            raise KeyError(f"unknown operator {name!r}") from None


def default_registry() -> OperatorRegistry:
    """The baseline eight-operator registry of the scalar DSL."""
    return OperatorRegistry(
        [
            OperatorKind("add", 2, unit_behavior=UnitBehavior.ADDITIVE),
            OperatorKind("sub", 2, unit_behavior=UnitBehavior.ADDITIVE),
            OperatorKind(
                "mul", 2,
                unit_behavior=UnitBehavior.MULTIPLICATIVE,
                shape_rule=ShapeRule.MATMUL,
                unit_slot_signs=(1, 1),
            ),
            OperatorKind(
                "div", 2,
                unit_behavior=UnitBehavior.MULTIPLICATIVE,
                shape_rule=ShapeRule.DIVIDE,
                unit_slot_signs=(1, -1),
            ),
            OperatorKind("sqrt", 1, domain_rule=DomainRule.INPUT_NONNEG),
            OperatorKind("log", 1, domain_rule=DomainRule.INPUT_POSITIVE),
            OperatorKind("pow", 2, shape_rule=ShapeRule.POWER),
            OperatorKind(
                "neg", 1,
                unit_behavior=UnitBehavior.MULTIPLICATIVE,
                unit_slot_signs=(1,),
            ),
        ]
    )


@dataclass(frozen=True)
class UnitSignature:
    """Map from base dimension name to integer exponent; empty = dimensionless."""

    exponents: tuple[tuple[str, int], ...] = ()

    @staticmethod
    def of(mapping: Mapping[str, int] | None = None, **dims: int) -> "UnitSignature":
        exps = dict(mapping or {})
        exps.update(dims)
        return UnitSignature(tuple(sorted((d, e) for d, e in exps.items() if e != 0)))

    def as_dict(self) -> dict[str, int]:
        return dict(self.exponents)

    def is_dimensionless(self) -> bool:
        return not self.exponents

    def combine(self, others: Sequence["UnitSignature"], signs: Sequence[int]) -> "UnitSignature":
        exps = Counter(dict(self.exponents))
        for sig, sign in zip(others, signs):
            for dim, exp in sig.exponents:
                exps[dim] += sign * exp
        return UnitSignature.of(exps)

    def shifted(self, dim: str, delta: int) -> "UnitSignature":
        exps = dict(self.exponents)
        exps[dim] = exps.get(dim, 0) + delta
        return UnitSignature.of(exps)

    def __str__(self) -> str:
        if not self.exponents:
            return "1"
        return "*".join(f"{d}^{e}" if e != 1 else d for d, e in self.exponents)


@dataclass(frozen=True)
class Shape:
    """Scalar, vector(n) or matrix(m, n) tag for static shape checking."""

    kind: str
    dims: tuple[int, ...] = ()

    @staticmethod
    def scalar() -> "Shape":
        return Shape("scalar")

    @staticmethod
    def vector(n: int) -> "Shape":
        return Shape("vector", (n,))

    @staticmethod
    def matrix(m: int, n: int) -> "Shape":
        return Shape("matrix", (m, n))


@dataclass(frozen=True)
class Node:
    node_id: str
    op: str
    unit: Optional[UnitSignature] = None
    shape: Optional[Shape] = None
    value: Optional[float] = None

    def is_leaf(self) -> bool:
        return self.op in (INPUT_OP, CONST_OP)


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    slot: int


@dataclass(frozen=True)
class WorkflowProgram:
    """A complete operator graph; the unit of search (one tree node = one program)."""

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    roots: tuple[str, ...]
    output: str

    def node_map(self) -> dict[str, Node]:
        return {n.node_id: n for n in self.nodes}

    def incoming(self) -> dict[str, dict[int, str]]:
        inc: dict[str, dict[int, str]] = {n.node_id: {} for n in self.nodes}
        for e in self.edges:
            inc.setdefault(e.dst, {})[e.slot] = e.src
        return inc

    def operator_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if not n.is_leaf())

    def leaf_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if n.is_leaf())


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...] = ()


@dataclass(frozen=True)
class WorkflowState:
    """Lightweight program view consumed by the constraint checks."""

    depth: int
    operator_histogram: Mapping[str, int]
    unit_tagged_ops: tuple[str, ...] = ()
    magnitude_summary: Optional[float] = None


@dataclass(frozen=True)
class ExecutionTrace:
    values: tuple[float, ...]             # intermediate results, topological order
    input_constants: tuple[float, ...]    # values bound to input roots (not literals)
    success: bool
    output: Optional[float]
    violation: Optional[str] = None


def validate_program(program: WorkflowProgram, registry: Optional[OperatorRegistry] = None) -> ValidationReport:
    """Check all structural invariants; violations are data, not exceptions."""
    registry = registry or default_registry()
    violations: list[str] = []

    seen: set[str] = set()
    for node in program.nodes:
        if node.node_id in seen:
            violations.append(f"duplicate node id {node.node_id!r}")
        seen.add(node.node_id)

    nm = program.node_map()
    for rid in program.roots:
        if rid not in nm:
            violations.append(f"root {rid!r} is not a node")
        elif nm[rid].op != INPUT_OP:
            violations.append(f"root {rid!r} must be an input node")
    for node in program.nodes:
        if node.op == INPUT_OP:
            if node.node_id not in program.roots:
                violations.append(f"input node {node.node_id!r} missing from roots")
            if node.value is not None:
                violations.append(f"input node {node.node_id!r} must not carry a value")
        elif node.op == CONST_OP:
            if node.value is None:
                violations.append(f"const node {node.node_id!r} needs a value")
        elif node.op not in registry:
            violations.append(f"node {node.node_id!r}: unknown operator {node.op!r}")
        elif node.value is not None:
            violations.append(f"operator node {node.node_id!r} must not carry a value")

    slots: dict[str, dict[int, str]] = {n.node_id: {} for n in program.nodes}
    for edge in program.edges:
        if edge.src not in nm or edge.dst not in nm:
            violations.append(f"edge {edge.src!r}->{edge.dst!r} references a missing node")
            continue
        dst = nm[edge.dst]
        if dst.is_leaf():
            violations.append(f"leaf node {edge.dst!r} cannot receive an edge")
            continue
        arity = registry.get(dst.op).arity if dst.op in registry else 0
        if not 0 <= edge.slot < arity:
            violations.append(f"edge into {edge.dst!r}: slot {edge.slot} out of range")
            continue
        if edge.slot in slots[edge.dst]:
            violations.append(f"node {edge.dst!r}: duplicate edge for input slot {edge.slot}")
        slots[edge.dst][edge.slot] = edge.src

    for node in program.nodes:
        if node.is_leaf() or node.op not in registry:
            continue
        arity = registry.get(node.op).arity
        for k in range(arity):
            if k not in slots[node.node_id]:
                violations.append(f"node {node.node_id!r}: missing input slot {k}")

    if _has_cycle(program):
        violations.append("cycle in operator graph")

    if program.output not in nm:
        violations.append(f"output {program.output!r} is not a node")
    elif not _has_cycle(program) and not _reaches_leaf(program, program.output):
        violations.append(f"output {program.output!r} is not reachable from any leaf")

    return ValidationReport(ok=not violations, violations=tuple(violations))


def _has_cycle(program: WorkflowProgram) -> bool:
    indeg = {n.node_id: 0 for n in program.nodes}
    out: dict[str, list[str]] = {n.node_id: [] for n in program.nodes}
    for e in program.edges:
        if e.src in indeg and e.dst in indeg:
            indeg[e.dst] += 1
            out[e.src].append(e.dst)
    queue = [nid for nid, d in indeg.items() if d == 0]
    visited = 0
    while queue:
        nid = queue.pop()
        visited += 1
        for nxt in out[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    return visited != len(program.nodes)


def _reaches_leaf(program: WorkflowProgram, nid: str) -> bool:
    nm = program.node_map()
    inc = program.incoming()
    stack, seen = [nid], set()
    while stack:
        cur = stack.pop()
        if cur in seen or cur not in nm:
            continue
        seen.add(cur)
        if nm[cur].is_leaf():
            return True
        stack.extend(inc.get(cur, {}).values())
    return False


def topological_order(program: WorkflowProgram) -> list[str]:
    """Kahn's algorithm, stable with respect to node declaration order."""
    order_index = {n.node_id: i for i, n in enumerate(program.nodes)}
    indeg = {n.node_id: 0 for n in program.nodes}
    out: dict[str, list[str]] = {n.node_id: [] for n in program.nodes}
    for e in program.edges:
        indeg[e.dst] += 1
        out[e.src].append(e.dst)
    ready = sorted((nid for nid, d in indeg.items() if d == 0), key=order_index.__getitem__)
    order: list[str] = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        changed = False
        for nxt in out[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
                changed = True
        if changed:
            ready.sort(key=order_index.__getitem__)
    if len(order) != len(program.nodes):
        raise InvalidProgramError("cycle in operator graph")
    return order


def program_depth(program: WorkflowProgram) -> int:
    """Longest leaf-to-output path, counted in edges."""
    inc = program.incoming()
    depth: dict[str, int] = {}
    for nid in topological_order(program):
        preds = inc.get(nid, {})
        if not preds:
            depth[nid] = 0
        else:
            depth[nid] = 1 + max(depth[src] for src in preds.values())
    return depth[program.output]


# ---------------------------------------------------------------------------
# Static analyses: unit signatures, shapes, value signs.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitAnalysis:
    signatures: Mapping[str, Optional[UnitSignature]]
    checkable: tuple[str, ...]   # operator node ids with fully known input units
    passed: Mapping[str, bool]


def unit_analysis(program: WorkflowProgram, registry: Optional[OperatorRegistry] = None) -> UnitAnalysis:
    """Propagate unit signatures; explicit node tags seed and override."""
    registry = registry or default_registry()
    inc = program.incoming()
    nm = program.node_map()
    sigs: dict[str, Optional[UnitSignature]] = {}
    checkable: list[str] = []
    passed: dict[str, bool] = {}

    for nid in topological_order(program):
        node = nm[nid]
        if node.is_leaf():
            sigs[nid] = node.unit
            continue
        kind = registry.get(node.op)
        inputs = [sigs.get(inc[nid][k]) for k in range(kind.arity)]
        derived: Optional[UnitSignature] = None
        if all(s is not None for s in inputs):
            checkable.append(nid)
            if kind.unit_behavior is UnitBehavior.ADDITIVE:
                ok = all(s == inputs[0] for s in inputs[1:])
                passed[nid] = ok
                derived = inputs[0] if ok else None
            elif kind.unit_behavior is UnitBehavior.MULTIPLICATIVE:
                passed[nid] = True
                derived = UnitSignature.of().combine(inputs, kind.slot_signs())  # type: ignore[arg-type]
            elif kind.unit_behavior is UnitBehavior.TRANSFORM:
                passed[nid] = True
                base = inputs[0]
                if kind.transform_dim is not None:
                    derived = base.shifted(kind.transform_dim, kind.transform_shift)  # type: ignore[union-attr]
                else:
                    derived = base
            else:  # UNITLESS
                passed[nid] = True
                derived = UnitSignature.of()
        sigs[nid] = node.unit if node.unit is not None else derived
    return UnitAnalysis(sigs, tuple(checkable), passed)


def shape_analysis(program: WorkflowProgram, registry: Optional[OperatorRegistry] = None) -> Mapping[str, bool]:
    """Return shape-ok per operator node; unknowable inputs pass vacuously."""
    registry = registry or default_registry()
    inc = program.incoming()
    nm = program.node_map()
    shapes: dict[str, Optional[Shape]] = {}
    ok: dict[str, bool] = {}

    for nid in topological_order(program):
        node = nm[nid]
        if node.is_leaf():
            shapes[nid] = node.shape if node.shape is not None else (
                Shape.scalar() if node.op == CONST_OP else None
            )
            continue
        kind = registry.get(node.op)
        inputs = [shapes.get(inc[nid][k]) for k in range(kind.arity)]
        derived: Optional[Shape] = None
        if any(s is None for s in inputs):
            ok[nid] = True
        else:
            ok[nid], derived = _check_shape(kind, inputs)  # type: ignore[arg-type]
        shapes[nid] = node.shape if node.shape is not None else derived
    return ok


def _check_shape(kind: OperatorKind, inputs: Sequence[Shape]) -> tuple[bool, Optional[Shape]]:
    scalar = Shape.scalar()
    if kind.shape_rule is ShapeRule.MATMUL and kind.arity == 2:
        a, b = inputs
        if a == scalar:
            return True, b
        if b == scalar:
            return True, a
        if a.kind == "vector" and b.kind == "vector":
            return (a.dims == b.dims), scalar
        if a.kind == "matrix" and b.kind == "matrix":
            return (a.dims[1] == b.dims[0]), Shape.matrix(a.dims[0], b.dims[1])
        if a.kind == "matrix" and b.kind == "vector":
            return (a.dims[1] == b.dims[0]), Shape.vector(a.dims[0])
        if a.kind == "vector" and b.kind == "matrix":
            return (a.dims[0] == b.dims[0]), Shape.vector(b.dims[1])
        return False, None
    if kind.shape_rule is ShapeRule.DIVIDE and kind.arity == 2:
        a, b = inputs
        if b == scalar:
            return True, a
        return (a == b), a
    if kind.shape_rule is ShapeRule.POWER and kind.arity == 2:
        a, b = inputs
        return (b == scalar), a
    # elementwise: all inputs must agree
    first = inputs[0]
    return all(s == first for s in inputs[1:]), first


class Sign(str, Enum):
    POS = "pos"
    NEG = "neg"
    ZERO = "zero"
    NONNEG = "nonneg"
    NONPOS = "nonpos"
    UNKNOWN = "unknown"


def _sign_of(value: float) -> Sign:
    if value > 0:
        return Sign.POS
    if value < 0:
        return Sign.NEG
    return Sign.ZERO


_NEGATE = {
    Sign.POS: Sign.NEG, Sign.NEG: Sign.POS, Sign.ZERO: Sign.ZERO,
    Sign.NONNEG: Sign.NONPOS, Sign.NONPOS: Sign.NONNEG, Sign.UNKNOWN: Sign.UNKNOWN,
}


def _sign_add(a: Sign, b: Sign) -> Sign:
    if a is Sign.ZERO:
        return b
    if b is Sign.ZERO:
        return a
    nonneg = {Sign.POS, Sign.NONNEG}
    nonpos = {Sign.NEG, Sign.NONPOS}
    if a in nonneg and b in nonneg:
        return Sign.POS if (a is Sign.POS or b is Sign.POS) else Sign.NONNEG
    if a in nonpos and b in nonpos:
        return Sign.NEG if (a is Sign.NEG or b is Sign.NEG) else Sign.NONPOS
    return Sign.UNKNOWN


def _sign_mul(a: Sign, b: Sign) -> Sign:
    if Sign.ZERO in (a, b):
        return Sign.ZERO
    if Sign.UNKNOWN in (a, b):
        return Sign.UNKNOWN
    strict = {Sign.POS, Sign.NEG}
    positive = (a in (Sign.POS, Sign.NONNEG)) == (b in (Sign.POS, Sign.NONNEG))
    if a in strict and b in strict:
        return Sign.POS if positive else Sign.NEG
    return Sign.NONNEG if positive else Sign.NONPOS


def sign_analysis(program: WorkflowProgram, registry: Optional[OperatorRegistry] = None) -> Mapping[str, Sign]:
    """Propagate statically known value signs from literal constants."""
    registry = registry or default_registry()
    inc = program.incoming()
    nm = program.node_map()
    signs: dict[str, Sign] = {}

    for nid in topological_order(program):
        node = nm[nid]
        if node.op == CONST_OP:
            signs[nid] = _sign_of(node.value)  # type: ignore[arg-type]
            continue
        if node.op == INPUT_OP:
            signs[nid] = Sign.UNKNOWN
            continue
        args = [signs[inc[nid][k]] for k in range(registry.get(node.op).arity)]
        signs[nid] = _derive_sign(node.op, args)
    return signs


def _derive_sign(op: str, args: list[Sign]) -> Sign:
    if op == "neg":
        return _NEGATE[args[0]]
    if op == "add":
        return _sign_add(args[0], args[1])
    if op == "sub":
        return _sign_add(args[0], _NEGATE[args[1]])
    if op == "mul":
        return _sign_mul(args[0], args[1])
    if op == "div":
        if args[1] is Sign.ZERO:
            return Sign.UNKNOWN
        if args[0] is Sign.ZERO:
            return Sign.ZERO
        return _sign_mul(args[0], args[1])
    if op == "sqrt":
        if args[0] in (Sign.POS,):
            return Sign.POS
        if args[0] in (Sign.ZERO,):
            return Sign.ZERO
        if args[0] in (Sign.NONNEG,):
            return Sign.NONNEG
        return Sign.UNKNOWN
    if op == "pow":
        if args[0] is Sign.POS:
            return Sign.POS
        if args[0] is Sign.ZERO and args[1] is Sign.POS:
            return Sign.ZERO
        return Sign.UNKNOWN
    return Sign.UNKNOWN


# ---------------------------------------------------------------------------
# State derivation and interpretation.
# ---------------------------------------------------------------------------

def derive_state(
    program: WorkflowProgram,
    trace: Optional[ExecutionTrace] = None,
    registry: Optional[OperatorRegistry] = None,
) -> WorkflowState:
    """Project a program (and optionally a trace) onto the constraint-facing view."""
    registry = registry or default_registry()
    report = validate_program(program, registry)
    if not report.ok:
        raise InvalidProgramError("; ".join(report.violations))
    histogram = Counter(n.op for n in program.operator_nodes())
    ua = unit_analysis(program, registry)
    magnitude = None
    if trace is not None and trace.values:
        magnitude = max(abs(v) for v in trace.values)
    return WorkflowState(
        depth=program_depth(program),
        operator_histogram=dict(histogram),
        unit_tagged_ops=ua.checkable,
        magnitude_summary=magnitude,
    )


class _DomainViolation(Exception):
    def __init__(self, reason: str):
        self.reason = reason


def _apply(op: str, kind: OperatorKind, args: list[float]) -> float:
    if op == "add":
        return args[0] + args[1]
    if op == "sub":
        return args[0] - args[1]
    if op == "mul":
        return args[0] * args[1]
    if op == "div":
        if args[1] == 0.0:
            raise _DomainViolation("division by zero")
        return args[0] / args[1]
    if op == "sqrt":
        if args[0] < 0.0:
            raise _DomainViolation("sqrt of negative value")
        return math.sqrt(args[0])
    if op == "log":
        if args[0] <= 0.0:
            raise _DomainViolation("log of non-positive value")
        return math.log(args[0])
    if op == "pow":
        base, exp = args
        if base < 0.0 and exp != int(exp):
            raise _DomainViolation("fractional power of negative base")
        if base == 0.0 and exp < 0.0:
            raise _DomainViolation("zero raised to negative power")
        try:
            return math.pow(base, exp)
        except OverflowError:
            raise _DomainViolation("overflow in pow") from None
    if op == "neg":
        return -args[0]
    if kind.fn is not None:
        return kind.fn(*args)
    raise KeyError(f"operator {op!r} has no semantics")


def interpret(
    program: WorkflowProgram,
    inputs: Mapping[str, float],
    registry: Optional[OperatorRegistry] = None,
) -> ExecutionTrace:
    """Evaluate the program on concrete inputs, recording every intermediate.

    Domain violations at runtime (sqrt of a negative, log of a non-positive,
    division by zero, non-finite results) stop evaluation and yield a failed
    trace with the values computed so far.
    """
    registry = registry or default_registry()
    inc = program.incoming()
    nm = program.node_map()
    values: dict[str, float] = {}
    leaf_values: list[float] = []
    intermediates: list[float] = []

    for nid in topological_order(program):
        node = nm[nid]
        if node.op == INPUT_OP:
            if nid not in inputs:
                raise MissingInputError(f"no input value for root {nid!r}")
            v = float(inputs[nid])
            leaf_values.append(v)
        elif node.op == CONST_OP:
            # literals do not count toward V_in: a program must not be able
            # to widen its own magnitude tolerance by embedding big constants
            v = float(node.value)  # type: ignore[arg-type]
        else:
            kind = registry.get(node.op)
            args = [values[inc[nid][k]] for k in range(kind.arity)]
            try:
                v = _apply(node.op, kind, args)
            except _DomainViolation as exc:
                return ExecutionTrace(
                    values=tuple(intermediates),
                    input_constants=tuple(leaf_values),
                    success=False,
                    output=None,
                    violation=f"{exc.reason} at node {nid!r}",
                )
            if not math.isfinite(v):
                return ExecutionTrace(
                    values=tuple(intermediates),
                    input_constants=tuple(leaf_values),
                    success=False,
                    output=None,
                    violation=f"non-finite result at node {nid!r}",
                )
            intermediates.append(v)
        values[nid] = v

    output = values[program.output]
    if not intermediates:
        # leaf-only program: record the output value so the trace is non-empty
        intermediates = [output]
    return ExecutionTrace(
        values=tuple(intermediates),
        input_constants=tuple(leaf_values),
        success=True,
        output=output,
    )


# ---------------------------------------------------------------------------
# JSON serialization and canonical structural keys.
# ---------------------------------------------------------------------------

def _shape_to_json(shape: Shape):
    if shape.kind == "scalar":
        return "scalar"
    if shape.kind == "vector":
        return {"vector": shape.dims[0]}
    return {"matrix": list(shape.dims)}


def _shape_from_json(obj) -> Shape:
    if obj == "scalar":
        return Shape.scalar()
    if isinstance(obj, dict) and "vector" in obj:
        return Shape.vector(int(obj["vector"]))
    if isinstance(obj, dict) and "matrix" in obj:
        m, n = obj["matrix"]
        return Shape.matrix(int(m), int(n))
    raise ValueError(f"bad shape tag: {obj!r}")


def program_to_dict(program: WorkflowProgram) -> dict:
    nodes = []
    for node in program.nodes:
        entry: dict = {"id": node.node_id, "op": node.op}
        if node.unit is not None:
            entry["unit"] = node.unit.as_dict()
        if node.shape is not None:
            entry["shape"] = _shape_to_json(node.shape)
        if node.value is not None:
            entry["value"] = node.value
        nodes.append(entry)
    return {
        "nodes": nodes,
        "edges": [[e.src, e.dst, e.slot] for e in program.edges],
        "roots": list(program.roots),
        "output": program.output,
    }


_NODE_KEYS = {"id", "op", "unit", "shape", "value"}
_PROGRAM_KEYS = {"nodes", "edges", "roots", "output"}


def program_from_dict(data: Mapping) -> WorkflowProgram:
    unknown = set(data) - _PROGRAM_KEYS
    if unknown:
        raise ValueError(f"unknown program keys: {sorted(unknown)}")
    nodes = []
    for entry in data["nodes"]:
        bad = set(entry) - _NODE_KEYS
        if bad:
            raise ValueError(f"unknown node keys: {sorted(bad)}")
        unit = UnitSignature.of({str(k): int(v) for k, v in entry["unit"].items()}) if "unit" in entry else None
        shape = _shape_from_json(entry["shape"]) if "shape" in entry else None
        value = float(entry["value"]) if "value" in entry else None
        nodes.append(Node(str(entry["id"]), str(entry["op"]), unit=unit, shape=shape, value=value))
    edges = tuple(Edge(str(s), str(d), int(k)) for s, d, k in data["edges"])
    return WorkflowProgram(
        nodes=tuple(nodes),
        edges=edges,
        roots=tuple(str(r) for r in data["roots"]),
        output=str(data["output"]),
    )


def dumps_program(program: WorkflowProgram) -> str:
    return json.dumps(program_to_dict(program), sort_keys=True, indent=2) + "\n"


def loads_program(text: str) -> WorkflowProgram:
    return program_from_dict(json.loads(text))


def canonical_key(program: WorkflowProgram) -> str:
    """Renaming-invariant key for the sub-DAG feeding the output.

    Shared subexpressions and duplicated ones produce different keys, so the
    key distinguishes programs whose operator histograms differ. Unused roots
    are ignored (every edit of a program keeps the same root set).
    """
    nm = program.node_map()
    inc = program.incoming()
    index: dict[str, int] = {}
    entries: list[tuple] = []

    def visit(nid: str) -> int:
        if nid in index:
            return index[nid]
        node = nm[nid]
        slot_map = inc.get(nid, {})
        children = tuple(visit(slot_map[k]) for k in sorted(slot_map))
        if node.op == INPUT_OP:
            entry = ("input", nid)
        elif node.op == CONST_OP:
            entry = ("const", node.value)
        else:
            entry = (node.op, children)
        extra = (
            node.unit.exponents if node.unit is not None else None,
            (node.shape.kind, node.shape.dims) if node.shape is not None else None,
        )
        index[nid] = len(entries)
        entries.append((entry, extra))
        return index[nid]

    visit(program.output)
    return repr(entries)


def fresh_node_id(program: WorkflowProgram, prefix: str = "n") -> str:
    pattern = re.compile(rf"^{re.escape(prefix)}(\d+)$")
    best = -1
    for node in program.nodes:
        m = pattern.match(node.node_id)
        if m:
            best = max(best, int(m.group(1)))
    return f"{prefix}{best + 1}"
