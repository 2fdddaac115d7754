import numpy as np
import pytest

from wfopt.model import (
    CONST_OP,
    INPUT_OP,
    Edge,
    Node,
    WorkflowProgram,
    default_registry,
    validate_program,
)


@pytest.fixture(scope="session")
def registry():
    return default_registry()


def chain(*ops, n_roots=1):
    """Linear program: root -> ops[0] -> ops[1] -> ... (unary ops only)."""
    nodes = [Node(f"x{i}", INPUT_OP) for i in range(n_roots)]
    edges = []
    prev = "x0"
    for i, op in enumerate(ops):
        nid = f"n{i}"
        nodes.append(Node(nid, op))
        edges.append(Edge(prev, nid, 0))
        prev = nid
    return WorkflowProgram(tuple(nodes), tuple(edges), tuple(f"x{i}" for i in range(n_roots)), prev)


def binary(op, left, right, *, units=None, shapes=None, values=None):
    """Single binary operation over two leaves (inputs or constants)."""
    nodes = []
    roots = []
    ids = []
    for i, leaf in enumerate((left, right)):
        unit = units[i] if units else None
        shape = shapes[i] if shapes else None
        if leaf == "input":
            nid = f"x{i}"
            nodes.append(Node(nid, INPUT_OP, unit=unit, shape=shape))
            roots.append(nid)
        else:
            nid = f"c{i}"
            nodes.append(Node(nid, CONST_OP, value=float(leaf), unit=unit, shape=shape))
        ids.append(nid)
    nodes.append(Node("n0", op))
    edges = (Edge(ids[0], "n0", 0), Edge(ids[1], "n0", 1))
    return WorkflowProgram(tuple(nodes), edges, tuple(roots), "n0")


def random_program(rng: np.random.Generator, registry, max_ops: int = 8) -> WorkflowProgram:
    """Structurally valid random program for property tests."""
    n_roots = int(rng.integers(1, 4))
    nodes = [Node(f"x{i}", INPUT_OP) for i in range(n_roots)]
    ids = [n.node_id for n in nodes]
    if rng.random() < 0.3:
        nodes.append(Node("c0", CONST_OP, value=float(rng.integers(-5, 10))))
        ids.append("c0")
    edges = []
    kinds = list(registry)
    for i in range(int(rng.integers(1, max_ops + 1))):
        kind = kinds[int(rng.integers(len(kinds)))]
        nid = f"n{i}"
        for slot in range(kind.arity):
            src = ids[int(rng.integers(len(ids)))]
            edges.append(Edge(src, nid, slot))
        nodes.append(Node(nid, kind.name))
        ids.append(nid)
    program = WorkflowProgram(tuple(nodes), tuple(edges), tuple(n.node_id for n in nodes if n.op == INPUT_OP), ids[-1])
    assert validate_program(program, registry).ok
    return program
