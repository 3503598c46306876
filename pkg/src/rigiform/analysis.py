"""Certification of target formations: spectra, estimator placement, and
coordinates adapted to the closed loop.

The gradient flow linearized at a target framework acts on the edge errors
through an |E|-square matrix built from the rigidity and tail-scatter
operators.  Certifying a target means checking infinitesimal rigidity plus
a negative spectral margin for that matrix.  Estimator placement rules map
each edge to the agent that runs its internal-model unit, which fixes the
edge orientations the controller uses.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .controller import consistent_errors
from .rigidity import (
    ConstructionTrace,
    Framework,
    FormationGraph,
    is_infinitesimally_rigid,
    rigidity_matrix,
    s2_matrix,
    trace_graph,
)

HURWITZ_TOL = 1e-9


def is_hurwitz(matrix, tol: float = HURWITZ_TOL) -> tuple[bool, float]:
    """(verdict, spectral margin): margin is the largest eigenvalue real part,
    and the verdict requires it below -tol."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.isfinite(m).all():
        raise ValueError("matrix must be finite")
    margin = float(np.max(np.linalg.eigvals(m).real))
    return margin < -tol, margin


def stability_matrix(framework: Framework) -> np.ndarray:
    """|E|-square error-dynamics matrix -R S2^T at a target framework.

    Entry (k, l) couples edge k's error rate to edge l's error.  The
    framework must satisfy its own distances (max |error| below 1e-9);
    a rank-deficient framework only triggers a warning because the matrix
    is still well defined there.
    """
    e = consistent_errors(framework)
    if np.max(np.abs(e)) >= 1e-9:
        raise ValueError("framework does not satisfy its edge distances")
    rigid, _ = is_infinitesimally_rigid(framework)
    if not rigid:
        warnings.warn(
            "framework is not infinitesimally rigid; the error dynamics "
            "cannot have a full negative spectrum",
            RuntimeWarning,
            stacklevel=2,
        )
    return -rigidity_matrix(framework) @ s2_matrix(framework).T


@dataclass(frozen=True, eq=False)
class StabilityReport:
    matrix: np.ndarray
    spectrum: np.ndarray
    hurwitz: bool
    margin: float


@dataclass(frozen=True)
class AssignmentRule:
    """Which agent runs each edge's estimator unit.

    triangle_cyclic: each triangle edge is estimated by one of its own
        endpoints so that every agent owns exactly one edge.
    triangle_acyclic: the root agent owns both its edges and `third` owns
        the remaining one, leaving one agent with none.
    henneberg_2d / growth_3d: the construction order decides; each edge
        added by a vertex insertion is owned by its anchor (the endpoint
        that already existed), and seed edges by their lower-numbered
        endpoint.  New edges then share the inserted vertex as their head,
        which is what makes the error dynamics grow block-triangularly.
    tetrahedron: the complete graph on 4 vertices with a fixed owner table.
    """

    kind: str
    root: int | None = None
    third: int | None = None

    KINDS: ClassVar[tuple[str, ...]] = (
        "triangle_cyclic",
        "triangle_acyclic",
        "henneberg_2d",
        "tetrahedron",
        "growth_3d",
    )

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}")
        if self.kind != "triangle_acyclic":
            if self.root is not None or self.third is not None:
                raise ValueError("root and third apply only to triangle_acyclic")
        else:
            for name in ("root", "third"):
                v = getattr(self, name)
                if v is not None and (not isinstance(v, int) or isinstance(v, bool)):
                    raise ValueError(f"{name} must be an int vertex label")


def _orient(edges, owners):
    """Flip edges so each one's tail is its owner, preserving edge order."""
    oriented = []
    for (a, b), owner in zip(edges, owners):
        if owner == a:
            oriented.append((a, b))
        elif owner == b:
            oriented.append((b, a))
        else:
            raise ValueError(f"owner {owner} is not an endpoint of edge ({a}, {b})")
    return tuple(oriented)


def _triangle_owners(graph: FormationGraph, rule: AssignmentRule):
    if graph.n != 3 or graph.edge_count != 3:
        raise ValueError(f"{rule.kind} needs a triangle: 3 vertices and 3 edges")
    pairs = [tuple(sorted(e)) for e in graph.edges]
    if sorted(pairs) != [(1, 2), (1, 3), (2, 3)]:
        raise ValueError("triangle rules need exactly the edges {1,2}, {1,3}, {2,3}")
    if rule.kind == "triangle_cyclic":
        table = {(1, 2): 1, (2, 3): 2, (1, 3): 3}
        return [table[p] for p in pairs]
    root = 1 if rule.root is None else rule.root
    if root not in (1, 2, 3):
        raise ValueError("root must be a triangle vertex")
    others = [v for v in (1, 2, 3) if v != root]
    third = others[0] if rule.third is None else rule.third
    if third not in others:
        raise ValueError("third must be a triangle vertex other than the root")
    owners = []
    for p in pairs:
        owners.append(root if root in p else third)
    return owners


def _tetrahedron_owners(graph: FormationGraph):
    if graph.n != 4 or graph.edge_count != 6:
        raise ValueError("tetrahedron rule needs 4 vertices and all 6 edges")
    pairs = [tuple(sorted(e)) for e in graph.edges]
    if sorted(pairs) != [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]:
        raise ValueError("tetrahedron rule needs the complete graph on 4 vertices")
    table = {(1, 2): 1, (1, 3): 1, (2, 3): 2, (1, 4): 1, (2, 4): 2, (3, 4): 3}
    return [table[p] for p in pairs]


def _trace_owners(trace: ConstructionTrace):
    owners = [1] if trace.dim == 2 else [1, 1, 2, 1, 2, 3]
    for step in trace.steps:
        owners.extend(step.anchors)
    return owners


def select_estimating_agents(source, rule: AssignmentRule) -> tuple[tuple[int, int], ...]:
    """Edges oriented so each tail is the agent estimating that edge.

    `source` is a FormationGraph for the triangle and tetrahedron rules and
    a ConstructionTrace for the construction-order rules.  Edge order is
    preserved.
    """
    if rule.kind in ("henneberg_2d", "growth_3d"):
        if not isinstance(source, ConstructionTrace):
            raise ValueError(f"{rule.kind} needs a ConstructionTrace")
        want = 2 if rule.kind == "henneberg_2d" else 3
        if source.dim != want:
            raise ValueError(f"{rule.kind} needs a {want}-D trace")
        graph = trace_graph(source)
        return _orient(graph.edges, _trace_owners(source))
    if not isinstance(source, FormationGraph):
        raise ValueError(f"{rule.kind} needs a FormationGraph")
    if rule.kind == "tetrahedron":
        owners = _tetrahedron_owners(source)
    else:
        owners = _triangle_owners(source, rule)
    return _orient(source.edges, owners)


def _with_orientation(framework: Framework, oriented) -> Framework:
    """Same framework with its edges reordered/flipped to `oriented`."""
    by_pair = {}
    for edge, d in zip(framework.graph.edges, framework.target_distances):
        by_pair[tuple(sorted(edge))] = float(d)
    distances = []
    for edge in oriented:
        key = tuple(sorted(edge))
        if key not in by_pair:
            raise ValueError(f"assignment edge {edge} is not in the framework")
        distances.append(by_pair.pop(key))
    if by_pair:
        raise ValueError("assignment does not cover every framework edge")
    graph = FormationGraph(framework.graph.n, tuple(oriented))
    return Framework(graph, framework.dim, framework.positions, tuple(distances))


def certify(
    framework: Framework,
    rule: AssignmentRule,
    trace: ConstructionTrace | None = None,
) -> tuple[Framework, StabilityReport]:
    """Orient a target framework by `rule` and report its error-dynamics
    spectrum.  Warns (rather than failing) when the margin is not negative,
    so callers can still inspect the report."""
    if rule.kind in ("henneberg_2d", "growth_3d"):
        if trace is None:
            raise ValueError(f"{rule.kind} needs the construction trace")
        oriented = select_estimating_agents(trace, rule)
    else:
        oriented = select_estimating_agents(framework.graph, rule)
    fw = _with_orientation(framework, oriented)
    matrix = stability_matrix(fw)
    spectrum = np.linalg.eigvals(matrix)
    hurwitz, margin = is_hurwitz(matrix)
    if not hurwitz:
        warnings.warn(
            f"error dynamics are not certified stable (margin {margin:.3e})",
            RuntimeWarning,
            stacklevel=2,
        )
    matrix = matrix.copy()
    matrix.setflags(write=False)
    spectrum.setflags(write=False)
    return fw, StabilityReport(matrix, spectrum, hurwitz, margin)


def transformed_coords(framework: Framework, basis, state) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-loop state in error coordinates.

    Returns (consistent errors, compensated errors, estimator deviation):
    the second adds the disturbance output and subtracts the estimate, the
    third is the generator state minus the estimator state.  `state` only
    needs x, w, xi attributes shaped like sim.SimState.
    """
    fw = framework.at_positions(np.asarray(state.x, dtype=float))
    e = consistent_errors(fw)
    mu = np.asarray(state.w) @ basis.vector
    mu_hat = np.asarray(state.xi) @ basis.vector
    chi = np.asarray(state.w) - np.asarray(state.xi)
    return e, e + mu - mu_hat, chi
