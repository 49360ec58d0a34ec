"""Post-selection indicators for adapted patches.

The two quantitative indicators are the per-axis code distance and the
number of minimum-weight logical operators.  A Z-type logical is a chain of
data qubits running between the two Z boundaries (top/bottom) that commutes
with every X-type check; its weight is the number of qubits in the chain.
Distances are computed on the operator-dual matching graph (nodes = X-type
checks with super-stabilizer members collapsed, arcs = data qubits), which
the decoder reuses; operator counting runs on the qubit-adjacency graph,
where each minimum-weight operator is one shortest path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from chipqec.adapt import AdaptedCode, Unusable, adapt_code
from chipqec.lattice import Coord, DefectMap, build_patch

TOP = "boundary:top"
BOTTOM = "boundary:bottom"
LEFT = "boundary:left"
RIGHT = "boundary:right"

# Axis naming: the X axis is the horizontal logical (an X chain between the
# two X-type edges), constrained by Z-type checks; the Z axis is vertical.
_AXIS_CHECKS = {"X": "Z", "Z": "X"}
_AXIS_ENDS = {"X": (LEFT, RIGHT), "Z": (TOP, BOTTOM)}
_AXIS_EDGES = {"X": ("left", "right"), "Z": ("top", "bottom")}

COUNT_CAP = 2**64 - 1  # saturating path-count arithmetic


@dataclass(frozen=True)
class MatchingGraph:
    """Dual graph for one axis: check nodes joined by data-qubit arcs."""

    axis: str
    nodes: tuple[object, ...]
    # (data qubit, endpoint, endpoint); endpoints are node ids or boundary
    # sentinels.  Self-loops appear when both checks of a qubit merged.
    arcs: tuple[tuple[Coord, object, object], ...]


def _check_groups(code: AdaptedCode, kind: str) -> dict[object, tuple[Coord, ...]]:
    """Measured operators of one type, super-stabilizer members merged."""
    groups: dict[object, tuple[Coord, ...]] = {}
    for p in code.plain_stabilizers:
        if p.kind == kind:
            groups[("plain", p.home)] = p.support
    for c in code.clusters:
        sup = c.super_stabilizer(kind)
        groups[("super", c.index, kind)] = sup.support
    return groups


def build_matching_graph(code: AdaptedCode, axis: str) -> MatchingGraph:
    check_kind = _AXIS_CHECKS[axis]
    groups = _check_groups(code, check_kind)
    of_data: dict[Coord, list[object]] = {q: [] for q in code.active_data}
    for node, support in groups.items():
        for q in support:
            of_data[q].append(node)
    lo, hi = _AXIS_ENDS[axis]
    lo_edge, hi_edge = _AXIS_EDGES[axis]
    lo_set = set(code.boundaries[lo_edge])
    hi_set = set(code.boundaries[hi_edge])
    arcs = []
    for q in sorted(code.active_data):
        nodes = of_data[q]
        if len(nodes) == 2:
            arcs.append((q, nodes[0], nodes[1]))
        elif len(nodes) == 1:
            if q in lo_set:
                arcs.append((q, lo, nodes[0]))
            elif q in hi_set:
                arcs.append((q, nodes[0], hi))
            else:
                raise ValueError(f"boundary arc at {q} has no side")
        else:
            raise ValueError(f"data qubit {q} touches {len(nodes)} {check_kind} checks")
    return MatchingGraph(axis=axis, nodes=tuple(groups), arcs=tuple(arcs))


def code_distance(code: AdaptedCode, axis: str) -> int:
    """Minimum weight of a logical operator along the given axis."""
    graph = build_matching_graph(code, axis)
    adjacency: dict[object, set[object]] = {}
    for _, a, b in graph.arcs:
        if a == b:
            continue
        adjacency.setdefault(a, set()).add(b)
        adjacency.setdefault(b, set()).add(a)
    lo, hi = _AXIS_ENDS[axis]
    if lo not in adjacency or hi not in adjacency:
        return 0
    dist = {lo: 0}
    frontier = [lo]
    while frontier:
        nxt = []
        for node in frontier:
            for n in adjacency.get(node, ()):
                if n not in dist:
                    dist[n] = dist[node] + 1
                    nxt.append(n)
        if hi in dist:
            return dist[hi]
        frontier = nxt
    return 0


def _qubit_adjacency(code: AdaptedCode, axis: str) -> dict[object, set[object]]:
    """Qubit-node graph: two qubits adjacent when one check contains both."""
    check_kind = _AXIS_CHECKS[axis]
    adjacency: dict[object, set[object]] = {q: set() for q in code.active_data}
    for support in _check_groups(code, check_kind).values():
        for a in support:
            for b in support:
                if a != b:
                    adjacency[a].add(b)
    lo, hi = _AXIS_ENDS[axis]
    lo_edge, hi_edge = _AXIS_EDGES[axis]
    adjacency[lo] = set()
    adjacency[hi] = set()
    for q in code.boundaries[lo_edge]:
        if q in code.active_data:
            adjacency[lo].add(q)
            adjacency[q].add(lo)
    for q in code.boundaries[hi_edge]:
        if q in code.active_data:
            adjacency[hi].add(q)
            adjacency[q].add(hi)
    return adjacency


def count_min_weight_logicals(code: AdaptedCode, axis: str) -> int:
    """Number of distinct minimum-weight logicals along the axis.

    Each such operator is one shortest boundary-to-boundary path on the
    qubit graph; counts accumulate per BFS level and saturate at 64 bits.
    """
    adjacency = _qubit_adjacency(code, axis)
    lo, hi = _AXIS_ENDS[axis]
    dist: dict[object, int] = {lo: 0}
    count: dict[object, int] = {lo: 1}
    frontier = [lo]
    while frontier and hi not in dist:
        nxt = []
        for node in frontier:
            for n in adjacency[node]:
                if n not in dist:
                    dist[n] = dist[node] + 1
                    count[n] = count[node]
                    nxt.append(n)
                elif dist[n] == dist[node] + 1:
                    count[n] = min(count[n] + count[node], COUNT_CAP)
        frontier = nxt
    if hi not in dist:
        raise ValueError(f"no boundary-to-boundary chain on axis {axis}")
    return count[hi]


def disabled_fraction(code: AdaptedCode) -> float:
    bad = sum(1 for s in code.data_status.values() if s != 0)
    bad += sum(1 for s in code.syndrome_status.values() if s != 0)
    return bad / code.layout.qubit_count()


def largest_cluster_diameter(code: AdaptedCode) -> int:
    return max((c.diameter for c in code.clusters), default=0)


def _edge_widths(code: AdaptedCode) -> dict[str, int]:
    return {
        edge: sum(w for _, w in intervals)
        for edge, intervals in code.edge_profile.items()
    }


def meets_standard(code: AdaptedCode, standard: int, d_target: int) -> bool:
    """Boundary quality standards for lattice-surgery readiness.

    1: no deformation anywhere; 2: at least one X edge and one Z edge clean;
    3: every edge keeps merge width >= d_target; 4: one X and one Z edge do.
    """
    widths = _edge_widths(code)
    clean = {e for e, w in widths.items() if w == 0 and not code.edge_profile[e]}
    wide = {e for e, w in widths.items() if code.layout.l - w >= d_target}
    if standard == 1:
        return len(clean) == 4
    if standard == 2:
        return bool(clean & {"left", "right"}) and bool(clean & {"top", "bottom"})
    if standard == 3:
        return len(wide) == 4
    if standard == 4:
        return bool(wide & {"left", "right"}) and bool(wide & {"top", "bottom"})
    raise ValueError(f"unknown standard {standard}")


@dataclass(frozen=True)
class PatchMetrics:
    d_x: int
    d_z: int
    n_min_x: int
    n_min_z: int
    disabled_fraction: float
    cluster_diameter: int
    num_faulty: int
    standards: dict[int, bool]

    @property
    def d(self) -> int:
        return min(self.d_x, self.d_z)

    def to_json(self) -> str:
        payload = {
            "d_x": self.d_x,
            "d_z": self.d_z,
            "n_min_x": self.n_min_x,
            "n_min_z": self.n_min_z,
            "disabled_fraction": self.disabled_fraction,
            "cluster_diameter": self.cluster_diameter,
            "num_faulty": self.num_faulty,
            "standards": {str(k): v for k, v in self.standards.items()},
        }
        return json.dumps(payload)


def compute_metrics(code: AdaptedCode, d_target: int | None = None) -> PatchMetrics:
    if d_target is None:
        d_target = code.layout.l
    return PatchMetrics(
        d_x=code_distance(code, "X"),
        d_z=code_distance(code, "Z"),
        n_min_x=count_min_weight_logicals(code, "X"),
        n_min_z=count_min_weight_logicals(code, "Z"),
        disabled_fraction=disabled_fraction(code),
        cluster_diameter=largest_cluster_diameter(code),
        num_faulty=code.defects.num_faulty(),
        standards={k: meets_standard(code, k, d_target) for k in (1, 2, 3, 4)},
    )


@lru_cache(maxsize=64)
def baseline_count(d: int, axis: str) -> int:
    """Min-weight operator count of the defect-free size-d patch."""
    code = adapt_code(build_patch(d), DefectMap(d, frozenset(), frozenset(), None))
    assert not isinstance(code, Unusable)
    return count_min_weight_logicals(code, axis)


def accepts(code: AdaptedCode | Unusable, d_target: int) -> bool:
    """Post-selection rule: distance reaches d_target, and patches that only
    just reach it must not have more minimum-weight logicals than the
    defect-free distance-d_target code."""
    if isinstance(code, Unusable):
        return False
    d_x = code_distance(code, "X")
    d_z = code_distance(code, "Z")
    if min(d_x, d_z) < d_target:
        return False
    if d_x == d_target:
        if count_min_weight_logicals(code, "X") > baseline_count(d_target, "X"):
            return False
    if d_z == d_target:
        if count_min_weight_logicals(code, "Z") > baseline_count(d_target, "Z"):
            return False
    return True
