"""Adapt a surface-code patch to a chiplet's fabrication defects.

Interior faults are enclosed by super-stabilizers: each broken stabilizer
face keeps its surviving data qubits as a *gauge operator*, and the product
of the gauges around one defect cluster is a deterministic super-stabilizer.
Faults on or near a boundary cannot be enclosed this way, so the boundary is
deformed instead: components are excluded outright until every edge again
hosts checks of a single type.

The algorithm proceeds in phases over a three-valued status per component
(``ACTIVE``/``DISABLED``/``EXCLUDED``): corner cuts, faults on or near the
original boundary, faults on the deformed boundary (iterated to a fixpoint),
then interior disable-propagation, which can itself push the boundary again.
Throughout, ``DISABLED`` marks qubits destined for super-stabilizer
treatment, while ``EXCLUDED`` marks qubits cut away by deformation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from chipqec.lattice import (
    Coord,
    DefectMap,
    Face,
    PatchLayout,
    build_patch,
    face_kind,
    rotate180,
    validate_defects,
)

# Component statuses during adaptation.
ACTIVE = 0
DISABLED = 1  # measured out; enclosed by gauge operators
EXCLUDED = -1  # cut away by boundary deformation

EDGE_NAMES = ("left", "right", "top", "bottom")


class AdaptationError(RuntimeError):
    """The adaptation reached a state it cannot handle."""


@dataclass(frozen=True)
class Unusable:
    """Verdict for a chiplet whose patch cannot store a logical qubit."""

    l: int
    reason: str


@dataclass(frozen=True)
class Stabilizer:
    """A plain (unbroken) check, possibly of reduced weight at a boundary."""

    kind: str  # "X" or "Z"
    home: Coord  # public coordinate of the measuring syndrome qubit
    slots: tuple[Coord | None, Coord | None, Coord | None, Coord | None]

    @property
    def support(self) -> tuple[Coord, ...]:
        return tuple(q for q in self.slots if q is not None)


@dataclass(frozen=True)
class GaugeOperator:
    """Surviving fragment of a broken stabilizer, measured individually."""

    kind: str
    home: Coord
    slots: tuple[Coord | None, Coord | None, Coord | None, Coord | None]

    @property
    def support(self) -> tuple[Coord, ...]:
        return tuple(q for q in self.slots if q is not None)


@dataclass(frozen=True)
class SuperStabilizer:
    """Product of same-type gauges around one defect cluster."""

    kind: str
    members: tuple[GaugeOperator, ...]
    cluster_diameter: int
    cluster_id: int

    @property
    def support(self) -> tuple[Coord, ...]:
        seen: dict[Coord, None] = {}
        for g in self.members:
            for q in g.support:
                seen[q] = None
        return tuple(seen)


@dataclass(frozen=True)
class DefectCluster:
    """One connected cluster of disabled qubits and its gauges."""

    index: int
    data: tuple[Coord, ...]  # disabled data qubits
    diameter: int  # Chebyshev extent in data-qubit units
    x_gauges: tuple[GaugeOperator, ...]
    z_gauges: tuple[GaugeOperator, ...]

    def super_stabilizer(self, kind: str) -> SuperStabilizer:
        members = self.x_gauges if kind == "X" else self.z_gauges
        return SuperStabilizer(kind, members, self.diameter, self.index)


@dataclass(frozen=True)
class MeasurementSchedule:
    """Which operators are measured in each round of one period."""

    period: int
    rounds: tuple[tuple[tuple[Coord, str], ...], ...]


@dataclass(frozen=True)
class AdaptedCode:
    """A working (possibly deformed) code on a defective chiplet."""

    layout: PatchLayout
    defects: DefectMap
    active_data: frozenset[Coord]
    active_syndrome: frozenset[Coord]
    plain_stabilizers: tuple[Stabilizer, ...]
    clusters: tuple[DefectCluster, ...]
    schedule: MeasurementSchedule
    edge_profile: dict[str, tuple[tuple[int, int], ...]]
    boundaries: dict[str, tuple[Coord, ...]]
    observable_path: tuple[Coord, ...]
    data_status: dict[Coord, int]
    syndrome_status: dict[Coord, int]  # keyed by public syndrome coordinate

    @property
    def super_stabilizers(self) -> tuple[SuperStabilizer, ...]:
        out = []
        for c in self.clusters:
            out.append(c.super_stabilizer("X"))
            out.append(c.super_stabilizer("Z"))
        return tuple(out)

    def disabled_data(self) -> frozenset[Coord]:
        return frozenset(q for q, s in self.data_status.items() if s == DISABLED)

    def to_json(self) -> str:
        def op(o):
            return {"kind": o.kind, "home": list(o.home),
                    "support": sorted(list(q) for q in o.support)}

        payload = {
            "l": self.layout.l,
            "active_data": sorted(list(q) for q in self.active_data),
            "active_syndrome": sorted(list(q) for q in self.active_syndrome),
            "plain_stabilizers": [op(s) for s in self.plain_stabilizers],
            "super_stabilizers": [
                {"kind": s.kind, "cluster": s.cluster_id,
                 "cluster_diameter": s.cluster_diameter,
                 "gauges": [op(g) for g in s.members]}
                for s in self.super_stabilizers
            ],
            "schedule": {
                "period": self.schedule.period,
                "rounds": [[[list(home), basis] for home, basis in rnd]
                           for rnd in self.schedule.rounds],
            },
            "edge_profile": {e: [list(iv) for iv in ivs]
                             for e, ivs in self.edge_profile.items()},
            "boundaries": {e: [list(q) for q in qs]
                           for e, qs in self.boundaries.items()},
            "observable": [list(q) for q in self.observable_path],
        }
        return json.dumps(payload, indent=1)


def resolve_faulty_links(layout: PatchLayout, defects: DefectMap) -> frozenset[Coord]:
    """Fold faulty links into a disabled-qubit set.

    A faulty link disables its data endpoint, unless the syndrome endpoint
    is already disabled (then the link is dead anyway).
    """
    disabled = set(defects.faulty_qubits)
    for syn, data in sorted(defects.faulty_links):
        if syn in defects.faulty_qubits:
            continue
        disabled.add(data)
    return frozenset(disabled)


def propagate_disables(layout: PatchLayout, disabled: Iterable[Coord]) -> frozenset[Coord]:
    """Close a disabled set under the two syndrome rules.

    (1) a syndrome with at most one active data neighbor is useless;
    (2) a syndrome left with exactly two active data neighbors on one of its
    diagonals would anti-commute with crossing gauges, so it is disabled too.
    """
    closed = set(disabled)
    changed = True
    while changed:
        changed = False
        for f in layout.faces:
            if f.public in closed:
                continue
            active = [q for q in f.data if q not in closed]
            diagonal = (
                len(active) == 2
                and active[0][0] != active[1][0]
                and active[0][1] != active[1][1]
            )
            if len(active) <= 1 or diagonal:
                closed.add(f.public)
                changed = True
    return frozenset(closed)


def deform_boundaries(
    layout: PatchLayout, disabled: Iterable[Coord]
) -> tuple[
    dict[str, tuple[Coord, ...]],
    frozenset[Coord],
    dict[str, tuple[tuple[int, int], ...]],
]:
    """Run only the boundary phases for a disabled set.

    Returns the deformed boundaries, the components excluded by deformation
    (data grid coordinates and public syndrome coordinates together), and the
    per-edge deformation profile.  Disabled qubits that the boundary never
    reaches are left alone — they are super-stabilizer material.

    Raises :class:`AdaptationError` if a boundary is consumed entirely.
    """
    patch = _Patch(layout, disabled)
    patch.cut_corners()
    patch.near_corner_special_cases()
    if patch.update_boundaries():
        raise AdaptationError("boundaries collapsed")
    for q in patch.all_components():
        if patch.status(q) != DISABLED:
            continue
        if patch.handle_original_boundary_defect(q):
            patch.cleanup(boundary_only=True)
            if patch.update_boundaries():
                raise AdaptationError("boundaries collapsed")
    change = True
    while change:
        change = False
        for q in patch.all_components():
            if patch.status(q) != DISABLED:
                continue
            if patch.handle_new_boundary_defect(q):
                change = True
                patch.cleanup(boundary_only=True)
                if patch.update_boundaries():
                    raise AdaptationError("boundaries collapsed")
    boundaries = {
        name: tuple(patch.boundaries[i]) for i, name in enumerate(EDGE_NAMES)
    }
    excluded = {q for q in patch.data_order if patch.dstat[q] == EXCLUDED}
    excluded |= {
        patch.face_at[pos].public
        for pos in patch.face_order
        if patch.sstat[pos] == EXCLUDED
    }
    return boundaries, frozenset(excluded), _edge_profile(patch)


def swap_roles(defects: DefectMap) -> DefectMap:
    """Defect map rotated 180 degrees within the patch coordinate frame."""
    l = defects.l
    return DefectMap(
        l=l,
        faulty_qubits=frozenset(rotate180(l, q) for q in defects.faulty_qubits),
        faulty_links=frozenset(
            (rotate180(l, s), rotate180(l, d)) for s, d in defects.faulty_links
        ),
        seed=defects.seed,
    )


def reassign_roles(defects: DefectMap) -> DefectMap:
    """Defect map as seen after remounting the chiplet with data and
    syndrome roles exchanged.

    A chiplet with one spare row and column of qubit sites can be rotated so
    the patch footprint lands on opposite-role sites: data faults reappear
    as syndrome faults and vice versa.  In patch coordinates the flip is
    ``x -> 2l-1-x`` on the unclamped frame.  Faults whose image falls on a
    site the patch never uses drop out; faults on the spare sites themselves
    are not modelled.
    """
    layout = build_patch(defects.l)
    n = 2 * defects.l - 1
    faces = {f.pos: f for f in layout.faces}
    by_public = layout.face_by_public()
    data = set(layout.data_qubits)

    def flip(c: Coord) -> Coord:
        return (n - c[0], n - c[1])

    qubits = set()
    for q in defects.faulty_qubits:
        if q in data:
            face = faces.get(flip(q))
            if face is not None:
                qubits.add(face.public)
        else:
            img = flip(by_public[q].pos)
            if img in data:
                qubits.add(img)
    links = set()
    for s, q in defects.faulty_links:
        new_syn = faces.get(flip(q))
        new_data = flip(by_public[s].pos)
        if new_syn is not None and new_data in data:
            links.add((new_syn.public, new_data))
    return DefectMap(
        l=defects.l,
        faulty_qubits=frozenset(qubits),
        faulty_links=frozenset(links),
        seed=defects.seed,
    )


def build_schedule(
    super_stabilizers: Sequence[SuperStabilizer],
    plain_stabilizers: Sequence[Stabilizer] = (),
) -> MeasurementSchedule:
    """Interleave gauge blocks: diameter-k clusters run k X rounds, k Z rounds.

    Plain stabilizers are measured every round.  Clusters run their own
    block phase independently; the period is the lcm of all block cycles.
    """
    diam: dict[int, int] = {}
    members: dict[tuple[int, str], tuple[GaugeOperator, ...]] = {}
    for s in super_stabilizers:
        diam[s.cluster_id] = s.cluster_diameter
        members[(s.cluster_id, s.kind)] = s.members
    period = 1
    for k in diam.values():
        period = math.lcm(period, 2 * k)
    rounds = []
    for r in range(period):
        ops: list[tuple[Coord, str]] = [(p.home, p.kind) for p in plain_stabilizers]
        for cid in sorted(diam):
            k = diam[cid]
            basis = "X" if (r // k) % 2 == 0 else "Z"
            for g in members.get((cid, basis), ()):
                ops.append((g.home, g.kind))
        rounds.append(tuple(ops))
    return MeasurementSchedule(period=period, rounds=tuple(rounds))


class _Patch:
    """Mutable adaptation state over one layout.

    Data qubits are keyed by their grid coordinate; faces by their internal
    (possibly out-of-range) position, which keeps boundary arithmetic
    uniform.  Iteration orders are fixed — data row-major, faces scan-order —
    because several deformation rules resolve ties by encounter order.
    """

    def __init__(self, layout: PatchLayout, disabled: Iterable[Coord]):
        self.layout = layout
        self.l = layout.l
        self.face_at: dict[Coord, Face] = {f.pos: f for f in layout.faces}
        self.public_syn: dict[Coord, Coord] = {f.public: f.pos for f in layout.faces}
        self.data_order: list[Coord] = sorted(layout.data_qubits)
        self.face_order: list[Coord] = sorted(self.face_at)
        # Faces touching each data qubit, in face scan order.
        self.faces_of: dict[Coord, list[Coord]] = {q: [] for q in self.data_order}
        for pos in self.face_order:
            for q in self.face_at[pos].data:
                self.faces_of[q].append(pos)
        self.dstat: dict[Coord, int] = {q: ACTIVE for q in self.data_order}
        self.sstat: dict[Coord, int] = {pos: ACTIVE for pos in self.face_order}
        for q in disabled:
            if q in self.dstat:
                self.dstat[q] = DISABLED
            else:
                self.sstat[self.public_syn[q]] = DISABLED
        self.tentative: list[Coord] = []  # disables that a deformation may undo
        # Boundary data qubits: left, right (X edges), top, bottom (Z edges).
        span = range(0, 2 * self.l - 1, 2)
        last = 2 * self.l - 2
        self.boundaries: list[list[Coord]] = [
            [(r, 0) for r in span],
            [(r, last) for r in span],
            [(0, c) for c in span],
            [(last, c) for c in span],
        ]

    # -- small helpers -------------------------------------------------

    def is_data(self, q: Coord) -> bool:
        return q in self.dstat

    def status(self, q: Coord) -> int:
        return self.dstat[q] if q in self.dstat else self.sstat[q]

    def set_status(self, q: Coord, value: int) -> None:
        if q in self.dstat:
            self.dstat[q] = value
        else:
            self.sstat[q] = value

    def all_components(self) -> list[Coord]:
        return self.data_order + self.face_order

    def on_original_boundary(self, q: Coord) -> bool:
        if self.is_data(q):
            r, c = q
            return r == 0 or r == 2 * self.l - 2 or c == 0 or c == 2 * self.l - 2
        a, b = q
        return a == -1 or a == 2 * self.l - 1 or b == -1 or b == 2 * self.l - 1

    def near_z_edge(self, pos: Coord) -> bool:
        return pos[0] == 1 or pos[0] == 2 * self.l - 3

    def near_x_edge(self, pos: Coord) -> bool:
        return pos[1] == 1 or pos[1] == 2 * self.l - 3

    def remaining_data(self, pos: Coord) -> int:
        return sum(
            1 for q in self.face_at[pos].data if self.dstat[q] != EXCLUDED
        )

    # -- disable/cleanup passes ----------------------------------------

    def _handle_useless_faces(self, boundary_only: bool) -> bool:
        """Disable (or, near exclusions, exclude) faces with too little support."""
        change = False
        considered = (ACTIVE, DISABLED) if boundary_only else (ACTIVE,)
        for pos in self.face_order:
            if self.sstat[pos] not in considered:
                continue
            active = []
            near_excluded = False
            for q in self.face_at[pos].data:
                if self.dstat[q] in considered:
                    active.append(q)
                elif self.dstat[q] == EXCLUDED:
                    near_excluded = True
            if len(active) <= 1:
                if boundary_only:
                    if near_excluded:
                        self.sstat[pos] = EXCLUDED
                        change = True
                else:
                    self.sstat[pos] = DISABLED
                    self.tentative.append(pos)
                    change = True
            elif (
                len(active) == 2
                and not boundary_only
                and self.sstat[pos] == ACTIVE
                and active[0][0] != active[1][0]
                and active[0][1] != active[1][1]
            ):
                # A weight-2 check across a face diagonal would anti-commute
                # with the crossing gauge operators; disable it as well.
                self.sstat[pos] = DISABLED
                self.tentative.append(pos)
                change = True
        return change

    def _handle_uncovered_data(self, boundary_only: bool) -> bool:
        """Drop data qubits that lost all X or all Z coverage."""
        change = False
        considered = (ACTIVE, DISABLED) if boundary_only else (ACTIVE,)
        for q in self.data_order:
            if self.dstat[q] not in considered:
                continue
            cover = {"X": 0, "Z": 0}
            near_excluded = False
            for pos in self.faces_of[q]:
                if self.sstat[pos] in considered:
                    cover[self.face_at[pos].kind] += 1
                elif self.sstat[pos] == EXCLUDED:
                    near_excluded = True
            if cover["X"] == 0 or cover["Z"] == 0:
                if boundary_only:
                    if near_excluded:
                        self.dstat[q] = EXCLUDED
                        change = True
                else:
                    self.dstat[q] = DISABLED
                    self.tentative.append(q)
                    change = True
        return change

    def _drop_minor_components(self, boundary_only: bool) -> bool:
        """Keep only the largest block of data connected through usable faces."""
        if boundary_only:
            present = [q for q in self.data_order if self.dstat[q] != EXCLUDED]
            usable = lambda pos: self.sstat[pos] != EXCLUDED  # noqa: E731
        else:
            present = [q for q in self.data_order if self.dstat[q] == ACTIVE]
            usable = lambda pos: self.sstat[pos] == ACTIVE  # noqa: E731
        if not present:
            return False
        index = {q: i for i, q in enumerate(present)}
        parent = list(range(len(present)))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for pos in self.face_order:
            if not usable(pos):
                continue
            members = [index[q] for q in self.face_at[pos].data if q in index]
            for a, b in zip(members, members[1:]):
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[ra] = rb
        groups: dict[int, list[int]] = {}
        for i in range(len(present)):
            groups.setdefault(find(i), []).append(i)
        if len(groups) <= 1:
            return False
        ordered = sorted(groups.values(), key=lambda g: (-len(g), g[0]))
        for g in ordered[1:]:
            for i in g:
                q = present[i]
                if boundary_only:
                    self.dstat[q] = EXCLUDED
                else:
                    self.dstat[q] = DISABLED
                    self.tentative.append(q)
        return True

    def cleanup(self, boundary_only: bool) -> bool:
        any_change = False
        progress = True
        while progress:
            progress = False
            if self._handle_useless_faces(boundary_only):
                progress = any_change = True
            if self._handle_uncovered_data(boundary_only):
                progress = any_change = True
            if self._drop_minor_components(boundary_only):
                progress = any_change = True
        return any_change

    def disable_broken_face_data(self) -> bool:
        """A disabled face cannot be replaced by gauges; its data join the cluster."""
        change = False
        for pos in self.face_order:
            if self.sstat[pos] != DISABLED:
                continue
            for q in self.face_at[pos].data:
                if self.dstat[q] == ACTIVE:
                    self.dstat[q] = DISABLED
                    self.tentative.append(q)
                    change = True
        return change

    # -- corner and boundary deformation --------------------------------

    def corner_pairs(self) -> list[tuple[Coord, Coord]]:
        """Each corner data qubit with its unique weight-2 face."""
        last = 2 * self.l - 2
        pairs = []
        for corner in ((0, 0), (0, last), (last, 0), (last, last)):
            mates = [
                pos
                for pos in self.faces_of[corner]
                if self.face_at[pos].weight == 2
            ]
            assert len(mates) == 1
            pairs.append((corner, mates[0]))
        return pairs

    def cut_corners(self) -> None:
        for corner, mate in self.corner_pairs():
            if self.dstat[corner] != ACTIVE or self.sstat[mate] != ACTIVE:
                self.dstat[corner] = EXCLUDED
                self.sstat[mate] = EXCLUDED

    def near_corner_special_cases(self) -> None:
        """Clean cut for a same-type face fault diagonally inside a corner.

        The generic same-type deformation would bite deep into the corner;
        excising the corner pair instead keeps the loss at four components.
        Applies only when the fault's surviving face neighbors are clean.
        """
        def inward(mate_v: int, corner_v: int) -> int:
            if mate_v == -1:
                return 2
            if mate_v == 2 * self.l - 1:
                return -2
            return 2 if corner_v == 0 else -2

        for corner, mate in self.corner_pairs():
            a, b = mate
            # Step from the weight-2 face diagonally into the patch.
            special = (a + inward(a, corner[0]), b + inward(b, corner[1]))
            if special not in self.face_at:
                continue
            if self.sstat[special] != DISABLED:
                continue
            neighbors = [
                (special[0] + sa, special[1] + sb)
                for sa, sb in ((2, 0), (-2, 0), (0, 2), (0, -2))
            ]
            if any(
                self.sstat[n] != ACTIVE for n in neighbors if n in self.face_at
            ):
                continue
            self.sstat[special] = EXCLUDED
            self.sstat[mate] = EXCLUDED
            for q in self.face_at[mate].data:
                self.dstat[q] = EXCLUDED

    def exclude_boundary_bite(self, q: Coord) -> None:
        """Excise a faulty original-boundary data qubit with its neighborhood.

        Drops its weight-2 face, that face's two data qubits, and whichever
        weight-4 face contained both, producing a straight deformed edge.
        """
        weight2 = [p for p in self.faces_of[q] if self.face_at[p].weight == 2]
        weight4 = [p for p in self.faces_of[q] if self.face_at[p].weight == 4]
        if len(weight2) != 1 or len(weight4) != 2:
            raise AdaptationError(f"unexpected boundary neighborhood at {q}")
        self.sstat[weight2[0]] = EXCLUDED
        dropped = list(self.face_at[weight2[0]].data)
        for d in dropped:
            self.dstat[d] = EXCLUDED
        first = self.face_at[weight4[0]].data
        if all(d in first for d in dropped):
            self.sstat[weight4[0]] = EXCLUDED
        else:
            self.sstat[weight4[1]] = EXCLUDED

    def handle_original_boundary_defect(self, q: Coord) -> bool:
        """Deform for a fault on or near the original patch boundary."""
        if self.is_data(q):
            if self.on_original_boundary(q):
                self.exclude_boundary_bite(q)
                return True
            return False
        if self.on_original_boundary(q):  # weight-2 face fault
            data = self.face_at[q].data
            if data:
                self.exclude_boundary_bite(data[0])
                return True
            return False
        if not (self.near_z_edge(q) or self.near_x_edge(q)):
            return False
        # Weight-4 face one step from an edge.
        kind = self.face_at[q].kind
        a, b = q
        self.sstat[q] = EXCLUDED
        if kind == "X" and self.near_z_edge(q):
            # Fault type differs from the edge type: excise the weight-2
            # face directly across, with its data.
            a1 = -1 if a == 1 else 2 * self.l - 1
            self._exclude_weight2((a1, b))
        elif kind == "Z" and self.near_x_edge(q):
            b1 = -1 if b == 1 else 2 * self.l - 1
            self._exclude_weight2((a, b1))
        else:
            # Same type as the nearest edge: the deformation must also drop
            # the opposite-type faces flanking the fault, plus the two
            # same-type weight-2 faces it leaned on.
            if a == 1:
                drop = [(a, b - 2), (a, b + 2), (a + 2, b), (a - 2, b - 2), (a - 2, b + 2)]
            elif a == 2 * self.l - 3:
                drop = [(a, b - 2), (a, b + 2), (a - 2, b), (a + 2, b - 2), (a + 2, b + 2)]
            elif b == 1:
                drop = [(a - 2, b), (a + 2, b), (a, b + 2), (a - 2, b - 2), (a + 2, b - 2)]
            else:
                drop = [(a - 2, b), (a + 2, b), (a, b - 2), (a - 2, b + 2), (a + 2, b + 2)]
            for pos in drop:
                if pos not in self.face_at:
                    raise AdaptationError(
                        f"same-type boundary deformation at {q} fell off the patch"
                    )
                self.sstat[pos] = EXCLUDED
        return True

    def _exclude_weight2(self, pos: Coord) -> None:
        if pos not in self.face_at:
            raise AdaptationError(f"expected a weight-2 face at {pos}")
        self.sstat[pos] = EXCLUDED
        for d in self.face_at[pos].data:
            self.dstat[d] = EXCLUDED

    def dynamic_corners(self) -> tuple[Coord, ...]:
        return (
            self.boundaries[0][0],
            self.boundaries[0][-1],
            self.boundaries[1][0],
            self.boundaries[1][-1],
        )

    def handle_new_boundary_defect(self, q: Coord) -> bool:
        """Deform for a fault sitting on the already-deformed boundary."""
        if self.is_data(q):
            if q in self.dynamic_corners():
                present = [p for p in self.faces_of[q] if self.sstat[p] != EXCLUDED]
                if len(present) != 2:
                    raise AdaptationError(f"corner {q} has {len(present)} faces")
                if any(self.sstat[p] == DISABLED for p in present):
                    # A neighboring face fault will consume this corner when
                    # it is handled itself.
                    return False
                if self.remaining_data(present[0]) < self.remaining_data(present[1]):
                    self.sstat[present[0]] = EXCLUDED
                else:
                    self.sstat[present[1]] = EXCLUDED
                self.dstat[q] = EXCLUDED
                return True
            if q in self.boundaries[0] or q in self.boundaries[1]:
                # On an X edge: drop the one Z face this qubit still touches.
                self.dstat[q] = EXCLUDED
                for pos in self.faces_of[q]:
                    if self.sstat[pos] != EXCLUDED and self.face_at[pos].kind == "Z":
                        self.sstat[pos] = EXCLUDED
                        return True
                return False
            if q in self.boundaries[2] or q in self.boundaries[3]:
                self.dstat[q] = EXCLUDED
                for pos in self.faces_of[q]:
                    if self.sstat[pos] != EXCLUDED and self.face_at[pos].kind == "X":
                        self.sstat[pos] = EXCLUDED
                        return True
                return False
            # Interior position, but the gauges that would enclose it lean on
            # excluded qubits: push the boundary over it instead.
            drop_kind = None
            for pos in self.faces_of[q]:
                if self.remaining_data(pos) < 4:
                    drop_kind = "Z" if self.face_at[pos].kind == "X" else "X"
                    break
            if drop_kind is None:
                return False
            self.dstat[q] = EXCLUDED
            for pos in self.faces_of[q]:
                if self.face_at[pos].kind == drop_kind:
                    self.sstat[pos] = EXCLUDED
            return True
        # Faulty face: on the boundary if one of its data qubits is.
        edge_kind = None
        for d in self.face_at[q].data:
            if d in self.dynamic_corners():
                self.sstat[q] = EXCLUDED
                self.dstat[d] = EXCLUDED
                return True
            if d in self.boundaries[0] or d in self.boundaries[1]:
                edge_kind = "X"
                break
            if d in self.boundaries[2] or d in self.boundaries[3]:
                edge_kind = "Z"
                break
        if edge_kind is None:
            return False
        self.sstat[q] = EXCLUDED
        if self.face_at[q].kind == edge_kind:
            # Same type as the edge: the flanking opposite-type faces would
            # anti-commute with the deformed edge, drop them too.
            a, b = q
            for pos in ((a, b + 2), (a, b - 2), (a + 2, b), (a - 2, b)):
                if pos in self.face_at and self.sstat[pos] != EXCLUDED:
                    self.sstat[pos] = EXCLUDED
        return True

    # -- dynamic boundary tracking --------------------------------------

    def _edge_neighbors(self, q: Coord, kind: str) -> list[Coord]:
        """Data qubits adjacent to q along the boundary of the given type."""
        r0, c0 = q
        out: list[Coord] = []
        for pos in self.faces_of[q]:
            if self.sstat[pos] == EXCLUDED or self.face_at[pos].kind != kind:
                continue
            remaining = [
                d for d in self.face_at[pos].data if self.dstat[d] != EXCLUDED
            ]
            if len(remaining) == 2:
                out.append(remaining[0] if remaining[1] == q else remaining[1])
            elif len(remaining) == 3:
                for d in remaining:
                    if abs(d[0] - r0) == 2 and abs(d[1] - c0) == 2:
                        out.append(d)
                        break
            else:
                # Full face: the boundary passes through if the face beyond
                # one of its sides is excluded or absent.
                a, b = pos
                for probe, step in (
                    ((a, b + 2 * (c0 - b)), (2 * (a - r0), 0)),
                    ((a + 2 * (r0 - a), b), (0, 2 * (b - c0))),
                ):
                    absent = probe not in self.face_at or self.sstat[probe] == EXCLUDED
                    if absent:
                        out.append((r0 + step[0], c0 + step[1]))
        return out

    def _walk_edge(self, start: Coord, kind: str) -> list[Coord]:
        """Trace one boundary as a path of data qubits through `start`."""
        chain: list[Coord] = [start]
        open_front, open_back = True, True
        while open_front or open_back:
            if len(chain) > len(self.data_order):
                raise AdaptationError("boundary walk does not terminate")
            if open_front:
                neighbors = self._edge_neighbors(chain[0], kind)
                if len(neighbors) == 1:
                    if len(chain) == 1:
                        chain.append(neighbors[0])
                    open_front = False
                elif len(neighbors) == 2 and neighbors[0] != neighbors[1]:
                    if len(chain) == 1:
                        chain.insert(0, neighbors[0])
                        chain.append(neighbors[1])
                    elif neighbors[0] == chain[1]:
                        chain.insert(0, neighbors[1])
                    elif neighbors[1] == chain[1]:
                        chain.insert(0, neighbors[0])
                    else:
                        raise AdaptationError(f"boundary walk branched at {chain[0]}")
                else:
                    raise AdaptationError(f"boundary walk stuck at {chain[0]}")
            if open_back and len(chain) > 1:
                neighbors = self._edge_neighbors(chain[-1], kind)
                if len(neighbors) == 1:
                    if neighbors[0] != chain[-2]:
                        raise AdaptationError(f"boundary walk stuck at {chain[-1]}")
                    open_back = False
                elif len(neighbors) == 2:
                    if neighbors[0] == chain[-2]:
                        chain.append(neighbors[1])
                    elif neighbors[1] == chain[-2]:
                        chain.append(neighbors[0])
                    else:
                        raise AdaptationError(f"boundary walk branched at {chain[-1]}")
                else:
                    raise AdaptationError(f"boundary walk stuck at {chain[-1]}")
        return chain

    def update_boundaries(self) -> bool:
        """Re-trace deformed edges; True if the patch no longer holds a qubit."""
        for i in range(4):
            survivors = [q for q in self.boundaries[i] if self.dstat[q] != EXCLUDED]
            if len(survivors) == len(self.boundaries[i]):
                continue
            if not survivors:
                raise AdaptationError(f"boundary {EDGE_NAMES[i]} entirely lost")
            kind = "X" if i <= 1 else "Z"
            chain = self._walk_edge(survivors[0], kind)
            if (i <= 1 and chain[0][0] > chain[-1][0]) or (
                i > 1 and chain[0][1] > chain[-1][1]
            ):
                chain.reverse()
            self.boundaries[i] = chain
        left, right, top, bottom = (set(b) for b in self.boundaries)
        if left & right or top & bottom:
            return True  # opposite boundaries touch: distance collapsed
        corners_connect = (
            self.boundaries[0][0] == self.boundaries[2][0]
            and self.boundaries[0][-1] == self.boundaries[3][0]
            and self.boundaries[2][-1] == self.boundaries[1][0]
            and self.boundaries[1][-1] == self.boundaries[3][-1]
        )
        return not corners_connect

    # -- interior fixpoint ----------------------------------------------

    def reset_tentative(self, interior: list[Coord]) -> None:
        """Undo tentative disables, then re-derive them from scratch.

        Boundary deformation may have excluded the faults that forced the
        tentative disables, so the cheapest consistent state is recomputed.
        """
        interior[:] = [q for q in interior if self.status(q) != EXCLUDED]
        for q in self.tentative:
            if self.status(q) != EXCLUDED:
                self.set_status(q, ACTIVE)
        self.tentative.clear()
        progress = True
        while progress:
            progress = False
            if self.disable_broken_face_data():
                progress = True
            if self.cleanup(boundary_only=False):
                progress = True


def _edge_profile(patch: _Patch) -> dict[str, tuple[tuple[int, int], ...]]:
    """Contiguous spans of excluded regular positions along each edge."""
    profile: dict[str, tuple[tuple[int, int], ...]] = {}
    l = patch.l
    for i, name in enumerate(EDGE_NAMES):
        fixed = 0 if name in ("left", "top") else 2 * l - 2
        axis = 1 if name in ("left", "right") else 0  # coordinate that is fixed
        moving = 1 - axis
        intervals = []
        prev = None
        for q in patch.boundaries[i]:
            if q[axis] != fixed:
                continue  # detour qubit, not a regular edge position
            if prev is not None and q[moving] - prev > 2:
                start = (prev + 2) // 2
                width = (q[moving] - prev - 2) // 2
                intervals.append((start, width))
            prev = q[moving]
        profile[name] = tuple(intervals)
    return profile


def _find_observable(patch: _Patch, plains: list[Stabilizer],
                     clusters: list[DefectCluster]) -> tuple[Coord, ...]:
    """Shortest top-to-bottom data chain commuting with every measured check.

    Steps ride individual X gauges (not whole super-stabilizers): the chain
    must commute with each gauge separately so the logical outcome is
    deterministic in a noiseless run.
    """
    adjacency: dict[Coord, set[Coord]] = {
        q: set() for q, s in patch.dstat.items() if s == ACTIVE
    }

    def add_clique(support: Sequence[Coord]) -> None:
        for a in support:
            for b in support:
                if a != b:
                    adjacency[a].add(b)

    for p in plains:
        if p.kind == "X":
            add_clique(p.support)
    for c in clusters:
        for g in c.x_gauges:
            add_clique(g.support)

    top = [q for q in patch.boundaries[2] if patch.dstat[q] == ACTIVE]
    frontier = sorted(top)
    parent: dict[Coord, Coord | None] = {q: None for q in frontier}
    goal = {q for q in patch.boundaries[3] if patch.dstat[q] == ACTIVE}
    while frontier:
        nxt: list[Coord] = []
        for q in frontier:
            if q in goal:
                path = [q]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                return tuple(reversed(path))
            for n in sorted(adjacency[q]):
                if n not in parent:
                    parent[n] = q
                    nxt.append(n)
        frontier = sorted(set(nxt))
    raise AdaptationError("no boundary-to-boundary observable survives")


def _cluster_diameter(coords: Sequence[Coord]) -> int:
    rows = [r for r, _ in coords]
    cols = [c for _, c in coords]
    return int(max(max(rows) - min(rows), max(cols) - min(cols)) / 2 + 1)


def _assemble(patch: _Patch, defects: DefectMap) -> AdaptedCode | Unusable:
    layout = patch.layout
    active_data = [q for q in patch.data_order if patch.dstat[q] == ACTIVE]
    if not active_data:
        return Unusable(layout.l, "no active data qubits remain")

    disabled_data = [q for q in patch.data_order if patch.dstat[q] == DISABLED]
    cluster_members = _group_clusters(disabled_data)
    cluster_of: dict[Coord, int] = {}
    for idx, members in enumerate(cluster_members):
        for q in members:
            cluster_of[q] = idx

    plains: list[Stabilizer] = []
    gauges_by_cluster: dict[int, dict[str, list[GaugeOperator]]] = {
        i: {"X": [], "Z": []} for i in range(len(cluster_members))
    }
    for pos in patch.face_order:
        if patch.sstat[pos] != ACTIVE:
            continue
        face = patch.face_at[pos]
        slots = []
        broken_neighbor = None
        for q in face.slots:
            if q is None or patch.dstat[q] == EXCLUDED:
                slots.append(None)
            elif patch.dstat[q] == DISABLED:
                broken_neighbor = q
                slots.append(None)
            else:
                slots.append(q)
        slots_t = tuple(slots)
        if broken_neighbor is None:
            plains.append(Stabilizer(face.kind, face.public, slots_t))
        else:
            gauge = GaugeOperator(face.kind, face.public, slots_t)
            if len(gauge.support) < 2:
                raise AdaptationError(f"degenerate gauge at {face.public}")
            gauges_by_cluster[cluster_of[broken_neighbor]][face.kind].append(gauge)

    clusters = []
    for idx, members in enumerate(cluster_members):
        xg = tuple(gauges_by_cluster[idx]["X"])
        zg = tuple(gauges_by_cluster[idx]["Z"])
        if not xg or not zg:
            raise AdaptationError(
                f"cluster at {members[0]} lost all gauges of one type"
            )
        clusters.append(
            DefectCluster(idx, tuple(members), _cluster_diameter(members), xg, zg)
        )

    observable = _find_observable(patch, plains, clusters)
    supers = [c.super_stabilizer(k) for c in clusters for k in ("X", "Z")]
    schedule = build_schedule(supers, plains)
    boundaries = {
        name: tuple(patch.boundaries[i]) for i, name in enumerate(EDGE_NAMES)
    }
    syn_status = {
        patch.face_at[pos].public: patch.sstat[pos] for pos in patch.face_order
    }
    return AdaptedCode(
        layout=layout,
        defects=defects,
        active_data=frozenset(active_data),
        active_syndrome=frozenset(
            patch.face_at[pos].public
            for pos in patch.face_order
            if patch.sstat[pos] == ACTIVE
        ),
        plain_stabilizers=tuple(plains),
        clusters=tuple(clusters),
        schedule=schedule,
        edge_profile=_edge_profile(patch),
        boundaries=boundaries,
        observable_path=observable,
        data_status=dict(patch.dstat),
        syndrome_status=syn_status,
    )


def _group_clusters(disabled_data: Sequence[Coord]) -> list[list[Coord]]:
    """Connected components under 8-neighborhood adjacency (step 2 per axis)."""
    parent = list(range(len(disabled_data)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, qi in enumerate(disabled_data):
        for j in range(i + 1, len(disabled_data)):
            qj = disabled_data[j]
            if abs(qi[0] - qj[0]) <= 2 and abs(qi[1] - qj[1]) <= 2:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    groups: dict[int, list[Coord]] = {}
    order: list[int] = []
    for i, q in enumerate(disabled_data):
        r = find(i)
        if r not in groups:
            groups[r] = []
            order.append(r)
        groups[r].append(q)
    return [groups[r] for r in order]


def _run_once(
    layout: PatchLayout, defects: DefectMap, extra_faulty_syn: frozenset[Coord]
) -> AdaptedCode | Unusable:
    disabled = set(resolve_faulty_links(layout, defects)) | set(extra_faulty_syn)
    patch = _Patch(layout, disabled)

    patch.cut_corners()
    patch.near_corner_special_cases()
    if patch.update_boundaries():
        return Unusable(layout.l, "boundaries collapsed")

    # Faults on or near the original boundary.
    for q in patch.all_components():
        if patch.status(q) != DISABLED:
            continue
        if patch.handle_original_boundary_defect(q):
            patch.cleanup(boundary_only=True)
            if patch.update_boundaries():
                return Unusable(layout.l, "boundaries collapsed")

    # Faults that ended up on the deformed boundary.
    change = True
    while change:
        change = False
        for q in patch.all_components():
            if patch.status(q) != DISABLED:
                continue
            if patch.handle_new_boundary_defect(q):
                change = True
                patch.cleanup(boundary_only=True)
                if patch.update_boundaries():
                    return Unusable(layout.l, "boundaries collapsed")

    # Interior faults: propagate disables; if propagation reaches the
    # boundary, deform again and re-derive the propagation from scratch.
    interior = [q for q in patch.all_components() if patch.status(q) == DISABLED]
    patch.reset_tentative(interior)
    change = True
    while change:
        change = False
        for q in interior + patch.tentative:
            if patch.status(q) != DISABLED:
                continue
            if patch.handle_new_boundary_defect(q):
                change = True
                patch.cleanup(boundary_only=True)
                if patch.update_boundaries():
                    return Unusable(layout.l, "boundaries collapsed")
                break
        if change:
            patch.reset_tentative(interior)

    return _assemble(patch, defects)


def adapt_code(layout: PatchLayout, defects: DefectMap) -> AdaptedCode | Unusable:
    """Adapt the standard patch to the given defects, or declare it unusable."""
    validate_defects(layout, defects)
    extra: set[Coord] = set()
    try:
        for _ in range(len(layout.faces) + 1):
            result = _run_once(layout, defects, frozenset(extra))
            if isinstance(result, Unusable):
                return result
            # A gauge reduced to a diagonal pair anti-commutes with crossing
            # gauges of the other type; its face must be treated as broken
            # and the whole adaptation re-derived.
            rerun = set()
            for cluster in result.clusters:
                for g in cluster.x_gauges + cluster.z_gauges:
                    s = g.support
                    if len(s) == 2 and s[0][0] != s[1][0] and s[0][1] != s[1][1]:
                        rerun.add(g.home)
            if not rerun:
                return result
            extra |= rerun
    except AdaptationError as exc:
        return Unusable(layout.l, str(exc))
    return Unusable(layout.l, "adaptation did not converge")
