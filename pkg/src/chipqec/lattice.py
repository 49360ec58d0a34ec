"""Rotated surface-code patch layout and fabrication-defect maps.

A size-``l`` patch lives on a ``(2l-1) x (2l-1)`` interleaved grid.  Data
qubits sit at even-even positions, interior syndrome qubits at odd-odd
positions, and the ``2(l-1)`` boundary syndrome qubits at mixed-parity
midpoints on the patch edges.  Internally, face arithmetic uses a uniform
frame where boundary faces sit one step outside the data square (rows/cols
``-1`` and ``2l-1``); the public coordinates clamp those onto the edge.

Faces are checkerboard-colored: an internal face position ``(a, b)`` is
X-type when ``(a + b) % 4 == 0``.  With that convention the left/right
edges carry weight-2 X faces (horizontal logical-X endpoints) and the
top/bottom edges carry weight-2 Z faces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable

import numpy as np

Coord = tuple[int, int]
Link = tuple[Coord, Coord]  # (syndrome, data), public coordinates

# Four CX sub-steps per extraction round.  X faces sweep column-fast and
# Z faces row-fast ("N"/"Z" orders) so two-qubit hook faults do not cut
# the code distance.
X_STEP_OFFSETS = ((1, 1), (-1, 1), (1, -1), (-1, -1))
Z_STEP_OFFSETS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


class DefectModel(str, Enum):
    """Which component kinds can be fabrication-faulty."""

    LINKS_ONLY = "links_only"
    LINKS_AND_QUBITS = "links_and_qubits"


@dataclass(frozen=True)
class Face:
    """One stabilizer face: its ancilla position and data-qubit slots.

    ``slots`` always has four entries aligned with the CX step order;
    out-of-grid slots of boundary faces are ``None``.
    """

    kind: str  # "X" or "Z"
    pos: Coord  # internal frame, both coords odd, may be -1 or 2l-1
    public: Coord  # in-range ancilla coordinate
    slots: tuple[Coord | None, Coord | None, Coord | None, Coord | None]

    @property
    def data(self) -> tuple[Coord, ...]:
        return tuple(q for q in self.slots if q is not None)

    @property
    def weight(self) -> int:
        return sum(1 for q in self.slots if q is not None)

    @property
    def on_boundary(self) -> bool:
        return self.pos != self.public


def face_kind(a: int, b: int) -> str:
    """Checkerboard color of the (internal-frame) face position ``(a, b)``."""
    return "X" if (a + b) % 4 == 0 else "Z"


def _clamp(l: int, v: int) -> int:
    if v == -1:
        return 0
    if v == 2 * l - 1:
        return 2 * l - 2
    return v


@dataclass(frozen=True)
class PatchLayout:
    """Static geometry of a defect-free size-``l`` patch."""

    l: int
    data_qubits: tuple[Coord, ...]
    faces: tuple[Face, ...]

    @property
    def syndrome_qubits(self) -> tuple[Coord, ...]:
        return tuple(f.public for f in self.faces)

    @property
    def links(self) -> tuple[Link, ...]:
        return tuple(
            (f.public, q) for f in self.faces for q in f.slots if q is not None
        )

    def face_by_public(self) -> dict[Coord, Face]:
        return {f.public: f for f in self.faces}

    def qubit_count(self) -> int:
        return len(self.data_qubits) + len(self.faces)

    def link_count(self) -> int:
        return sum(f.weight for f in self.faces)


@lru_cache(maxsize=64)
def build_patch(l: int) -> PatchLayout:
    """Construct the standard layout: ``2l^2 - 1`` qubits, ``4l(l-1)`` links."""
    if l < 2:
        raise ValueError(f"patch size must be at least 2, got {l}")
    span = range(0, 2 * l - 1)
    data = tuple((r, c) for r in span if r % 2 == 0 for c in span if c % 2 == 0)
    in_grid = set(data)

    faces = []
    for a in range(-1, 2 * l, 2):
        for b in range(-1, 2 * l, 2):
            kind = face_kind(a, b)
            offsets = X_STEP_OFFSETS if kind == "X" else Z_STEP_OFFSETS
            slots = tuple(
                (a + dr, b + dc) if (a + dr, b + dc) in in_grid else None
                for dr, dc in offsets
            )
            n = sum(1 for s in slots if s is not None)
            if n == 4:
                pass  # interior face, always present
            elif n == 2:
                # Boundary faces exist only where their color matches the
                # edge: X on the left/right edges, Z on the top/bottom.
                if b in (-1, 2 * l - 1) and kind != "X":
                    continue
                if a in (-1, 2 * l - 1) and kind != "Z":
                    continue
            else:
                continue
            faces.append(Face(kind, (a, b), (_clamp(l, a), _clamp(l, b)), slots))
    layout = PatchLayout(l=l, data_qubits=data, faces=tuple(faces))
    assert layout.qubit_count() == 2 * l * l - 1
    assert layout.link_count() == 4 * l * (l - 1)
    return layout


def component_counts(l: int) -> tuple[int, int]:
    """(qubits, links) for a size-``l`` patch."""
    return 2 * l * l - 1, 4 * l * (l - 1)


def rotate180(l: int, coord: Coord) -> Coord:
    return (2 * l - 2 - coord[0], 2 * l - 2 - coord[1])


@dataclass(frozen=True)
class DefectMap:
    """Faulty components of one fabricated chiplet.

    Coordinates are public-frame; links are (syndrome, data) pairs.
    """

    l: int
    faulty_qubits: frozenset[Coord]
    faulty_links: frozenset[Link]
    seed: int | None = None

    def num_faulty(self) -> int:
        return len(self.faulty_qubits) + len(self.faulty_links)

    def to_json(self) -> str:
        payload = {
            "l": self.l,
            "faulty_qubits": sorted(list(q) for q in self.faulty_qubits),
            "faulty_links": sorted([list(s), list(d)] for s, d in self.faulty_links),
            "seed": self.seed,
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "DefectMap":
        payload = json.loads(text)
        l = int(payload["l"])
        qubits = frozenset((int(r), int(c)) for r, c in payload["faulty_qubits"])
        links = frozenset(
            ((int(s[0]), int(s[1])), (int(d[0]), int(d[1])))
            for s, d in payload["faulty_links"]
        )
        defects = cls(l=l, faulty_qubits=qubits, faulty_links=links,
                      seed=payload.get("seed"))
        validate_defects(build_patch(l), defects)
        return defects


def validate_defects(layout: PatchLayout, defects: DefectMap) -> None:
    """Raise ValueError if any defect references a missing component."""
    if defects.l != layout.l:
        raise ValueError(f"defect map is for l={defects.l}, layout is l={layout.l}")
    known = set(layout.data_qubits) | set(layout.syndrome_qubits)
    for q in defects.faulty_qubits:
        if q not in known:
            raise ValueError(f"faulty qubit {q} is not a component of the l={layout.l} patch")
    link_set = set(layout.links)
    for link in defects.faulty_links:
        if link not in link_set:
            raise ValueError(f"faulty link {link} is not a component of the l={layout.l} patch")


def sample_defects(
    layout: PatchLayout,
    model: DefectModel,
    rate: float,
    seed: int | None = None,
) -> DefectMap:
    """Draw one chiplet: each eligible component fails i.i.d. at ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"defect rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    links = layout.links
    link_hits = np.flatnonzero(rng.random(len(links)) < rate)
    faulty_links = frozenset(links[i] for i in link_hits)
    faulty_qubits: frozenset[Coord] = frozenset()
    if model is DefectModel.LINKS_AND_QUBITS:
        qubits = layout.data_qubits + layout.syndrome_qubits
        qubit_hits = np.flatnonzero(rng.random(len(qubits)) < rate)
        faulty_qubits = frozenset(qubits[i] for i in qubit_hits)
    return DefectMap(l=layout.l, faulty_qubits=faulty_qubits,
                     faulty_links=faulty_links, seed=seed)


def sample_many(
    layout: PatchLayout,
    model: DefectModel,
    rate: float,
    count: int,
    seed: int,
) -> Iterable[DefectMap]:
    """Independent chiplets with per-sample seed streams.

    Sample ``i`` is drawn from ``default_rng((seed, i))``, so any parallel
    partition of the index range reproduces the same chiplets.
    """
    for i in range(count):
        yield sample_defects(layout, model, rate, seed=_stream_seed(seed, i))


def _stream_seed(seed: int, index: int) -> int:
    # Collapse the (seed, index) pair into one integer so DefectMap.seed
    # stays JSON-scalar; SeedSequence gives well-spread streams.
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
