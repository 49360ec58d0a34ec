"""Noisy syndrome-extraction circuits for adapted codes.

Circuits are emitted in a stim-style text format: named instructions, a
``DETECTOR``/``OBSERVABLE_INCLUDE`` annotation layer over the measurement
record, and ``REPEAT`` blocks in the grammar.  The noise model attaches a
two-qubit depolarizing channel after every CX, a one-qubit channel after
every H, and a classical flip before every measurement; resets are
noiseless.

Detector layout around super-stabilizers: within a gauge block the same
gauge is compared round to round; across blocks only the member *product*
is compared, pairing each block's first-round outcomes with the previous
same-type block's last-round outcomes.  That pairing keeps every single
circuit fault on at most two detectors per check side, so the minimum-weight
matching decoder needs no hyperedge gymnastics.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from chipqec.adapt import (
    AdaptedCode,
    DefectCluster,
    GaugeOperator,
    Stabilizer,
    Unusable,
    build_schedule,
)
from chipqec.lattice import (
    Coord,
    Face,
    X_STEP_OFFSETS,
    Z_STEP_OFFSETS,
    _clamp,
    face_kind,
)

GATE_NAMES = ("R", "H", "CX", "M")
NOISE_NAMES = ("X_ERROR", "DEPOLARIZE1", "DEPOLARIZE2")
ANNOTATION_NAMES = ("DETECTOR", "OBSERVABLE_INCLUDE", "QUBIT_COORDS")


@dataclass(frozen=True)
class Instruction:
    """One circuit line.  Targets are qubit indices, except for detector
    annotations, whose targets are negative measurement-record offsets."""

    name: str
    targets: tuple[int, ...]
    args: tuple[float, ...] = ()


@dataclass(frozen=True)
class RepeatBlock:
    repetitions: int
    body: tuple["Instruction | RepeatBlock", ...]


@dataclass(frozen=True)
class Circuit:
    instructions: tuple["Instruction | RepeatBlock", ...]

    def flat(self) -> Iterator[Instruction]:
        """Instructions with every REPEAT block unrolled."""
        for inst in self.instructions:
            if isinstance(inst, RepeatBlock):
                body = Circuit(inst.body)
                for _ in range(inst.repetitions):
                    yield from body.flat()
            else:
                yield inst

    @property
    def num_qubits(self) -> int:
        highest = -1
        for inst in self.flat():
            if inst.name in GATE_NAMES or inst.name in NOISE_NAMES:
                highest = max(highest, max(inst.targets, default=-1))
            elif inst.name == "QUBIT_COORDS":
                highest = max(highest, inst.targets[0])
        return highest + 1

    @property
    def num_measurements(self) -> int:
        return sum(len(i.targets) for i in self.flat() if i.name == "M")

    @property
    def num_detectors(self) -> int:
        return sum(1 for i in self.flat() if i.name == "DETECTOR")

    @property
    def num_observables(self) -> int:
        ids = {int(i.args[0]) for i in self.flat()
               if i.name == "OBSERVABLE_INCLUDE"}
        return max(ids, default=-1) + 1

    def qubit_coords(self) -> dict[int, tuple[float, ...]]:
        return {i.targets[0]: i.args for i in self.flat()
                if i.name == "QUBIT_COORDS"}


@dataclass(frozen=True)
class NoiseModel:
    """Three-parameter circuit noise with optional per-qubit scaling.

    ``p`` is the two-qubit gate error; one-qubit and readout errors default
    to the fixed ratios ``0.8 p`` and ``(8/15) p``.  ``overrides`` maps a
    qubit coordinate to a multiplier applied to every rate of every gate
    touching that qubit (two-qubit gates take the larger endpoint factor).
    ``idle`` is an absolute extra depolarizing rate applied once per round
    to data qubits that no gate touched; it defaults to off.
    """

    p: float
    p1: float | None = None
    pm: float | None = None
    idle: float = 0.0
    overrides: Mapping[Coord, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"two-qubit error rate must be in [0,1], got {self.p}")
        for q, s in self.overrides.items():
            if s < 0:
                raise ValueError(f"negative noise scale {s} for qubit {q}")

    def _scale(self, q: Coord) -> float:
        return self.overrides.get(q, 1.0)

    def one_qubit(self, q: Coord) -> float:
        base = 0.8 * self.p if self.p1 is None else self.p1
        return _checked(base * self._scale(q))

    def two_qubit(self, a: Coord, b: Coord) -> float:
        return _checked(self.p * max(self._scale(a), self._scale(b)))

    def readout(self, q: Coord) -> float:
        base = self.p * 8.0 / 15.0 if self.pm is None else self.pm
        return _checked(base * self._scale(q))


def _checked(rate: float) -> float:
    if rate > 1.0:
        raise ValueError(f"noise override pushed a rate above 1: {rate}")
    return rate


class _Emitter:
    """Accumulates instructions and measurement-record bookkeeping."""

    def __init__(self, coords: Sequence[Coord]):
        self.index = {q: i for i, q in enumerate(sorted(coords))}
        self.instructions: list[Instruction] = [
            Instruction("QUBIT_COORDS", (i,), (float(q[0]), float(q[1])))
            for q, i in sorted(self.index.items(), key=lambda kv: kv[1])
        ]
        self.measurements = 0

    def gate(self, name: str, qubits: Sequence[Coord]) -> None:
        if qubits:
            self.instructions.append(
                Instruction(name, tuple(self.index[q] for q in qubits))
            )

    def noise(self, name: str, rated: Sequence[tuple[float, Coord]]) -> None:
        """Emit noise grouped by rate, preserving first-seen rate order."""
        groups: dict[float, list[Coord]] = {}
        for rate, q in rated:
            if rate > 0.0:
                groups.setdefault(rate, []).append(q)
        for rate, qs in groups.items():
            self.instructions.append(
                Instruction(name, tuple(self.index[q] for q in qs), (rate,))
            )

    def noise2(self, rated_pairs: Sequence[tuple[float, Coord, Coord]]) -> None:
        groups: dict[float, list[Coord]] = {}
        for rate, a, b in rated_pairs:
            if rate > 0.0:
                groups.setdefault(rate, []).extend((a, b))
        for rate, qs in groups.items():
            self.instructions.append(
                Instruction("DEPOLARIZE2",
                            tuple(self.index[q] for q in qs), (rate,))
            )

    def measure(self, rated: Sequence[tuple[float, Coord]]) -> list[int]:
        self.noise("X_ERROR", rated)
        self.gate("M", [q for _, q in rated])
        out = list(range(self.measurements, self.measurements + len(rated)))
        self.measurements += len(rated)
        return out

    def detector(self, recs: Iterable[int], args: tuple[float, ...]) -> None:
        offsets = tuple(sorted(r - self.measurements for r in recs))
        self.instructions.append(Instruction("DETECTOR", offsets, args))

    def observable(self, recs: Iterable[int]) -> None:
        offsets = tuple(sorted(r - self.measurements for r in recs))
        self.instructions.append(
            Instruction("OBSERVABLE_INCLUDE", offsets, (0.0,))
        )


def _xor_support(gauges: Sequence[GaugeOperator]) -> tuple[Coord, ...]:
    seen: set[Coord] = set()
    for g in gauges:
        seen ^= set(g.support)
    return tuple(sorted(seen))


_SIDE = {"Z": 0.0, "X": 1.0}


def _emit_experiment(
    data: Sequence[Coord],
    plains: Sequence[Stabilizer],
    clusters: Sequence[DefectCluster],
    schedule,
    rounds: int,
    noise: NoiseModel,
    observable_path: Sequence[Coord] | None,
) -> Circuit:
    """Shared body of the memory and stability experiments.

    Both initialize and measure data in the Z basis.  ``observable_path``
    selects the memory observable (final data parities along the path);
    ``None`` selects the stability observable: the product of every X-type
    outcome in the last round where all X operators were measured.
    """
    if rounds < 1:
        raise ValueError(f"need at least one round, got {rounds}")
    data = sorted(data)
    ops: dict[Coord, tuple[str, tuple[Coord | None, ...]]] = {}
    gauge_cluster: dict[Coord, int] = {}
    members: dict[tuple[int, str], tuple[GaugeOperator, ...]] = {}
    for p in plains:
        ops[p.home] = (p.kind, p.slots)
    for c in clusters:
        members[(c.index, "X")] = c.x_gauges
        members[(c.index, "Z")] = c.z_gauges
        for g in c.x_gauges + c.z_gauges:
            ops[g.home] = (g.kind, g.slots)
            gauge_cluster[g.home] = c.index

    em = _Emitter(list(data) + list(ops))
    em.gate("R", data)

    meas_at: dict[tuple[Coord, int], int] = {}
    last_meas: dict[Coord, tuple[int, int]] = {}
    block_last: dict[tuple[int, str], list[int]] = {}

    for r in range(rounds):
        round_ops = schedule.rounds[r % schedule.period]
        homes = [h for h, _ in round_ops]
        x_homes = [h for h, b in round_ops if b == "X"]
        em.gate("R", homes)
        em.gate("H", x_homes)
        em.noise("DEPOLARIZE1", [(noise.one_qubit(h), h) for h in x_homes])
        touched = set(homes)
        for step in range(4):
            pairs = []
            for h, b in round_ops:
                q = ops[h][1][step]
                if q is None:
                    continue
                touched.add(q)
                pairs.append((noise.two_qubit(h, q),) + ((h, q) if b == "X" else (q, h)))
            em.gate("CX", [q for _, a, b in pairs for q in (a, b)])
            em.noise2(pairs)
        em.gate("H", x_homes)
        em.noise("DEPOLARIZE1", [(noise.one_qubit(h), h) for h in x_homes])
        if noise.idle > 0.0:
            em.noise("DEPOLARIZE1",
                     [(noise.idle, q) for q in data if q not in touched])
        recs = em.measure([(noise.readout(h), h) for h in homes])
        for (h, b), cur in zip(round_ops, recs):
            meas_at[(h, r)] = cur
            prev = last_meas.get(h)
            args = (float(h[0]), float(h[1]), float(r), _SIDE[b])
            if h not in gauge_cluster:
                if r == 0:
                    if b == "Z":
                        em.detector([cur], args)
                else:
                    em.detector([cur, prev[1]], args)
            elif prev is not None and prev[0] == r - 1:
                em.detector([cur, prev[1]], args)
            last_meas[h] = (r, cur)
        for c in clusters:
            k = c.diameter
            s = r % (2 * k)
            b = "X" if s < k else "Z"
            mem = members[(c.index, b)]
            if s == 0 or s == k:  # block start: compare member products
                first = [meas_at[(g.home, r)] for g in mem]
                prev_block = block_last.get((c.index, b))
                args = (float(mem[0].home[0]), float(mem[0].home[1]),
                        float(r), _SIDE[b])
                if prev_block is not None:
                    em.detector(first + prev_block, args)
                elif b == "Z":
                    em.detector(first, args)
            if s == k - 1 or s == 2 * k - 1 or r == rounds - 1:  # block end
                block_last[(c.index, b)] = [meas_at[(g.home, r)] for g in mem]

    data_rec = dict(zip(data, em.measure([(noise.readout(q), q) for q in data])))
    for p in plains:
        if p.kind == "Z":
            em.detector(
                [last_meas[p.home][1]] + [data_rec[q] for q in p.support],
                (float(p.home[0]), float(p.home[1]), float(rounds), 0.0),
            )
    for c in clusters:
        zmem = members[(c.index, "Z")]
        recs = list(block_last.get((c.index, "Z"), []))
        recs += [data_rec[q] for q in _xor_support(zmem)]
        em.detector(recs, (float(zmem[0].home[0]), float(zmem[0].home[1]),
                           float(rounds), 0.0))

    if observable_path is not None:
        em.observable([data_rec[q] for q in observable_path])
    else:
        r_obs = max(
            r for r in range(rounds)
            if all(r % (2 * c.diameter) < c.diameter for c in clusters)
        )
        recs = [meas_at[(p.home, r_obs)] for p in plains if p.kind == "X"]
        for c in clusters:
            recs += [meas_at[(g.home, r_obs)] for g in members[(c.index, "X")]]
        em.observable(recs)
    return Circuit(tuple(em.instructions))


def memory_circuit(code: AdaptedCode, rounds: int, noise: NoiseModel) -> Circuit:
    """Logical-Z memory experiment: Z-basis init, ``rounds`` schedule rounds
    of extraction, transversal Z readout, observable along the surviving
    logical path."""
    if isinstance(code, Unusable):
        raise ValueError(f"cannot emit a circuit for an unusable patch: {code.reason}")
    return _emit_experiment(
        data=sorted(code.active_data),
        plains=code.plain_stabilizers,
        clusters=code.clusters,
        schedule=code.schedule,
        rounds=rounds,
        noise=noise,
        observable_path=code.observable_path,
    )


def stability_patch(l: int) -> tuple[tuple[Coord, ...], tuple[Face, ...]]:
    """Geometry whose four boundaries all host X-type checks.

    Even ``l`` uses the full grid; odd ``l`` drops the two anti-diagonal
    corner data qubits, which otherwise sit in an odd number of X checks.
    The product of all X checks is then the identity, which is the
    redundancy the stability experiment tracks.
    """
    if l < 2:
        raise ValueError(f"stability patch needs l >= 2, got {l}")
    last = 2 * l - 2
    removed = set() if l % 2 == 0 else {(0, last), (last, 0)}
    span = range(0, 2 * l - 1, 2)
    data = tuple((r, c) for r in span for c in span if (r, c) not in removed)
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
            boundary = a in (-1, 2 * l - 1) or b in (-1, 2 * l - 1)
            if n >= 3 or (n == 2 and boundary and kind == "X"):
                faces.append(Face(kind, (a, b), (_clamp(l, a), _clamp(l, b)), slots))
    parity: set[Coord] = set()
    for f in faces:
        if f.kind == "X":
            parity ^= set(f.data)
    assert not parity, "X checks of the stability patch must multiply to identity"
    return data, tuple(faces)


def stability_circuit(
    l: int,
    rounds: int,
    noise: NoiseModel,
    bad_qubit: tuple[Coord, float] | None = None,
    disable_bad: bool = False,
) -> Circuit:
    """Stability experiment: all-X boundaries; the observable is the product
    of every X-type outcome in one round, deterministic because those checks
    multiply to the identity.

    ``bad_qubit = (coord, scale)`` marks one data qubit whose gates and
    readout run at ``scale`` times the base rates; with ``disable_bad`` the
    qubit is instead removed and its checks become a super-stabilizer pair.
    """
    data, faces = stability_patch(l)
    if bad_qubit is not None and bad_qubit[0] not in data:
        raise ValueError(f"bad qubit {bad_qubit[0]} is not a data qubit of the patch")

    clusters: tuple[DefectCluster, ...] = ()
    if bad_qubit is not None and disable_bad:
        q = bad_qubit[0]
        gauges = {"X": [], "Z": []}
        plains = []
        for f in faces:
            if q in f.data:
                slots = tuple(None if s == q else s for s in f.slots)
                g = GaugeOperator(f.kind, f.public, slots)
                if len(g.support) < 2:
                    raise ValueError(f"disabling {q} leaves a weight-1 check at {f.public}")
                gauges[f.kind].append(g)
            else:
                plains.append(Stabilizer(f.kind, f.public, f.slots))
        if not gauges["X"] or not gauges["Z"]:
            raise ValueError(f"qubit {q} is not enclosed by both check types")
        clusters = (DefectCluster(0, (q,), 1,
                                  tuple(gauges["X"]), tuple(gauges["Z"])),)
        data = tuple(d for d in data if d != q)
    else:
        plains = [Stabilizer(f.kind, f.public, f.slots) for f in faces]
        if bad_qubit is not None:
            noise = NoiseModel(
                p=noise.p, p1=noise.p1, pm=noise.pm, idle=noise.idle,
                overrides={**dict(noise.overrides), bad_qubit[0]: bad_qubit[1]},
            )

    supers = [c.super_stabilizer(k) for c in clusters for k in ("X", "Z")]
    schedule = build_schedule(supers, plains)
    return _emit_experiment(
        data=data,
        plains=tuple(plains),
        clusters=clusters,
        schedule=schedule,
        rounds=rounds,
        noise=noise,
        observable_path=None,
    )


# ----------------------------------------------------------------- text I/O

_REC = re.compile(r"^rec\[(-\d+)\]$")
_HEAD = re.compile(r"^([A-Z_0-9]+)\s*(?:\(([^)]*)\))?\s*(.*)$")


def _format_arg(a: float) -> str:
    return str(int(a)) if a == int(a) else repr(a)


def _emit_lines(items: Sequence[Instruction | RepeatBlock], indent: str,
                out: list[str]) -> None:
    for inst in items:
        if isinstance(inst, RepeatBlock):
            out.append(f"{indent}REPEAT {inst.repetitions} {{")
            _emit_lines(inst.body, indent + "    ", out)
            out.append(f"{indent}}}")
            continue
        head = inst.name
        if inst.args:
            head += "(" + ", ".join(_format_arg(a) for a in inst.args) + ")"
        if inst.name in ("DETECTOR", "OBSERVABLE_INCLUDE"):
            tail = " ".join(f"rec[{t}]" for t in inst.targets)
        else:
            tail = " ".join(str(t) for t in inst.targets)
        out.append(f"{indent}{head} {tail}".rstrip())


def emit_text(circuit: Circuit) -> str:
    """Render to the stim-style text format (LF lines, stable ordering)."""
    lines: list[str] = []
    _emit_lines(circuit.instructions, "", lines)
    return "\n".join(lines) + ("\n" if lines else "")


def parse_text(text: str) -> Circuit:
    """Inverse of :func:`emit_text`; raises ValueError on malformed input."""
    stack: list[list[Instruction | RepeatBlock]] = [[]]
    reps: list[int] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "}":
            if not reps:
                raise ValueError("unmatched '}'")
            body = stack.pop()
            stack[-1].append(RepeatBlock(reps.pop(), tuple(body)))
            continue
        if line.startswith("REPEAT"):
            m = re.match(r"^REPEAT\s+(\d+)\s*\{$", line)
            if not m:
                raise ValueError(f"malformed REPEAT line: {raw!r}")
            reps.append(int(m.group(1)))
            stack.append([])
            continue
        m = _HEAD.match(line)
        if not m:
            raise ValueError(f"unparseable line: {raw!r}")
        name, argtext, tailtext = m.group(1), m.group(2), m.group(3)
        if name not in GATE_NAMES + NOISE_NAMES + ANNOTATION_NAMES:
            raise ValueError(f"unknown instruction {name!r}")
        args = tuple(float(a) for a in argtext.split(",")) if argtext else ()
        targets = []
        for tok in tailtext.split():
            rec = _REC.match(tok)
            if rec:
                targets.append(int(rec.group(1)))
            else:
                targets.append(int(tok))
        stack[-1].append(Instruction(name, tuple(targets), args))
    if reps:
        raise ValueError("unterminated REPEAT block")
    return Circuit(tuple(stack[0]))
