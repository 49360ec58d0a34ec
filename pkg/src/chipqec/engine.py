"""Monte Carlo logical-error estimation.

Three stages, all driven by the emitted circuit text/IR:

* :func:`extract_detector_model` propagates every single-Pauli fault of every
  noise channel through the Clifford circuit and records which detectors and
  observables it flips, merging identical mechanisms.
* :func:`sample_shots` runs a vectorized Pauli-frame simulation in fixed-size
  shot blocks, each block seeded from ``(seed, block index)`` so results are
  bitwise independent of how blocks are distributed over workers.
* :func:`decode_batch` runs exact minimum-weight perfect matching per shot,
  X-type and Z-type detectors decoded separately, with a boundary node.

X and Z frame components propagate independently through R/H/CX/M circuits,
so a mechanism's detector set splits cleanly by check side; the observable
flip rides with the side whose measurements it is built from.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from chipqec.adapt import AdaptedCode, Unusable
from chipqec.circuit import Circuit, NoiseModel, memory_circuit, stability_circuit
from chipqec.lattice import Coord

_BLOCK = 1 << 14
_WILSON_Z = 1.959963984540054  # 95%


@dataclass(frozen=True)
class Mechanism:
    probability: float
    detectors: tuple[int, ...]
    observable_flip: int


@dataclass(frozen=True)
class DetectorModel:
    num_detectors: int
    num_observables: int
    mechanisms: tuple[Mechanism, ...]
    sides: tuple[int, ...]  # per detector: 0 = Z-type check, 1 = X-type

    def arcs(self) -> dict[tuple[int, ...], tuple[float, int]]:
        """Matching arcs: (detector pair or single) -> (weight, obs parity).

        Weight is -log(q/(1-q)) for the combined arc probability.  When two
        mechanisms share endpoints but disagree on the observable, the more
        probable one defines the arc.
        """
        merged: dict[tuple[tuple[int, ...], int], float] = {}
        for m in self.mechanisms:
            if not m.detectors:
                continue
            key = (m.detectors, m.observable_flip)
            q0 = merged.get(key, 0.0)
            merged[key] = q0 * (1 - m.probability) + m.probability * (1 - q0)
        best: dict[tuple[int, ...], tuple[float, int]] = {}
        for (dets, obs), q in sorted(merged.items()):
            w = math.log((1 - q) / q)
            if dets not in best or w < best[dets][0]:
                best[dets] = (w, obs)
        return best


@dataclass(frozen=True)
class ShotBatch:
    shots: int
    detection_events: np.ndarray  # (shots, ceil(D/8)) packed bits
    observable_flips: np.ndarray  # (shots,) uint8
    seed: int
    num_detectors: int

    def unpacked(self) -> np.ndarray:
        if self.num_detectors == 0:
            return np.zeros((self.shots, 0), dtype=np.uint8)
        return np.unpackbits(
            self.detection_events, axis=1, count=self.num_detectors
        )


@dataclass(frozen=True)
class SlopeFit:
    alpha_d: float
    log_intercept: float
    r_squared: float
    points: tuple[tuple[float, float, tuple[float, float] | None], ...]


class InsufficientData(ValueError):
    """A fit or estimate saw zero failures where it needs a positive rate."""


# ----------------------------------------------------------- circuit walking


def _walk(circuit: Circuit):
    """Flatten once and collect structure shared by the DEM and the sampler."""
    insts = list(circuit.flat())
    n = circuit.num_qubits
    meas = 0
    detectors: list[tuple[tuple[int, ...], int]] = []  # (meas ids, side)
    observables: dict[int, list[int]] = {}
    for inst in insts:
        if inst.name == "M":
            meas += len(inst.targets)
        elif inst.name == "DETECTOR":
            side = int(inst.args[3]) if len(inst.args) > 3 else 0
            detectors.append((tuple(meas + t for t in inst.targets), side))
        elif inst.name == "OBSERVABLE_INCLUDE":
            observables.setdefault(int(inst.args[0]), []).extend(
                meas + t for t in inst.targets
            )
    return insts, n, meas, detectors, observables


def _channel_faults(inst) -> list[tuple[float, tuple[tuple[int, int, int], ...]]]:
    """Single-Pauli faults of one noise instruction as (prob, ((q,x,z),...))."""
    if inst.name not in ("X_ERROR", "DEPOLARIZE1", "DEPOLARIZE2"):
        return []
    p = inst.args[0]
    out = []
    if inst.name == "X_ERROR":
        for q in inst.targets:
            out.append((p, ((q, 1, 0),)))
    elif inst.name == "DEPOLARIZE1":
        for q in inst.targets:
            for x, z in ((1, 0), (1, 1), (0, 1)):
                out.append((p / 3, ((q, x, z),)))
    elif inst.name == "DEPOLARIZE2":
        for a, b in zip(inst.targets[::2], inst.targets[1::2]):
            for k in range(1, 16):
                pa, pb = k >> 2, k & 3
                fault = tuple(
                    (q, int(c in (1, 2)), int(c in (2, 3)))
                    for q, c in ((a, pa), (b, pb))
                    if c
                )
                out.append((p / 15, fault))
    return out


def extract_detector_model(circuit: Circuit) -> DetectorModel:
    """Propagate every channel's single-Pauli faults; merge; split by side."""
    insts, n, num_meas, detectors, observables = _walk(circuit)
    faults: list[tuple[int, float, tuple]] = []  # (instruction pos, prob, paulis)
    for t, inst in enumerate(insts):
        for prob, paulis in _channel_faults(inst):
            faults.append((t, prob, paulis))
    F = len(faults)
    fx = np.zeros((F, n), dtype=bool)
    fz = np.zeros((F, n), dtype=bool)
    meas_flip = np.zeros((F, num_meas), dtype=bool)
    activate: dict[int, list[int]] = {}
    for row, (t, _, _) in enumerate(faults):
        activate.setdefault(t, []).append(row)
    j = 0
    for t, inst in enumerate(insts):
        for row in activate.get(t, ()):
            for q, x, z in faults[row][2]:
                fx[row, q] ^= x
                fz[row, q] ^= z
        if inst.name == "R":
            fx[:, inst.targets] = False
            fz[:, inst.targets] = False
        elif inst.name == "H":
            for q in inst.targets:
                fx[:, q], fz[:, q] = fz[:, q].copy(), fx[:, q].copy()
        elif inst.name == "CX":
            for a, b in zip(inst.targets[::2], inst.targets[1::2]):
                fx[:, b] ^= fx[:, a]
                fz[:, a] ^= fz[:, b]
        elif inst.name == "M":
            for q in inst.targets:
                meas_flip[:, j] = fx[:, q]
                j += 1

    sides = tuple(side for _, side in detectors)
    det_flip = np.zeros((F, len(detectors)), dtype=bool)
    for d, (ms, _) in enumerate(detectors):
        det_flip[:, d] = np.logical_xor.reduce(meas_flip[:, list(ms)], axis=1)
    num_obs = max(observables, default=-1) + 1
    obs_flip = np.zeros((F, num_obs), dtype=bool)
    obs_side = {}
    for k, ms in observables.items():
        obs_flip[:, k] = np.logical_xor.reduce(meas_flip[:, ms], axis=1)
        carriers = {s for (dms, s) in detectors if set(dms) & set(ms)}
        obs_side[k] = carriers.pop() if len(carriers) == 1 else 0

    merged: dict[tuple[tuple[int, ...], int], float] = {}
    for row in range(F):
        dets = tuple(int(d) for d in np.flatnonzero(det_flip[row]))
        obs = int(obs_flip[row, 0]) if num_obs else 0
        prob = faults[row][1]
        if not dets and not obs:
            continue
        key = (dets, obs)
        q0 = merged.get(key, 0.0)
        merged[key] = q0 * (1 - prob) + prob * (1 - q0)

    split = _split_by_side(merged, sides, obs_side.get(0, 0))
    mechanisms = tuple(
        Mechanism(q, dets, obs)
        for (dets, obs), q in sorted(split.items())
        if 0.0 < q < 1.0
    )
    for m in mechanisms:
        if len(m.detectors) > 2:
            raise RuntimeError(
                f"undecomposable hyperedge: detectors {m.detectors} "
                f"(probability {m.probability:.3g})"
            )
    return DetectorModel(len(detectors), num_obs, mechanisms, sides)


def _split_by_side(merged, sides, obs_carrier_side):
    """Split mechanisms whose detectors span both check sides; attach the
    observable bit to the side its measurements belong to.  Parts that still
    exceed two detectors are decomposed along arcs that simple mechanisms
    already provide, or rejected."""
    out: dict[tuple[tuple[int, ...], int], float] = {}
    oversize: list[tuple[tuple[int, ...], int, float]] = []

    def add(dets, obs, prob):
        key = (tuple(dets), obs)
        q0 = out.get(key, 0.0)
        out[key] = q0 * (1 - prob) + prob * (1 - q0)

    for (dets, obs), q in merged.items():
        parts: dict[int, list[int]] = {}
        for d in dets:
            parts.setdefault(sides[d], []).append(d)
        if obs and obs_carrier_side not in parts:
            parts[obs_carrier_side] = []
        for side, part in parts.items():
            part_obs = obs if side == obs_carrier_side else 0
            if len(part) <= 2:
                add(part, part_obs, q)
            else:
                oversize.append((tuple(part), part_obs, q))
    for dets, obs, q in oversize:
        blocks = _decompose(dets, obs, set(k for k, _ in out.items()))
        if blocks is None:
            raise RuntimeError(
                f"undecomposable hyperedge: detectors {dets} "
                f"(probability {q:.3g})"
            )
        for block_dets, block_obs in blocks:
            add(block_dets, block_obs, q)
    return out


def _decompose(dets, obs, existing):
    """Partition ``dets`` into <=2-sized blocks that all exist as arcs, with
    observable parities XORing to ``obs``.  Returns the blocks or None."""
    dets = tuple(dets)
    if not dets:
        return [((), obs)] if ((), obs) in existing else None
    first, rest = dets[0], dets[1:]
    # try the single-detector (boundary) arc, then each pairing
    candidates = [((first,), rest)] + [
        (tuple(sorted((first, mate))), tuple(d for d in rest if d != mate))
        for mate in rest
    ]
    for block, remaining in candidates:
        for block_obs in (0, 1):
            if (block, block_obs) not in existing:
                continue
            tail = _decompose(remaining, obs ^ block_obs, existing)
            if tail is not None:
                return [(block, block_obs)] + tail
    return None


# ---------------------------------------------------------------- sampling


def _sample_block(insts, n, num_meas, detectors, observables, seed, block,
                  shots):
    rng = np.random.default_rng(np.random.SeedSequence([seed, block]))
    x = np.zeros((shots, n), dtype=bool)
    z = np.zeros((shots, n), dtype=bool)
    meas = np.zeros((shots, num_meas), dtype=bool)
    j = 0
    for inst in insts:
        name = inst.name
        if name == "CX":
            for a, b in zip(inst.targets[::2], inst.targets[1::2]):
                x[:, b] ^= x[:, a]
                z[:, a] ^= z[:, b]
        elif name == "M":
            for q in inst.targets:
                meas[:, j] = x[:, q]
                j += 1
        elif name == "R":
            x[:, inst.targets] = False
            z[:, inst.targets] = False
        elif name == "H":
            for q in inst.targets:
                x[:, q], z[:, q] = z[:, q].copy(), x[:, q].copy()
        elif name == "X_ERROR":
            p = inst.args[0]
            x[:, inst.targets] ^= rng.random((shots, len(inst.targets))) < p
        elif name == "DEPOLARIZE1":
            p = inst.args[0]
            u = rng.random((shots, len(inst.targets)))
            x[:, inst.targets] ^= u < 2 * p / 3
            z[:, inst.targets] ^= (u >= p / 3) & (u < p)
        elif name == "DEPOLARIZE2":
            p = inst.args[0]
            pairs = list(zip(inst.targets[::2], inst.targets[1::2]))
            u = rng.random((shots, len(pairs)))
            k = np.zeros(u.shape, dtype=np.int64)
            hit = u < p
            k[hit] = (u[hit] * (15 / p)).astype(np.int64) + 1
            for i, (a, b) in enumerate(pairs):
                ka, kb = k[:, i] >> 2, k[:, i] & 3
                x[:, a] ^= (ka == 1) | (ka == 2)
                z[:, a] ^= (ka == 2) | (ka == 3)
                x[:, b] ^= (kb == 1) | (kb == 2)
                z[:, b] ^= (kb == 2) | (kb == 3)
    events = np.zeros((shots, len(detectors)), dtype=bool)
    for d, (ms, _) in enumerate(detectors):
        events[:, d] = np.logical_xor.reduce(meas[:, list(ms)], axis=1)
    obs = np.zeros(shots, dtype=np.uint8)
    if observables:
        obs = np.logical_xor.reduce(
            meas[:, observables[0]], axis=1
        ).astype(np.uint8)
    return np.packbits(events, axis=1), obs


def sample_shots(circuit: Circuit, shots: int, seed: int,
                 workers: int = 1) -> ShotBatch:
    """Pauli-frame sampling in blocks of 2^14 shots; block ``i`` is seeded
    from ``(seed, i)``, so the result is a pure function of (circuit, shots,
    seed) regardless of ``workers``."""
    if shots < 1:
        raise ValueError(f"shots must be positive, got {shots}")
    insts, n, num_meas, detectors, observables = _walk(circuit)
    sizes = [min(_BLOCK, shots - s) for s in range(0, shots, _BLOCK)]
    args = [
        (insts, n, num_meas, detectors, observables, seed, i, b)
        for i, b in enumerate(sizes)
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _sample_block(*a), args))
    else:
        parts = [_sample_block(*a) for a in args]
    events = np.concatenate([p[0] for p in parts], axis=0)
    obs = np.concatenate([p[1] for p in parts])
    return ShotBatch(shots, events, obs, seed, len(detectors))


# ---------------------------------------------------------------- decoding


class _SideGraph:
    """Shortest-path structure for one check side of the detector graph."""

    def __init__(self, nodes: Sequence[int], arcs):
        self.nodes = list(nodes)
        adj: dict[int, list[tuple[int, float, int]]] = {d: [] for d in nodes}
        self.boundary: dict[int, tuple[float, int]] = {}
        for dets, (w, obs) in arcs.items():
            if len(dets) == 2:
                a, b = dets
                adj[a].append((b, w, obs))
                adj[b].append((a, w, obs))
            else:
                (d,) = dets
                cur = self.boundary.get(d)
                if cur is None or w < cur[0]:
                    self.boundary[d] = (w, obs)
        self._adj = adj
        self._cache: dict[int, tuple[dict[int, float], dict[int, int]]] = {}

    def paths_from(self, src: int):
        if src not in self._cache:
            dist = {src: 0.0}
            par = {src: 0}
            seen = set()
            heap = [(0.0, src, 0)]
            while heap:
                d, u, parity = heapq.heappop(heap)
                if u in seen:
                    continue
                seen.add(u)
                par[u] = parity
                for v, w, obs in self._adj[u]:
                    nd = d + w
                    if nd < dist.get(v, math.inf):
                        dist[v] = nd
                        heapq.heappush(heap, (nd, v, parity ^ obs))
            self._cache[src] = (dist, par)
        return self._cache[src]

    def pair(self, a: int, b: int) -> tuple[float, int]:
        dist, par = self.paths_from(a)
        if b not in dist or dist[b] == math.inf:
            return math.inf, 0
        return dist[b], par[b]

    def to_boundary(self, a: int) -> tuple[float, int]:
        dist, par = self.paths_from(a)
        best, parity = math.inf, 0
        for d, (w, obs) in self.boundary.items():
            if d in dist and dist[d] + w < best:
                best, parity = dist[d] + w, par[d] ^ obs
        return best, parity


def _match_events(graph: _SideGraph, events: tuple[int, ...]) -> int:
    """Exact MWPM of the events against each other and the boundary; returns
    the observable parity of the matched correction."""
    m = len(events)
    if m == 0:
        return 0
    pair_w = [[0.0] * m for _ in range(m)]
    pair_o = [[0] * m for _ in range(m)]
    bw, bo = [0.0] * m, [0] * m
    for i, e in enumerate(events):
        bw[i], bo[i] = graph.to_boundary(e)
        for k in range(i + 1, m):
            pair_w[i][k], pair_o[i][k] = graph.pair(e, events[k])
    unreachable = [
        events[i] for i in range(m)
        if bw[i] == math.inf and all(pair_w[min(i, k)][max(i, k)] == math.inf
                                     for k in range(m) if k != i)
    ]
    if unreachable:
        raise ValueError(
            f"detection event on detector {unreachable[0]} has no arcs in the model"
        )
    if m <= 16:
        return _match_dp(m, pair_w, pair_o, bw, bo)[1]
    return _match_blossom(m, pair_w, pair_o, bw, bo)[1]


def _match_dp(m, pair_w, pair_o, bw, bo) -> tuple[float, int]:
    full = (1 << m) - 1
    cost = {0: 0.0}
    parity = {0: 0}
    for mask in range(1, full + 1):
        i = (mask & -mask).bit_length() - 1
        rest = mask ^ (1 << i)
        best, best_par = bw[i] + cost[rest], bo[i] ^ parity[rest]
        sub = rest
        while sub:
            k = (sub & -sub).bit_length() - 1
            sub ^= 1 << k
            w = pair_w[i][k] + cost[rest ^ (1 << k)]
            if w < best:
                best = w
                best_par = pair_o[i][k] ^ parity[rest ^ (1 << k)]
        cost[mask] = best
        parity[mask] = best_par
    return cost[full], parity[full]


_UNREACHABLE = 1e7  # finite stand-in for inf; blossom rejects inf weights


def _match_blossom(m, pair_w, pair_o, bw, bo) -> tuple[float, int]:
    import networkx as nx

    def cap(w):
        return min(w, _UNREACHABLE)

    g = nx.Graph()
    for i in range(m):
        g.add_edge(("e", i), ("b", i), weight=cap(bw[i]))
        for k in range(i + 1, m):
            g.add_edge(("e", i), ("e", k), weight=cap(pair_w[i][k]))
            g.add_edge(("b", i), ("b", k), weight=0.0)
    matching = nx.min_weight_matching(g)
    parity = 0
    weight = 0.0
    for u, v in matching:
        (tu, iu), (tv, iv) = sorted((u, v))
        if tu == "e" and tv == "e":
            parity ^= pair_o[min(iu, iv)][max(iu, iv)]
            weight += cap(pair_w[min(iu, iv)][max(iu, iv)])
        elif tu == "b" and tv == "e" and iu == iv:
            parity ^= bo[iu]
            weight += cap(bw[iu])
    return weight, parity


def decode_batch(model: DetectorModel, batch: ShotBatch) -> np.ndarray:
    """Predicted observable flip per shot (exact matching, sides decoded
    independently, repeated syndromes decoded once)."""
    if batch.num_detectors != model.num_detectors:
        raise ValueError("batch and model disagree on detector count")
    arcs = model.arcs()
    graphs = {}
    for side in sorted(set(model.sides)):
        nodes = [d for d in range(model.num_detectors) if model.sides[d] == side]
        side_arcs = {dets: wo for dets, wo in arcs.items()
                     if all(model.sides[d] == side for d in dets)}
        graphs[side] = _SideGraph(nodes, side_arcs)
    events_matrix = batch.unpacked()
    out = np.zeros(batch.shots, dtype=np.uint8)
    cache: dict[bytes, int] = {}
    for s in range(batch.shots):
        row = events_matrix[s]
        key = row.tobytes()
        fired = cache.get(key)
        if fired is None:
            fired = 0
            hits = np.flatnonzero(row)
            for side, graph in graphs.items():
                ev = tuple(d for d in hits if model.sides[d] == side)
                fired ^= _match_events(graph, ev)
            cache[key] = fired
        out[s] = fired
    return out


# ---------------------------------------------------------------- estimates


def wilson_interval(k: int, n: int) -> tuple[float, float]:
    z = _WILSON_Z
    center = (k + z * z / 2) / (n + z * z)
    half = z * math.sqrt(k * (n - k) / n + z * z / 4) / (n + z * z)
    return (max(0.0, center - half), min(1.0, center + half))


def estimate_ler(
    code: AdaptedCode,
    noise: NoiseModel,
    rounds: int,
    shots: int,
    seed: int,
    workers: int = 1,
) -> tuple[float, tuple[float, float]]:
    """Memory-experiment logical error rate per shot with 95% Wilson CI."""
    if isinstance(code, Unusable):
        raise ValueError(f"cannot simulate an unusable patch: {code.reason}")
    circuit = memory_circuit(code, rounds, noise)
    model = extract_detector_model(circuit)
    batch = sample_shots(circuit, shots, seed, workers)
    predicted = decode_batch(model, batch)
    failures = int(np.sum(predicted ^ batch.observable_flips))
    return failures / shots, wilson_interval(failures, shots)


def fit_slope(
    points: Iterable[tuple[float, float] | tuple[float, float, tuple[float, float]]],
) -> SlopeFit:
    """Least-squares fit of log LER against log p over the conventional
    window p in [5e-4, 2e-3]."""
    rows = []
    for pt in points:
        p, ler = pt[0], pt[1]
        ci = pt[2] if len(pt) > 2 else None
        if not 5e-4 <= p <= 2e-3:
            raise ValueError(f"p={p} outside the fit window [5e-4, 2e-3]")
        if ler <= 0:
            raise InsufficientData(
                f"LER at p={p} is {ler}; need more shots for a log-log fit"
            )
        rows.append((p, ler, ci))
    if len(rows) < 3:
        raise ValueError(f"need at least 3 points, got {len(rows)}")
    lx = np.log([r[0] for r in rows])
    ly = np.log([r[1] for r in rows])
    slope, intercept = np.polyfit(lx, ly, 1)
    residuals = ly - (slope * lx + intercept)
    total = ly - ly.mean()
    r2 = 1.0 - float(residuals @ residuals) / float(total @ total) \
        if float(total @ total) > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2, tuple(rows))


@dataclass(frozen=True)
class StabilityRow:
    p: float
    ler_keep: float
    ci_keep: tuple[float, float]
    ler_disable: float
    ci_disable: tuple[float, float]


def stability_compare(
    l: int,
    bad_qubit: Coord,
    bad_p: float,
    good_ps: Sequence[float],
    rounds: int,
    shots: int,
    seed: int,
    workers: int = 1,
) -> list[StabilityRow]:
    """Keep-the-bad-qubit versus disable-it stability LER, per good rate."""
    rows = []
    for i, p in enumerate(good_ps):
        results = {}
        for disable in (False, True):
            circuit = stability_circuit(
                l, rounds, NoiseModel(p),
                bad_qubit=(bad_qubit, bad_p / p), disable_bad=disable,
            )
            model = extract_detector_model(circuit)
            batch = sample_shots(circuit, shots, seed + 7919 * i + disable,
                                 workers)
            predicted = decode_batch(model, batch)
            failures = int(np.sum(predicted ^ batch.observable_flips))
            results[disable] = (failures / shots, wilson_interval(failures, shots))
        rows.append(StabilityRow(p, *results[False], *results[True]))
    return rows
