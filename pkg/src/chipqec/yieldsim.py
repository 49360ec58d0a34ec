"""Population-level Monte Carlo: chiplet post-selection and its consequences.

Everything here treats one fabricated chiplet as one i.i.d. draw of a defect
map.  A selection policy decides which chiplets are mounted; the survivors
determine yield, the physical-qubit overhead per delivered logical qubit,
the distribution of achieved code distance, and finally the fidelity of a
large application run on the assembled device.

Chiplet evaluations are independent, so all estimators parallelise as a map
over sample indices with per-sample seeds; aggregation is associative and
results do not depend on the worker count.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from chipqec.adapt import AdaptedCode, Unusable, adapt_code, reassign_roles
from chipqec.engine import wilson_interval
from chipqec.lattice import (
    DefectMap,
    DefectModel,
    PatchLayout,
    build_patch,
    sample_defects,
)
from chipqec.metrics import (
    PatchMetrics,
    baseline_count,
    code_distance,
    compute_metrics,
    count_min_weight_logicals,
    meets_standard,
)

TIE_BREAKS = ("none", "operator_count")
BASELINES = ("indicator_based", "fewest_faulty", "defect_free_only")

# Footprint of the reference application: a 226x63 grid of distance-27
# patches running 2.5e10 syndrome cycles at physical error rate 1e-3.
SHOR_PATCHES = 226 * 63
SHOR_CYCLES = 2.5e10
SHOR_P = 1e-3
SHOR_D = 27

# Chiplet sizes used for the reference resource tables, per defect rate.
SHOR_CHIPLET = {0.001: 33, 0.003: 39}

# Monolithic baselines mix two chiplet sizes to match the modular overhead.
MONOLITHIC_MIXES = {
    0.001: ((33, 0.53), (35, 0.47)),
    0.003: ((39, 0.47), (41, 0.53)),
}

# Topological-error fit: per-round logical error of a distance-d patch.
_EPS_COEFF = 0.1
_EPS_P_TH = 1e-2


def topological_error(d: int, p_phys: float) -> float:
    """Per-patch-round logical error rate of a distance-``d`` patch."""
    return _EPS_COEFF * (p_phys / _EPS_P_TH) ** ((d + 1) / 2)


@dataclass(frozen=True)
class SelectionPolicy:
    """Accept/reject rule applied to each fabricated chiplet.

    ``indicator_based`` uses the code distance of the adapted patch, with
    the minimum-weight operator count as an optional tie-break at exactly
    ``d_target``.  ``fewest_faulty`` is the natural baseline that only
    counts broken components: the fault budget is the distance margin
    ``l - d_target``, so at zero margin it degenerates to rejecting any
    fault.  ``defect_free_only`` accepts only chiplets whose adapted code
    required no deformation at all.  ``allow_rotation`` lets a rejected
    chiplet be remounted with data/syndrome roles exchanged and accepted
    if the other orientation passes.
    """

    d_target: int
    tie_break: str = "operator_count"
    allow_rotation: bool = False
    boundary_standard: int | None = None
    baseline: str = "indicator_based"

    def __post_init__(self) -> None:
        if self.d_target < 2:
            raise ValueError(f"d_target must be at least 2, got {self.d_target}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}")
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        if self.boundary_standard not in (None, 1, 2, 3, 4):
            raise ValueError("boundary_standard must be None or 1..4")


@dataclass(frozen=True)
class YieldReport:
    """Monte Carlo acceptance summary for one (l, model, rate, policy)."""

    l: int
    model: DefectModel
    rate: float
    d_target: int
    samples: int
    accepted: int
    ci: tuple[float, float]
    histogram: dict[int, int]
    accepted_histogram: dict[int, int]

    @property
    def yield_(self) -> float:
        return self.accepted / self.samples

    @property
    def overhead_factor(self) -> float:
        """Fabricated physical qubits per delivered logical qubit,
        relative to the defect-free patch of the target distance."""
        if self.accepted == 0:
            return math.inf
        ideal = 2 * self.d_target**2 - 1
        return (2 * self.l**2 - 1) / (ideal * self.yield_)


@dataclass(frozen=True)
class FidelityEstimate:
    patches: int
    cycles: float
    p_phys: float
    distribution: dict[int, float]
    patch_round_error: float
    fidelity: float


@dataclass(frozen=True)
class ShorRow:
    label: str
    l: int
    yield_: float
    overhead: float
    total_qubits: float


def defect_free_yield(l: int, model: DefectModel, rate: float) -> float:
    """Closed-form probability that a chiplet has no faulty component."""
    components = 4 * l * (l - 1)
    if DefectModel(model) is DefectModel.LINKS_AND_QUBITS:
        components += 2 * l**2 - 1
    return (1.0 - rate) ** components


def _passes_code(
    code: AdaptedCode,
    policy: SelectionPolicy,
    d_x: int,
    d_z: int,
    num_faulty: int,
) -> bool:
    """Acceptance for one adapted orientation, distances precomputed.

    Mirrors ``metrics.accepts`` for the indicator policy; kept inline so
    the distance computation is shared with the histogram bookkeeping.
    """
    if policy.baseline == "defect_free_only":
        # empty deformation: every fabricated qubit still in service
        ok = len(code.active_data) == len(code.layout.data_qubits) and len(
            code.active_syndrome
        ) == len(code.layout.faces)
    elif policy.baseline == "fewest_faulty":
        ok = num_faulty <= max(0, code.layout.l - policy.d_target)
    else:
        ok = min(d_x, d_z) >= policy.d_target
        if ok and policy.tie_break == "operator_count":
            if d_x == policy.d_target:
                ok = count_min_weight_logicals(code, "X") <= baseline_count(
                    policy.d_target, "X"
                )
            if ok and d_z == policy.d_target:
                ok = count_min_weight_logicals(code, "Z") <= baseline_count(
                    policy.d_target, "Z"
                )
    if ok and policy.boundary_standard is not None:
        ok = meets_standard(code, policy.boundary_standard, policy.d_target)
    return ok


def _assess_orientation(
    layout: PatchLayout,
    defects: DefectMap,
    policy: SelectionPolicy,
    num_faulty: int,
) -> tuple[bool, int]:
    code = adapt_code(layout, defects)
    if isinstance(code, Unusable):
        return False, 0
    d_x = code_distance(code, "X")
    d_z = code_distance(code, "Z")
    return _passes_code(code, policy, d_x, d_z, num_faulty), min(d_x, d_z)


def _assess(
    layout: PatchLayout, defects: DefectMap, policy: SelectionPolicy
) -> tuple[bool, int]:
    """Accept decision plus min-axis distance of the mounted orientation."""
    num_faulty = defects.num_faulty()
    ok, d = _assess_orientation(layout, defects, policy, num_faulty)
    if ok or not policy.allow_rotation:
        return ok, d
    ok2, d2 = _assess_orientation(layout, reassign_roles(defects), policy, num_faulty)
    return ok2, d2 if ok2 else max(d, d2)


def evaluate_chiplet(
    l: int, defects: DefectMap, policy: SelectionPolicy
) -> tuple[bool, PatchMetrics | None]:
    """Full per-chiplet assessment: accept flag plus patch metrics.

    With rotation allowed, both role assignments are evaluated and the
    metrics of the accepted orientation are returned; a chiplet whose
    every orientation is unusable yields ``None``.
    """
    layout = build_patch(l)
    num_faulty = defects.num_faulty()
    maps = [defects]
    if policy.allow_rotation:
        maps.append(reassign_roles(defects))
    fallback = None
    for mounted in maps:
        code = adapt_code(layout, mounted)
        if isinstance(code, Unusable):
            continue
        metrics = compute_metrics(code, policy.d_target)
        if _passes_code(code, policy, metrics.d_x, metrics.d_z, num_faulty):
            return True, metrics
        if fallback is None:
            fallback = metrics
    return False, fallback


def _draw(
    layout: PatchLayout, model: DefectModel, rate: float, entropy: tuple[int, ...]
) -> DefectMap:
    words = np.random.SeedSequence(list(entropy)).generate_state(2)
    return sample_defects(layout, model, rate, seed=int(words[0]) << 32 | int(words[1]))


def _min_axis_d(layout: PatchLayout, defects: DefectMap) -> int:
    code = adapt_code(layout, defects)
    if isinstance(code, Unusable):
        return 0
    return min(code_distance(code, "X"), code_distance(code, "Z"))


def _tally_range(
    l: int,
    model: DefectModel,
    rate: float,
    policy: SelectionPolicy | None,
    entropy: tuple[int, ...],
    with_hist: bool,
    start: int,
    stop: int,
) -> tuple[int, Counter, Counter]:
    layout = build_patch(l)
    # Any fault disables at least the qubit it resolves to, so when no
    # histogram is wanted the zero-deformation rule needs no adaptation.
    fast = policy is not None and policy.baseline == "defect_free_only" and not with_hist
    n = stop - start
    if rate == 0.0 and n > 0:
        # A zero rate draws the same empty map every sample; score it once.
        if fast:
            return n, Counter(), Counter()
        empty = DefectMap(l, (), ())
        if policy is None:
            ok, d = False, _min_axis_d(layout, empty)
        else:
            ok, d = _assess(layout, empty, policy)
        return n * ok, Counter({d: n}), Counter({d: n}) if ok else Counter()
    accepted = 0
    full: Counter = Counter()
    kept: Counter = Counter()
    for i in range(start, stop):
        defects = _draw(layout, model, rate, entropy + (i,))
        if fast:
            accepted += defects.num_faulty() == 0
            continue
        if policy is None:
            ok, d = False, _min_axis_d(layout, defects)
        else:
            ok, d = _assess(layout, defects, policy)
        accepted += ok
        full[d] += 1
        if ok:
            kept[d] += 1
    return accepted, full, kept


def _tally(
    l: int,
    model: DefectModel,
    rate: float,
    policy: SelectionPolicy | None,
    samples: int,
    entropy: tuple[int, ...],
    workers: int,
    with_hist: bool,
) -> tuple[int, Counter, Counter]:
    if workers <= 1:
        return _tally_range(l, model, rate, policy, entropy, with_hist, 0, samples)
    bounds = np.linspace(0, samples, 4 * workers + 1).astype(int)
    accepted = 0
    full: Counter = Counter()
    kept: Counter = Counter()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(
                _tally_range, l, model, rate, policy, entropy, with_hist, int(a), int(b)
            )
            for a, b in zip(bounds, bounds[1:])
            if a < b
        ]
        for future in futures:
            n, h, k = future.result()
            accepted += n
            full += h
            kept += k
    return accepted, full, kept


def _check_sampling(samples: int, seed: int) -> None:
    if samples < 1:
        raise ValueError(f"need at least one sample, got {samples}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")


def yield_curve(
    l: int,
    model: DefectModel,
    rates: list[float],
    policy: SelectionPolicy,
    samples: int = 10_000,
    seed: int = 0,
    workers: int = 1,
    histogram: bool = True,
) -> list[YieldReport]:
    """Monte Carlo acceptance rate per defect rate, with binomial CI.

    ``histogram=False`` skips the per-sample distance computation; the
    returned reports then carry empty histograms.
    """
    model = DefectModel(model)
    _check_sampling(samples, seed)
    reports = []
    for k, rate in enumerate(rates):
        accepted, full, kept = _tally(
            l, model, rate, policy, samples, (seed, k), workers, histogram
        )
        reports.append(
            YieldReport(
                l=l,
                model=model,
                rate=rate,
                d_target=policy.d_target,
                samples=samples,
                accepted=accepted,
                ci=wilson_interval(accepted, samples),
                histogram=dict(sorted(full.items())),
                accepted_histogram=dict(sorted(kept.items())),
            )
        )
    return reports


def optimal_chiplet(
    l_range: list[int],
    model: DefectModel,
    rate: float,
    policy: SelectionPolicy,
    samples: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> tuple[int, float]:
    """Chiplet size minimising overhead at one defect rate.

    All sizes share the same sample seeds (common random numbers), which
    steadies the argmin without biasing any single estimate.
    """
    sizes = list(l_range)
    if not sizes:
        raise ValueError("empty chiplet size range")
    best: tuple[float, int] | None = None
    for l in sizes:
        (report,) = yield_curve(
            l, model, [rate], policy, samples, seed, workers, histogram=False
        )
        key = (report.overhead_factor, l)
        if best is None or key < best:
            best = key
    return best[1], best[0]


def distance_distribution(
    l: int,
    model: DefectModel,
    rate: float,
    samples: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> dict[int, int]:
    """Histogram of the min-axis distance over the whole population.

    Unusable chiplets are recorded as distance 0.  No selection policy is
    applied; restrict via ``YieldReport.accepted_histogram`` for that.
    """
    model = DefectModel(model)
    _check_sampling(samples, seed)
    _, full, _ = _tally(l, model, rate, None, samples, (seed, 0), workers, True)
    return dict(sorted(full.items()))


def application_fidelity(
    dist: dict[int, int | float],
    patches: int = SHOR_PATCHES,
    cycles: float = SHOR_CYCLES,
    p_phys: float = SHOR_P,
) -> FidelityEstimate:
    """Fidelity of ``patches`` logical qubits run for ``cycles`` rounds,
    with patch distances drawn from ``dist`` (counts or weights)."""
    total = sum(dist.values())
    if not total:
        raise ValueError("empty distance distribution")
    weights = {d: c / total for d, c in sorted(dist.items())}
    err = sum(w * topological_error(d, p_phys) for d, w in weights.items())
    return FidelityEstimate(
        patches=patches,
        cycles=cycles,
        p_phys=p_phys,
        distribution=weights,
        patch_round_error=err,
        fidelity=math.exp(-patches * cycles * err),
    )


def monolithic_fidelity(
    l_mix: list[tuple[int, float]],
    model: DefectModel,
    rate: float,
    patches: int = SHOR_PATCHES,
    cycles: float = SHOR_CYCLES,
    p_phys: float = SHOR_P,
    samples: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> FidelityEstimate:
    """Fidelity without post-selection, mixing chiplet sizes per ``l_mix``.

    Every fabricated patch stays in service, so the unselected distance
    distribution (including distance-0 unusable regions) enters the sum.
    """
    if abs(sum(frac for _, frac in l_mix) - 1.0) > 1e-9:
        raise ValueError("mix fractions must sum to 1")
    weights: Counter = Counter()
    for j, (l, frac) in enumerate(l_mix):
        hist = distance_distribution(l, model, rate, samples, seed + j, workers)
        for d, count in hist.items():
            weights[d] += frac * count / samples
    return application_fidelity(dict(weights), patches, cycles, p_phys)


def shor_table(
    rate: float,
    model: DefectModel = DefectModel.LINKS_AND_QUBITS,
    policies: list[tuple[str, int, SelectionPolicy | None]] | None = None,
    samples: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> list[ShorRow]:
    """Resource table for the reference application at one defect rate.

    Each row is (label, chiplet size, policy); a ``None`` policy denotes
    the ideal no-defect baseline.  Defect-intolerant rows use the exact
    closed-form yield, since Monte Carlo cannot resolve the rare-event
    rates the table calls for.
    """
    model = DefectModel(model)
    if policies is None:
        if rate and rate not in SHOR_CHIPLET:
            raise ValueError(
                f"no preset chiplet size for rate {rate}; pass policies explicitly"
            )
        policies = [
            ("no-defect", SHOR_D, None),
            ("defect-intolerant", SHOR_D, SelectionPolicy(SHOR_D, baseline="defect_free_only")),
            ("super-stabilizer", SHOR_CHIPLET.get(rate, SHOR_D), SelectionPolicy(SHOR_D)),
        ]
    ideal = 2 * SHOR_D**2 - 1
    rows = []
    for label, l, policy in policies:
        if policy is None:
            y = 1.0
        elif policy.baseline == "defect_free_only":
            y = defect_free_yield(l, model, rate)
        else:
            (report,) = yield_curve(
                l, model, [rate], policy, samples, seed, workers, histogram=False
            )
            y = report.yield_
        qubits_per_patch = 2 * l**2 - 1
        overhead = math.inf if y == 0 else qubits_per_patch / (ideal * y)
        total = math.inf if y == 0 else SHOR_PATCHES * qubits_per_patch / y
        rows.append(ShorRow(label, l, y, overhead, total))
    return rows


@dataclass(frozen=True)
class RotationRow:
    rate: float
    yield_fixed: float
    ci_fixed: tuple[float, float]
    yield_rotated: float
    ci_rotated: tuple[float, float]


def _rotation_range(
    l: int,
    model: DefectModel,
    rate: float,
    policy: SelectionPolicy,
    entropy: tuple[int, ...],
    start: int,
    stop: int,
) -> tuple[int, int]:
    layout = build_patch(l)
    fixed = rotated = 0
    for i in range(start, stop):
        defects = _draw(layout, model, rate, entropy + (i,))
        num_faulty = defects.num_faulty()
        ok, _ = _assess_orientation(layout, defects, policy, num_faulty)
        fixed += ok
        if not ok:
            ok, _ = _assess_orientation(
                layout, reassign_roles(defects), policy, num_faulty
            )
        rotated += ok
    return fixed, rotated


def rotation_benefit(
    l: int,
    model: DefectModel,
    rates: list[float],
    d_target: int,
    samples: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> list[RotationRow]:
    """Paired yields without and with remounting freedom.

    Both policies see identical defect samples, so the with-rotation
    acceptance is a superset and the benefit is never negative.
    """
    model = DefectModel(model)
    _check_sampling(samples, seed)
    policy = SelectionPolicy(d_target)
    rows = []
    for k, rate in enumerate(rates):
        entropy = (seed, k)
        if workers <= 1:
            fixed, rotated = _rotation_range(l, model, rate, policy, entropy, 0, samples)
        else:
            bounds = np.linspace(0, samples, 4 * workers + 1).astype(int)
            fixed = rotated = 0
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(
                        _rotation_range, l, model, rate, policy, entropy, int(a), int(b)
                    )
                    for a, b in zip(bounds, bounds[1:])
                    if a < b
                ]
                for future in futures:
                    f, r = future.result()
                    fixed += f
                    rotated += r
        rows.append(
            RotationRow(
                rate=rate,
                yield_fixed=fixed / samples,
                ci_fixed=wilson_interval(fixed, samples),
                yield_rotated=rotated / samples,
                ci_rotated=wilson_interval(rotated, samples),
            )
        )
    return rows
