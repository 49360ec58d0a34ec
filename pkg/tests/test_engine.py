"""Detector-model extraction, frame sampling, exact matching, estimators."""

import math

import numpy as np
import pytest

from chipqec.adapt import Unusable, adapt_code
from chipqec.circuit import NoiseModel, memory_circuit, parse_text, stability_circuit
from chipqec.engine import (
    DetectorModel,
    InsufficientData,
    Mechanism,
    ShotBatch,
    _match_blossom,
    _match_dp,
    decode_batch,
    estimate_ler,
    extract_detector_model,
    fit_slope,
    sample_shots,
    stability_compare,
    wilson_interval,
)
from chipqec.lattice import DefectMap, build_patch, sample_defects


def _clean(l):
    return adapt_code(build_patch(l), DefectMap(l, frozenset(), frozenset()))


# ----------------------------------------------------------- model extraction


def test_noiseless_circuit_gives_zero_mechanisms():
    model = extract_detector_model(memory_circuit(_clean(3), 2, NoiseModel(0.0)))
    assert model.mechanisms == ()
    assert model.num_detectors == 16 and model.num_observables == 1


def test_single_readout_error_flips_two_time_adjacent_detectors():
    txt = """
    R 0 1 2
    R 3
    CX 0 3 1 3
    M 3
    DETECTOR(0, 0, 0, 0) rec[-1]
    R 3
    CX 0 3 1 3
    X_ERROR(0.01) 3
    M 3
    DETECTOR(0, 0, 1, 0) rec[-2] rec[-1]
    R 3
    CX 0 3 1 3
    M 3
    DETECTOR(0, 0, 2, 0) rec[-2] rec[-1]
    """
    model = extract_detector_model(parse_text(txt))
    assert model.mechanisms == (Mechanism(0.01, (1, 2), 0),)


def test_identical_mechanisms_merge_by_probability_composition():
    txt = "R 0\nX_ERROR(0.1) 0\nX_ERROR(0.1) 0\nM 0\nDETECTOR(0,0,0,0) rec[-1]\n"
    model = extract_detector_model(parse_text(txt))
    (m,) = model.mechanisms
    assert m.detectors == (0,) and m.probability == pytest.approx(0.18)


@pytest.mark.parametrize("l,qubits", [(3, ()), (5, ((4, 4),)), (5, ((4, 4), (6, 6)))])
def test_mechanisms_are_graphlike(l, qubits):
    code = adapt_code(build_patch(l), DefectMap(l, frozenset(qubits), frozenset()))
    circuit = memory_circuit(code, 2 * code.schedule.period + 1, NoiseModel(0.001))
    model = extract_detector_model(circuit)
    assert model.mechanisms
    for m in model.mechanisms:
        assert len(m.detectors) <= 2
        assert 0.0 < m.probability < 1.0
        assert all(model.sides[a] == model.sides[b]
                   for a, b in zip(m.detectors, m.detectors[1:]))


def test_stability_mechanisms_are_graphlike():
    for disable in (False, True):
        circuit = stability_circuit(5, 5, NoiseModel(0.003),
                                    bad_qubit=((4, 4), 10.0), disable_bad=disable)
        model = extract_detector_model(circuit)
        assert all(len(m.detectors) <= 2 for m in model.mechanisms)


def test_observable_flip_rides_the_data_error_side():
    # a data-qubit X on the logical path must appear as a Z-side mechanism
    # with the observable bit set
    circuit = memory_circuit(_clean(3), 2, NoiseModel(0.001))
    model = extract_detector_model(circuit)
    carriers = [m for m in model.mechanisms if m.observable_flip]
    assert carriers
    for m in carriers:
        assert all(model.sides[d] == 0 for d in m.detectors)


# ------------------------------------------------------------------- sampling


def test_zero_noise_batch_is_all_zero():
    batch = sample_shots(memory_circuit(_clean(3), 3, NoiseModel(0.0)), 1500, seed=9)
    assert batch.shots == 1500
    assert not batch.unpacked().any()
    assert not batch.observable_flips.any()


def test_fixed_seed_reproduces_and_workers_do_not_matter():
    circuit = memory_circuit(_clean(3), 3, NoiseModel(0.002))
    a = sample_shots(circuit, 40000, seed=11)
    b = sample_shots(circuit, 40000, seed=11)
    c = sample_shots(circuit, 40000, seed=11, workers=4)
    assert np.array_equal(a.detection_events, b.detection_events)
    assert np.array_equal(a.detection_events, c.detection_events)
    assert np.array_equal(a.observable_flips, c.observable_flips)
    d = sample_shots(circuit, 40000, seed=12)
    assert not np.array_equal(a.detection_events, d.detection_events)


def test_isolated_mechanism_marginal_matches_binomial():
    q, shots = 0.37, 10**6
    circuit = parse_text(f"R 0\nX_ERROR({q}) 0\nM 0\nDETECTOR(0,0,0,0) rec[-1]\n")
    batch = sample_shots(circuit, shots, seed=4)
    rate = batch.unpacked()[:, 0].mean()
    assert abs(rate - q) < 3 * math.sqrt(q * (1 - q) / shots)


def test_model_and_circuit_sampling_agree():
    # chi-squared over per-detector marginals, two independent samplers
    shots = 10**6
    circuit = memory_circuit(_clean(3), 3, NoiseModel(0.001))
    model = extract_detector_model(circuit)
    circ = sample_shots(circuit, shots, seed=1).unpacked().mean(axis=0)
    rng = np.random.default_rng(2)
    acc = np.zeros((shots, model.num_detectors), np.uint8)
    for m in model.mechanisms:
        hits = rng.random(shots) < m.probability
        for d in m.detectors:
            acc[:, d] ^= hits
    dem = acc.mean(axis=0)
    var = (circ * (1 - circ) + dem * (1 - dem)) / shots
    chi2 = float(np.sum((circ - dem) ** 2 / var))
    dof = model.num_detectors
    assert chi2 < dof + 5 * math.sqrt(2 * dof)


# ------------------------------------------------------------------- matching


def _brute_force(m, pair_w, pair_o, bw, bo):
    best = [math.inf, 0]

    def rec(unmatched, w, parity):
        if not unmatched:
            if w < best[0]:
                best[0], best[1] = w, parity
            return
        i, rest = unmatched[0], unmatched[1:]
        rec(rest, w + bw[i], parity ^ bo[i])
        for j in rest:
            left = tuple(k for k in rest if k != j)
            rec(left, w + pair_w[i][j], parity ^ pair_o[i][j])

    rec(tuple(range(m)), 0.0, 0)
    return best[0], best[1]


def _random_instance(rng, m):
    pair_w = [[0.0] * m for _ in range(m)]
    pair_o = [[0] * m for _ in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            pair_w[i][j] = pair_w[j][i] = float(rng.uniform(0.05, 10.0))
            pair_o[i][j] = pair_o[j][i] = int(rng.integers(2))
    bw = [float(rng.uniform(0.05, 10.0)) for _ in range(m)]
    bo = [int(rng.integers(2)) for _ in range(m)]
    return pair_w, pair_o, bw, bo


def test_matching_weight_equals_exhaustive_search():
    rng = np.random.default_rng(77)
    for trial in range(500):
        m = int(rng.integers(2, 11))
        pair_w, pair_o, bw, bo = _random_instance(rng, m)
        exact_w, exact_p = _brute_force(m, pair_w, pair_o, bw, bo)
        dp_w, dp_p = _match_dp(m, pair_w, pair_o, bw, bo)
        bl_w, bl_p = _match_blossom(m, pair_w, pair_o, bw, bo)
        assert dp_w == pytest.approx(exact_w, abs=1e-9)
        assert bl_w == pytest.approx(exact_w, abs=1e-9)
        assert dp_p == exact_p == bl_p


def _hand_model():
    # detectors 0,1 same side; pairing arc crosses the observable, boundary
    # arcs do not
    return DetectorModel(
        num_detectors=2,
        num_observables=1,
        mechanisms=(
            Mechanism(0.01, (0, 1), 1),
            Mechanism(0.001, (0,), 0),
            Mechanism(0.001, (1,), 0),
        ),
        sides=(0, 0),
    )


def _batch_from_rows(rows, obs=None):
    events = np.array(rows, dtype=np.uint8)
    return ShotBatch(
        shots=events.shape[0],
        detection_events=np.packbits(events, axis=1),
        observable_flips=np.zeros(events.shape[0], np.uint8) if obs is None
        else np.asarray(obs, np.uint8),
        seed=0,
        num_detectors=events.shape[1],
    )


def test_decode_empty_syndrome_predicts_no_flip():
    pred = decode_batch(_hand_model(), _batch_from_rows([[0, 0]]))
    assert pred.tolist() == [0]


def test_decode_pair_across_the_observable_predicts_a_flip():
    pred = decode_batch(_hand_model(), _batch_from_rows([[1, 1], [0, 0], [1, 1]]))
    assert pred.tolist() == [1, 0, 1]


def test_decode_single_event_takes_the_boundary():
    pred = decode_batch(_hand_model(), _batch_from_rows([[1, 0], [0, 1]]))
    assert pred.tolist() == [0, 0]


def test_decode_rejects_event_without_arcs():
    model = DetectorModel(3, 1, (Mechanism(0.01, (0, 1), 0),), (0, 0, 0))
    with pytest.raises(ValueError, match="no arcs"):
        decode_batch(model, _batch_from_rows([[0, 0, 1]]))


def test_decode_batch_checks_dimensions():
    with pytest.raises(ValueError):
        decode_batch(_hand_model(), _batch_from_rows([[0, 0, 0]]))


# ----------------------------------------------------------------- estimates


def test_wilson_interval_brackets_the_rate():
    lo, hi = wilson_interval(0, 1000)
    assert lo == 0.0 and 0 < hi < 0.005
    lo, hi = wilson_interval(50, 1000)
    assert lo < 0.05 < hi
    lo, hi = wilson_interval(1000, 1000)
    assert hi == 1.0


def test_estimate_ler_zero_noise():
    ler, (lo, hi) = estimate_ler(_clean(3), NoiseModel(0.0), 3, 2000, seed=0)
    assert ler == 0.0 and lo == 0.0 and hi < 0.01


def test_estimate_ler_rejects_unusable():
    wedge = adapt_code(
        build_patch(3),
        DefectMap(3, frozenset({(0, 2), (2, 2), (4, 2)}), frozenset()),
    )
    assert isinstance(wedge, Unusable)
    with pytest.raises(ValueError):
        estimate_ler(wedge, NoiseModel(0.001), 3, 100, seed=0)


def test_noise_monotonicity_at_desk_scale():
    code = _clean(3)
    lo, ci_lo = estimate_ler(code, NoiseModel(5e-4), 3, 200000, seed=21)
    hi, ci_hi = estimate_ler(code, NoiseModel(2e-3), 3, 200000, seed=22)
    assert ci_lo[1] < ci_hi[0], (ci_lo, ci_hi)


def test_fit_slope_recovers_synthetic_power_laws():
    ps = [5e-4, 1e-3, 2e-3]
    fit = fit_slope([(p, (100 * p) ** 2) for p in ps])
    assert abs(fit.alpha_d - 2.0) < 1e-9
    assert fit.log_intercept == pytest.approx(2 * math.log(100), abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0)
    fit3 = fit_slope([(p, 0.5 * (50 * p) ** 3) for p in ps])
    assert abs(fit3.alpha_d - 3.0) < 1e-9


def test_fit_slope_validates_input():
    with pytest.raises(InsufficientData):
        fit_slope([(5e-4, 0.0), (1e-3, 1e-4), (2e-3, 4e-4)])
    with pytest.raises(ValueError):
        fit_slope([(5e-4, 1e-5), (1e-3, 1e-4)])
    with pytest.raises(ValueError):
        fit_slope([(5e-3, 1e-4), (1e-3, 1e-4), (2e-3, 1e-4)])


def test_stability_compare_produces_both_curves():
    rows = stability_compare(
        3, (2, 2), bad_p=0.15, good_ps=[3e-3], rounds=3, shots=2000, seed=5
    )
    (row,) = rows
    assert row.p == 3e-3
    assert 0.0 <= row.ler_keep <= 1.0 and 0.0 <= row.ler_disable <= 1.0
    assert row.ci_keep[0] <= row.ler_keep <= row.ci_keep[1]


def test_random_defective_codes_have_graphlike_models():
    layout = build_patch(5)
    checked = 0
    for seed in range(8):
        code = adapt_code(layout, sample_defects(layout, "mixed", 0.03, seed))
        if isinstance(code, Unusable):
            continue
        circuit = memory_circuit(code, code.schedule.period * 2, NoiseModel(0.001))
        model = extract_detector_model(circuit)
        assert all(len(m.detectors) <= 2 for m in model.mechanisms)
        checked += 1
    assert checked >= 5
