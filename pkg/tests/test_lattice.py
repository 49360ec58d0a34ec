import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chipqec.lattice import (
    DefectMap,
    DefectModel,
    PatchLayout,
    build_patch,
    component_counts,
    face_kind,
    rotate180,
    sample_defects,
    sample_many,
    validate_defects,
)


def test_component_counts_formula():
    for l in range(2, 30):
        patch = build_patch(l)
        assert (patch.qubit_count(), patch.link_count()) == component_counts(l)
        assert patch.qubit_count() == 2 * l * l - 1
        assert patch.link_count() == 4 * l * (l - 1)


def test_smallest_patch():
    patch = build_patch(2)
    assert len(patch.data_qubits) == 4
    assert len(patch.faces) == 3
    kinds = sorted((f.public, f.kind) for f in patch.faces)
    assert kinds == [((1, 0), "X"), ((1, 1), "Z"), ((1, 2), "X")]


def test_l3_face_table():
    # Frozen from the standard layout drawing: 4 interior faces plus one
    # weight-2 face on each edge, X left/right and Z top/bottom.
    patch = build_patch(3)
    table = {f.public: (f.kind, f.data) for f in patch.faces}
    assert table == {
        (1, 1): ("Z", ((2, 2), (2, 0), (0, 2), (0, 0))),
        (1, 3): ("X", ((2, 4), (0, 4), (2, 2), (0, 2))),
        (3, 1): ("X", ((4, 2), (2, 2), (4, 0), (2, 0))),
        (3, 3): ("Z", ((4, 4), (4, 2), (2, 4), (2, 2))),
        (1, 0): ("X", ((2, 0), (0, 0))),
        (3, 4): ("X", ((4, 4), (2, 4))),
        (0, 3): ("Z", ((0, 4), (0, 2))),
        (4, 1): ("Z", ((4, 2), (4, 0))),
    }


def test_face_coloring_alternates():
    patch = build_patch(5)
    for f in patch.faces:
        assert f.kind == face_kind(*f.pos)
        # Neighboring interior faces differ in color.
    by_pos = {f.pos: f for f in patch.faces}
    for (a, b), f in by_pos.items():
        for da, db in ((0, 2), (2, 0)):
            other = by_pos.get((a + da, b + db))
            if other is not None:
                assert other.kind != f.kind


def test_boundary_faces_match_edges():
    for l in (3, 4, 7):
        patch = build_patch(l)
        for f in patch.faces:
            if not f.on_boundary:
                assert f.weight == 4
                continue
            assert f.weight == 2
            a, b = f.pos
            if b in (-1, 2 * l - 1):
                assert f.kind == "X"
            else:
                assert a in (-1, 2 * l - 1)
                assert f.kind == "Z"


def test_every_data_qubit_in_one_x_and_one_z_pair_of_faces():
    # Interior data qubits touch 2 X and 2 Z faces; edge qubits fewer, but
    # always at least one of each (the code has no dangling qubits).
    for l in (2, 3, 5, 8):
        patch = build_patch(l)
        touch: dict[tuple[int, int], dict[str, int]] = {
            q: {"X": 0, "Z": 0} for q in patch.data_qubits
        }
        for f in patch.faces:
            for q in f.data:
                touch[q][f.kind] += 1
        for q, t in touch.items():
            assert 1 <= t["X"] <= 2
            assert 1 <= t["Z"] <= 2


def test_stabilizers_commute():
    # X and Z faces overlap on an even number of data qubits.
    for l in (3, 4, 6):
        patch = build_patch(l)
        for fx in patch.faces:
            if fx.kind != "X":
                continue
            for fz in patch.faces:
                if fz.kind != "Z":
                    continue
                assert len(set(fx.data) & set(fz.data)) % 2 == 0


def test_cx_slots_alignment():
    # Slot index i of every face is executed at sub-step i; two faces must
    # never address the same data qubit in the same sub-step.
    for l in (3, 5):
        patch = build_patch(l)
        for step in range(4):
            seen = set()
            for f in patch.faces:
                q = f.slots[step]
                if q is None:
                    continue
                assert q not in seen
                seen.add(q)


def test_rotate180_is_layout_symmetry():
    patch = build_patch(4)
    syn = set(patch.syndrome_qubits)
    assert {rotate180(4, s) for s in syn} == syn
    data = set(patch.data_qubits)
    assert {rotate180(4, q) for q in data} == data


def test_sample_rate_zero_is_clean():
    patch = build_patch(5)
    d = sample_defects(patch, DefectModel.LINKS_AND_QUBITS, 0.0, seed=1)
    assert d.num_faulty() == 0


def test_links_only_never_marks_qubits():
    patch = build_patch(5)
    for i in range(20):
        d = sample_defects(patch, DefectModel.LINKS_ONLY, 0.3, seed=i)
        assert not d.faulty_qubits


def test_sampling_statistics():
    # Mean faulty-link count over many chiplets should sit within 4 sigma
    # of n*rate (binomial).
    patch = build_patch(9)
    rate = 0.02
    n = patch.link_count()
    counts = [
        len(d.faulty_links)
        for d in sample_many(patch, DefectModel.LINKS_ONLY, rate, 2000, seed=7)
    ]
    mean = np.mean(counts)
    sigma = np.sqrt(n * rate * (1 - rate) / len(counts))
    assert abs(mean - n * rate) < 4 * sigma


def test_sample_many_is_reproducible_and_independent_of_partition():
    patch = build_patch(4)
    full = list(sample_many(patch, DefectModel.LINKS_AND_QUBITS, 0.1, 10, seed=3))
    again = list(sample_many(patch, DefectModel.LINKS_AND_QUBITS, 0.1, 10, seed=3))
    assert full == again
    # Each draw keeps its own seed so it can be reproduced standalone.
    for d in full:
        patch_d = sample_defects(patch, DefectModel.LINKS_AND_QUBITS, 0.1, seed=d.seed)
        assert patch_d == d


@given(seed=st.integers(0, 2**31), rate=st.floats(0.0, 0.5))
@settings(max_examples=25, deadline=None)
def test_json_round_trip(seed, rate):
    patch = build_patch(4)
    d = sample_defects(patch, DefectModel.LINKS_AND_QUBITS, rate, seed=seed)
    assert DefectMap.from_json(d.to_json()) == d


def test_json_fields():
    patch = build_patch(3)
    d = DefectMap(
        l=3,
        faulty_qubits=frozenset({(2, 2)}),
        faulty_links=frozenset({((1, 1), (0, 0))}),
        seed=5,
    )
    validate_defects(patch, d)
    payload = json.loads(d.to_json())
    assert payload == {
        "l": 3,
        "faulty_qubits": [[2, 2]],
        "faulty_links": [[[1, 1], [0, 0]]],
        "seed": 5,
    }


def test_validation_rejects_unknown_components():
    patch = build_patch(3)
    bad_qubit = DefectMap(3, frozenset({(1, 2)}), frozenset(), None)
    with pytest.raises(ValueError):
        validate_defects(patch, bad_qubit)
    bad_link = DefectMap(3, frozenset(), frozenset({((1, 1), (4, 4))}), None)
    with pytest.raises(ValueError):
        validate_defects(patch, bad_link)
    with pytest.raises(ValueError):
        validate_defects(build_patch(4), DefectMap(3, frozenset(), frozenset(), None))


def test_layout_is_cached():
    assert build_patch(6) is build_patch(6)
    assert isinstance(build_patch(6), PatchLayout)
