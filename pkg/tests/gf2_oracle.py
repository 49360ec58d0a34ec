"""Exhaustive logical-operator oracle used to validate the graph metrics.

Works directly from the measured operator lists with GF(2) linear algebra:
enumerate every Pauli product (of one type) that commutes with all measured
checks of the other type, discard the ones generated by same-type checks and
gauges, and tabulate weights.  No graph code is shared with the library.
"""

from __future__ import annotations

import numpy as np

from chipqec.adapt import AdaptedCode


def _rref(rows: list[int]) -> list[tuple[int, int]]:
    """Reduced row echelon form over GF(2); returns (row, pivot) pairs."""
    basis: list[tuple[int, int]] = []
    for row in rows:
        for b, p in basis:
            if (row >> p) & 1:
                row ^= b
        if row:
            p = row.bit_length() - 1
            basis = [(b ^ (row if (b >> p) & 1 else 0), q) for b, q in basis]
            basis.append((row, p))
    return basis


def _kernel_basis(rows: list[int], n: int) -> list[int]:
    """Basis of {v : v has even overlap with every row}, vectors as masks."""
    reduced = _rref(rows)
    pivot_cols = {p for _, p in reduced}
    basis = []
    for f in range(n):
        if f in pivot_cols:
            continue
        v = 1 << f
        for row, p in reduced:
            if (row >> f) & 1:
                v |= 1 << p
        basis.append(v)
    for row in rows:
        for v in basis:
            assert bin(row & v).count("1") & 1 == 0
    return basis


def _operator_masks(code: AdaptedCode, kind: str, index: dict) -> list[int]:
    masks = []
    for p in code.plain_stabilizers:
        if p.kind == kind:
            masks.append(sum(1 << index[q] for q in p.support))
    for c in code.clusters:
        masks.append(sum(1 << index[q] for q in c.super_stabilizer(kind).support))
    return masks


def _gauge_masks(code: AdaptedCode, kind: str, index: dict) -> list[int]:
    masks = []
    for c in code.clusters:
        gauges = c.x_gauges if kind == "X" else c.z_gauges
        for g in gauges:
            masks.append(sum(1 << index[q] for q in g.support))
    return masks


def _enumerate_span(basis: list[int]) -> np.ndarray:
    vecs = np.zeros(1, dtype=np.uint64)
    for b in basis:
        vecs = np.concatenate([vecs, vecs ^ np.uint64(b)])
    return vecs


def brute_force_weights(code: AdaptedCode, axis: str) -> tuple[int, int]:
    """(distance, count) of minimum-weight axis logicals, by enumeration."""
    data = sorted(code.active_data)
    if len(data) > 62:
        raise ValueError("oracle limited to 62 active data qubits")
    index = {q: i for i, q in enumerate(data)}
    other = "Z" if axis == "X" else "X"
    constraints = _operator_masks(code, other, index)
    trivial = _operator_masks(code, axis, index) + _gauge_masks(code, axis, index)

    kernel = _kernel_basis(constraints, len(data))
    reducers = _rref(trivial)
    if len(kernel) != len(reducers) + 1:
        raise ValueError(
            f"expected one logical qubit, kernel dim {len(kernel)} vs "
            f"trivial rank {len(reducers)}"
        )

    # Enumerate the kernel in chunks to bound memory.
    head = kernel[:22]
    tail = kernel[22:]
    base = _enumerate_span(head)
    best_w = None
    best_n = 0
    for hi in _enumerate_span(tail):
        vecs = base ^ hi
        residual = vecs.copy()
        for row, p in reducers:
            hit = (residual >> np.uint64(p)) & np.uint64(1)
            residual ^= np.uint64(row) * hit
        logical = residual != 0
        if not logical.any():
            continue
        weights = np.bitwise_count(vecs[logical])
        w = int(weights.min())
        n = int((weights == w).sum())
        if best_w is None or w < best_w:
            best_w, best_n = w, n
        elif w == best_w:
            best_n += n
    if best_w is None:
        raise ValueError("no logical operator found")
    return best_w, best_n
