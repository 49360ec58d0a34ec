"""Symbolic stabilizer-tableau oracle for detector determinism.

Runs a noiseless circuit through an Aaronson–Gottesman tableau, giving every
random measurement outcome a fresh symbol.  Later outcomes are linear
combinations (mod 2) of a constant and earlier symbols, so a detector or
observable is deterministic if and only if its symbol set cancels.  This is
strictly stronger than sampling at p=0: a Pauli-frame sampler would report
all-zero events even for a detector that compares incompatible measurements.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class Outcome:
    const: int  # 0 or 1
    symbols: int  # bitmask over random-outcome symbols

    def __xor__(self, other: "Outcome") -> "Outcome":
        return Outcome(self.const ^ other.const, self.symbols ^ other.symbols)

    @property
    def deterministic(self) -> bool:
        return self.symbols == 0


class Tableau:
    """2n-row binary tableau (destabilizers then stabilizers) with symbolic
    signs.  Row Pauli parts are Python ints used as bitmasks over qubits."""

    def __init__(self, n: int):
        self.n = n
        self.x = [0] * (2 * n)
        self.z = [0] * (2 * n)
        self.r = [0] * (2 * n)  # phase bit (i^2r); symbolic part below
        self.sym = [0] * (2 * n)
        for i in range(n):
            self.x[i] = 1 << i  # destabilizer X_i
            self.z[n + i] = 1 << i  # stabilizer Z_i
        self.num_symbols = 0

    def h(self, q: int) -> None:
        bit = 1 << q
        for i in range(2 * self.n):
            if self.x[i] & self.z[i] & bit:
                self.r[i] ^= 1
            xq = self.x[i] & bit
            zq = self.z[i] & bit
            self.x[i] ^= xq ^ zq
            self.z[i] ^= zq ^ xq

    def cx(self, a: int, b: int) -> None:
        abit, bbit = 1 << a, 1 << b
        for i in range(2 * self.n):
            xa = 1 if self.x[i] & abit else 0
            zb = 1 if self.z[i] & bbit else 0
            if xa and zb:
                xb = 1 if self.x[i] & bbit else 0
                za = 1 if self.z[i] & abit else 0
                self.r[i] ^= xb ^ za ^ 1
            if xa:
                self.x[i] ^= bbit
            if zb:
                self.z[i] ^= abit

    def _g_phase(self, i: int, j: int) -> int:
        """Exponent sum (mod 4) from multiplying row j into row i."""
        x1, z1, x2, z2 = self.x[j], self.z[j], self.x[i], self.z[i]
        case11 = x1 & z1
        case10 = x1 & ~z1
        case01 = ~x1 & z1
        plus = (
            (case11 & z2 & ~x2).bit_count()
            + (case10 & z2 & x2).bit_count()
            + (case01 & x2 & ~z2).bit_count()
        )
        minus = (
            (case11 & x2 & ~z2).bit_count()
            + (case10 & z2 & ~x2).bit_count()
            + (case01 & x2 & z2).bit_count()
        )
        return (2 * self.r[i] + 2 * self.r[j] + plus - minus) % 4

    def rowmul(self, i: int, j: int) -> None:
        """row_i <- row_j * row_i (Pauli product; phases must stay real)."""
        phase = self._g_phase(i, j)
        assert phase in (0, 2), "imaginary phase in CSS tableau"
        self.r[i] = phase // 2
        self.sym[i] ^= self.sym[j]
        self.x[i] ^= self.x[j]
        self.z[i] ^= self.z[j]

    def measure_z(self, q: int) -> Outcome:
        n, bit = self.n, 1 << q
        p = next((i for i in range(n, 2 * n) if self.x[i] & bit), None)
        if p is not None:  # random outcome: new symbol
            s = 1 << self.num_symbols
            self.num_symbols += 1
            for i in range(2 * n):
                if i != p and self.x[i] & bit:
                    self.rowmul(i, p)
            d = p - n
            self.x[d], self.z[d] = self.x[p], self.z[p]
            self.r[d], self.sym[d] = self.r[p], self.sym[p]
            self.x[p], self.z[p] = 0, bit
            self.r[p], self.sym[p] = 0, s
            return Outcome(0, s)
        # deterministic: accumulate into a scratch row (index 2n)
        self.x.append(0), self.z.append(0), self.r.append(0), self.sym.append(0)
        for i in range(n):
            if self.x[i] & bit:
                self.rowmul(2 * n, n + i)
        out = Outcome(self.r.pop(), self.sym.pop())
        self.x.pop(), self.z.pop()
        return out

    def reset_z(self, q: int) -> None:
        out = self.measure_z(q)
        if out.const or out.symbols:  # conditional X_q correction
            bit = 1 << q
            for i in range(2 * self.n):
                if self.z[i] & bit:
                    self.r[i] ^= out.const
                    self.sym[i] ^= out.symbols


def run_symbolic(circuit) -> tuple[list[Outcome], list[Outcome]]:
    """Noiseless symbolic run; returns (detector values, observable values)."""
    tab = Tableau(circuit.num_qubits)
    record: list[Outcome] = []
    detectors: list[Outcome] = []
    observables: dict[int, Outcome] = {}
    for inst in circuit.flat():
        if inst.name == "R":
            for q in inst.targets:
                tab.reset_z(q)
        elif inst.name == "H":
            for q in inst.targets:
                tab.h(q)
        elif inst.name == "CX":
            for a, b in zip(inst.targets[::2], inst.targets[1::2]):
                tab.cx(a, b)
        elif inst.name == "M":
            for q in inst.targets:
                record.append(tab.measure_z(q))
        elif inst.name == "DETECTOR":
            val = Outcome(0, 0)
            for off in inst.targets:
                val = val ^ record[off]
            detectors.append(val)
        elif inst.name == "OBSERVABLE_INCLUDE":
            key = int(inst.args[0])
            val = observables.get(key, Outcome(0, 0))
            for off in inst.targets:
                val = val ^ record[off]
            observables[key] = val
        elif inst.name in ("QUBIT_COORDS", "X_ERROR", "DEPOLARIZE1",
                           "DEPOLARIZE2"):
            continue  # noiseless run ignores noise channels
        else:
            raise ValueError(f"oracle cannot interpret {inst.name}")
    return detectors, [observables[k] for k in sorted(observables)]


def assert_deterministic(circuit) -> None:
    """Every detector and observable must be a constant 0."""
    detectors, observables = run_symbolic(circuit)
    bad = [i for i, d in enumerate(detectors)
           if not d.deterministic or d.const]
    assert not bad, f"non-deterministic or firing detectors: {bad[:10]}"
    for i, o in enumerate(observables):
        assert o.deterministic and o.const == 0, f"observable {i} is {o}"
