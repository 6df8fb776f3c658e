"""Dense statevector simulation of small qubit registers.

Amplitudes are stored as a flat complex array indexed by the computational
basis integer, with qubit 0 the least significant bit.  Every array routine
here accepts arbitrary leading batch dimensions, so a whole minibatch of
circuits (or all the shifted copies needed for a gradient) is simulated in
one pass.

Rotation gates follow the convention ``R_P(theta) = exp(-i * theta * P / 2)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NORM_TOL = 1e-10


class GateKind(str, enum.Enum):
    RX = "RX"
    RY = "RY"
    CRX = "CRX"
    CNOT = "CNOT"

    @property
    def num_wires(self) -> int:
        return 1 if self in (GateKind.RX, GateKind.RY) else 2

    @property
    def parameterized(self) -> bool:
        return self is not GateKind.CNOT


class ParamSource(str, enum.Enum):
    TRAINABLE = "trainable"
    INPUT = "input"


@dataclass(frozen=True)
class Gate:
    """A gate with concrete wires and (for rotations) a concrete angle.

    ``wires`` is ``(target,)`` for one-qubit gates and ``(control, target)``
    for CRX and CNOT.
    """

    kind: GateKind
    wires: tuple[int, ...]
    param: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        object.__setattr__(self, "wires", tuple(int(w) for w in self.wires))
        if len(self.wires) != self.kind.num_wires:
            raise ValueError(f"{self.kind.value} acts on {self.kind.num_wires} wire(s), got {self.wires}")
        if len(set(self.wires)) != len(self.wires):
            raise ValueError(f"control and target must differ, got {self.wires}")
        if self.kind is GateKind.CNOT and self.param is not None:
            raise ValueError("CNOT takes no parameter")

    def check(self, num_qubits: int) -> None:
        for w in self.wires:
            if not 0 <= w < num_qubits:
                raise IndexError(f"wire {w} out of range for {num_qubits} qubits")
        if self.kind.parameterized and self.param is None:
            raise ValueError(f"{self.kind.value} gate on wires {self.wires} is missing its angle")


@dataclass(frozen=True)
class ParamRef:
    source: ParamSource
    index: int


@dataclass(frozen=True)
class Instruction:
    """A gate template inside a program; the angle comes from ``slot``."""

    kind: GateKind
    wires: tuple[int, ...]
    slot: ParamRef | None = None


@dataclass
class CircuitProgram:
    """Ordered gate list whose rotation angles are looked up in two vectors.

    Trainable and input slots are numbered independently, each contiguous
    from zero.
    """

    num_qubits: int
    instructions: list[Instruction] = field(default_factory=list)

    def __post_init__(self):
        if self.num_qubits < 1:
            raise ValueError("a circuit needs at least one qubit")
        for ins in self.instructions:
            Gate(ins.kind, ins.wires, 0.0 if ins.kind.parameterized else None).check(self.num_qubits)
            if ins.kind.parameterized != (ins.slot is not None):
                raise ValueError(f"{ins.kind.value} on {ins.wires}: slot/parameter mismatch")
        for source in ParamSource:
            used = sorted(ins.slot.index for ins in self.instructions if ins.slot and ins.slot.source is source)
            if used != list(range(len(used))):
                raise ValueError(f"{source.value} slots must be unique and contiguous from 0, got {used}")

    def num_slots(self, source: ParamSource | str) -> int:
        source = ParamSource(source)
        return sum(1 for ins in self.instructions if ins.slot is not None and ins.slot.source is source)

    @property
    def num_trainable(self) -> int:
        return self.num_slots(ParamSource.TRAINABLE)

    @property
    def num_inputs(self) -> int:
        return self.num_slots(ParamSource.INPUT)

    def __add__(self, other: "CircuitProgram") -> "CircuitProgram":
        """Concatenate two programs, renumbering the right operand's slots."""
        if self.num_qubits != other.num_qubits:
            raise ValueError("cannot concatenate programs of different width")
        offset = {s: self.num_slots(s) for s in ParamSource}
        shifted = [
            Instruction(ins.kind, ins.wires, None if ins.slot is None
                        else ParamRef(ins.slot.source, ins.slot.index + offset[ins.slot.source]))
            for ins in other.instructions
        ]
        return CircuitProgram(self.num_qubits, list(self.instructions) + shifted)

    def bind(self, trainable: Sequence[float], inputs: Sequence[float]) -> list[Gate]:
        trainable, inputs = _check_slot_vectors(self, np.asarray(trainable, float), np.asarray(inputs, float))
        values = {ParamSource.TRAINABLE: trainable, ParamSource.INPUT: inputs}
        return [
            Gate(ins.kind, ins.wires, None if ins.slot is None else float(values[ins.slot.source][ins.slot.index]))
            for ins in self.instructions
        ]


@dataclass
class Statevector:
    amplitudes: np.ndarray
    num_qubits: int

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.num_qubits < 1:
            raise ValueError("num_qubits must be >= 1")
        if self.amplitudes.shape != (1 << self.num_qubits,):
            raise ValueError(f"expected {1 << self.num_qubits} amplitudes, got shape {self.amplitudes.shape}")

    @classmethod
    def zeros(cls, num_qubits: int) -> "Statevector":
        return cls(zero_state(num_qubits), num_qubits)

    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def copy(self) -> "Statevector":
        return Statevector(self.amplitudes.copy(), self.num_qubits)


def zero_state(num_qubits: int, batch_shape: tuple[int, ...] = ()) -> np.ndarray:
    amps = np.zeros(batch_shape + (1 << num_qubits,), dtype=np.complex128)
    amps[..., 0] = 1.0
    return amps


# -- in-place kernels on (*batch, 2**n) arrays ---------------------------------

def _axis(q: int, n: int, nb: int) -> int:
    # basis index is big-endian over the reshaped axes, so qubit q sits at n-1-q
    return nb + n - 1 - q


def _slicer(n: int, nb: int, fixed: dict[int, int]) -> tuple:
    idx = [slice(None)] * (nb + n)
    for q, bit in fixed.items():
        idx[_axis(q, n, nb)] = bit
    return tuple(idx)


def _rotation_coeffs(kind: GateKind, theta):
    c = np.cos(np.asarray(theta, dtype=float) / 2)
    s = np.sin(np.asarray(theta, dtype=float) / 2)
    if kind in (GateKind.RX, GateKind.CRX):
        return c, -1j * s, -1j * s, c
    return c, -s, s, c  # RY


def apply_inplace(amps: np.ndarray, num_qubits: int, kind: GateKind, wires: Sequence[int], theta=None) -> None:
    """Apply one gate to a batch of state arrays in place.

    ``theta`` may be a scalar or an array broadcastable to the batch shape
    ``amps.shape[:-1]``.
    """
    n = num_qubits
    batch = amps.shape[:-1]
    nb = len(batch)
    view = amps.reshape(batch + (2,) * n)
    if not np.shares_memory(view, amps):
        raise ValueError("state array must be contiguous")
    kind = GateKind(kind)

    if kind is GateKind.CNOT:
        c, t = wires
        s0 = _slicer(n, nb, {c: 1, t: 0})
        s1 = _slicer(n, nb, {c: 1, t: 1})
        tmp = view[s0].copy()
        view[s0] = view[s1]
        view[s1] = tmp
        return

    if kind is GateKind.CRX:
        c, t = wires
        fixed = {c: 1}
        free = n - 2
    else:
        (t,) = wires
        fixed = {}
        free = n - 1
    m00, m01, m10, m11 = _rotation_coeffs(kind, theta)
    # put batch-shaped coefficients in front of the remaining qubit axes
    expand = lambda m: np.asarray(m).reshape(np.shape(m) + (1,) * free) if np.ndim(m) else m
    m00, m01, m10, m11 = map(expand, (m00, m01, m10, m11))
    s0 = _slicer(n, nb, {**fixed, t: 0})
    s1 = _slicer(n, nb, {**fixed, t: 1})
    a0 = view[s0].copy()
    a1 = view[s1]
    view[s0] = m00 * a0 + m01 * a1
    view[s1] = m10 * a0 + m11 * a1


def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    gate.check(state.num_qubits)
    out = state.copy()
    apply_inplace(out.amplitudes, out.num_qubits, gate.kind, gate.wires, gate.param)
    return out


def _check_slot_vectors(program: CircuitProgram, trainable: np.ndarray, inputs: np.ndarray):
    if trainable.shape[-1:] != (program.num_trainable,) and not (program.num_trainable == 0 and trainable.size == 0):
        raise ValueError(f"program has {program.num_trainable} trainable slots, got vector of shape {trainable.shape}")
    if inputs.shape[-1:] != (program.num_inputs,) and not (program.num_inputs == 0 and inputs.size == 0):
        raise ValueError(f"program has {program.num_inputs} input slots, got vector of shape {inputs.shape}")
    return trainable, inputs


def simulate(program: CircuitProgram, trainable, inputs) -> np.ndarray:
    """Run ``program`` from |0...0> on batched angle vectors.

    ``trainable`` has shape ``(*b1, P)`` and ``inputs`` shape ``(*b2, K)``;
    the batch shapes broadcast and the result has shape ``(*b, 2**W)``.
    """
    trainable = np.asarray(trainable, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if trainable.ndim == 0 or inputs.ndim == 0:
        raise ValueError("angle vectors must be at least 1-d")
    _check_slot_vectors(program, trainable, inputs)
    batch = np.broadcast_shapes(trainable.shape[:-1], inputs.shape[:-1])
    amps = zero_state(program.num_qubits, batch)
    values = {ParamSource.TRAINABLE: trainable, ParamSource.INPUT: inputs}
    for ins in program.instructions:
        theta = None if ins.slot is None else values[ins.slot.source][..., ins.slot.index]
        apply_inplace(amps, program.num_qubits, ins.kind, ins.wires, theta)
    return amps


def run_circuit(program: CircuitProgram, trainable, inputs) -> Statevector:
    trainable = np.atleast_1d(np.asarray(trainable, dtype=float))
    inputs = np.atleast_1d(np.asarray(inputs, dtype=float))
    if trainable.ndim != 1 or inputs.ndim != 1:
        raise ValueError("run_circuit takes 1-d angle vectors; use simulate() for batches")
    return Statevector(simulate(program, trainable, inputs), program.num_qubits)


def z_signs(num_qubits: int) -> np.ndarray:
    """(2**n, n) table of Z eigenvalues: +1 where the qubit bit is 0."""
    basis = np.arange(1 << num_qubits)[:, None]
    bits = (basis >> np.arange(num_qubits)[None, :]) & 1
    return 1.0 - 2.0 * bits


def probabilities(amps: np.ndarray) -> np.ndarray:
    return amps.real ** 2 + amps.imag ** 2


def expectations_z(amps: np.ndarray, num_qubits: int) -> np.ndarray:
    """Exact <Z_q> for every qubit: shape ``(*batch, n)``."""
    return np.clip(probabilities(amps) @ z_signs(num_qubits), -1.0, 1.0)


def expectation_z(state: Statevector, qubit: int) -> float:
    if not 0 <= qubit < state.num_qubits:
        raise IndexError(f"qubit {qubit} out of range for {state.num_qubits} qubits")
    return float(expectations_z(state.amplitudes, state.num_qubits)[qubit])


def sample_expectations_z(amps: np.ndarray, num_qubits: int, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Shot-sampled <Z_q> for every qubit, shape ``(*batch, n)``.

    Each shot draws one full basis bitstring, so all qubits of a circuit
    share the same shots.  Counting outcomes with a multinomial draw is
    equivalent to drawing the bitstrings one at a time.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if not isinstance(rng, np.random.Generator):
        raise TypeError("shot sampling needs an explicitly seeded numpy Generator")
    p = probabilities(amps)
    p = p / p.sum(axis=-1, keepdims=True)
    counts = rng.multinomial(shots, p)
    return counts @ z_signs(num_qubits) / shots


def sample_expectation_z(state: Statevector, qubits: Sequence[int], shots: int,
                         rng: np.random.Generator) -> np.ndarray:
    qubits = list(qubits)
    for q in qubits:
        if not 0 <= q < state.num_qubits:
            raise IndexError(f"qubit {q} out of range for {state.num_qubits} qubits")
    est = sample_expectations_z(state.amplitudes, state.num_qubits, shots, rng)
    return est[qubits]
