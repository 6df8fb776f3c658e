"""Quantum representation network: angle encoding, ansatz builders and
parameter-shift gradients.

The network loads a width-W classical vector with one RX rotation per qubit,
applies a layered variational ansatz and reads out <Z> on every qubit.

Gradients are computed by evaluating shifted circuits.  RX/RY have
generators with eigenvalues +-1/2, so the two-term rule
``(f(t + pi/2) - f(t - pi/2)) / 2`` is exact for them.  A controlled RX has
generator ``|1><1| (x) X / 2`` with eigenvalues {0, +-1/2}; the two-term rule
is biased there, so CRX slots use the exact four-term rule with shifts
+-pi/2 and +-3pi/2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .quantum_sim import (
    CircuitProgram,
    GateKind,
    Instruction,
    ParamRef,
    ParamSource,
    expectations_z,
    sample_expectations_z,
    simulate,
)

# four-term shift rule weights for gates with generator spectrum {0, +-1/2}
_C1 = (np.sqrt(2) + 1) / (4 * np.sqrt(2))
_C2 = (np.sqrt(2) - 1) / (4 * np.sqrt(2))
TWO_TERM = ((np.pi / 2, 0.5), (-np.pi / 2, -0.5))
FOUR_TERM = ((np.pi / 2, _C1), (-np.pi / 2, -_C1), (3 * np.pi / 2, -_C2), (-3 * np.pi / 2, _C2))

# cap on simultaneously simulated amplitudes when batching shifted circuits
_MAX_AMPLITUDES = 1 << 22


class AnsatzKind(str, enum.Enum):
    RING = "ring"
    ALL_TO_ALL = "all"

    @classmethod
    def parse(cls, value) -> "AnsatzKind":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("-", "_")
        aliases = {"ring": cls.RING, "all": cls.ALL_TO_ALL, "all_to_all": cls.ALL_TO_ALL}
        if v not in aliases:
            raise ValueError(f"unknown ansatz {value!r}; expected 'ring' or 'all'")
        return aliases[v]


def map_to_angle(v):
    """Squash a real input into (0, pi) with ``pi * logistic(v)``."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("map_to_angle needs finite inputs")
    out = np.pi * expit(v)
    return float(out) if out.ndim == 0 else out


def map_to_angle_grad(v):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("map_to_angle_grad needs finite inputs")
    s = expit(v)
    out = np.pi * s * (1 - s)
    return float(out) if out.ndim == 0 else out


def build_data_loader(width: int) -> CircuitProgram:
    """One RX per qubit, qubit k reading input slot k."""
    if width < 1:
        raise ValueError("width must be >= 1")
    return CircuitProgram(width, [
        Instruction(GateKind.RX, (k,), ParamRef(ParamSource.INPUT, k)) for k in range(width)
    ])


def build_ring_ansatz(width: int, layers: int) -> CircuitProgram:
    """Per layer: RY on every qubit, then CRX from q to (q+1) mod W."""
    if width < 2:
        raise ValueError("the ring ansatz needs at least 2 qubits")
    if layers < 1:
        raise ValueError("layers must be >= 1")
    ins: list[Instruction] = []
    slot = 0
    for _ in range(layers):
        for q in range(width):
            ins.append(Instruction(GateKind.RY, (q,), ParamRef(ParamSource.TRAINABLE, slot)))
            slot += 1
        for q in range(width):
            ins.append(Instruction(GateKind.CRX, (q, (q + 1) % width), ParamRef(ParamSource.TRAINABLE, slot)))
            slot += 1
    return CircuitProgram(width, ins)


def build_all_to_all_ansatz(width: int, layers: int) -> CircuitProgram:
    """Per layer: RY on every qubit, then CNOT(i, j) for all i < j in
    lexicographic order; a final RY row closes the circuit."""
    if width < 2:
        raise ValueError("the all-to-all ansatz needs at least 2 qubits")
    if layers < 1:
        raise ValueError("layers must be >= 1")
    ins: list[Instruction] = []
    slot = 0

    def ry_row():
        nonlocal slot
        for q in range(width):
            ins.append(Instruction(GateKind.RY, (q,), ParamRef(ParamSource.TRAINABLE, slot)))
            slot += 1

    for _ in range(layers):
        ry_row()
        for i in range(width):
            for j in range(i + 1, width):
                ins.append(Instruction(GateKind.CNOT, (i, j)))
    ry_row()
    return CircuitProgram(width, ins)


def build_ansatz(kind, width: int, layers: int) -> CircuitProgram:
    kind = AnsatzKind.parse(kind)
    if kind is AnsatzKind.RING:
        return build_ring_ansatz(width, layers)
    return build_all_to_all_ansatz(width, layers)


def num_ansatz_params(kind, width: int, layers: int) -> int:
    return build_ansatz(kind, width, layers).num_trainable


@lru_cache(maxsize=64)
def qnn_program(kind: AnsatzKind, width: int, layers: int) -> CircuitProgram:
    return build_data_loader(width) + build_ansatz(kind, width, layers)


def parse_mode(mode) -> int | None:
    """``"exact"`` -> None, ``"shots:N"`` or an int -> N."""
    if mode is None:
        return None
    if isinstance(mode, (int, np.integer)) and not isinstance(mode, bool):
        shots = int(mode)
    else:
        text = str(mode).strip().lower()
        if text == "exact":
            return None
        if not text.startswith("shots:"):
            raise ValueError(f"execution mode must be 'exact' or 'shots:N', got {mode!r}")
        try:
            shots = int(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad shot count in {mode!r}") from None
    if shots < 1:
        raise ValueError("shots must be >= 1")
    return shots


def format_mode(shots: int | None) -> str:
    return "exact" if shots is None else f"shots:{shots}"


@dataclass
class QnnLayer:
    width: int
    ansatz: AnsatzKind = AnsatzKind.RING
    layers: int = 2
    params: np.ndarray | None = None
    shots: int | None = None  # None means exact statevector expectations

    def __post_init__(self):
        self.ansatz = AnsatzKind.parse(self.ansatz)
        self.shots = parse_mode(self.shots)
        n = self.num_params
        if self.params is None:
            self.params = np.zeros(n)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (n,):
            raise ValueError(f"{self.ansatz.value} ansatz (W={self.width}, L={self.layers}) "
                             f"has {n} parameters, got {self.params.shape}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("QNN parameters must be finite")

    @property
    def num_params(self) -> int:
        return qnn_program(self.ansatz, self.width, self.layers).num_trainable

    @property
    def program(self) -> CircuitProgram:
        return qnn_program(self.ansatz, self.width, self.layers)

    @property
    def exact(self) -> bool:
        return self.shots is None


def init_qnn_params(kind, width: int, layers: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on [-pi, pi]."""
    return rng.uniform(-np.pi, np.pi, num_ansatz_params(kind, width, layers))


@dataclass
class QnnGradients:
    """Jacobians of the W outputs; leading batch axes match the inputs."""

    d_output_d_params: np.ndarray
    d_output_d_inputs: np.ndarray


def _check_inputs(layer: QnnLayer, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.shape[-1:] != (layer.width,):
        raise ValueError(f"QNN of width {layer.width} got input of shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("QNN inputs must be finite")
    return x


def qnn_statevectors(layer: QnnLayer, inputs) -> np.ndarray:
    """Pre-measurement amplitudes, shape ``(*batch, 2**W)``."""
    x = _check_inputs(layer, inputs)
    return simulate(layer.program, layer.params, map_to_angle(x))


def qnn_forward(layer: QnnLayer, inputs, rng: np.random.Generator | None = None,
                return_state: bool = False):
    """Per-qubit <Z> of the QNN for one input vector or a batch of them."""
    amps = qnn_statevectors(layer, inputs)
    if layer.exact:
        out = expectations_z(amps, layer.width)
    else:
        if rng is None:
            raise ValueError("shot-sampled execution needs an rng")
        out = sample_expectations_z(amps, layer.width, layer.shots, rng)
    return (out, amps) if return_state else out


@dataclass
class _Shift:
    source: ParamSource
    index: int
    offset: float
    weight: float


@dataclass
class ShiftPlan:
    """Every shifted evaluation needed for one gradient call, in slot order."""

    shifts: list[_Shift] = field(default_factory=list)

    @classmethod
    def for_program(cls, program: CircuitProgram) -> "ShiftPlan":
        plan = cls()
        for source in (ParamSource.TRAINABLE, ParamSource.INPUT):
            slots = sorted((ins.slot.index, ins.kind) for ins in program.instructions
                           if ins.slot is not None and ins.slot.source is source)
            for index, kind in slots:
                rule = FOUR_TERM if kind is GateKind.CRX else TWO_TERM
                plan.shifts.extend(_Shift(source, index, off, w) for off, w in rule)
        return plan

    def __len__(self):
        return len(self.shifts)


def qnn_gradients(layer: QnnLayer, inputs, rng: np.random.Generator | None = None) -> QnnGradients:
    """Parameter-shift Jacobians with respect to trainable angles and raw inputs.

    In shot mode every shifted circuit is sampled with its own child stream
    spawned from ``rng`` in slot order, so the result is seed-deterministic.
    """
    x = _check_inputs(layer, inputs)
    batch = x.shape[:-1]
    angles = map_to_angle(x)
    program = layer.program
    plan = ShiftPlan.for_program(program)
    P, W = layer.num_params, layer.width
    if not layer.exact:
        if rng is None:
            raise ValueError("shot-sampled gradients need an rng")
        streams = rng.spawn(len(plan))

    d_params = np.zeros(batch + (W, P))
    d_angles = np.zeros(batch + (W, W))
    per_eval = max(1, int(np.prod(batch, dtype=int))) << W
    chunk = max(1, _MAX_AMPLITUDES // per_eval)
    expand = (slice(None),) + (None,) * len(batch)

    for start in range(0, len(plan), chunk):
        part = plan.shifts[start:start + chunk]
        S = len(part)
        t_shift = np.zeros((S, P))
        a_shift = np.zeros((S, W))
        for k, sh in enumerate(part):
            (t_shift if sh.source is ParamSource.TRAINABLE else a_shift)[k, sh.index] = sh.offset
        trainable = (layer.params[None, :] + t_shift)[expand]   # (S, 1.., P)
        shifted = angles[None] + a_shift[expand]                # (S, *batch, W)
        amps = simulate(program, trainable, shifted)
        if layer.exact:
            vals = expectations_z(amps, W)
        else:
            vals = np.stack([
                sample_expectations_z(amps[k], W, layer.shots, streams[start + k]) for k in range(S)
            ])
        for k, sh in enumerate(part):
            target = d_params if sh.source is ParamSource.TRAINABLE else d_angles
            target[..., sh.index] += sh.weight * vals[k]

    d_inputs = d_angles * np.asarray(map_to_angle_grad(x))[..., None, :]
    return QnnGradients(d_params, d_inputs)
