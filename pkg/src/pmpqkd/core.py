"""Shared domain types for post-measurement pairing QKD.

Timestamps are integer clock slots (unit ``1/F``). Intensity classes and
phases are small integers so whole click streams can live in numpy arrays;
the dataclasses here are the record-level view of the same data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, Optional

import numpy as np

N_PHASES = 16
PHASE_PI = N_PHASES // 2
NO_LABEL = 255


class PMPError(Exception):
    """Base class for errors raised by this package."""


class InvalidParams(PMPError, ValueError):
    pass


class DomainError(PMPError, ValueError):
    pass


class IntensityClass(IntEnum):
    VACUUM = 0
    NU = 1
    MU = 2

    @property
    def symbol(self) -> str:
        return _INTENSITY_SYMBOLS[self]

    @classmethod
    def from_symbol(cls, text: str) -> "IntensityClass":
        try:
            return _SYMBOL_TO_INTENSITY[text]
        except KeyError:
            raise ValueError(f"unknown intensity symbol {text!r}") from None

    def resolve(self, params: "ProtocolParams") -> float:
        """Mean photon number of this class under ``params``."""
        return (0.0, params.nu, params.mu)[self]


_INTENSITY_SYMBOLS = {IntensityClass.VACUUM: "o", IntensityClass.NU: "nu", IntensityClass.MU: "mu"}
_SYMBOL_TO_INTENSITY = {v: k for k, v in _INTENSITY_SYMBOLS.items()}


class CombinedClass(IntEnum):
    """Sum of one user's intensities over the two time bins of a coincidence."""

    O = 0  # o + o
    NU = 1  # nu + o
    MU = 2  # mu + o
    TWO_NU = 3  # nu + nu
    MU_NU = 4  # mu + nu, only reachable with the click filter disabled
    TWO_MU = 5  # mu + mu

    @property
    def label(self) -> str:
        return _COMBINED_LABELS[self]


_COMBINED_LABELS = {
    CombinedClass.O: "o",
    CombinedClass.NU: "nu",
    CombinedClass.MU: "mu",
    CombinedClass.TWO_NU: "2nu",
    CombinedClass.MU_NU: "munu",
    CombinedClass.TWO_MU: "2mu",
}

# COMBINE[k_early, k_late] -> CombinedClass, indexed by IntensityClass values
COMBINE = np.array(
    [
        [CombinedClass.O, CombinedClass.NU, CombinedClass.MU],
        [CombinedClass.NU, CombinedClass.TWO_NU, CombinedClass.MU_NU],
        [CombinedClass.MU, CombinedClass.MU_NU, CombinedClass.TWO_MU],
    ],
    dtype=np.uint8,
)
N_COMBINED = len(CombinedClass)


def combine(k1: IntensityClass, k2: IntensityClass) -> CombinedClass:
    return CombinedClass(int(COMBINE[k1, k2]))


@dataclass(frozen=True)
class PhaseIndex:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < N_PHASES:
            raise DomainError(f"phase index {self.index} outside [0, {N_PHASES - 1}]")

    @property
    def value(self) -> float:
        return self.index * 2 * math.pi / N_PHASES


@dataclass(frozen=True)
class ProtocolParams:
    """Encoding intensities, probabilities, clock and security parameters.

    ``T_c`` is in nanoseconds; ``F`` in Hz; ``N`` is the number of pulses each
    user sends.
    """

    mu: float
    nu: float
    p_mu: float
    p_nu: float
    p_o: float
    F: float = 1e9
    N: float = 1e12
    T_c: float = 77_000.0
    eps_cor: float = 1e-10
    eps_PA: float = 1e-10
    eps_prime: float = 1e-10
    eps_hat: float = 1e-10
    f_EC: float = 1.16

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([self.p_o, self.p_nu, self.p_mu])

    @property
    def intensities(self) -> np.ndarray:
        return np.array([0.0, self.nu, self.mu])

    @property
    def T_c_slots(self) -> int:
        return max(1, int(round(self.T_c * 1e-9 * self.F)))

    def replace(self, **changes) -> "ProtocolParams":
        from dataclasses import replace

        return replace(self, **changes)


def validate_params(p: ProtocolParams) -> None:
    """Raise :class:`InvalidParams` naming the first violated invariant."""
    if not p.mu > p.nu:
        raise InvalidParams("mu>nu")
    if not p.nu > 0:
        raise InvalidParams("nu>0")
    probs = (p.p_mu, p.p_nu, p.p_o)
    if any(x < 0 or x > 1 for x in probs) or abs(sum(probs) - 1.0) > 1e-12:
        raise InvalidParams("probabilities")
    if not p.F > 0:
        raise InvalidParams("F>0")
    if not p.N > 0:
        raise InvalidParams("N>0")
    if not p.T_c > 0:
        raise InvalidParams("T_c>0")
    for name in ("eps_cor", "eps_PA", "eps_prime", "eps_hat"):
        if not 0 < getattr(p, name) < 1:
            raise InvalidParams(name)
    if not p.f_EC >= 1:
        raise InvalidParams("f_EC>=1")


def binary_entropy(x: float) -> float:
    """H2(x) in bits, with H2(0) = H2(1) = 0."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"binary_entropy argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


class Detector(IntEnum):
    D0 = 0
    D1 = 1


@dataclass(frozen=True)
class Truth:
    """Ground-truth encoding of one slot (simulated data only)."""

    alice_intensity: IntensityClass
    alice_phase: PhaseIndex
    bob_intensity: IntensityClass
    bob_phase: PhaseIndex


@dataclass(frozen=True)
class ClickEvent:
    slot: int
    detector: Detector
    truth: Optional[Truth] = None


class Basis(IntEnum):
    DISCARD = 0
    Z = 1
    X = 2  # candidate; the phase-matching condition is checked at sifting
    DECOY = 3


@dataclass(frozen=True)
class Coincidence:
    early: ClickEvent
    late: ClickEvent
    ka_tot: CombinedClass
    kb_tot: CombinedClass
    basis: Basis = Basis.DISCARD

    @property
    def separation(self) -> int:
        return self.late.slot - self.early.slot


_TRUTH_FIELDS = ("a_int", "a_phase", "b_int", "b_phase")


@dataclass
class ClickBatch:
    """Column-oriented block of ClickEvents, sorted by slot.

    Truth columns hold :data:`NO_LABEL` where a label is unknown.
    """

    slot: np.ndarray
    detector: np.ndarray
    a_int: np.ndarray = field(default=None)
    a_phase: np.ndarray = field(default=None)
    b_int: np.ndarray = field(default=None)
    b_phase: np.ndarray = field(default=None)

    def __post_init__(self):
        self.slot = np.asarray(self.slot, dtype=np.int64)
        self.detector = np.asarray(self.detector, dtype=np.uint8)
        n = len(self.slot)
        for name in _TRUTH_FIELDS:
            col = getattr(self, name)
            if col is None:
                col = np.full(n, NO_LABEL, dtype=np.uint8)
            setattr(self, name, np.asarray(col, dtype=np.uint8))

    def __len__(self) -> int:
        return len(self.slot)

    @classmethod
    def empty(cls) -> "ClickBatch":
        return cls(np.empty(0, np.int64), np.empty(0, np.uint8))

    @property
    def has_intensity_labels(self) -> bool:
        return not (np.any(self.a_int == NO_LABEL) or np.any(self.b_int == NO_LABEL))

    @property
    def has_truth(self) -> bool:
        return len(self) > 0 and self.has_intensity_labels and not (
            np.any(self.a_phase == NO_LABEL) or np.any(self.b_phase == NO_LABEL)
        )

    def take(self, index) -> "ClickBatch":
        return ClickBatch(
            self.slot[index],
            self.detector[index],
            *(getattr(self, name)[index] for name in _TRUTH_FIELDS),
        )

    @classmethod
    def concat(cls, batches) -> "ClickBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls.empty()
        return cls(
            np.concatenate([b.slot for b in batches]),
            np.concatenate([b.detector for b in batches]),
            *(np.concatenate([getattr(b, name) for b in batches]) for name in _TRUTH_FIELDS),
        )

    def events(self) -> Iterator[ClickEvent]:
        for i in range(len(self)):
            truth = None
            if self.a_phase[i] != NO_LABEL and self.a_int[i] != NO_LABEL:
                truth = Truth(
                    IntensityClass(int(self.a_int[i])),
                    PhaseIndex(int(self.a_phase[i])),
                    IntensityClass(int(self.b_int[i])),
                    PhaseIndex(int(self.b_phase[i])),
                )
            yield ClickEvent(int(self.slot[i]), Detector(int(self.detector[i])), truth)

    @classmethod
    def from_events(cls, events) -> "ClickBatch":
        events = list(events)
        cols = {name: [] for name in _TRUTH_FIELDS}
        for e in events:
            t = e.truth
            cols["a_int"].append(NO_LABEL if t is None else int(t.alice_intensity))
            cols["a_phase"].append(NO_LABEL if t is None else t.alice_phase.index)
            cols["b_int"].append(NO_LABEL if t is None else int(t.bob_intensity))
            cols["b_phase"].append(NO_LABEL if t is None else t.bob_phase.index)
        return cls(
            [e.slot for e in events],
            [int(e.detector) for e in events],
            *(np.array(cols[name], dtype=np.uint8) for name in _TRUTH_FIELDS),
        )

    def equals(self, other: "ClickBatch") -> bool:
        return len(self) == len(other) and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("slot", "detector") + _TRUTH_FIELDS
        )
