"""Basis assignment, bit extraction and the coincidence tally."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .core import (
    N_COMBINED,
    N_PHASES,
    PHASE_PI,
    Basis,
    ClickBatch,
    Coincidence,
    CombinedClass as C,
    IntensityClass,
    PMPError,
)
from .pairing import CoincidenceBatch, delay_pairs


class NotZBasis(PMPError, ValueError):
    pass


class NotXCandidate(PMPError, ValueError):
    pass


class WindowTooSmall(PMPError, ValueError):
    pass


class EmptyInput(PMPError, ValueError):
    pass


_DECOY_CLASSES = {
    (C.O, C.O),
    (C.NU, C.NU),
    (C.NU, C.O),
    (C.O, C.NU),
    (C.MU, C.O),
    (C.O, C.MU),
    (C.TWO_NU, C.O),
    (C.O, C.TWO_NU),
    (C.TWO_MU, C.TWO_MU),
}

# BASIS_TABLE[ka_tot, kb_tot] -> Basis
BASIS_TABLE = np.full((N_COMBINED, N_COMBINED), Basis.DISCARD, dtype=np.uint8)
for _ka, _kb in _DECOY_CLASSES:
    BASIS_TABLE[_ka, _kb] = Basis.DECOY
BASIS_TABLE[C.MU, C.MU] = Basis.Z
BASIS_TABLE[C.TWO_NU, C.TWO_NU] = Basis.X


def assign_basis(c: Coincidence) -> Basis:
    return Basis(int(BASIS_TABLE[c.ka_tot, c.kb_tot]))


def extract_z_bit(c: Coincidence) -> tuple[int, int]:
    """Time-bin bits: Alice reads 0 when her mu is early, Bob reads 1."""
    if (c.ka_tot, c.kb_tot) != (C.MU, C.MU) or c.early.truth is None:
        raise NotZBasis(f"[{c.ka_tot.label},{c.kb_tot.label}] is not a Z coincidence")
    alice = 0 if c.early.truth.alice_intensity == IntensityClass.MU else 1
    bob = 1 if c.early.truth.bob_intensity == IntensityClass.MU else 0
    return alice, bob


def _relative_phases(a_e, a_l, b_e, b_l):
    da = (np.asarray(a_l, dtype=np.int16) - a_e) % N_PHASES
    db = (np.asarray(b_l, dtype=np.int16) - b_e) % N_PHASES
    return da, db, (da - db) % N_PHASES


def extract_x_bit(c: Coincidence) -> Optional[tuple[int, int]]:
    """Phase bits of a [2nu,2nu] coincidence, or ``None`` when the phases are
    not matched (phi_ab outside {0, pi})."""
    if (c.ka_tot, c.kb_tot) != (C.TWO_NU, C.TWO_NU) or c.early.truth is None:
        raise NotXCandidate(f"[{c.ka_tot.label},{c.kb_tot.label}] is not an X candidate")
    return _phase_bits(c)


def _phase_bits(c: Coincidence) -> Optional[tuple[int, int]]:
    e, l = c.early.truth, c.late.truth
    da, db, phi = _relative_phases(
        e.alice_phase.index, l.alice_phase.index, e.bob_phase.index, l.bob_phase.index
    )
    if phi not in (0, PHASE_PI):
        return None
    alice = int(da) // PHASE_PI
    bob = (int(db) // PHASE_PI) ^ int(c.early.detector != c.late.detector)
    return alice, bob


def phase_sift(early: ClickBatch, late: ClickBatch):
    """Vectorised phase sifting: (matched, error, phi_ab, same_detector)."""
    _, _, phi = _relative_phases(early.a_phase, late.a_phase, early.b_phase, late.b_phase)
    matched = (phi == 0) | (phi == PHASE_PI)
    same = early.detector == late.detector
    # identical bits iff (phi=0 and same detector) or (phi=pi and different)
    error = matched & ((phi == 0) != same)
    return matched, error, phi, same


@dataclass(frozen=True)
class TallyReport:
    """Sifted counts, error counts and error rates as in the published results.

    ``n_2nu_2nu`` and ``n_2mu_2mu`` count phase-matched coincidences only.
    Counts are floats when a report has been rescaled.
    """

    n_o_o: float = 0
    n_nu_nu: float = 0
    n_mu_mu: float = 0
    m_mu_mu: float = 0
    n_nu_o: float = 0
    n_mu_o: float = 0
    n_o_nu: float = 0
    n_o_mu: float = 0
    n_2nu_2nu: float = 0
    m_2nu_2nu: float = 0
    n_2nu_o: float = 0
    n_o_2nu: float = 0
    n_2mu_2mu: float = 0
    m_2mu_2mu: float = 0
    n_click_mu_nu: float = 0
    n_click_nu_mu: float = 0
    T_mean_2mu_2mu_us: Optional[float] = None
    T_mean_2nu_2nu_us: Optional[float] = None

    def __post_init__(self):
        for m, n in (("m_mu_mu", "n_mu_mu"), ("m_2nu_2nu", "n_2nu_2nu"), ("m_2mu_2mu", "n_2mu_2mu")):
            if not 0 <= getattr(self, m) <= getattr(self, n):
                raise ValueError(f"need 0 <= {m} <= {n}")

    @property
    def E_z(self) -> Optional[float]:
        return self.m_mu_mu / self.n_mu_mu if self.n_mu_mu else None

    @property
    def E_x(self) -> Optional[float]:
        return self.m_2nu_2nu / self.n_2nu_2nu if self.n_2nu_2nu else None

    @property
    def E_2mu(self) -> Optional[float]:
        """Evaluation QBER over phase-matched [2mu,2mu] coincidences."""
        return self.m_2mu_2mu / self.n_2mu_2mu if self.n_2mu_2mu else None

    def scaled(self, factor: float) -> "TallyReport":
        """All counts multiplied by ``factor`` (rates and intervals unchanged)."""
        values = {}
        for f in fields(self):
            v = getattr(self, f.name)
            values[f.name] = v * factor if f.name.startswith(("n_", "m_")) else v
        return TallyReport(**values)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(E_z=self.E_z, E_x=self.E_x, E_2mu=self.E_2mu)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TallyReport":
        names = {f.name for f in fields(cls)}
        derived = {"E_z", "E_x", "E_2mu"}
        unknown = set(d) - names - derived
        if unknown:
            raise ValueError(f"unknown tally fields: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})


REPORT_CLASSES = {
    "n_o_o": (C.O, C.O),
    "n_nu_nu": (C.NU, C.NU),
    "n_mu_mu": (C.MU, C.MU),
    "n_nu_o": (C.NU, C.O),
    "n_mu_o": (C.MU, C.O),
    "n_o_nu": (C.O, C.NU),
    "n_o_mu": (C.O, C.MU),
    "n_2nu_o": (C.TWO_NU, C.O),
    "n_o_2nu": (C.O, C.TWO_NU),
}


@dataclass
class Tally:
    """Mergeable accumulator behind :class:`TallyReport`."""

    class_counts: np.ndarray = field(
        default_factory=lambda: np.zeros((N_COMBINED, N_COMBINED), dtype=np.int64)
    )
    m_mu_mu: int = 0
    n_2nu_2nu: int = 0
    m_2nu_2nu: int = 0
    n_2mu_2mu: int = 0
    m_2mu_2mu: int = 0
    n_click_mu_nu: int = 0
    n_click_nu_mu: int = 0
    sep_sum_2nu_2nu: int = 0
    sep_sum_2mu_2mu: int = 0

    def add_clicks(self, batch: ClickBatch) -> None:
        """Count pre-filter (mu|nu) and (nu|mu) clicks."""
        mu, nu = IntensityClass.MU, IntensityClass.NU
        self.n_click_mu_nu += int(np.count_nonzero((batch.a_int == mu) & (batch.b_int == nu)))
        self.n_click_nu_mu += int(np.count_nonzero((batch.a_int == nu) & (batch.b_int == mu)))

    def add(self, cb: CoincidenceBatch) -> None:
        if len(cb) == 0:
            return
        np.add.at(self.class_counts, (cb.ka_tot, cb.kb_tot), 1)
        sep = cb.separation

        z = (cb.ka_tot == C.MU) & (cb.kb_tot == C.MU)
        if np.any(z):
            alice = cb.early.a_int[z] != IntensityClass.MU
            bob = cb.early.b_int[z] == IntensityClass.MU
            self.m_mu_mu += int(np.count_nonzero(alice != bob))

        for cls, attr in ((C.TWO_NU, "2nu_2nu"), (C.TWO_MU, "2mu_2mu")):
            sel = (cb.ka_tot == cls) & (cb.kb_tot == cls)
            if not np.any(sel):
                continue
            idx = np.flatnonzero(sel)
            matched, error, _, _ = phase_sift(cb.early.take(idx), cb.late.take(idx))
            setattr(self, f"n_{attr}", getattr(self, f"n_{attr}") + int(matched.sum()))
            setattr(self, f"m_{attr}", getattr(self, f"m_{attr}") + int(error.sum()))
            setattr(
                self, f"sep_sum_{attr}", getattr(self, f"sep_sum_{attr}") + int(sep[idx][matched].sum())
            )

    def merge(self, other: "Tally") -> "Tally":
        out = Tally(self.class_counts + other.class_counts)
        for f in fields(self):
            if f.name != "class_counts":
                setattr(out, f.name, getattr(self, f.name) + getattr(other, f.name))
        return out

    def report(self, clock_hz: float) -> TallyReport:
        counts = {k: int(self.class_counts[a, b]) for k, (a, b) in REPORT_CLASSES.items()}

        def mean_us(total, n):
            return total / n / clock_hz * 1e6 if n else None

        return TallyReport(
            **counts,
            m_mu_mu=self.m_mu_mu,
            n_2nu_2nu=self.n_2nu_2nu,
            m_2nu_2nu=self.m_2nu_2nu,
            n_2mu_2mu=self.n_2mu_2mu,
            m_2mu_2mu=self.m_2mu_2mu,
            n_click_mu_nu=self.n_click_mu_nu,
            n_click_nu_mu=self.n_click_nu_mu,
            T_mean_2mu_2mu_us=mean_us(self.sep_sum_2mu_2mu, self.n_2mu_2mu),
            T_mean_2nu_2nu_us=mean_us(self.sep_sum_2nu_2nu, self.n_2nu_2nu),
        )


def tally(coincidences, clicks: Optional[ClickBatch] = None, clock_hz: float = 1e9) -> TallyReport:
    """Tally one or more CoincidenceBatches (plus pre-filter clicks)."""
    t = Tally()
    if isinstance(coincidences, CoincidenceBatch):
        coincidences = [coincidences]
    for cb in coincidences:
        t.add(cb)
    if clicks is not None:
        t.add_clicks(clicks)
    return t.report(clock_hz)


def visibility(samples, window: int) -> np.ndarray:
    """Interference visibility per consecutive window of ``window`` samples,
    from the mean of the 10 largest and 10 smallest values."""
    if window < 20:
        raise WindowTooSmall(f"window of {window} samples; need at least 20")
    x = np.asarray(samples, dtype=float)
    n_win = len(x) // window
    if n_win == 0:
        raise WindowTooSmall(f"{len(x)} samples do not fill one window of {window}")
    w = x[: n_win * window].reshape(n_win, window)
    part = np.partition(w, (10, window - 11), axis=1)
    i_min = part[:, :10].mean(axis=1)
    i_max = part[:, window - 10 :].mean(axis=1)
    denom = i_max + i_min
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(denom > 0, (i_max - i_min) / np.where(denom > 0, denom, 1), 0.0)
    return v


def two_photon_qber(c0: float, c_pi: float) -> float:
    if c0 + c_pi <= 0:
        raise EmptyInput("no coincidences")
    return c_pi / (c0 + c_pi)


@dataclass(frozen=True)
class DelayBin:
    lo_us: float
    hi_us: float
    n: int
    m: int
    c0: int
    c_pi: int

    @property
    def qber(self) -> Optional[float]:
        return self.m / self.n if self.n else None

    @property
    def sigma(self) -> Optional[float]:
        if not self.n:
            return None
        q = self.m / self.n
        return float(np.sqrt(max(q * (1 - q), 1e-12) / self.n))

    @property
    def two_photon_qber(self) -> Optional[float]:
        return two_photon_qber(self.c0, self.c_pi) if self.c0 + self.c_pi else None


def delay_resolved_qber(
    clicks: ClickBatch,
    edges_us,
    clock_hz: float = 1e9,
    cls: IntensityClass = IntensityClass.MU,
    block: int = 1 << 16,
) -> list[DelayBin]:
    """Evaluation QBER of [2k,2k] pairs binned by their separation.

    Every pair of (k|k) clicks whose separation falls in a bin counts, which
    resolves the QBER at separations far beyond the neighbour-pairing gap.
    Each bin also carries the two-photon counts C0 / Cpi (same detector
    twice with phi_ab = 0 / pi).
    """
    sel = (clicks.a_int == cls) & (clicks.b_int == cls)
    sub = clicks.take(sel)
    out = []
    edges = [float(e) for e in edges_us]
    for lo_us, hi_us in zip(edges[:-1], edges[1:]):
        lo = int(np.floor(lo_us * 1e-6 * clock_hz)) + 1
        hi = int(np.floor(hi_us * 1e-6 * clock_hz))
        n = m = c0 = c_pi = 0
        for first in range(0, len(sub), block):
            i, j = delay_pairs(sub.slot, max(lo, 1), hi, first, min(first + block, len(sub)))
            matched, error, phi, same = phase_sift(sub.take(i), sub.take(j))
            n += int(matched.sum())
            m += int(error.sum())
            c0 += int(np.count_nonzero(matched & same & (phi == 0)))
            c_pi += int(np.count_nonzero(matched & same & (phi == PHASE_PI)))
        out.append(DelayBin(lo_us, hi_us, n, m, c0, c_pi))
    return out
