"""Streaming analysis: filter -> pair -> sift -> decoy -> key rate."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import ClickBatch, ProtocolParams
from .pairing import Pairer, PairingConfig, PairingStats, UnsortedStream, filter_clicks
from .security import (
    DecoyEstimates,
    InsufficientStatistics,
    KeyRateResult,
    decoy_estimate,
    secure_key_rate,
)
from .sifting import Tally, TallyReport, delay_resolved_qber

DEFAULT_SWEEP_EDGES_US = (
    (0.0, 0.5, 1.0, 2.0)
    + tuple(float(x) for x in range(5, 51, 5))
    + tuple(float(x) for x in range(60, 101, 10))
    + tuple(float(x) for x in range(150, 501, 50))
)


@dataclass
class Analysis:
    stats: PairingStats
    report: TallyReport
    clock_hz: float
    n_clicks: int = 0


class Analyzer:
    """Consumes click chunks in slot order and accumulates the tally."""

    def __init__(self, cfg: PairingConfig, clock_hz: float):
        self.cfg = cfg
        self.clock_hz = clock_hz
        self.pairer = Pairer(cfg)
        self.tally = Tally()
        self._last_slot: Optional[int] = None

    def feed(self, batch: ClickBatch) -> None:
        if len(batch) == 0:
            return
        if self._last_slot is not None and batch.slot[0] <= self._last_slot:
            raise UnsortedStream(f"chunk starts at slot {batch.slot[0]} after {self._last_slot}")
        self._last_slot = int(batch.slot[-1])
        stats = self.pairer.stats
        stats.n_clicks_in += len(batch)
        self.tally.add_clicks(batch)
        if self.cfg.filter_enabled:
            kept = filter_clicks(batch)
            stats.n_clicks_filtered += len(batch) - len(kept)
            batch = kept
        self.tally.add(self.pairer.feed(batch))

    def finish(self) -> Analysis:
        self.pairer.finish()
        return Analysis(
            self.pairer.stats,
            self.tally.report(self.clock_hz),
            self.clock_hz,
            self.pairer.stats.n_clicks_in,
        )


def analyze_stream(batches: Iterable[ClickBatch], cfg: PairingConfig, clock_hz: float) -> Analysis:
    analyzer = Analyzer(cfg, clock_hz)
    for batch in batches:
        analyzer.feed(batch)
    return analyzer.finish()


def analyze_sweep(
    batches: Iterable[ClickBatch], t_c_slots: Sequence[int], clock_hz: float, filter_enabled: bool = True
) -> list[Analysis]:
    """Neighbour re-pairing of one stream at several maximal intervals."""
    analyzers = [Analyzer(PairingConfig(t, filter_enabled), clock_hz) for t in t_c_slots]
    for batch in batches:
        for a in analyzers:
            a.feed(batch)
    return [a.finish() for a in analyzers]


@dataclass(frozen=True)
class SweepPoint:
    t_us: float
    qber: Optional[float]
    sigma: Optional[float]
    n: int
    m: int
    lo_us: Optional[float] = None
    two_photon_qber: Optional[float] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def qber_sweep(
    clicks: ClickBatch,
    edges_us: Sequence[float] = DEFAULT_SWEEP_EDGES_US,
    clock_hz: float = 1e9,
    mode: str = "binned",
) -> list[SweepPoint]:
    """X-basis evaluation QBER ([2mu,2mu]) versus pairing interval.

    ``binned`` resolves the QBER by pair separation, one point per bin
    (lo, hi] reported at hi. ``cumulative`` re-pairs the stream with
    neighbour pairing at T_c = each edge (edges > 0 only).
    """
    if mode == "binned":
        bins = delay_resolved_qber(clicks, edges_us, clock_hz)
        return [
            SweepPoint(b.hi_us, b.qber, b.sigma, b.n, b.m, b.lo_us, b.two_photon_qber) for b in bins
        ]
    if mode == "cumulative":
        grid = [e for e in edges_us if e > 0]
        slots = [max(1, int(round(e * 1e-6 * clock_hz))) for e in grid]
        results = analyze_sweep([clicks], slots, clock_hz)
        out = []
        for t, res in zip(grid, results):
            r = res.report
            q = r.E_2mu
            sigma = None if q is None else float(np.sqrt(max(q * (1 - q), 1e-12) / r.n_2mu_2mu))
            out.append(SweepPoint(t, q, sigma, int(r.n_2mu_2mu), int(r.m_2mu_2mu)))
        return out
    raise ValueError(f"unknown sweep mode {mode!r}")


# fewest phase-matched [2nu,2nu] coincidences worth extrapolating
MIN_X_COUNTS = 100


@dataclass
class KeyAnalysis:
    estimates: Optional[DecoyEstimates]
    key_rate: Optional[KeyRateResult]
    scale: float
    params: ProtocolParams
    error: Optional[str] = None


def key_analysis(
    report: TallyReport,
    params: ProtocolParams,
    *,
    total_loss_db: Optional[float] = None,
    n_slots: Optional[float] = None,
    scale_to: Optional[float] = None,
    finite: bool = True,
    min_x_counts: int = MIN_X_COUNTS,
) -> KeyAnalysis:
    """Decoy estimation and key rate for a tally.

    ``n_slots`` is the number of pulses behind the tally. With ``scale_to``
    the counts are extrapolated to that many pulses before the finite-size
    analysis (desk-scale runs standing in for a full-size experiment); this
    is refused when fewer than ``min_x_counts`` phase-matched [2nu,2nu]
    coincidences back the extrapolation.
    """
    scale = 1.0
    if scale_to is not None:
        if not n_slots:
            raise ValueError("scale_to needs n_slots")
        scale = scale_to / n_slots
        if report.n_2nu_2nu < min_x_counts:
            msg = f"only {report.n_2nu_2nu} [2nu,2nu] coincidences; need {min_x_counts} to extrapolate"
            return KeyAnalysis(None, None, scale, params.replace(N=scale_to), msg)
        report = report.scaled(scale)
        params = params.replace(N=scale_to)
    elif n_slots:
        params = params.replace(N=n_slots)
    try:
        est = decoy_estimate(report, params, finite=finite)
    except InsufficientStatistics as exc:
        return KeyAnalysis(None, None, scale, params, str(exc))
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rate = secure_key_rate(est, report, params, total_loss_db=total_loss_db, finite=finite)
    return KeyAnalysis(est, rate, scale, params)


class Timer:
    def __init__(self):
        self.t0 = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0
